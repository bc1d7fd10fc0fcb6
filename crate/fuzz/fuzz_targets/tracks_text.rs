#![no_main]

use dprong_core::format::decode_tracks;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&frames, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        let _ = decode_tracks(text, usize::from(frames));
    }
});
