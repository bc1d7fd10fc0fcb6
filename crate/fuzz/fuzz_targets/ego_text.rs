#![no_main]

use dprong_core::format::decode_ego;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = decode_ego(text);
    }
});
