#![no_main]

use dprong_nn::{decode_loss_history, encode_loss_history};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(h) = decode_loss_history(text) {
        assert_eq!(decode_loss_history(&encode_loss_history(&h)).expect("round trip").len(), h.len());
    }
});
