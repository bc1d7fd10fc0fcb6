#![no_main]

use dprong_core::format::{decode_scans, encode_scans};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(scans) = decode_scans(data) {
        let again = encode_scans(&scans).expect("decoded scans re-encode");
        assert_eq!(decode_scans(&again).expect("re-encoded scans decode"), scans);
    }
});
