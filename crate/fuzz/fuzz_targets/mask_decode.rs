#![no_main]

use dprong_core::format::MaskTensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = MaskTensor::decode(data) {
        assert_eq!(t.encode(), data);
        let _ = t.to_masks(1.0);
    }
});
