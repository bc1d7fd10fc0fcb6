#![no_main]

use dprong_core::format::EogmTensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = EogmTensor::decode(data) {
        // Accepted tensors re-encode to the same bytes and convert to maps.
        assert_eq!(t.encode(), data);
        let _ = t.to_maps(1.0, 0.1);
    }
});
