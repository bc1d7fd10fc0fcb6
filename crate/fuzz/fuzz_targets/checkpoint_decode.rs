#![no_main]

use dprong_nn::{Checkpoint, DoubleProngModel};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        assert_eq!(ck.encode(), data);
        let _ = DoubleProngModel::from_checkpoint(&ck);
    }
});
