#![no_main]

use dprong_cli::DatasetManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<DatasetManifest>(data) {
        let _ = m.grid.validate();
        let _ = m.options.splits.counts(m.sequences.len());
    }
});
