#![no_main]

use dprong_cli::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_toml(text) {
        let _ = cfg.model.model_config().parameter_count();
        let _ = cfg.build.validate();
    }
});
