#![no_main]

use dprong_core::sim::{simulate, SceneConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SceneConfig::from_toml(text) {
        assert_eq!(SceneConfig::from_toml(&cfg.to_toml()).expect("round trip"), cfg);
        // Keep simulation cheap; validated configs must not panic.
        if cfg.frame_count() <= 50 && cfg.sensor.beams <= 720 && cfg.agents.len() <= 32 && cfg.world.obstacles.len() <= 32 {
            let _ = simulate(&cfg);
        }
    }
});
