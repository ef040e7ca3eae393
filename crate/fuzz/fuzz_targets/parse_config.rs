#![no_main]

use libfuzzer_sys::fuzz_target;
use terrace_core::config::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = PipelineConfig::from_toml(text) {
        // anything accepted must survive a round trip
        let back = PipelineConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(back, config);
    }
});
