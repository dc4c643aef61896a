#![no_main]

use libfuzzer_sys::fuzz_target;
use omics_ssl::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::from_json(data) {
        let text = cfg.to_json_pretty().unwrap();
        assert_eq!(RunConfig::from_json(text.as_bytes()).unwrap(), cfg);
    }
});
