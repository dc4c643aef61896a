#![no_main]

use libfuzzer_sys::fuzz_target;
use omics_ssl::data::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Manifest::from_json(data) {
        let text = serde_json::to_vec(&m).unwrap();
        assert_eq!(Manifest::from_json(&text).unwrap(), m);
    }
});
