#![no_main]

use libfuzzer_sys::fuzz_target;
use omics_ssl::data::parse_partition;

fuzz_target!(|data: &[u8]| {
    let features: Vec<String> = (0..8).map(|i| format!("f{i}")).collect();
    if let Ok(p) = parse_partition(data, "partition.csv", "fuzz", &features) {
        assert_eq!(p.n_features(), features.len());
        let members = p.members();
        assert_eq!(members.len(), p.n_subsets);
        assert!(members.iter().all(|m| !m.is_empty()));
    }
});
