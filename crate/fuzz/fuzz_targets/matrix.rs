#![no_main]

use libfuzzer_sys::fuzz_target;
use omics_ssl::data::parse_omics_matrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_omics_matrix(data, "fuzz", "fuzz.csv") {
        assert_eq!(m.values.ncols(), m.feature_ids.len());
        assert_eq!(m.values.nrows(), m.sample_ids.len());
        assert!(m.values.iter().all(|v| v.is_finite() || v.is_nan()));
    }
});
