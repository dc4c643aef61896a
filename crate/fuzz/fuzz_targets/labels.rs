#![no_main]

use libfuzzer_sys::fuzz_target;
use omics_ssl::data::parse_labels;

fuzz_target!(|data: &[u8]| {
    let _ = parse_labels(data, "labels.csv");
});
