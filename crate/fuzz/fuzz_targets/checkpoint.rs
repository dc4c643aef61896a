#![no_main]

use libfuzzer_sys::fuzz_target;
use omics_ssl::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = Checkpoint::from_json(data) else {
        return;
    };
    // A container that decodes into parameters must survive a save/load cycle.
    if let Ok(params) = ckpt.to_params() {
        let again = Checkpoint::from_params(&params, ckpt.run_config.clone());
        let text = again.to_json().unwrap();
        let back = Checkpoint::from_json(text.as_bytes()).unwrap().to_params().unwrap();
        assert_eq!(back.components, params.components);
    }
});
