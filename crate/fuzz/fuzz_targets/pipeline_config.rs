#![no_main]

use libfuzzer_sys::fuzz_target;
use nngp_card::cli::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<PipelineConfig>(data) {
        let _ = cfg.kernel.validate();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
});
