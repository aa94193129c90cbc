#![no_main]

use libfuzzer_sys::fuzz_target;
use nngp_card::relstore::synth::{synthesize, SynthSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<SynthSpec>(data) else {
        return;
    };
    if spec.relations.iter().map(|r| r.rows * r.columns.len().max(1)).sum::<usize>() <= 5_000 {
        let _ = synthesize(&spec, 0);
    }
});
