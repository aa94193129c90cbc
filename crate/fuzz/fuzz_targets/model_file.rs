#![no_main]

use libfuzzer_sys::fuzz_target;
use nngp_card::gp::{read_model, VarianceMode};

fuzz_target!(|data: &[u8]| {
    if let Ok((_, est)) = read_model(data) {
        if est.x.n() <= 64 {
            let _ = est.predict_features(&est.x, VarianceMode::Latent);
        }
    }
});
