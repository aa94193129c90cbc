#![no_main]

use libfuzzer_sys::fuzz_target;
use nngp_card::artifact::read_jsonl;
use nngp_card::encoder::{build_layout, encode_batch, EncodingOptions};
use nngp_card::oracle::{execute, QueryRecord};
use nngp_card::relstore::synth::{presets, synthesize};
use nngp_card::relstore::SchemaCatalog;

fn catalog() -> &'static SchemaCatalog {
    static C: std::sync::OnceLock<SchemaCatalog> = std::sync::OnceLock::new();
    C.get_or_init(|| synthesize(&presets::join_chain(2), 1).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let Ok((_, recs)) = read_jsonl::<_, QueryRecord>(data) else {
        return;
    };
    let c = catalog();
    let valid: Vec<QueryRecord> = recs.into_iter().filter(|r| r.query.validate(c).is_ok()).collect();
    for r in &valid {
        let _ = execute(&r.query, c);
    }
    let layout = build_layout(c, &EncodingOptions::default()).unwrap();
    if let Ok(b) = encode_batch(&valid, &layout) {
        assert_eq!(b.len(), valid.len());
    }
});
