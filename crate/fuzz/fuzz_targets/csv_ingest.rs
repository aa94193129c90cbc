#![no_main]

use std::collections::BTreeMap;

use libfuzzer_sys::fuzz_target;
use nngp_card::relstore::{ingest_reader, ColumnKind};

fuzz_target!(|data: &[u8]| {
    let schema = BTreeMap::from([
        ("a".to_string(), ColumnKind::Numerical),
        ("b".to_string(), ColumnKind::Categorical),
    ]);
    if let Ok(rel) = ingest_reader(data, "R", &schema) {
        assert!(rel.n_rows() > 0);
        let _ = rel.content_hash();
        let _ = rel.domain_summary();
    }
});
