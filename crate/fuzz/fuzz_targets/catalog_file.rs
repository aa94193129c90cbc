#![no_main]

use std::collections::BTreeMap;

use libfuzzer_sys::fuzz_target;
use nngp_card::relstore::{CatalogFile, ColumnKind};

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = serde_json::from_slice::<CatalogFile>(data) {
        let text = serde_json::to_string(&file).unwrap();
        assert_eq!(serde_json::from_str::<CatalogFile>(&text).unwrap(), file);
    }
    // schema files share the input
    let _ = serde_json::from_slice::<BTreeMap<String, ColumnKind>>(data);
});
