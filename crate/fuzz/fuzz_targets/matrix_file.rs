#![no_main]

use libfuzzer_sys::fuzz_target;
use nngp_card::encoder::{read_matrix, write_matrix};

fuzz_target!(|data: &[u8]| {
    if let Ok((mh, batch)) = read_matrix(data) {
        // accepted files survive a round trip
        let mut out = Vec::new();
        write_matrix(&mut out, &mh.header, &batch).unwrap();
        let (_, again) = read_matrix(out.as_slice()).unwrap();
        assert_eq!(again.ids, batch.ids);
        assert_eq!(again.x.as_slice(), batch.x.as_slice());
    }
});
