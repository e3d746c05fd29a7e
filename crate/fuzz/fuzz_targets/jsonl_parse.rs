#![no_main]

use libfuzzer_sys::fuzz_target;
use sclfish::data::{parse_jsonl, write_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(datasets) = parse_jsonl(text) {
        let mut buf = Vec::new();
        write_jsonl(&datasets, &mut buf).unwrap();
        let again = parse_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(again, datasets);
    }
});
