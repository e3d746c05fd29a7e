#![no_main]

use libfuzzer_sys::fuzz_target;
use sclfish::checkpoint::{decode, encode};

// The format is canonical: anything that decodes re-encodes to itself.
fuzz_target!(|data: &[u8]| {
    if let Ok((params, spec)) = decode(data) {
        assert_eq!(encode(&params, &spec).unwrap(), data);
    }
});
