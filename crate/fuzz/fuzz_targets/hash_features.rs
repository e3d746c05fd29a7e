#![no_main]

use libfuzzer_sys::fuzz_target;
use sclfish::data::hash_features;

fuzz_target!(|data: &[u8]| {
    let Some((head, rest)) = data.split_first_chunk::<2>() else {
        return;
    };
    let buckets = usize::from(u16::from_le_bytes(*head)).max(1);
    let text = String::from_utf8_lossy(rest);
    let f = hash_features(&text, buckets);
    assert_eq!(f.dim(), buckets);
    assert!(f.entries().windows(2).all(|w| w[0].0 < w[1].0));
    assert!(f.entries().iter().all(|&(i, c)| i < buckets && c > 0));
    assert_eq!(f, hash_features(&text, buckets));
});
