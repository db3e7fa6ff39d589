#![no_main]

use ios_fscil::datasets::{decode_features, encode_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((dim, records)) = decode_features(data) {
        assert_eq!(encode_features(dim, &records), data);
    }
});
