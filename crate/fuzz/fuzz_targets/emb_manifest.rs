#![no_main]

use ios_fscil::datasets::{decode_embedding_set, parse_manifest};
use libfuzzer_sys::fuzz_target;

// First byte splits the input into manifest text and feature blob.
fuzz_target!(|data: &[u8]| {
    let Some((&cut, rest)) = data.split_first() else { return };
    let cut = (cut as usize).min(rest.len());
    let (manifest, features) = rest.split_at(cut);
    let Ok(text) = std::str::from_utf8(manifest) else { return };
    let _ = parse_manifest(text);
    if let Ok(set) = decode_embedding_set(text, features) {
        set.validate().expect("decoded sets are valid");
    }
});
