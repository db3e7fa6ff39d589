#![no_main]

use ios_fscil::datasets::TokenFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tok) = TokenFile::decode(data) {
        assert_eq!(TokenFile::decode(&tok.encode()).unwrap(), tok);
    }
});
