#![no_main]

use ios_fscil::trainer::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let _ = ckpt.restore();
    }
});
