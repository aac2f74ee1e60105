#![no_main]

use cmq_core::runio::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(&ckpt).unwrap(), data);
    }
});
