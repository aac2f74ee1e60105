#![no_main]

use cmq_bridge::{decode_reply, encode_reply};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((id, reply)) = decode_reply(data) {
        let again = encode_reply(id, &reply);
        assert_eq!(decode_reply(&again).unwrap(), (id, reply));
    }
});
