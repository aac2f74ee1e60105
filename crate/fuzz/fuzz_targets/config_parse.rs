#![no_main]

use cmq_core::runio::{config_to_toml, parse_config};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        let again = config_to_toml(&cfg).expect("valid configs serialize");
        assert_eq!(parse_config(&again).expect("serialized config reloads"), cfg);
    }
});
