#![no_main]

use cmq_core::runio::parse_metrics_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(row) = parse_metrics_line(line) {
            let again = serde_json::to_string(&row).unwrap();
            assert_eq!(parse_metrics_line(&again).unwrap(), row);
        }
    }
});
