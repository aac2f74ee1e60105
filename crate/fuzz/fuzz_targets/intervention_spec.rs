#![no_main]

use cmq_core::mixer::InterventionMask;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mask) = text.parse::<InterventionMask>() {
        for (_, v) in mask.iter() {
            assert!((0.0..=1.0).contains(&v));
        }
        let back: InterventionMask = mask.to_string().parse().unwrap();
        assert_eq!(back, mask);
    }
});
