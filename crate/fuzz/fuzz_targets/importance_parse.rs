#![no_main]

use cropkge::baselines::{format_importance, parse_importance};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = parse_importance(text) {
        if v.iter().all(|x| x.is_finite()) {
            assert_eq!(parse_importance(&format_importance(&v)).unwrap(), v);
        }
    }
});
