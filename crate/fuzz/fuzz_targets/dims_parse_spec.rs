#![no_main]

use cropkge::DimensionSchedule;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = DimensionSchedule::parse_spec(text) {
        assert!(s.dims().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(DimensionSchedule::parse_spec(&s.to_string()).unwrap(), s);
    }
});
