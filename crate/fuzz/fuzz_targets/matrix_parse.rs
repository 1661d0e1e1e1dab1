#![no_main]

use cropkge::eval::{arr_from_matrix, parse_matrix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_matrix(text) {
        let r = arr_from_matrix(m, false);
        assert!(r.arr.is_finite());
    }
});
