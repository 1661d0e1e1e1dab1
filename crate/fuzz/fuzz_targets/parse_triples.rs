#![no_main]

use cropkge::data::{parse_triples, TripleOrder};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for order in [TripleOrder::Hrt, TripleOrder::Htr] {
        if let Ok(rows) = parse_triples(text, order) {
            assert!(rows.len() <= text.lines().count());
        }
    }
});
