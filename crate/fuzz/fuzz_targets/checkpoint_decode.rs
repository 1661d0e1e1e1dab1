#![no_main]

use cropkge::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must survive a second trip unchanged.
    if let Ok(model) = decode(data) {
        let again = decode(&encode(&model)).expect("re-encoded checkpoint decodes");
        assert_eq!(again, model);
    }
});
