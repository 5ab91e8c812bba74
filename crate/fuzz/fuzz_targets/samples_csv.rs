#![no_main]

use brwlab::io::{samples_from_csv, samples_to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = samples_from_csv(text) {
        let out = samples_to_csv(&set);
        let again = samples_from_csv(&out).expect("written samples parse");
        assert_eq!(samples_to_csv(&again), out);
    }
});
