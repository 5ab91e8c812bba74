#![no_main]

use brwlab::config::{emit, parse_config};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        // Anything accepted must survive an emit/parse round trip unchanged.
        let out = emit(&cfg).expect("valid config emits");
        assert_eq!(parse_config(&out).expect("emitted config parses"), cfg);
    }
});
