#![no_main]

use brwlab::io::{parse_sample_meta, samples_to_csv};
use brwlab::lab::SampleSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((meta, consumed)) = parse_sample_meta(text) {
        assert!(consumed <= text.split('\n').count());
        // Re-emitting the header and parsing it again is a fixed point.
        let header = samples_to_csv(&SampleSet { samples: Vec::new(), meta });
        let (again, _) = parse_sample_meta(&header).expect("emitted header parses");
        assert_eq!(samples_to_csv(&SampleSet { samples: Vec::new(), meta: again }), header);
    }
});
