#![no_main]
use forge_core::refinement::{read_samples, samples_to_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(samples) = read_samples(text) {
        assert_eq!(read_samples(&samples_to_jsonl(&samples)).expect("re-parse"), samples);
    }
});
