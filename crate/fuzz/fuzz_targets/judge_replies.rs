#![no_main]
use forge_core::analysis::{parse_topic_label, parse_yes_no};
use forge_core::vsm::parse_answer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = parse_yes_no(&text);
    let _ = parse_topic_label(&text);
    if let Some(v) = parse_answer(&text) {
        assert!((1..=5).contains(&v));
    }
});
