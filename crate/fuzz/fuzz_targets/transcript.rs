#![no_main]
use forge_core::dialogue::{parse_transcript, render_transcript};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((session, hash)) = parse_transcript(text) {
        let (again, hash2) = parse_transcript(&render_transcript(&session, &hash)).expect("re-parse");
        assert_eq!(again, session);
        assert_eq!(hash2, hash);
    }
});
