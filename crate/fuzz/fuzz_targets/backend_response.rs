#![no_main]
use forge_core::gateway::{parse_chat_response, parse_embedding_response};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(body) = serde_json::from_slice::<serde_json::Value>(data) else { return };
    let _ = parse_chat_response(&body);
    if let Ok(vectors) = parse_embedding_response(&body) {
        let width = vectors.first().map(Vec::len);
        assert!(vectors.iter().all(|v| Some(v.len()) == width));
    }
});
