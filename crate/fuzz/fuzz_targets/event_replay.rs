#![no_main]
use forge_core::events::{reconstruct, SessionEvent};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = serde_json::from_slice::<Vec<SessionEvent>>(data) {
        let _ = reconstruct(&events);
    }
});
