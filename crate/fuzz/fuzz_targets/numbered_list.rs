#![no_main]
use forge_core::refinement::parse_numbered_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Some(items) = parse_numbered_list(&text) {
        assert!(items.iter().all(|i| !i.trim().is_empty()));
    }
});
