#![no_main]
use forge_core::registry::{parse_seed_jsonl, seeds_to_jsonl};
use forge_core::CultureRegistry;
use libfuzzer_sys::fuzz_target;

// Accepted corpora must survive a write/read round trip unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let registry = CultureRegistry::bundled();
    if let Ok(corpus) = parse_seed_jsonl(text, &registry) {
        let again = parse_seed_jsonl(&seeds_to_jsonl(corpus.entries()), &registry).expect("re-parse");
        assert_eq!(again.entries(), corpus.entries());
    }
});
