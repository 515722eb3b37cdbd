#![no_main]
use forge_core::registry::parse_seed_csv;
use forge_core::CultureRegistry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let registry = CultureRegistry::bundled();
    if let Ok(corpus) = parse_seed_csv(data, &registry) {
        assert_eq!(corpus.counts().values().sum::<usize>(), corpus.len());
    }
});
