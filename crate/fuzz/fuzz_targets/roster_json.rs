#![no_main]
use forge_core::CultureRegistry;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(registry) = CultureRegistry::from_json(text) {
        for culture in registry.cultures() {
            assert!(registry.display_name(culture).is_ok());
        }
    }
});
