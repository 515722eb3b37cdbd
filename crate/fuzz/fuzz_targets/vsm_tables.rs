#![no_main]
use forge_core::vsm::{QuestionBank, ReferenceTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else { return };
    if pick & 1 == 0 {
        if let Ok(bank) = QuestionBank::from_csv(rest) {
            let _ = bank.question(24);
        }
    } else {
        let _ = ReferenceTable::from_csv(rest);
    }
});
