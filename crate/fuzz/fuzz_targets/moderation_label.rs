#![no_main]
use forge_core::modbench::{parse_label, Prediction, Task};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else { return };
    let task = Task::ALL[pick as usize % Task::ALL.len()];
    if let Prediction::Label(label) = parse_label(task, &String::from_utf8_lossy(rest)) {
        assert!(task.labels().contains(&label.as_str()));
    }
});
