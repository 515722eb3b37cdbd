#![no_main]
use forge_core::modbench::{parse_dataset, Adapter, Task};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else { return };
    let adapter = [Adapter::Jsonl, Adapter::Csv, Adapter::Tsv][pick as usize % 3];
    let task = Task::ALL[(pick as usize / 3) % Task::ALL.len()];
    if let Ok(items) = parse_dataset(rest, adapter, task) {
        assert!(items.iter().all(|i| task.labels().contains(&i.gold.as_str())));
    }
});
