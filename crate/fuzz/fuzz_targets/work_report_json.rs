#![no_main]
use ladder_experiment::WorkSummary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = WorkSummary::from_json(data);
});
