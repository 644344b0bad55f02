#![no_main]
use ladder_experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    for json in [false, true] {
        if let Ok(cfg) = ExperimentConfig::parse(data, json) {
            let back = ExperimentConfig::parse(&cfg.to_toml(), false).expect("serialized config parses");
            assert_eq!(back.hash(), cfg.hash());
        }
    }
});
