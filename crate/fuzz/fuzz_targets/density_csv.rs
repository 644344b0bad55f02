#![no_main]
use ladder_core::spectral::SpectralDensity;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((d, _)) = SpectralDensity::read_csv(data) {
        assert!(d.len() >= 2);
        assert!(d.spacing > 0.0);
    }
});
