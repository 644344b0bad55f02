#![no_main]
use ladder_core::StateVector;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(psi) = StateVector::from_checkpoint_bytes(data) {
        // A decoded state must encode back to the same bytes.
        assert_eq!(psi.to_checkpoint_bytes(), data);
    }
});
