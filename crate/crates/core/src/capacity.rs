//! Memory budgeting for full state vectors.

use crate::error::{Error, Result};

/// One complex double amplitude.
pub const BYTES_PER_AMPLITUDE: u128 = 16;

/// Largest spin count addressable by the basis encoding on this platform.
pub const MAX_SPINS: u32 = if usize::BITS >= 64 { 40 } else { 24 };

const FALLBACK_BUDGET: u128 = 16 << 30;

pub fn required_bytes(spins: u32, vectors: u32) -> u128 {
    if spins >= 120 {
        return u128::MAX;
    }
    (1u128 << spins)
        .saturating_mul(BYTES_PER_AMPLITUDE)
        .saturating_mul(vectors as u128)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    bytes: u128,
}

impl MemoryBudget {
    pub fn new(bytes: u128) -> Self {
        Self { bytes }
    }

    pub fn from_gib(gib: f64) -> Self {
        Self {
            bytes: (gib * (1u64 << 30) as f64) as u128,
        }
    }

    /// Physical memory reported by the OS, or 16 GiB when it cannot be read.
    pub fn detect() -> Self {
        let bytes = std::fs::read_to_string("/proc/meminfo")
            .ok()
            .and_then(|info| {
                info.lines()
                    .find(|l| l.starts_with("MemTotal:"))
                    .and_then(|l| l.split_whitespace().nth(1))
                    .and_then(|kb| kb.parse::<u128>().ok())
            })
            .map(|kb| kb * 1024)
            .unwrap_or(FALLBACK_BUDGET);
        Self { bytes }
    }

    pub fn bytes(&self) -> u128 {
        self.bytes
    }

    /// Fails with [`Error::Capacity`] unless `vectors` live state vectors of
    /// `spins` spins fit in the budget.
    pub fn check(&self, spins: u32, vectors: u32) -> Result<()> {
        let required = required_bytes(spins, vectors);
        if spins > MAX_SPINS || required > self.bytes {
            return Err(Error::Capacity {
                spins,
                vectors,
                required_bytes: required,
                budget_bytes: self.bytes,
            });
        }
        Ok(())
    }
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self::detect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_rungs_exceed_sixteen_gib() {
        let budget = MemoryBudget::from_gib(16.0);
        let err = budget.check(32, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2^32 amplitudes"), "{msg}");
        assert!(msg.contains(&(1u128 << 36).to_string()), "{msg}");
    }

    #[test]
    fn small_systems_fit() {
        MemoryBudget::from_gib(1.0).check(20, 3).unwrap();
        assert_eq!(required_bytes(2, 1), 64);
    }
}
