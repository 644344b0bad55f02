//! State vectors on the `S^z` product basis.
//!
//! Amplitudes are stored as one contiguous `Vec<Complex64>`, which is laid out
//! as interleaved `(re, im)` doubles. All reductions go through
//! [`pairwise_sum`], whose summation tree depends only on the vector length,
//! so results are identical for any worker count.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::capacity::{MemoryBudget, MAX_SPINS};
use crate::error::{Error, Result};

/// Amplitudes per leaf block of the reduction tree and per RNG stream.
pub const BLOCK: usize = 1 << 12;

/// Magic bytes of the binary checkpoint format.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"QWRK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_HEADER_LEN: usize = 20;
/// Seed value written for states that do not descend from a Haar sample.
pub const DERIVED_SEED: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex64>,
    spins: u32,
    seed: Option<u64>,
}

/// Expectation values of the total `S^z` on each leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegMagnetization {
    pub leg1: f64,
    pub leg2: f64,
}

impl LegMagnetization {
    pub fn total(&self) -> f64 {
        self.leg1 + self.leg2
    }
}

fn check_spins(spins: u32) -> Result<usize> {
    if spins == 0 || spins > MAX_SPINS {
        return Err(Error::invalid(format!(
            "spin count {spins} outside 1..={MAX_SPINS}"
        )));
    }
    Ok(1usize << spins)
}

impl StateVector {
    pub fn zeros(spins: u32) -> Result<Self> {
        let dim = check_spins(spins)?;
        Ok(Self {
            amps: vec![Complex64::new(0.0, 0.0); dim],
            spins,
            seed: None,
        })
    }

    pub fn basis(spins: u32, index: usize) -> Result<Self> {
        let mut psi = Self::zeros(spins)?;
        if index >= psi.dim() {
            return Err(Error::invalid(format!(
                "basis index {index} outside dimension {}",
                psi.dim()
            )));
        }
        psi.amps[index] = Complex64::new(1.0, 0.0);
        Ok(psi)
    }

    pub fn from_amplitudes(spins: u32, amps: Vec<Complex64>) -> Result<Self> {
        let dim = check_spins(spins)?;
        if amps.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: amps.len(),
            });
        }
        Ok(Self {
            amps,
            spins,
            seed: None,
        })
    }

    /// Haar-random state from `seed`, checked against the detected memory budget.
    pub fn haar_random(spins: u32, seed: u64) -> Result<Self> {
        Self::haar_random_with_budget(spins, seed, &MemoryBudget::detect())
    }

    /// Each amplitude is an independent standard complex Gaussian, the vector
    /// is then normalized.
    ///
    /// Random numbers come from ChaCha20 (`rand_chacha` 0.3): block `b` of
    /// [`BLOCK`] amplitudes reads stream `b` of the generator seeded with
    /// `seed_from_u64(seed)`. Gaussians are produced pairwise by Box-Muller on
    /// uniforms in the open interval (0, 1) built from the top 53 bits of each
    /// `u64`, the first of a pair being the real part.
    pub fn haar_random_with_budget(spins: u32, seed: u64, budget: &MemoryBudget) -> Result<Self> {
        if spins < 2 || spins % 2 != 0 {
            return Err(Error::invalid(format!(
                "Haar sampling needs an even spin count >= 2, got {spins}"
            )));
        }
        budget.check(spins, 1)?;
        let dim = check_spins(spins)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps.par_chunks_mut(BLOCK)
            .enumerate()
            .for_each(|(block, chunk)| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(block as u64);
                for a in chunk.iter_mut() {
                    *a = gaussian_pair(&mut rng);
                }
            });
        let mut psi = Self {
            amps,
            spins,
            seed: Some(seed),
        };
        psi.normalize()?;
        Ok(psi)
    }

    pub fn spins(&self) -> u32 {
        self.spins
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    /// Haar seed this state descends from, `None` for derived states.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim(),
            });
        }
        Ok(())
    }

    pub fn norm_sqr(&self) -> f64 {
        pairwise_sum_real(self.amps.len(), |i| self.amps[i].norm_sqr())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Scales to unit norm; fails for a zero or non-finite vector.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm = self.norm();
        if !(norm.is_finite() && norm > f64::MIN_POSITIVE) {
            return Err(Error::numerical(format!("cannot normalize vector of norm {norm}")));
        }
        let inv = 1.0 / norm;
        self.amps.par_iter_mut().for_each(|a| *a *= inv);
        Ok(norm)
    }

    /// `<self|other>` with the fixed reduction tree.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        inner(self, other)
    }

    /// `<S^z_1>` and `<S^z_2>`, legs being the even and odd bit positions.
    pub fn leg_magnetization(&self) -> LegMagnetization {
        expectation_sz_total(self)
    }
}

fn uniform_open(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn gaussian_pair(rng: &mut ChaCha20Rng) -> Complex64 {
    let u1 = uniform_open(rng);
    let u2 = uniform_open(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    Complex64::new(r * theta.cos(), r * theta.sin())
}

fn pairwise_leaf<T, F>(lo: usize, hi: usize, f: &F) -> T
where
    T: Copy + std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    if hi - lo <= 16 {
        let mut acc = T::default();
        for i in lo..hi {
            acc = acc + f(i);
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_leaf(lo, mid, f) + pairwise_leaf(mid, hi, f)
}

fn tree_reduce<T>(mut parts: Vec<T>) -> T
where
    T: Copy + std::ops::Add<Output = T> + Default,
{
    if parts.is_empty() {
        return T::default();
    }
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|c| if c.len() == 2 { c[0] + c[1] } else { c[0] })
            .collect();
    }
    parts[0]
}

/// Sums `f(0) + ... + f(len - 1)` over a summation tree fixed by `len` alone.
pub fn pairwise_sum<T, F>(len: usize, f: F) -> T
where
    T: Copy + std::ops::Add<Output = T> + Default + Send,
    F: Fn(usize) -> T + Sync,
{
    let blocks = len.div_ceil(BLOCK);
    let parts: Vec<T> = (0..blocks)
        .into_par_iter()
        .map(|b| pairwise_leaf(b * BLOCK, ((b + 1) * BLOCK).min(len), &f))
        .collect();
    tree_reduce(parts)
}

pub fn pairwise_sum_real<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    pairwise_sum(len, f)
}

/// `sum_j conj(phi_j) psi_j`.
pub fn inner(phi: &StateVector, psi: &StateVector) -> Result<Complex64> {
    psi.check_dim(phi.dim())?;
    let (a, b) = (phi.amplitudes(), psi.amplitudes());
    Ok(pairwise_sum(a.len(), |i| a[i].conj() * b[i]))
}

/// Bit mask of the spins on leg `leg` (0 or 1) for `spins` spins.
pub fn leg_mask(spins: u32, leg: u32) -> usize {
    let mut mask = 0usize;
    let mut bit = leg;
    while bit < spins {
        mask |= 1 << bit;
        bit += 2;
    }
    mask
}

pub fn expectation_sz_total(psi: &StateVector) -> LegMagnetization {
    let spins = psi.spins();
    let (m0, m1) = (leg_mask(spins, 0), leg_mask(spins, 1));
    let half = spins.div_ceil(2) as f64 * 0.5;
    let half1 = (spins / 2) as f64 * 0.5;
    let amps = psi.amplitudes();
    let weighted = pairwise_sum(amps.len(), |s| {
        let p = amps[s].norm_sqr();
        Complex64::new(
            p * (s & m0).count_ones() as f64,
            p * (s & m1).count_ones() as f64,
        )
    });
    let norm = psi.norm_sqr();
    LegMagnetization {
        leg1: weighted.re - half * norm,
        leg2: weighted.im - half1 * norm,
    }
}

impl StateVector {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.spins.to_le_bytes())?;
        w.write_all(&self.seed.unwrap_or(DERIVED_SEED).to_le_bytes())?;
        let mut buf = Vec::with_capacity(16 * BLOCK);
        for chunk in self.amps.chunks(BLOCK) {
            buf.clear();
            for a in chunk {
                buf.extend_from_slice(&a.re.to_le_bytes());
                buf.extend_from_slice(&a.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + 16 * self.dim());
        self.write_checkpoint(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Decodes a complete checkpoint; trailing bytes are rejected.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (spins, seed) = parse_header(bytes)?;
        let dim = 1usize << spins;
        let body = &bytes[CHECKPOINT_HEADER_LEN..];
        if body.len() as u128 != dim as u128 * 16 {
            return Err(Error::Format(format!(
                "body holds {} bytes, 2^{spins} amplitudes need {}",
                body.len(),
                dim as u128 * 16
            )));
        }
        let amps = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(Self { amps, spins, seed })
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; CHECKPOINT_HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
        let (spins, seed) = parse_header(&header)?;
        let dim = 1usize << spins;
        let mut amps = Vec::with_capacity(dim.min(BLOCK));
        let mut buf = vec![0u8; 16 * BLOCK];
        while amps.len() < dim {
            let n = (dim - amps.len()).min(BLOCK);
            r.read_exact(&mut buf[..16 * n])
                .map_err(|e| Error::Format(format!("truncated body: {e}")))?;
            amps.extend(buf[..16 * n].chunks_exact(16).map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            }));
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after body".into()));
        }
        Ok(Self { amps, spins, seed })
    }
}

fn parse_header(bytes: &[u8]) -> Result<(u32, Option<u64>)> {
    if bytes.len() < CHECKPOINT_HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the {CHECKPOINT_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let spins = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if spins == 0 || spins > MAX_SPINS {
        return Err(Error::Format(format!("spin count {spins} out of range")));
    }
    let seed = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    Ok((spins, (seed != DERIVED_SEED).then_some(seed)))
}
