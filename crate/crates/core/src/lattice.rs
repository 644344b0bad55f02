//! The two-leg XXZ ladder and the staggered leg field.
//!
//! Spin `(i, k)` (rung `i`, leg `k`) lives at bit `2 i + k` of the basis index,
//! bit set meaning spin up (`S^z = +1/2`). Interleaving keeps rung partners in
//! adjacent bits.
//!
//! ```text
//! leg 1:  (0,0) -- (1,0) -- ... -- (L-1,0)
//!           |        |               |
//! leg 2:  (0,1) -- (1,1) -- ... -- (L-1,1)
//! ```
//!
//! Legs have open ends. Rungs are vertical, coupling `(i, 0)` with `(i, 1)`;
//! a variant sometimes printed with the rung partner at `(i + 1, 1)` and the
//! rung sum running to `L` does not close on an open ladder and is not used.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::MAX_SPINS;
use crate::error::{Error, Result};
use crate::statevec::{leg_mask, StateVector};

/// Output amplitudes per parallel task.
pub(crate) const CHUNK: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderSpec {
    /// Sites per leg, `L`.
    pub length: usize,
    pub j_par: f64,
    pub j_perp: f64,
    /// Anisotropy of the `S^z S^z` exchange.
    pub delta: f64,
}

impl LadderSpec {
    pub const DEFAULT_J_PAR: f64 = 1.0;
    pub const DEFAULT_J_PERP: f64 = 0.2;
    pub const DEFAULT_DELTA: f64 = 0.6;

    pub fn new(length: usize, j_par: f64, j_perp: f64, delta: f64) -> Result<Self> {
        let spec = Self {
            length,
            j_par,
            j_perp,
            delta,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `J_par = 1`, `J_perp = 0.2`, `Delta = 0.6`.
    pub fn standard(length: usize) -> Self {
        Self {
            length,
            j_par: Self::DEFAULT_J_PAR,
            j_perp: Self::DEFAULT_J_PERP,
            delta: Self::DEFAULT_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || 2 * self.length > MAX_SPINS as usize {
            return Err(Error::invalid(format!(
                "ladder length {} outside 1..={}",
                self.length,
                MAX_SPINS / 2
            )));
        }
        if !(self.j_par.is_finite() && self.j_par >= 0.0) {
            return Err(Error::invalid(format!("J_par must be >= 0, got {}", self.j_par)));
        }
        if !(self.j_perp.is_finite() && self.j_perp >= 0.0) {
            return Err(Error::invalid(format!("J_perp must be >= 0, got {}", self.j_perp)));
        }
        if !self.delta.is_finite() {
            return Err(Error::invalid("Delta must be finite"));
        }
        Ok(())
    }

    pub fn spins(&self) -> u32 {
        2 * self.length as u32
    }

    pub fn dim(&self) -> usize {
        1 << self.spins()
    }

    /// Leg bonds first (rung by rung, leg 0 before leg 1), then rungs.
    pub fn bonds(&self) -> Vec<Bond> {
        let mut bonds = Vec::with_capacity(3 * self.length);
        for i in 0..self.length.saturating_sub(1) {
            for k in 0..2 {
                bonds.push(Bond {
                    a: SiteIndex::new(i, k).bit(),
                    b: SiteIndex::new(i + 1, k).bit(),
                    coupling: self.j_par,
                    kind: BondKind::Leg,
                });
            }
        }
        for i in 0..self.length {
            bonds.push(Bond {
                a: SiteIndex::new(i, 0).bit(),
                b: SiteIndex::new(i, 1).bit(),
                coupling: self.j_perp,
                kind: BondKind::Rung,
            });
        }
        bonds
    }

    pub(crate) fn diagonal(&self) -> Diagonal {
        Diagonal::new(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SiteIndex {
    pub rung: usize,
    pub leg: usize,
}

impl SiteIndex {
    pub fn new(rung: usize, leg: usize) -> Self {
        debug_assert!(leg < 2);
        Self { rung, leg }
    }

    pub fn bit(&self) -> usize {
        2 * self.rung + self.leg
    }

    pub fn from_bit(bit: usize) -> Self {
        Self {
            rung: bit / 2,
            leg: bit % 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondKind {
    Leg,
    Rung,
}

/// `coupling * (S^x_a S^x_b + S^y_a S^y_b + Delta S^z_a S^z_b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub coupling: f64,
    pub kind: BondKind,
}

impl Bond {
    pub fn mask(&self) -> usize {
        (1 << self.a) | (1 << self.b)
    }
}

/// `weight * S^alpha_a S^alpha_b` for a fixed axis alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerm {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl PairTerm {
    pub fn mask(&self) -> usize {
        (1 << self.a) | (1 << self.b)
    }
}

/// The Hamiltonian split by spin axis. The staggered field
/// `-h f(t) (S^z_1 - S^z_2)` belongs to the z group.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGroups {
    pub x: Vec<PairTerm>,
    pub y: Vec<PairTerm>,
    pub z: Vec<PairTerm>,
    pub leg_masks: [usize; 2],
}

pub fn term_groups(spec: &LadderSpec) -> TermGroups {
    let bonds = spec.bonds();
    let pick = |w: &dyn Fn(&Bond) -> f64| {
        bonds
            .iter()
            .map(|b| PairTerm {
                a: b.a,
                b: b.b,
                weight: w(b),
            })
            .collect::<Vec<_>>()
    };
    TermGroups {
        x: pick(&|b| b.coupling),
        y: pick(&|b| b.coupling),
        z: pick(&|b| b.coupling * spec.delta),
        leg_masks: [leg_mask(spec.spins(), 0), leg_mask(spec.spins(), 1)],
    }
}

/// Triangular ramp `f(t)`: up to 1 at `tau`, back to 0 at `2 tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldProtocol {
    /// Field strength `h`.
    pub h: f64,
    /// Half-duration of the ramp.
    pub tau: f64,
}

impl FieldProtocol {
    pub const DEFAULT_H: f64 = 0.5;

    pub fn new(h: f64, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {tau}")));
        }
        if !h.is_finite() {
            return Err(Error::invalid("h must be finite"));
        }
        Ok(Self { h, tau })
    }

    /// Protocol with sweep rate `gamma = 1 / (2 tau)`.
    pub fn from_rate(h: f64, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
        }
        Self::new(h, 0.5 / gamma)
    }

    pub fn gamma(&self) -> f64 {
        0.5 / self.tau
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.tau
    }

    pub fn shape(&self, t: f64) -> f64 {
        if t <= 0.0 || t > 2.0 * self.tau {
            0.0
        } else if t <= self.tau {
            t / self.tau
        } else {
            2.0 - t / self.tau
        }
    }

    /// `h f(t)`, the prefactor of `-(S^z_1 - S^z_2)`.
    pub fn field_factor(&self, t: f64) -> f64 {
        self.h * self.shape(t)
    }
}

/// Popcount form of the diagonal: `S^z S^z` energies of leg and rung bonds and
/// the leg imbalance `S^z_1 - S^z_2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Diagonal {
    leg_pairs: usize,
    leg_bonds: u32,
    rung_pairs: usize,
    rungs: u32,
    leg_zz: f64,
    rung_zz: f64,
    legs: [usize; 2],
}

impl Diagonal {
    fn new(spec: &LadderSpec) -> Self {
        let n = spec.spins();
        let leg_pairs = if n > 2 { (1usize << (n - 2)) - 1 } else { 0 };
        Self {
            leg_pairs,
            leg_bonds: 2 * (spec.length as u32 - 1),
            rung_pairs: leg_mask(n, 0),
            rungs: spec.length as u32,
            leg_zz: 0.25 * spec.j_par * spec.delta,
            rung_zz: 0.25 * spec.j_perp * spec.delta,
            legs: [leg_mask(n, 0), leg_mask(n, 1)],
        }
    }

    /// Anti-aligned leg bonds and anti-aligned rungs of basis state `s`.
    #[inline]
    pub fn antialigned(&self, s: usize) -> (u32, u32) {
        (
            ((s ^ (s >> 2)) & self.leg_pairs).count_ones(),
            ((s ^ (s >> 1)) & self.rung_pairs).count_ones(),
        )
    }

    #[inline]
    pub fn zz_from_counts(&self, leg_anti: u32, rung_anti: u32) -> f64 {
        self.leg_zz * (self.leg_bonds as f64 - 2.0 * leg_anti as f64)
            + self.rung_zz * (self.rungs as f64 - 2.0 * rung_anti as f64)
    }

    #[inline]
    pub fn zz(&self, s: usize) -> f64 {
        let (l, r) = self.antialigned(s);
        self.zz_from_counts(l, r)
    }

    /// Eigenvalue of `S^z_1 - S^z_2` on basis state `s`.
    #[inline]
    pub fn imbalance(&self, s: usize) -> i32 {
        (s & self.legs[0]).count_ones() as i32 - (s & self.legs[1]).count_ones() as i32
    }

    pub fn leg_bonds(&self) -> u32 {
        self.leg_bonds
    }

    pub fn rungs(&self) -> u32 {
        self.rungs
    }
}

/// `(H - field_factor (S^z_1 - S^z_2)) psi` without forming a matrix.
pub fn apply_hamiltonian(
    spec: &LadderSpec,
    field_factor: f64,
    psi: &StateVector,
) -> Result<StateVector> {
    psi.check_dim(spec.dim())?;
    let mut out = StateVector::zeros(spec.spins())?.with_seed(psi.seed());
    apply_hamiltonian_into(spec, field_factor, psi.amplitudes(), out.amplitudes_mut())?;
    Ok(out)
}

/// `out = H_tot psi` on raw amplitude slices.
pub fn apply_hamiltonian_into(
    spec: &LadderSpec,
    field_factor: f64,
    psi: &[Complex64],
    out: &mut [Complex64],
) -> Result<()> {
    apply_scaled_into(spec, field_factor, 1.0, 0.0, psi, out, false)
}

/// `out = scale * (H_tot - shift) psi`, minus the old contents of `out` when
/// `subtract_out` is set (one step of the Chebyshev recursion in place).
pub(crate) fn apply_scaled_into(
    spec: &LadderSpec,
    field_factor: f64,
    scale: f64,
    shift: f64,
    psi: &[Complex64],
    out: &mut [Complex64],
    subtract_out: bool,
) -> Result<()> {
    let dim = spec.dim();
    if psi.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: psi.len(),
        });
    }
    if out.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: out.len(),
        });
    }
    if !field_factor.is_finite() {
        return Err(Error::invalid("field factor must be finite"));
    }
    let diag = spec.diagonal();
    let flips: Vec<(usize, usize, usize, f64)> = spec
        .bonds()
        .into_iter()
        .filter(|b| b.coupling != 0.0)
        .map(|b| (b.a, b.b, b.mask(), 0.5 * b.coupling))
        .collect();
    out.par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (off, o) in chunk.iter_mut().enumerate() {
                let s = base + off;
                let e = diag.zz(s) - field_factor * diag.imbalance(s) as f64 - shift;
                let mut acc = psi[s] * e;
                for &(a, b, mask, half) in &flips {
                    if ((s >> a) ^ (s >> b)) & 1 == 1 {
                        acc += psi[s ^ mask] * half;
                    }
                }
                acc *= scale;
                if subtract_out {
                    acc -= *o;
                }
                *o = acc;
            }
        });
    Ok(())
}

/// `-(S^z_1 - S^z_2) psi`, the field operator at unit field factor.
pub fn apply_field_operator(spec: &LadderSpec, psi: &StateVector) -> Result<StateVector> {
    psi.check_dim(spec.dim())?;
    let diag = spec.diagonal();
    let amps: Vec<Complex64> = psi
        .amplitudes()
        .par_iter()
        .enumerate()
        .map(|(s, a)| a * -(diag.imbalance(s) as f64))
        .collect();
    Ok(StateVector::from_amplitudes(spec.spins(), amps)?.with_seed(psi.seed()))
}

/// `<psi| H_tot |psi>` (real part; the imaginary part vanishes for Hermitian H).
pub fn energy(spec: &LadderSpec, field_factor: f64, psi: &StateVector) -> Result<f64> {
    let h_psi = apply_hamiltonian(spec, field_factor, psi)?;
    Ok(psi.inner(&h_psi)?.re)
}
