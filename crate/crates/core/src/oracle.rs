//! Dense exact diagonalization for small ladders.
//!
//! The Hamiltonian is real symmetric on the product basis, so a real
//! symmetric eigensolver gives the full spectrum. Spectra are capped at
//! [`MAX_DIAG_SPINS`] spins and exact work distributions at
//! [`MAX_WORK_SPINS`], both for `D^3` cost.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::capacity::required_bytes;
use crate::error::{Error, Result};
use crate::evolve::{run_protocol, IntegratorConfig};
use crate::lattice::{FieldProtocol, LadderSpec};
use crate::statevec::StateVector;

pub const MAX_DIAG_SPINS: u32 = 12;
pub const MAX_WORK_SPINS: u32 = 10;

/// Eigenvalues closer than this are treated as one degenerate level.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Initial levels carrying less weight than this are not propagated.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-15;

fn refuse(spins: u32, cap: u32) -> Result<()> {
    if spins > cap {
        let dim = 1u32 << spins.min(31);
        return Err(Error::Capacity {
            spins,
            vectors: dim,
            required_bytes: required_bytes(spins, dim),
            budget_bytes: required_bytes(cap, 1 << cap),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    spins: u32,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `n` is the eigenvector of `eigenvalues[n]`.
    pub eigenvectors: DMatrix<f64>,
}

/// The `D x D` matrix of `H_tot` at the given field factor.
pub fn dense_hamiltonian(spec: &LadderSpec, field_factor: f64) -> Result<DMatrix<f64>> {
    refuse(spec.spins(), MAX_DIAG_SPINS)?;
    let dim = spec.dim();
    let diag = spec.diagonal();
    let bonds = spec.bonds();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for s in 0..dim {
        h[(s, s)] = diag.zz(s) - field_factor * diag.imbalance(s) as f64;
        for b in &bonds {
            if ((s >> b.a) ^ (s >> b.b)) & 1 == 1 {
                h[(s ^ b.mask(), s)] += 0.5 * b.coupling;
            }
        }
    }
    Ok(h)
}

/// Full spectrum of `H_tot`, assembled from the total-`S^z` sectors.
pub fn diagonalize(spec: &LadderSpec, field_factor: f64) -> Result<DenseSpectrum> {
    let h = dense_hamiltonian(spec, field_factor)?;
    let dim = h.nrows();
    let spins = spec.spins();
    let mut pairs: Vec<(f64, Vec<(usize, f64)>)> = Vec::with_capacity(dim);
    for up in 0..=spins {
        let idx: Vec<usize> = (0..dim).filter(|s| s.count_ones() == up).collect();
        let block = DMatrix::from_fn(idx.len(), idx.len(), |r, c| h[(idx[r], idx[c])]);
        let (values, vectors) = polished_eigen(block);
        for n in 0..idx.len() {
            let column = idx
                .iter()
                .enumerate()
                .map(|(r, &s)| (s, vectors[(r, n)]))
                .collect();
            pairs.push((values[n], column));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut eigenvectors = DMatrix::<f64>::zeros(dim, dim);
    for (c, (_, column)) in pairs.iter().enumerate() {
        for &(r, v) in column {
            eigenvectors[(r, c)] = v;
        }
    }
    Ok(DenseSpectrum {
        spins,
        eigenvalues: pairs.into_iter().map(|p| p.0).collect(),
        eigenvectors,
    })
}

// The QR solver alone can stall at ~1e-8 residuals on these matrices, so its
// output is finished with cyclic Jacobi sweeps on V^T A V.
fn polished_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut v = eig.eigenvectors;
    let mut m = v.transpose() * &a * &v;
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for _ in 0..30 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= 1e-16 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}

impl DenseSpectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn spins(&self) -> u32 {
        self.spins
    }

    pub fn eigenstate(&self, n: usize) -> StateVector {
        let amps = self
            .eigenvectors
            .column(n)
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        StateVector::from_amplitudes(self.spins, amps).expect("dimension matches spectrum")
    }

    /// `<E_n|psi>` for every `n`.
    pub fn coefficients(&self, psi: &StateVector) -> Result<Vec<Complex64>> {
        psi.check_dim(self.dim())?;
        let amps = psi.amplitudes();
        Ok((0..self.dim())
            .map(|n| {
                self.eigenvectors
                    .column(n)
                    .iter()
                    .zip(amps)
                    .map(|(&v, a)| a * v)
                    .sum()
            })
            .collect())
    }

    /// `sum_n c_n |E_n>`.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Result<StateVector> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: coeffs.len(),
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); self.dim()];
        for (n, c) in coeffs.iter().enumerate() {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            for (a, &v) in amps.iter_mut().zip(self.eigenvectors.column(n).iter()) {
                *a += c * v;
            }
        }
        StateVector::from_amplitudes(self.spins, amps)
    }

    /// `(E_n, |<E_n|psi>|^2)` for every eigenstate.
    pub fn ldos_weights(&self, psi: &StateVector) -> Result<Vec<(f64, f64)>> {
        Ok(self
            .coefficients(psi)?
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, &e)| (e, c.norm_sqr()))
            .collect())
    }

    /// Index ranges of degenerate levels.
    pub fn levels(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for n in 1..=self.dim() {
            if n == self.dim() || self.eigenvalues[n] - self.eigenvalues[n - 1] > DEGENERACY_TOL {
                out.push(start..n);
                start = n;
            }
        }
        out
    }

    /// Largest `|H V - V diag(E)|` entry for `h`.
    pub fn residual(&self, h: &DMatrix<f64>) -> f64 {
        let hv = h * &self.eigenvectors;
        let mut worst = 0.0f64;
        for c in 0..self.dim() {
            for r in 0..self.dim() {
                worst = worst.max((hv[(r, c)] - self.eigenvectors[(r, c)] * self.eigenvalues[c]).abs());
            }
        }
        worst
    }
}

/// `exp(-a (H - E)^2 / 4) phi`, normalized, evaluated in the eigenbasis.
pub fn exact_filter(
    spectrum: &DenseSpectrum,
    a: f64,
    e_ini: f64,
    phi: &StateVector,
) -> Result<StateVector> {
    refuse(spectrum.spins, MAX_DIAG_SPINS)?;
    let coeffs: Vec<Complex64> = spectrum
        .coefficients(phi)?
        .iter()
        .zip(&spectrum.eigenvalues)
        .map(|(c, &e)| c * (-a * (e - e_ini).powi(2) / 4.0).exp())
        .collect();
    let mut out = spectrum.synthesize(&coeffs)?.with_seed(phi.seed());
    out.normalize()?;
    Ok(out)
}

/// `exp(-i H t) psi` for the Hamiltonian of `spectrum`.
pub fn exact_propagate(spectrum: &DenseSpectrum, t: f64, psi: &StateVector) -> Result<StateVector> {
    refuse(spectrum.spins, MAX_DIAG_SPINS)?;
    let coeffs: Vec<Complex64> = spectrum
        .coefficients(psi)?
        .iter()
        .zip(&spectrum.eigenvalues)
        .map(|(c, &e)| c * Complex64::from_polar(1.0, -e * t))
        .collect();
    Ok(spectrum.synthesize(&coeffs)?.with_seed(psi.seed()))
}

/// One outcome of the two-measurement scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkEvent {
    pub e_ini: f64,
    pub e_fin: f64,
    pub weight: f64,
}

impl WorkEvent {
    pub fn work(&self) -> f64 {
        self.e_fin - self.e_ini
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkDistribution {
    pub events: Vec<WorkEvent>,
}

impl WorkDistribution {
    pub fn total_weight(&self) -> f64 {
        self.events.iter().map(|e| e.weight).sum()
    }

    /// `<exp(-beta W)>`.
    pub fn exp_average(&self, beta: f64) -> f64 {
        self.events
            .iter()
            .map(|e| e.weight * (-beta * e.work()).exp())
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.events.iter().map(|e| e.weight * e.work()).sum()
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        self.events
            .iter()
            .map(|e| e.weight * (e.work() - m).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact two-measurement work distribution for the pure state `psi0`.
///
/// The first measurement projects `psi0` onto each degenerate level of the
/// initial Hamiltonian; every projected state is driven through the protocol
/// with the product formula at `cfg.dt` and projected onto the levels of the
/// final Hamiltonian, which equals the initial one.
pub fn exact_work_distribution(
    spec: &LadderSpec,
    protocol: &FieldProtocol,
    cfg: &IntegratorConfig,
    psi0: &StateVector,
) -> Result<WorkDistribution> {
    refuse(spec.spins(), MAX_WORK_SPINS)?;
    psi0.check_dim(spec.dim())?;
    let spectrum = diagonalize(spec, 0.0)?;
    let levels = spectrum.levels();
    let coeffs = spectrum.coefficients(psi0)?;
    let level_energy = |r: &std::ops::Range<usize>| {
        spectrum.eigenvalues[r.clone()].iter().sum::<f64>() / r.len() as f64
    };
    let mut events = Vec::new();
    for level in &levels {
        let p_ini: f64 = coeffs[level.clone()].iter().map(|c| c.norm_sqr()).sum();
        if p_ini < NEGLIGIBLE_WEIGHT {
            continue;
        }
        let mut projected = vec![Complex64::new(0.0, 0.0); spectrum.dim()];
        projected[level.clone()].copy_from_slice(&coeffs[level.clone()]);
        let state = spectrum.synthesize(&projected)?;
        let run = run_protocol(spec, protocol, cfg, &state, None)?;
        let fin = spectrum.coefficients(&run.psi_final)?;
        let e_ini = level_energy(level);
        for target in &levels {
            let weight: f64 = fin[target.clone()].iter().map(|c| c.norm_sqr()).sum();
            if weight > 0.0 {
                events.push(WorkEvent {
                    e_ini,
                    e_fin: level_energy(target),
                    weight,
                });
            }
        }
    }
    Ok(WorkDistribution { events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::apply_hamiltonian;

    fn fidelity(a: &StateVector, b: &StateVector) -> f64 {
        a.inner(b).unwrap().norm()
    }

    #[test]
    fn single_rung_levels() {
        let s = diagonalize(&LadderSpec::standard(1), 0.0).unwrap();
        let expected = [-0.13, 0.03, 0.03, 0.07];
        for (e, x) in s.eigenvalues.iter().zip(expected) {
            assert!((e - x).abs() < 1e-10);
        }
        assert_eq!(s.levels(), vec![0..1, 1..3, 3..4]);
    }

    #[test]
    fn decomposition_is_exact() {
        let spec = LadderSpec::standard(3);
        for ff in [0.0, 0.5] {
            let h = dense_hamiltonian(&spec, ff).unwrap();
            let s = diagonalize(&spec, ff).unwrap();
            let res = s.residual(&h);
            assert!(res < 1e-10, "{res}");
            let vtv = s.eigenvectors.transpose() * &s.eigenvectors;
            let id = DMatrix::<f64>::identity(64, 64);
            let dev = (vtv - id).amax();
            assert!(dev < 1e-10, "{dev}");
            assert!(s.eigenvalues.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn dense_matches_matrix_free() {
        let spec = LadderSpec::standard(2);
        let h = dense_hamiltonian(&spec, 0.3).unwrap();
        let psi = StateVector::haar_random(4, 3).unwrap();
        let out = apply_hamiltonian(&spec, 0.3, &psi).unwrap();
        for r in 0..16 {
            let row: Complex64 = (0..16).map(|c| psi.amplitudes()[c] * h[(r, c)]).sum();
            assert!((row - out.amplitudes()[r]).norm() < 1e-14);
        }
    }

    #[test]
    fn ground_state_matches_power_iteration() {
        // Power iteration on (shift - H) converges to the ground state.
        let spec = LadderSpec::standard(3);
        let s = diagonalize(&spec, 0.0).unwrap();
        let shift = 5.0;
        let mut v = StateVector::haar_random(6, 1).unwrap();
        let mut estimate = 0.0;
        for _ in 0..20000 {
            let hv = apply_hamiltonian(&spec, 0.0, &v).unwrap();
            let amps: Vec<Complex64> = v
                .amplitudes()
                .iter()
                .zip(hv.amplitudes())
                .map(|(a, b)| a * shift - b)
                .collect();
            let mut next = StateVector::from_amplitudes(6, amps).unwrap();
            next.normalize().unwrap();
            v = next;
            let e = v.inner(&apply_hamiltonian(&spec, 0.0, &v).unwrap()).unwrap().re;
            if (e - estimate).abs() < 1e-15 {
                break;
            }
            estimate = e;
        }
        assert!((estimate - s.eigenvalues[0]).abs() < 1e-8, "{estimate} vs {}", s.eigenvalues[0]);
    }

    #[test]
    fn filter_and_propagate_on_eigenstates() {
        let spec = LadderSpec::standard(2);
        let s = diagonalize(&spec, 0.0).unwrap();
        let psi = s.eigenstate(5);
        let f = exact_filter(&s, 100.0, s.eigenvalues[5] + 0.05, &psi).unwrap();
        assert!(fidelity(&f, &psi) > 1.0 - 1e-12);
        let random = StateVector::haar_random(4, 4).unwrap();
        assert_eq!(exact_propagate(&s, 0.0, &random).unwrap().amplitudes().len(), 16);
        let moved = exact_propagate(&s, 3.7, &random).unwrap();
        assert!((moved.norm() - 1.0).abs() < 1e-12);
        let back = exact_propagate(&s, 0.0, &random).unwrap();
        for (a, b) in back.amplitudes().iter().zip(random.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn capacity_refusals() {
        assert!(matches!(
            diagonalize(&LadderSpec::standard(7), 0.0),
            Err(Error::Capacity { spins: 14, .. })
        ));
        let spec = LadderSpec::standard(6);
        let psi = StateVector::haar_random(12, 0).unwrap();
        let p = FieldProtocol::new(0.5, 1.0).unwrap();
        assert!(matches!(
            exact_work_distribution(&spec, &p, &IntegratorConfig::default(), &psi),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn trivial_protocol_work_is_zero() {
        let spec = LadderSpec::standard(2);
        let psi = StateVector::haar_random(4, 9).unwrap();
        let p = FieldProtocol::new(0.0, 1.0).unwrap();
        let w = exact_work_distribution(&spec, &p, &IntegratorConfig::default(), &psi).unwrap();
        assert!((w.total_weight() - 1.0).abs() < 1e-10);
        for e in &w.events {
            if e.work().abs() > 1e-12 {
                assert!(e.weight < 1e-10, "{e:?}");
            }
        }
        let p = FieldProtocol::new(0.5, 1.0).unwrap();
        let w = exact_work_distribution(&spec, &p, &IntegratorConfig::default(), &psi).unwrap();
        assert!((w.total_weight() - 1.0).abs() < 1e-10);
    }
}
