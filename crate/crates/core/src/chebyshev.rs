//! Gaussian energy filter `exp(-a (H - E)^2 / 4)` by Chebyshev expansion.
//!
//! `H` is rescaled to `H / bound` with `bound` from [`spectral_bound`], so the
//! spectrum sits inside `[-1, 1]`. Coefficients come from one real FFT of the
//! function sampled on the Chebyshev angle grid.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::capacity::MemoryBudget;
use crate::error::{Error, Result};
use crate::lattice::{apply_scaled_into, LadderSpec};
use crate::statevec::StateVector;

pub const DEFAULT_SHARPNESS: f64 = 1000.0;
pub const COEFFICIENT_CUTOFF: f64 = 1e-16;
const MIN_FFT: usize = 256;
const MAX_FFT: usize = 1 << 24;

/// Upper bound on `||H + h S||` for every field in `[0, h_max]`.
///
/// Each bond contributes `J (2 + Delta) / 4`; the field term contributes
/// `h_max L`.
pub fn spectral_bound(spec: &LadderSpec, h_max: f64) -> f64 {
    let bonds: f64 = spec
        .bonds()
        .iter()
        .map(|b| b.coupling.abs() * (2.0 + spec.delta.abs()) / 4.0)
        .sum();
    bonds + h_max.abs() * spec.length as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebCoefficients {
    /// `c_0 .. c_{K-1}`; the expansion weights `c_0` by one half.
    pub c: Vec<f64>,
    pub fft_len: usize,
}

impl ChebCoefficients {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// `c_0/2 + sum c_k T_k(x)`.
    pub fn evaluate(&self, x: f64) -> f64 {
        let (mut t0, mut t1) = (1.0, x);
        let mut acc = 0.0;
        for (k, &c) in self.c.iter().enumerate() {
            let t = match k {
                0 => t0,
                1 => t1,
                _ => {
                    let t2 = 2.0 * x * t1 - t0;
                    t0 = t1;
                    t1 = t2;
                    t2
                }
            };
            acc += if k == 0 { 0.5 * c } else { c * t };
        }
        acc
    }
}

/// `c_k = Re[(2/N) sum_n f(cos 2 pi n / N) e^{2 pi i n k / N}]`, truncated
/// before the first pair of consecutive coefficients below the cutoff.
pub fn chebyshev_coefficients<F: Fn(f64) -> f64>(f: F, fft_len: usize) -> Result<ChebCoefficients> {
    if !fft_len.is_power_of_two() || fft_len < 4 {
        return Err(Error::invalid(format!("FFT length {fft_len} must be a power of two >= 4")));
    }
    let mut buf: Vec<Complex64> = (0..fft_len)
        .map(|n| {
            let theta = std::f64::consts::TAU * n as f64 / fft_len as f64;
            Complex64::new(f(theta.cos()), 0.0)
        })
        .collect();
    if buf.iter().any(|v| !v.re.is_finite()) {
        return Err(Error::invalid("function is not finite on [-1, 1]"));
    }
    FftPlanner::new().plan_fft_inverse(fft_len).process(&mut buf);
    let norm = 2.0 / fft_len as f64;
    let half = fft_len / 2;
    let c: Vec<f64> = buf[..half].iter().map(|v| v.re * norm).collect();
    let cut = (0..half - 1)
        .find(|&k| c[k].abs() < COEFFICIENT_CUTOFF && c[k + 1].abs() < COEFFICIENT_CUTOFF)
        .ok_or(Error::Resolution {
            grid: fft_len,
            limit: half,
        })?;
    Ok(ChebCoefficients {
        c: c[..cut].to_vec(),
        fft_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub a: f64,
    pub e_ini: f64,
    pub bound: f64,
}

impl FilterParams {
    pub fn new(a: f64, e_ini: f64, bound: f64) -> Result<Self> {
        let p = Self { a, e_ini, bound };
        p.validate()?;
        Ok(p)
    }

    /// Bound taken from the zero-field Hamiltonian of `spec`.
    pub fn for_spec(spec: &LadderSpec, a: f64, e_ini: f64) -> Result<Self> {
        Self::new(a, e_ini, spectral_bound(spec, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!("filter sharpness a = {} must be positive", self.a)));
        }
        if !self.e_ini.is_finite() {
            return Err(Error::invalid("target energy must be finite"));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::invalid(format!("spectral bound {} must be positive", self.bound)));
        }
        Ok(())
    }

    /// Coefficients of the rescaled Gaussian, doubling the FFT grid until
    /// the tail resolves.
    pub fn coefficients(&self) -> Result<ChebCoefficients> {
        self.validate()?;
        let a_t = self.a * self.bound * self.bound;
        let e_t = self.e_ini / self.bound;
        let f = |x: f64| (-a_t * (x - e_t).powi(2) / 4.0).exp();
        let mut n = MIN_FFT;
        loop {
            match chebyshev_coefficients(f, n) {
                Err(Error::Resolution { .. }) if n < MAX_FFT => n *= 2,
                other => return other,
            }
        }
    }
}

/// Normalized `exp(-a (H - E_ini)^2 / 4) phi` at zero field.
pub fn gaussian_filter(
    spec: &LadderSpec,
    params: &FilterParams,
    phi: &StateVector,
) -> Result<StateVector> {
    gaussian_filter_with_budget(spec, params, phi, &MemoryBudget::detect())
}

pub fn gaussian_filter_with_budget(
    spec: &LadderSpec,
    params: &FilterParams,
    phi: &StateVector,
    budget: &MemoryBudget,
) -> Result<StateVector> {
    phi.check_dim(spec.dim())?;
    let coeffs = params.coefficients()?;
    apply_expansion(spec, &coeffs, params.bound, phi, budget)
}

/// `sum_k c_k T_k(H / bound) phi` with the `c_0 / 2` convention, normalized.
pub fn apply_expansion(
    spec: &LadderSpec,
    coeffs: &ChebCoefficients,
    bound: f64,
    phi: &StateVector,
    budget: &MemoryBudget,
) -> Result<StateVector> {
    phi.check_dim(spec.dim())?;
    budget.check(spec.spins(), 3)?;
    let c = &coeffs.c;
    let dim = spec.dim();
    let zero = Complex64::new(0.0, 0.0);
    let mut result: Vec<Complex64> = phi
        .amplitudes()
        .iter()
        .map(|a| a * (0.5 * c.first().copied().unwrap_or(0.0)))
        .collect();
    if c.len() > 1 {
        let mut prev = phi.amplitudes().to_vec();
        let mut cur = vec![zero; dim];
        apply_scaled_into(spec, 0.0, 1.0 / bound, 0.0, &prev, &mut cur, false)?;
        axpy(&mut result, c[1], &cur);
        for &ck in &c[2..] {
            apply_scaled_into(spec, 0.0, 2.0 / bound, 0.0, &cur, &mut prev, true)?;
            std::mem::swap(&mut prev, &mut cur);
            axpy(&mut result, ck, &cur);
        }
    }
    let mut out = StateVector::from_amplitudes(spec.spins(), result)?.with_seed(phi.seed());
    out.normalize()?;
    Ok(out)
}

fn axpy(y: &mut [Complex64], a: f64, x: &[Complex64]) {
    use rayon::prelude::*;
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += x * a);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        assert!((spectral_bound(&LadderSpec::standard(1), 0.0) - 0.13).abs() < 1e-15);
        let zero = LadderSpec::new(4, 0.0, 0.0, 0.6).unwrap();
        assert_eq!(spectral_bound(&zero, 0.0), 0.0);
        let spec = LadderSpec::standard(3);
        let expected = 4.0 * 2.6 / 4.0 + 3.0 * 0.2 * 2.6 / 4.0 + 0.5 * 3.0;
        assert!((spectral_bound(&spec, 0.5) - expected).abs() < 1e-12);
    }

    #[test]
    fn identity_and_t2() {
        let one = chebyshev_coefficients(|_| 1.0, 64).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one.c[0] - 2.0).abs() < 1e-15);
        let t2 = chebyshev_coefficients(|x| 2.0 * x * x - 1.0, 64).unwrap();
        assert_eq!(t2.len(), 3);
        assert!(t2.c[0].abs() < 1e-15 && t2.c[1].abs() < 1e-15);
        assert!((t2.c[2] - 1.0).abs() < 1e-15);
        assert!((t2.evaluate(0.3) - (2.0 * 0.09 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn unresolved_grid_is_reported() {
        let p = FilterParams::new(1000.0, -1.0, 14.0).unwrap();
        let a_t = p.a * p.bound * p.bound;
        let err = chebyshev_coefficients(|x| (-a_t * x * x / 4.0).exp(), 64).unwrap_err();
        assert!(matches!(err, Error::Resolution { grid: 64, .. }));
        assert!(p.coefficients().is_ok());
    }

    #[test]
    fn params_validate() {
        assert!(FilterParams::new(0.0, 0.0, 1.0).is_err());
        assert!(FilterParams::new(1.0, f64::NAN, 1.0).is_err());
        assert!(FilterParams::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn expansion_reproduces_gaussian() {
        let p = FilterParams::new(1000.0, -0.84, 5.0).unwrap();
        let c = p.coefficients().unwrap();
        for i in 0..=200 {
            let x = -1.0 + i as f64 / 100.0;
            let exact = (-p.a * p.bound * p.bound * (x - p.e_ini / p.bound).powi(2) / 4.0).exp();
            assert!((c.evaluate(x) - exact).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn filter_is_normalized() {
        let spec = LadderSpec::standard(3);
        let phi = StateVector::haar_random(6, 5).unwrap();
        let p = FilterParams::for_spec(&spec, 100.0, -0.84).unwrap();
        let out = gaussian_filter(&spec, &p, &phi).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-12);
        assert_eq!(out.seed(), Some(5));
    }
}
