//! Inverse temperature, Jarzynski averages and finite-size scaling.
//!
//! With `P_ini` and `P_fin` the energy distributions before and after the
//! protocol, the work average is estimated as
//!
//! ```text
//! <exp(-beta W)> = int P_fin(E) exp(-beta E) dE / int P_ini(E) exp(-beta E) dE
//! ```
//!
//! Both integrals are evaluated with energies measured from the mean of
//! `P_ini`, which cancels in the ratio and keeps the exponentials finite.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{moments, SpectralDensity};

pub const GAMMA0: f64 = 2.6e-4;
pub const DEFAULT_EPSILONS: [f64; 3] = [0.25, 0.375, 0.5];
/// Densities below this fraction of the maximum are clamped before taking logs.
pub const CLAMP_FLOOR: f64 = 1e-12;
const MIN_FIT_POINTS: usize = 10;
const MAX_CLAMPED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub epsilon: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub clamped: usize,
    /// `(epsilon, beta)` for every window of the sweep.
    pub sensitivity: Vec<(f64, f64)>,
}

impl BetaFit {
    /// Spread of the sweep, or the fit error when larger.
    pub fn uncertainty(&self) -> f64 {
        let lo = self.sensitivity.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let hi = self.sensitivity.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let spread = if self.sensitivity.len() > 1 { 0.5 * (hi - lo) } else { 0.0 };
        spread.max(self.stderr)
    }

    /// Largest relative deviation of the sweep from the reported value.
    pub fn relative_spread(&self) -> f64 {
        self.sensitivity
            .iter()
            .map(|s| ((s.1 - self.beta) / self.beta).abs())
            .fold(0.0, f64::max)
    }
}

/// Least-squares slope of `ln n(E)` on `[E_ini - epsilon, E_ini + epsilon]`.
pub fn fit_beta(dos: &SpectralDensity, e_ini: f64, epsilon: f64) -> Result<BetaFit> {
    if !(epsilon > 0.0 && epsilon.is_finite() && e_ini.is_finite()) {
        return Err(Error::invalid("fit window must be finite and positive"));
    }
    let (lo, hi) = (e_ini - epsilon, e_ini + epsilon);
    let last = dos.energy(dos.len() - 1);
    if lo < dos.origin || hi > last {
        return Err(Error::invalid(format!(
            "fit window [{lo}, {hi}] leaves the grid [{}, {last}]",
            dos.origin
        )));
    }
    let floor = CLAMP_FLOOR * dos.max_value();
    let mut clamped = 0;
    let pts: Vec<(f64, f64)> = (0..dos.len())
        .filter(|&m| (lo..=hi).contains(&dos.energy(m)))
        .map(|m| {
            let v = dos.values[m];
            if v <= floor {
                clamped += 1;
            }
            (dos.energy(m), v.max(floor).ln())
        })
        .collect();
    let n = pts.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::UnreliableFit(format!(
            "{n} grid points in the fit window, need {MIN_FIT_POINTS}"
        )));
    }
    if clamped as f64 > MAX_CLAMPED_FRACTION * n as f64 {
        return Err(Error::UnreliableFit(format!(
            "{clamped} of {n} points in [{lo}, {hi}] are at or below the clamp floor"
        )));
    }
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let rss: f64 = pts
        .iter()
        .map(|p| (p.1 - ym - slope * (p.0 - xm)).powi(2))
        .sum();
    let stderr = (rss / (n - 2) as f64 / sxx).sqrt();
    if !(slope.is_finite() && stderr.is_finite()) {
        return Err(Error::UnreliableFit("non-finite slope".into()));
    }
    Ok(BetaFit {
        beta: slope,
        epsilon,
        stderr,
        window: (lo, hi),
        points: n,
        clamped,
        sensitivity: vec![(epsilon, slope)],
    })
}

/// Fits every window in `epsilons` and reports the widest one.
pub fn fit_beta_sweep(dos: &SpectralDensity, e_ini: f64, epsilons: &[f64]) -> Result<BetaFit> {
    let widest = epsilons
        .iter()
        .copied()
        .fold(f64::NAN, f64::max);
    if widest.is_nan() {
        return Err(Error::invalid("empty epsilon list"));
    }
    let mut fit = fit_beta(dos, e_ini, widest)?;
    fit.sensitivity = epsilons
        .iter()
        .map(|&e| fit_beta(dos, e_ini, e).map(|f| (e, f.beta)))
        .collect::<Result<_>>()?;
    Ok(fit)
}

/// Closed energy interval the work integrals run over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub fn all() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty support [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    fn contains(&self, e: f64) -> bool {
        (self.lo..=self.hi).contains(&e)
    }
}

fn check_pair(p_fin: &SpectralDensity, p_ini: &SpectralDensity) -> Result<()> {
    if !p_fin.same_grid(p_ini) {
        return Err(Error::invalid("distributions are on different grids"));
    }
    Ok(())
}

fn first_moment(p: &SpectralDensity, support: Support) -> Result<f64> {
    let mut w = 0.0;
    let mut m1 = 0.0;
    for (m, v) in p.values.iter().enumerate() {
        let e = p.energy(m);
        if support.contains(e) {
            w += v;
            m1 += e * v;
        }
    }
    if !(w > 0.0) {
        return Err(Error::numerical("distribution has no weight on the support"));
    }
    Ok(m1 / w)
}

fn weighted(p: &SpectralDensity, beta: f64, center: f64, support: Support) -> f64 {
    p.values
        .iter()
        .enumerate()
        .filter(|(m, _)| support.contains(p.energy(*m)))
        .map(|(m, v)| v * (-beta * (p.energy(m) - center)).exp())
        .sum::<f64>()
        * p.spacing
}

/// Ratio estimator of `<exp(-beta W)>` over the whole grid.
pub fn exp_work_average(p_fin: &SpectralDensity, p_ini: &SpectralDensity, beta: f64) -> Result<f64> {
    exp_work_average_on(p_fin, p_ini, beta, Support::all())
}

/// Ratio estimator restricted to `support`.
pub fn exp_work_average_on(
    p_fin: &SpectralDensity,
    p_ini: &SpectralDensity,
    beta: f64,
    support: Support,
) -> Result<f64> {
    check_pair(p_fin, p_ini)?;
    if !beta.is_finite() {
        return Err(Error::invalid("beta must be finite"));
    }
    let center = first_moment(p_ini, support)?;
    let den = weighted(p_ini, beta, center, support);
    let num = weighted(p_fin, beta, center, support);
    if !(den.abs() >= 1e-300) || !den.is_finite() {
        return Err(Error::numerical(format!(
            "denominator {den} under- or overflows; narrow the support"
        )));
    }
    let ratio = num / den;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::numerical(format!("non-positive work average {ratio}")));
    }
    Ok(ratio)
}

/// `<E_fin> - <E_ini>`.
pub fn mean_work(p_fin: &SpectralDensity, p_ini: &SpectralDensity) -> Result<f64> {
    mean_work_on(p_fin, p_ini, Support::all())
}

pub fn mean_work_on(p_fin: &SpectralDensity, p_ini: &SpectralDensity, support: Support) -> Result<f64> {
    check_pair(p_fin, p_ini)?;
    Ok(first_moment(p_fin, support)? - first_moment(p_ini, support)?)
}

/// `-ln(exp_avg) / beta`.
pub fn delta_shift(exp_avg: f64, beta: f64) -> Result<f64> {
    if !(exp_avg > 0.0 && exp_avg.is_finite()) {
        return Err(Error::invalid(format!("work average {exp_avg} must be positive")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta {beta} must be positive")));
    }
    Ok(-exp_avg.ln() / beta)
}

/// `P(E + dE)` on the same grid, by band-limited (Fourier) interpolation.
pub fn shifted_distribution(p: &SpectralDensity, de: f64) -> Result<SpectralDensity> {
    if !de.is_finite() || de.abs() >= p.extent() / 4.0 {
        return Err(Error::invalid(format!(
            "shift {de} exceeds a quarter of the grid extent {}",
            p.extent()
        )));
    }
    let m = p.len();
    let mut buf: Vec<Complex64> = p.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let s = de / p.spacing;
    for (k, x) in buf.iter_mut().enumerate() {
        let freq = if 2 * k < m {
            k as f64
        } else if 2 * k == m {
            0.0
        } else {
            k as f64 - m as f64
        };
        if 2 * k == m {
            *x *= (std::f64::consts::PI * s).cos();
        } else {
            *x *= Complex64::from_polar(1.0, std::f64::consts::TAU * freq * s / m as f64);
        }
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let mut out = p.clone();
    for (o, x) in out.values.iter_mut().zip(&buf) {
        *o = x.re / m as f64;
    }
    Ok(out)
}

/// Fraction of the distribution's weight that lies below `e_cut`, and the
/// share of the exponential average it carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailDiagnostics {
    pub e_cut: f64,
    pub tail_mass: f64,
    pub tail_share: f64,
    pub min_value: f64,
}

pub fn tail_diagnostics(
    p_fin: &SpectralDensity,
    beta: f64,
    center: f64,
    e_cut: f64,
    support: Support,
) -> TailDiagnostics {
    let mut mass = 0.0;
    let mut total = 0.0;
    let mut tail_w = 0.0;
    let mut total_w = 0.0;
    let mut min_value = f64::INFINITY;
    for (m, &v) in p_fin.values.iter().enumerate() {
        let e = p_fin.energy(m);
        if !support.contains(e) {
            continue;
        }
        let w = v * (-beta * (e - center)).exp();
        total += v;
        total_w += w;
        min_value = min_value.min(v);
        if e < e_cut {
            mass += v;
            tail_w += w;
        }
    }
    TailDiagnostics {
        e_cut,
        tail_mass: mass / total,
        tail_share: tail_w / total_w,
        min_value,
    }
}

/// One row of the work summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkReport {
    #[serde(rename = "L")]
    pub length: usize,
    pub gamma: f64,
    pub gamma_over_gamma0: f64,
    pub beta: f64,
    pub beta_err: f64,
    pub exp_avg: f64,
    pub exp_mean: f64,
    #[serde(rename = "mean_W")]
    pub mean_w: f64,
    #[serde(rename = "delta_E")]
    pub delta_e: f64,
    #[serde(rename = "delta_E_err")]
    pub delta_e_err: f64,
    /// Standard deviation of the final energy distribution.
    #[serde(rename = "Delta_E")]
    pub spread_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skewness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailDiagnostics>,
}

impl WorkReport {
    pub const CSV_HEADER: &'static str =
        "L,gamma_over_gamma0,beta,beta_err,exp_avg,exp_mean,mean_W,delta_E,delta_E_err,Delta_E";

    /// Evaluates every quantity for one protocol run.
    pub fn compute(
        length: usize,
        gamma: f64,
        beta: &BetaFit,
        p_ini: &SpectralDensity,
        p_fin: &SpectralDensity,
        support: Support,
    ) -> Result<Self> {
        let b = beta.beta;
        let exp_avg = exp_work_average_on(p_fin, p_ini, b, support)?;
        let mean_w = mean_work_on(p_fin, p_ini, support)?;
        let delta_e = delta_shift(exp_avg, b)?;
        let err = beta.uncertainty();
        let delta_e_err = if err > 0.0 && err < b {
            let up = delta_shift(exp_work_average_on(p_fin, p_ini, b + err, support)?, b + err)?;
            let down = delta_shift(exp_work_average_on(p_fin, p_ini, b - err, support)?, b - err)?;
            0.5 * (up - down).abs()
        } else {
            0.0
        };
        let (_, std, skew) = crate::spectral::windowed_moments(p_fin, support.lo, support.hi);
        let center = first_moment(p_ini, support)?;
        Ok(Self {
            length,
            gamma,
            gamma_over_gamma0: gamma / GAMMA0,
            beta: b,
            beta_err: err,
            exp_avg,
            exp_mean: (-b * mean_w).exp(),
            mean_w,
            delta_e,
            delta_e_err,
            spread_e: std,
            skewness: Some(skew),
            tail: Some(tail_diagnostics(p_fin, b, center, center - 2.0 * std, support)),
        })
    }

    /// Checks the definitional identities of a deserialized report.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gamma,
            self.gamma_over_gamma0,
            self.beta,
            self.beta_err,
            self.exp_avg,
            self.exp_mean,
            self.mean_w,
            self.delta_e,
            self.delta_e_err,
            self.spread_e,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite field in work report".into()));
        }
        if self.length == 0 || self.spread_e < 0.0 || self.beta_err < 0.0 {
            return Err(Error::Format("invalid size, spread or error".into()));
        }
        let expected = delta_shift(self.exp_avg, self.beta)
            .map_err(|e| Error::Format(e.to_string()))?;
        if (expected - self.delta_e).abs() > 1e-9 * (1.0 + expected.abs()) {
            return Err(Error::Format(format!(
                "delta_E {} disagrees with -ln(exp_avg)/beta = {expected}",
                self.delta_e
            )));
        }
        Ok(())
    }

    /// Jensen: `<exp(-beta W)> >= exp(-beta <W>)`.
    pub fn satisfies_jensen(&self) -> bool {
        self.exp_avg >= self.exp_mean
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.length,
            self.gamma_over_gamma0,
            self.beta,
            self.beta_err,
            self.exp_avg,
            self.exp_mean,
            self.mean_w,
            self.delta_e,
            self.delta_e_err,
            self.spread_e
        )
    }
}

/// Least-squares fit of `y = c g(L)` through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub c: f64,
    pub c_err: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

fn fit_through_origin(xs: &[f64], ys: &[f64]) -> PowerFit {
    let sgg: f64 = xs.iter().map(|g| g * g).sum();
    let c = xs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / sgg;
    let rss: f64 = xs.iter().zip(ys).map(|(g, y)| (y - c * g).powi(2)).sum();
    let n = xs.len() as f64;
    PowerFit {
        c,
        c_err: (rss / (n - 1.0).max(1.0) / sgg).sqrt(),
        rms: (rss / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "L")]
    pub length: usize,
    #[serde(rename = "delta_E")]
    pub delta_e: f64,
    #[serde(rename = "Delta_E")]
    pub spread_e: f64,
    pub ratio: f64,
    /// Disconnected copies of the smallest size: `M delta_E(1)`.
    pub copies_delta_e: f64,
    /// `sqrt(M) Delta_E(1)`.
    pub copies_spread_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub spread_sqrt: PowerFit,
    pub spread_linear: PowerFit,
    pub delta_sqrt: PowerFit,
    pub delta_linear: PowerFit,
}

/// Fits `Delta_E(L)` and `delta_E(L)` to `c sqrt(L)` and `c L`.
pub fn finite_size_scan(reports: &[WorkReport]) -> Result<ScalingReport> {
    let mut sorted: Vec<&WorkReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.length);
    sorted.dedup_by_key(|r| r.length);
    if sorted.len() < 3 {
        return Err(Error::invalid(format!(
            "scaling needs at least 3 distinct sizes, got {}",
            sorted.len()
        )));
    }
    let base = sorted[0];
    let rows: Vec<ScalingRow> = sorted
        .iter()
        .map(|r| {
            let m = r.length as f64 / base.length as f64;
            ScalingRow {
                length: r.length,
                delta_e: r.delta_e,
                spread_e: r.spread_e,
                ratio: r.delta_e / r.spread_e,
                copies_delta_e: m * base.delta_e,
                copies_spread_e: m.sqrt() * base.spread_e,
            }
        })
        .collect();
    let sqrt_l: Vec<f64> = rows.iter().map(|r| (r.length as f64).sqrt()).collect();
    let lin_l: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
    let spread: Vec<f64> = rows.iter().map(|r| r.spread_e).collect();
    let delta: Vec<f64> = rows.iter().map(|r| r.delta_e).collect();
    Ok(ScalingReport {
        spread_sqrt: fit_through_origin(&sqrt_l, &spread),
        spread_linear: fit_through_origin(&lin_l, &spread),
        delta_sqrt: fit_through_origin(&sqrt_l, &delta),
        delta_linear: fit_through_origin(&lin_l, &delta),
        rows,
    })
}

/// Probabilities on the grid `origin + i * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    pub origin: f64,
    pub spacing: f64,
    pub weights: Vec<f64>,
}

impl GridDistribution {
    pub fn new(origin: f64, spacing: f64, weights: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0) || weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("grid distribution needs spacing > 0 and weights >= 0"));
        }
        Ok(Self {
            origin,
            spacing,
            weights,
        })
    }

    fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().enumerate().map(|(i, w)| w * self.x(i)).sum::<f64>() / self.total()
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * (self.x(i) - m).powi(2))
            .sum::<f64>()
            / self.total())
        .sqrt()
    }

    /// `<exp(-beta W)>`.
    pub fn exp_average(&self, beta: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * (-beta * self.x(i)).exp())
            .sum::<f64>()
            / self.total()
    }

    /// Distribution of the sum of two independent draws.
    pub fn convolve(&self, other: &GridDistribution) -> Result<GridDistribution> {
        if (self.spacing - other.spacing).abs() > 1e-12 * self.spacing {
            return Err(Error::invalid("grids differ in spacing"));
        }
        let mut w = vec![0.0; self.weights.len() + other.weights.len() - 1];
        for (i, a) in self.weights.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.weights.iter().enumerate() {
                w[i + j] += a * b;
            }
        }
        GridDistribution::new(self.origin + other.origin, self.spacing, w)
    }

    /// `M`-fold self-convolution by repeated squaring.
    pub fn self_convolve(&self, m: usize) -> Result<GridDistribution> {
        if m == 0 {
            return Err(Error::invalid("convolution power must be >= 1"));
        }
        let mut result: Option<GridDistribution> = None;
        let mut base = self.clone();
        let mut k = m;
        loop {
            if k & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.convolve(&base)?,
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = base.convolve(&base)?;
        }
        Ok(result.expect("m >= 1"))
    }
}

/// Ensures a density can be used by [`moments`] and the work functions.
pub fn check_normalized(p: &SpectralDensity) -> Result<()> {
    moments(p).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{DensityKind, Window};

    fn gaussian_density(mu: f64, sigma: f64, kind: DensityKind, total: f64) -> SpectralDensity {
        let m = 4096;
        let spacing = 0.005;
        let origin = -(m as f64 / 2.0) * spacing;
        let norm = total / (sigma * std::f64::consts::TAU.sqrt());
        let values = (0..m)
            .map(|i| {
                let e = origin + i as f64 * spacing;
                norm * (-(e - mu).powi(2) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        SpectralDensity {
            origin,
            spacing,
            values,
            resolution: spacing,
            kind,
            window: Window::Rectangular,
        }
    }

    #[test]
    fn beta_of_gaussian_dos() {
        let sigma = 1.5;
        let dos = gaussian_density(0.0, sigma, DensityKind::Dos, 1e6);
        for e0 in [-2.0, -1.0, 0.5] {
            let fit = fit_beta_sweep(&dos, e0, &DEFAULT_EPSILONS).unwrap();
            let exact = -e0 / (sigma * sigma);
            assert!((fit.beta - exact).abs() <= 1e-3 * exact.abs(), "{} vs {exact}", fit.beta);
            assert_eq!(fit.epsilon, 0.5);
            assert_eq!(fit.sensitivity.len(), 3);
        }
    }

    #[test]
    fn unreliable_fits_are_refused() {
        let dos = gaussian_density(0.0, 0.05, DensityKind::Dos, 1.0);
        assert!(matches!(fit_beta(&dos, 0.0, 0.5), Err(Error::UnreliableFit(_))));
        assert!(matches!(fit_beta(&dos, 0.0, 0.01), Err(Error::UnreliableFit(_))));
        assert!(fit_beta(&dos, 100.0, 0.5).is_err());
    }

    #[test]
    fn identical_distributions() {
        let p = gaussian_density(-1.0, 0.2, DensityKind::Ldos, 1.0);
        assert!((exp_work_average(&p, &p, 1.23).unwrap() - 1.0).abs() < 1e-12);
        assert!(mean_work(&p, &p).unwrap().abs() < 1e-15);
        assert_eq!(delta_shift(1.0, 1.23).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_work_average() {
        let (beta, mu, sigma) = (1.2, 0.3, 0.25);
        let p_ini = gaussian_density(0.0, 0.01, DensityKind::Ldos, 1.0);
        let p_fin = gaussian_density(mu, (sigma * sigma + 0.01f64 * 0.01).sqrt(), DensityKind::Ldos, 1.0);
        let got = exp_work_average(&p_fin, &p_ini, beta).unwrap();
        let exact = (-beta * mu + beta * beta * sigma * sigma / 2.0).exp();
        assert!((got / exact - 1.0).abs() < 1e-3, "{got} vs {exact}");
        assert!((mean_work(&p_fin, &p_ini).unwrap() - mu).abs() < 1e-10);
    }

    #[test]
    fn delta_shift_values() {
        assert!((delta_shift(0.924, 1.23).unwrap() - 0.0643).abs() < 5e-5);
        assert!(delta_shift(0.0, 1.0).is_err());
        assert!(delta_shift(1.0, -1.0).is_err());
    }

    #[test]
    fn shift_restores_identity() {
        let beta = 1.23;
        let p_ini = gaussian_density(-0.5, 0.03, DensityKind::Ldos, 1.0);
        let p_fin = gaussian_density(-0.3, 0.4, DensityKind::Ldos, 1.0);
        let avg = exp_work_average(&p_fin, &p_ini, beta).unwrap();
        let de = delta_shift(avg, beta).unwrap();
        let shifted = shifted_distribution(&p_fin, de).unwrap();
        assert!((exp_work_average(&shifted, &p_ini, beta).unwrap() - 1.0).abs() < 1e-10);
        let a = moments(&p_fin).unwrap();
        let b = moments(&shifted).unwrap();
        assert!((a.std - b.std).abs() < 1e-8);
        assert!((a.mean - de - b.mean).abs() < 1e-8);
        assert_eq!(shifted_distribution(&p_fin, 0.0).unwrap().values.len(), p_fin.len());
        assert!(shifted_distribution(&p_fin, p_fin.extent() / 4.0).is_err());
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = gaussian_density(0.1, 0.2, DensityKind::Ldos, 1.0);
        let s = shifted_distribution(&p, 0.0).unwrap();
        for (a, b) in p.values.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn underflow_is_reported() {
        let p = gaussian_density(0.0, 0.2, DensityKind::Ldos, 1.0);
        assert!(matches!(exp_work_average(&p, &p, 1e6), Err(Error::Numerical(_))));
    }

    #[test]
    fn self_convolution_scales() {
        let w: Vec<f64> = (0..41).map(|i| (-((i as f64 - 12.0) / 5.0).powi(2)).exp() * (1.0 + 0.3 * (i as f64 / 7.0).sin())).collect();
        let p = GridDistribution::new(-0.2, 0.01, w).unwrap();
        let beta = 1.23;
        let d1 = -p.exp_average(beta).ln() / beta;
        for m in [1usize, 2, 3, 5, 8, 16] {
            let pm = p.self_convolve(m).unwrap();
            let dm = -pm.exp_average(beta).ln() / beta;
            assert!((dm / (m as f64 * d1) - 1.0).abs() < 0.01);
            assert!((pm.std() / ((m as f64).sqrt() * p.std()) - 1.0).abs() < 0.01);
            assert!((pm.mean() / (m as f64 * p.mean()) - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn report_identities() {
        let p_ini = gaussian_density(-0.5, 0.03, DensityKind::Ldos, 1.0);
        let p_fin = gaussian_density(-0.3, 0.4, DensityKind::Ldos, 1.0);
        let dos = gaussian_density(0.0, 1.0, DensityKind::Dos, 1e4);
        let fit = fit_beta_sweep(&dos, -0.5, &DEFAULT_EPSILONS).unwrap();
        let r = WorkReport::compute(3, 40.0 * GAMMA0, &fit, &p_ini, &p_fin, Support::all()).unwrap();
        r.validate().unwrap();
        assert!(r.satisfies_jensen());
        assert!((r.gamma_over_gamma0 - 40.0).abs() < 1e-12);
        assert_eq!(r.csv_row().split(',').count(), WorkReport::CSV_HEADER.split(',').count());
        let mut bad = r.clone();
        bad.delta_e += 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scan_needs_three_sizes() {
        let row = |l: usize, d: f64, s: f64| WorkReport {
            length: l,
            gamma: 0.0,
            gamma_over_gamma0: 40.0,
            beta: 1.2,
            beta_err: 0.0,
            exp_avg: (-1.2 * d).exp(),
            exp_mean: 0.5,
            mean_w: 0.5,
            delta_e: d,
            delta_e_err: 0.0,
            spread_e: s,
            skewness: None,
            tail: None,
        };
        assert!(finite_size_scan(&[row(3, 0.1, 0.3), row(4, 0.1, 0.3)]).is_err());
        let reports: Vec<WorkReport> = [4usize, 9, 16]
            .iter()
            .map(|&l| row(l, 0.02 * (l as f64).sqrt(), 0.1 * (l as f64).sqrt()))
            .collect();
        let scan = finite_size_scan(&reports).unwrap();
        assert!((scan.spread_sqrt.c - 0.1).abs() < 1e-12);
        assert!(scan.spread_sqrt.rms < 1e-12 && scan.spread_linear.rms > 1e-3);
        assert!((scan.rows[2].copies_delta_e - 4.0 * 0.04).abs() < 1e-12);
        for r in &scan.rows {
            assert!((r.ratio - 0.2).abs() < 1e-12);
        }
    }
}
