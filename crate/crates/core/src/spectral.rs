//! Densities of states from autocorrelation series.
//!
//! For `A_j = <psi|exp(-i H j dt)|psi>`, `j = 0..=K`, the density is
//!
//! ```text
//! P(E) = dt/(2 pi) [A_0 + 2 Re sum_{j=1..K} w_j A_j exp(i j dt E)]
//! ```
//!
//! with trapezoid weight `w_K = 1/2` (rectangular truncation) or a Gaussian
//! taper. It is evaluated on a zero-padded FFT grid of `M >= 4K` points
//! spanning `[-pi/dt, pi/dt)`, so that `sum P dE = A_0` holds exactly.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chebyshev::spectral_bound;
use crate::error::{Error, Result};
use crate::evolve::IntegratorConfig;
use crate::lattice::LadderSpec;
use crate::statevec::StateVector;

/// Fraction of the grid at each end inspected for aliased weight.
const EDGE_FRACTION: usize = 16;
pub const EDGE_WEIGHT_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrSeries {
    pub samples: Vec<Complex64>,
    pub dt: f64,
}

impl AutocorrSeries {
    pub fn new(samples: Vec<Complex64>, dt: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("autocorrelation needs at least one step"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self { samples, dt })
    }

    pub fn steps(&self) -> usize {
        self.samples.len() - 1
    }

    /// Total time `K dt`.
    pub fn theta(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn resolution(&self) -> f64 {
        std::f64::consts::PI / self.theta()
    }

    /// Elementwise mean of several series sharing `dt` and length.
    pub fn average(series: &[AutocorrSeries]) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::invalid("no series to average"))?;
        let mut acc = vec![Complex64::new(0.0, 0.0); first.samples.len()];
        for s in series {
            if s.samples.len() != acc.len() || s.dt != first.dt {
                return Err(Error::invalid("series differ in length or dt"));
            }
            for (a, x) in acc.iter_mut().zip(&s.samples) {
                *a += x;
            }
        }
        let n = series.len() as f64;
        Self::new(acc.into_iter().map(|a| a / n).collect(), first.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Dos,
    Ldos,
}

impl DensityKind {
    fn column(&self) -> &'static str {
        match self {
            DensityKind::Dos => "n",
            DensityKind::Ldos => "P",
        }
    }
}

/// Time-domain weighting of the autocorrelation before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Window {
    /// Plain truncation at `K dt`.
    #[default]
    Rectangular,
    /// `exp(-t^2 / (2 sigma_t^2))`, i.e. Gaussian broadening of width `1/sigma_t`.
    Gaussian { sigma_t: f64 },
}

impl Window {
    /// Gaussian taper reaching `exp(-32)` at the end of the series.
    pub fn gaussian_for(theta: f64) -> Self {
        Window::Gaussian { sigma_t: theta / 8.0 }
    }

    fn weight(&self, j: usize, k: usize, dt: f64) -> f64 {
        match *self {
            Window::Rectangular => {
                if j == k {
                    0.5
                } else {
                    1.0
                }
            }
            Window::Gaussian { sigma_t } => {
                let t = j as f64 * dt;
                (-t * t / (2.0 * sigma_t * sigma_t)).exp()
            }
        }
    }

    fn label(&self) -> String {
        match self {
            Window::Rectangular => "rectangular".into(),
            Window::Gaussian { sigma_t } => format!("gaussian {sigma_t}"),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some("rectangular"), None, None) => Ok(Window::Rectangular),
            (Some("gaussian"), Some(v), None) => {
                let sigma_t: f64 = v
                    .parse()
                    .map_err(|_| Error::Format(format!("bad window width {v:?}")))?;
                if !(sigma_t > 0.0 && sigma_t.is_finite()) {
                    return Err(Error::Format(format!("bad window width {v:?}")));
                }
                Ok(Window::Gaussian { sigma_t })
            }
            _ => Err(Error::Format(format!("unknown window {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    /// First grid energy; the grid is `origin + m * spacing`.
    pub origin: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
    /// `pi / Theta`.
    pub resolution: f64,
    pub kind: DensityKind,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl SpectralDensity {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn energy(&self, m: usize) -> f64 {
        self.origin + m as f64 * self.spacing
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.energy(m)).collect()
    }

    /// Grid extent `len * spacing`.
    pub fn extent(&self) -> f64 {
        self.len() as f64 * self.spacing
    }

    /// Trapezoid rule on the periodic grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing
    }

    /// Integral over `[lo, hi]` (grid points inside the interval).
    pub fn integral_between(&self, lo: f64, hi: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(m, _)| (lo..=hi).contains(&self.energy(*m)))
            .map(|(_, v)| v)
            .sum::<f64>()
            * self.spacing
    }

    pub fn scaled(mut self, target: f64) -> Result<Self> {
        let total = self.integral();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::numerical(format!("density integral {total} cannot be normalized")));
        }
        let f = target / total;
        self.values.iter_mut().for_each(|v| *v *= f);
        Ok(self)
    }

    pub fn same_grid(&self, other: &SpectralDensity) -> bool {
        self.len() == other.len()
            && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing
            && (self.origin - other.origin).abs() <= 1e-9 * self.spacing.max(1.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid-interpolated value at `e` (linear, zero outside the grid).
    pub fn value_at(&self, e: f64) -> f64 {
        let x = (e - self.origin) / self.spacing;
        if x < 0.0 || x > (self.len() - 1) as f64 {
            return 0.0;
        }
        let m = (x.floor() as usize).min(self.len() - 2);
        let f = x - m as f64;
        self.values[m] * (1.0 - f) + self.values[m + 1] * f
    }

    /// Local maxima above `fraction * max`, as `(energy, value)`, ascending
    /// in energy. A parabola through the three top points refines the energy.
    pub fn peaks(&self, fraction: f64) -> Vec<(f64, f64)> {
        let floor = fraction * self.max_value();
        let v = &self.values;
        (1..v.len().saturating_sub(1))
            .filter(|&m| v[m] > floor && v[m] >= v[m - 1] && v[m] > v[m + 1])
            .map(|m| {
                let denom = v[m - 1] - 2.0 * v[m] + v[m + 1];
                let shift = if denom != 0.0 {
                    0.5 * (v[m - 1] - v[m + 1]) / denom
                } else {
                    0.0
                };
                (self.energy(m) + shift * self.spacing, v[m])
            })
            .collect()
    }

    /// Signed weight in the outer sixteenth of the grid at each end, relative
    /// to the total.
    pub fn edge_weight(&self) -> f64 {
        let n = self.len() / EDGE_FRACTION;
        let edge: f64 = self.values[..n].iter().sum::<f64>()
            + self.values[self.len() - n..].iter().sum::<f64>();
        let total: f64 = self.values.iter().sum();
        (edge / total).abs()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, meta: &[(String, String)]) -> std::io::Result<()> {
        for (k, v) in meta {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "# kind: {}", self.column_kind())?;
        writeln!(w, "# resolution: {}", self.resolution)?;
        writeln!(w, "# window: {}", self.window.label())?;
        writeln!(w, "E,{}", self.kind.column())?;
        for (m, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.energy(m), v)?;
        }
        Ok(())
    }

    fn column_kind(&self) -> &'static str {
        match self.kind {
            DensityKind::Dos => "dos",
            DensityKind::Ldos => "ldos",
        }
    }

    /// Parses the CSV written by [`SpectralDensity::write_csv`]; returns the
    /// density and the remaining `#` metadata.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, Vec<(String, String)>)> {
        let mut meta = Vec::new();
        let mut kind = None;
        let mut resolution = None;
        let mut window = Window::Rectangular;
        let mut header_seen = false;
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            let bad = |what: &str| Error::Format(format!("line {}: {what}", n + 1));
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once(':').ok_or_else(|| bad("metadata without ':'"))?;
                let (k, v) = (k.trim(), v.trim());
                match k {
                    "kind" => {
                        kind = Some(match v {
                            "dos" => DensityKind::Dos,
                            "ldos" => DensityKind::Ldos,
                            _ => return Err(bad("unknown kind")),
                        })
                    }
                    "resolution" => {
                        let x: f64 = v.parse().map_err(|_| bad("bad resolution"))?;
                        if !(x > 0.0 && x.is_finite()) {
                            return Err(bad("bad resolution"));
                        }
                        resolution = Some(x);
                    }
                    "window" => window = Window::parse(v)?,
                    _ => meta.push((k.to_string(), v.to_string())),
                }
                continue;
            }
            if !header_seen {
                let expected = ["E,n", "E,P"];
                if !expected.contains(&line) {
                    return Err(bad("expected column header"));
                }
                header_seen = true;
                continue;
            }
            let (e, v) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
            let e: f64 = e.trim().parse().map_err(|_| bad("bad energy"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
            if !e.is_finite() || !v.is_finite() {
                return Err(bad("non-finite entry"));
            }
            rows.push((e, v));
        }
        let kind = kind.ok_or_else(|| Error::Format("missing '# kind' line".into()))?;
        let resolution = resolution.ok_or_else(|| Error::Format("missing '# resolution' line".into()))?;
        if rows.len() < 3 {
            return Err(Error::Format("fewer than three grid points".into()));
        }
        let origin = rows[0].0;
        let spacing = (rows[rows.len() - 1].0 - origin) / (rows.len() - 1) as f64;
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Format("grid must be increasing".into()));
        }
        for (m, (e, _)) in rows.iter().enumerate() {
            let expected = origin + m as f64 * spacing;
            if (e - expected).abs() > 1e-9 * spacing.max(expected.abs()) {
                return Err(Error::Format(format!("grid is not uniform at row {m}")));
            }
        }
        Ok((
            Self {
                origin,
                spacing,
                values: rows.into_iter().map(|r| r.1).collect(),
                resolution,
                kind,
                window,
            },
            meta,
        ))
    }
}

/// Refuses setups whose spectrum cannot fit in `(-pi/dt, pi/dt)`.
pub fn check_nyquist(spec: &LadderSpec, dt: f64) -> Result<()> {
    let bound = spectral_bound(spec, 0.0);
    let nyquist = std::f64::consts::PI / dt;
    if bound >= nyquist {
        return Err(Error::Aliasing {
            edge_weight: f64::NAN,
            nyquist,
        });
    }
    Ok(())
}

/// `<psi|exp(-i H j dt)|psi>` for `j = 0..=steps` at zero field.
pub fn autocorrelation(
    spec: &LadderSpec,
    psi: &StateVector,
    cfg: &IntegratorConfig,
    steps: usize,
) -> Result<AutocorrSeries> {
    if steps == 0 {
        return Err(Error::invalid("autocorrelation needs at least one step"));
    }
    check_nyquist(spec, cfg.dt)?;
    let pf2 = cfg.propagator(spec)?;
    AutocorrSeries::new(pf2.autocorrelation(psi, 0.0, steps)?, cfg.dt)
}

/// FFT inversion of `series` onto the padded grid, unnormalized
/// (`sum P dE = A_0`).
pub fn invert(series: &AutocorrSeries, kind: DensityKind, window: Window) -> Result<SpectralDensity> {
    let k = series.steps();
    let m = (4 * k).next_power_of_two().max(16);
    let dt = series.dt;
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (j, a) in series.samples.iter().enumerate().skip(1) {
        buf[j] = a * window.weight(j, k, dt);
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let a0 = series.samples[0].re;
    let pref = dt / std::f64::consts::TAU;
    let half = m / 2;
    // Reorder to ascending energy: indices M/2..M are negative frequencies.
    let values: Vec<f64> = (0..m)
        .map(|i| {
            let idx = (i + half) % m;
            pref * (a0 + 2.0 * buf[idx].re)
        })
        .collect();
    let spacing = std::f64::consts::TAU / (m as f64 * dt);
    let density = SpectralDensity {
        origin: -(half as f64) * spacing,
        spacing,
        values,
        resolution: series.resolution(),
        kind,
        window,
    };
    let edge = density.edge_weight();
    if !(edge <= EDGE_WEIGHT_LIMIT) {
        return Err(Error::Aliasing {
            edge_weight: edge,
            nyquist: std::f64::consts::PI / dt,
        });
    }
    Ok(density)
}

/// DOS from a Haar-random autocorrelation, scaled to the sum rule `2^spins`.
pub fn dos_estimate(series: &AutocorrSeries, spins: u32, window: Window) -> Result<SpectralDensity> {
    invert(series, DensityKind::Dos, window)?.scaled((1u64 << spins) as f64)
}

/// LDOS of `psi`, normalized to unit integral.
pub fn ldos(
    spec: &LadderSpec,
    psi: &StateVector,
    cfg: &IntegratorConfig,
    steps: usize,
    window: Window,
) -> Result<SpectralDensity> {
    let series = autocorrelation(spec, psi, cfg, steps)?;
    ldos_from_series(&series, window)
}

pub fn ldos_from_series(series: &AutocorrSeries, window: Window) -> Result<SpectralDensity> {
    invert(series, DensityKind::Ldos, window)?.scaled(1.0)
}

/// Mean and standard deviation of a normalized LDOS.
pub fn moments(density: &SpectralDensity) -> Result<Moments> {
    let total = density.integral();
    if density.kind == DensityKind::Ldos && (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("density integrates to {total}, expected 1")));
    }
    let w = density.spacing / total;
    let mean: f64 = density
        .values
        .iter()
        .enumerate()
        .map(|(m, v)| density.energy(m) * v)
        .sum::<f64>()
        * w;
    let var: f64 = density
        .values
        .iter()
        .enumerate()
        .map(|(m, v)| (density.energy(m) - mean).powi(2) * v)
        .sum::<f64>()
        * w;
    Ok(Moments {
        mean,
        std: var.max(0.0).sqrt(),
    })
}

/// Central moments of order 2 and 3 over `[lo, hi]`, as `(mean, std, skewness)`.
pub fn windowed_moments(density: &SpectralDensity, lo: f64, hi: f64) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = (0..density.len())
        .map(|m| (density.energy(m), density.values[m]))
        .filter(|(e, _)| (lo..=hi).contains(e))
        .collect();
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mean = pts.iter().map(|p| p.0 * p.1).sum::<f64>() / total;
    let m2 = pts.iter().map(|p| (p.0 - mean).powi(2) * p.1).sum::<f64>() / total;
    let m3 = pts.iter().map(|p| (p.0 - mean).powi(3) * p.1).sum::<f64>() / total;
    let std = m2.max(0.0).sqrt();
    (mean, std, if std > 0.0 { m3 / std.powi(3) } else { 0.0 })
}
