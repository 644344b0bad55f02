//! The five pipeline commands. Every file a command writes lives under the
//! configured output directory:
//!
//! ```text
//! dos.csv  beta.json              dos
//! psi_ini.qwrk  p_ini.csv  prepare.json   prepare
//! rate_<r>/{p_fin.csv, trace.csv, psi_fin.qwrk}   run
//! work_report.{csv,json}  shifted_fixture.csv      analyze
//! scan/L<n>/...  scaling_report.{csv,json}         scan
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use ladder_core::capacity::MemoryBudget;
use ladder_core::chebyshev::{gaussian_filter_with_budget, spectral_bound, FilterParams};
use ladder_core::evolve::{run_protocol, write_trace_csv};
use ladder_core::spectral::{
    autocorrelation, dos_estimate, ldos_from_series, moments, AutocorrSeries, SpectralDensity,
};
use ladder_core::work::{
    delta_shift, finite_size_scan, fit_beta_sweep, shifted_distribution, BetaFit, ScalingReport,
    Support, WorkReport,
};
use ladder_core::{FieldProtocol, StateVector};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Inverse temperature used by the analysis, as stored in `beta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSidecar {
    pub config_hash: String,
    pub e_ini: f64,
    pub beta: Option<f64>,
    pub uncertainty: f64,
    pub fixed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<BetaFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BetaSidecar {
    fn as_fit(&self) -> Option<BetaFit> {
        let beta = self.beta?;
        match &self.fit {
            Some(fit) if !self.fixed => Some(fit.clone()),
            _ => Some(BetaFit {
                beta,
                epsilon: 0.0,
                stderr: 0.0,
                window: (self.e_ini, self.e_ini),
                points: 0,
                clamped: 0,
                sensitivity: Vec::new(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareRecord {
    pub config_hash: String,
    pub e_ini: f64,
    pub mean: f64,
    pub std: f64,
}

/// Contents of `work_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkSummary {
    pub config_hash: String,
    pub version: String,
    #[serde(rename = "L")]
    pub length: usize,
    pub e_ini: f64,
    pub beta: BetaSidecar,
    pub support: Support,
    pub reports: Vec<WorkReport>,
    pub worst_gamma_over_gamma0: f64,
}

impl WorkSummary {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for r in &s.reports {
            r.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(s)
    }

    pub fn worst(&self) -> Option<&WorkReport> {
        self.reports
            .iter()
            .find(|r| r.gamma_over_gamma0 == self.worst_gamma_over_gamma0)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rate: f64,
    pub gamma: f64,
    pub steps: usize,
    pub p_fin: SpectralDensity,
    pub psi_final: StateVector,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub budget: MemoryBudget,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn missing(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| missing(path, e))?;
    serde_json::from_str(&text).map_err(|e| missing(path, e))
}

pub fn rate_label(rate: f64) -> String {
    format!("rate_{rate}")
}

/// Half-duration rounded to a whole number of steps, and the realized rate.
pub fn commensurate_tau(gamma: f64, dt: f64) -> (f64, f64) {
    let steps = ((0.5 / gamma) / dt).round().max(1.0);
    let tau = steps * dt;
    (tau, 0.5 / tau)
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let out = cfg.run.output.clone();
        Self {
            cfg,
            out,
            budget: MemoryBudget::detect(),
        }
    }

    pub fn with_budget(mut self, budget: MemoryBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_output(mut self, out: impl Into<PathBuf>) -> Self {
        self.out = out.into();
        self
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn rate_path(&self, rate: f64, name: &str) -> PathBuf {
        self.out.join(rate_label(rate)).join(name)
    }

    fn spins(&self) -> u32 {
        2 * self.cfg.lattice.length as u32
    }

    fn meta(&self, extra: &[(&str, String)]) -> Vec<(String, String)> {
        let mut m = vec![
            ("config_hash".to_string(), self.cfg.hash()),
            ("version".to_string(), VERSION.to_string()),
            ("L".to_string(), self.cfg.lattice.length.to_string()),
            ("seed".to_string(), self.cfg.run.seed.to_string()),
        ];
        m.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        m
    }

    fn write_density(&self, path: &Path, d: &SpectralDensity, extra: &[(&str, String)]) -> CliResult<()> {
        let mut w = create(path)?;
        d.write_csv(&mut w, &self.meta(extra))
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(path, e))
    }

    fn read_density(&self, path: &Path) -> CliResult<SpectralDensity> {
        let f = File::open(path).map_err(|e| missing(path, e))?;
        let (d, meta) = SpectralDensity::read_csv(BufReader::new(f)).map_err(|e| missing(path, e))?;
        let hash = meta.iter().find(|(k, _)| k == "config_hash").map(|(_, v)| v.as_str());
        if hash != Some(self.cfg.hash().as_str()) {
            return Err(missing(path, "written by a different configuration"));
        }
        Ok(d)
    }

    pub fn support(&self) -> CliResult<Support> {
        let b = spectral_bound(&self.cfg.spec()?, 0.0);
        Ok(Support::new(-b, b)?)
    }

    /// Typicality estimate of the DOS and the inverse temperature at `E_ini`.
    pub fn dos(&self) -> CliResult<(SpectralDensity, BetaSidecar)> {
        let spec = self.cfg.spec()?;
        let int = self.cfg.integrator()?;
        self.budget.check(self.spins(), 2)?;
        let seed = self.cfg.run.seed;
        let series: Vec<AutocorrSeries> = (0..self.cfg.spectral.dos_vectors as u64)
            .map(|i| {
                let phi = StateVector::haar_random_with_budget(self.spins(), seed.wrapping_add(1 + i), &self.budget)?;
                autocorrelation(&spec, &phi, &int, self.cfg.spectral.k_dos)
            })
            .collect::<ladder_core::Result<_>>()?;
        let avg = AutocorrSeries::average(&series)?;
        let density = dos_estimate(&avg, self.spins(), self.cfg.window(avg.theta()))?;
        self.write_density(
            &self.path("dos.csv"),
            &density,
            &[("dos_vectors", self.cfg.spectral.dos_vectors.to_string())],
        )?;
        let e_ini = self.cfg.e_ini();
        let mut side = BetaSidecar {
            config_hash: self.cfg.hash(),
            e_ini,
            beta: None,
            uncertainty: 0.0,
            fixed: false,
            fit: None,
            error: None,
        };
        match (self.cfg.analysis.beta, fit_beta_sweep(&density, e_ini, &self.cfg.analysis.epsilons)) {
            (Some(b), fit) => {
                side.beta = Some(b);
                side.fixed = true;
                side.fit = fit.ok();
            }
            (None, Ok(fit)) if !(fit.beta > 0.0 && fit.beta.is_finite()) => {
                side.error = Some(format!(
                    "fitted beta {} is not positive; set analysis.beta or raise spectral.dos_vectors",
                    fit.beta
                ));
                side.fit = Some(fit);
            }
            (None, Ok(fit)) => {
                side.beta = Some(fit.beta);
                side.uncertainty = fit.uncertainty();
                side.fit = Some(fit);
            }
            (None, Err(e)) => side.error = Some(e.to_string()),
        }
        write_json(&self.path("beta.json"), &side)?;
        Ok((density, side))
    }

    /// Filters a Haar-random state around `E_ini` and records its LDOS.
    pub fn prepare(&self) -> CliResult<(StateVector, SpectralDensity)> {
        let spec = self.cfg.spec()?;
        let int = self.cfg.integrator()?;
        self.budget.check(self.spins(), 3)?;
        let phi = StateVector::haar_random_with_budget(self.spins(), self.cfg.run.seed, &self.budget)?;
        let params = FilterParams::for_spec(&spec, self.cfg.filter.a, self.cfg.e_ini())?;
        let psi = gaussian_filter_with_budget(&spec, &params, &phi, &self.budget)?;
        drop(phi);
        let series = autocorrelation(&spec, &psi, &int, self.cfg.spectral.k_ldos)?;
        let p_ini = ldos_from_series(&series, self.cfg.window(series.theta()))?;
        let m = moments(&p_ini)?;
        let path = self.path("psi_ini.qwrk");
        let mut w = create(&path)?;
        psi.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.write_density(
            &self.path("p_ini.csv"),
            &p_ini,
            &[
                ("a", self.cfg.filter.a.to_string()),
                ("e_ini", self.cfg.e_ini().to_string()),
                ("mean", m.mean.to_string()),
                ("std", m.std.to_string()),
            ],
        )?;
        write_json(
            &self.path("prepare.json"),
            &PrepareRecord {
                config_hash: self.cfg.hash(),
                e_ini: self.cfg.e_ini(),
                mean: m.mean,
                std: m.std,
            },
        )?;
        Ok((psi, p_ini))
    }

    /// The prepared state from an earlier `prepare` with this configuration,
    /// or a fresh one.
    pub fn prepared(&self) -> CliResult<StateVector> {
        let record: CliResult<PrepareRecord> = read_json(&self.path("prepare.json"));
        if let Ok(r) = record {
            if r.config_hash == self.cfg.hash() {
                let path = self.path("psi_ini.qwrk");
                if let Ok(f) = File::open(&path) {
                    let psi = StateVector::read_checkpoint(BufReader::new(f)).map_err(|e| missing(&path, e))?;
                    if psi.spins() == self.spins() {
                        return Ok(psi);
                    }
                }
            }
        }
        Ok(self.prepare()?.0)
    }

    /// Drives the prepared state at each rate (multiples of `gamma0`).
    pub fn run(&self, rates: &[f64]) -> CliResult<Vec<RunOutcome>> {
        for r in rates {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(CliError::Config(format!("rate {r} must be positive")));
            }
        }
        let psi = self.prepared()?;
        self.budget.check(self.spins(), 3)?;
        rates.par_iter().map(|&rate| self.run_one(&psi, rate)).collect()
    }

    fn run_one(&self, psi: &StateVector, rate: f64) -> CliResult<RunOutcome> {
        let spec = self.cfg.spec()?;
        let int = self.cfg.integrator()?;
        let nominal = rate * self.cfg.protocol.gamma0;
        let (tau, gamma) = commensurate_tau(nominal, int.dt);
        let protocol = FieldProtocol::new(self.cfg.protocol.h, tau)?;
        let run = run_protocol(&spec, &protocol, &int, psi, Some(self.cfg.integrator.trace_stride))?;
        let extra = [
            ("rate", rate.to_string()),
            ("gamma_nominal", nominal.to_string()),
            ("gamma", gamma.to_string()),
            ("tau", tau.to_string()),
            ("steps", (2 * run.half_steps).to_string()),
        ];
        let path = self.rate_path(rate, "trace.csv");
        let mut w = create(&path)?;
        for (k, v) in self.meta(&extra) {
            writeln!(w, "# {k}: {v}").map_err(|e| CliError::io(&path, e))?;
        }
        write_trace_csv(&mut w, &run.trace)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&path, e))?;
        let path = self.rate_path(rate, "psi_fin.qwrk");
        let mut w = create(&path)?;
        run.psi_final.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        let series = autocorrelation(&spec, &run.psi_final, &int, self.cfg.spectral.k_ldos)?;
        let p_fin = ldos_from_series(&series, self.cfg.window(series.theta()))?;
        self.write_density(&self.rate_path(rate, "p_fin.csv"), &p_fin, &extra)?;
        Ok(RunOutcome {
            rate,
            gamma,
            steps: 2 * run.half_steps,
            p_fin,
            psi_final: run.psi_final,
        })
    }

    /// Work statistics for every configured rate from the files on disk.
    pub fn analyze(&self) -> CliResult<WorkSummary> {
        let side: BetaSidecar = read_json(&self.path("beta.json"))?;
        if side.config_hash != self.cfg.hash() {
            return Err(missing(&self.path("beta.json"), "written by a different configuration"));
        }
        let fit = side.as_fit().ok_or_else(|| {
            CliError::Numerical(format!(
                "no inverse temperature available: {}",
                side.error.clone().unwrap_or_default()
            ))
        })?;
        let p_ini = self.read_density(&self.path("p_ini.csv"))?;
        let support = self.support()?;
        let dt = self.cfg.integrator.dt;
        let mut reports = Vec::new();
        let mut finals = Vec::new();
        for &rate in &self.cfg.protocol.rates {
            let p_fin = self.read_density(&self.rate_path(rate, "p_fin.csv"))?;
            let (_, gamma) = commensurate_tau(rate * self.cfg.protocol.gamma0, dt);
            let mut r = WorkReport::compute(self.cfg.lattice.length, gamma, &fit, &p_ini, &p_fin, support)?;
            r.gamma_over_gamma0 = gamma / self.cfg.protocol.gamma0;
            reports.push(r);
            finals.push(p_fin);
        }
        let worst = reports
            .iter()
            .enumerate()
            .max_by(|a, b| (a.1.exp_avg - 1.0).abs().total_cmp(&(b.1.exp_avg - 1.0).abs()))
            .map(|(i, _)| i)
            .expect("at least one rate");
        let summary = WorkSummary {
            config_hash: self.cfg.hash(),
            version: VERSION.to_string(),
            length: self.cfg.lattice.length,
            e_ini: self.cfg.e_ini(),
            beta: side,
            support,
            worst_gamma_over_gamma0: reports[worst].gamma_over_gamma0,
            reports,
        };
        let path = self.path("work_report.csv");
        let mut w = create(&path)?;
        let mut body = || -> std::io::Result<()> {
            for (k, v) in self.meta(&[("beta", fit.beta.to_string())]) {
                writeln!(w, "# {k}: {v}")?;
            }
            writeln!(w, "{}", WorkReport::CSV_HEADER)?;
            for r in &summary.reports {
                writeln!(w, "{}", r.csv_row())?;
            }
            w.flush()
        };
        body().map_err(|e| CliError::io(&path, e))?;
        write_json(&self.path("work_report.json"), &summary)?;
        self.write_shift_fixture(&summary.reports[worst], &finals[worst], support)?;
        Ok(summary)
    }

    fn write_shift_fixture(&self, report: &WorkReport, p_fin: &SpectralDensity, support: Support) -> CliResult<()> {
        let de = delta_shift(report.exp_avg, report.beta)?;
        let shifted = shifted_distribution(p_fin, de)?;
        let inside: Vec<usize> = (0..p_fin.len())
            .filter(|&m| (support.lo..=support.hi).contains(&p_fin.energy(m)))
            .collect();
        let linf = inside
            .iter()
            .map(|&m| (p_fin.values[m] - shifted.values[m]).abs())
            .fold(0.0, f64::max);
        let slope = inside
            .windows(2)
            .map(|w| ((p_fin.values[w[1]] - p_fin.values[w[0]]) / p_fin.spacing).abs())
            .fold(0.0, f64::max);
        let path = self.path("shifted_fixture.csv");
        let mut w = create(&path)?;
        let mut body = || -> std::io::Result<()> {
            let extra = [
                ("gamma_over_gamma0", report.gamma_over_gamma0.to_string()),
                ("delta_E", de.to_string()),
                ("linf", linf.to_string()),
                ("linf_bound", (de.abs() * slope).to_string()),
            ];
            for (k, v) in self.meta(&extra) {
                writeln!(w, "# {k}: {v}")?;
            }
            writeln!(w, "E,P_fin,P_fin_shifted")?;
            for &m in &inside {
                writeln!(w, "{},{},{}", p_fin.energy(m), p_fin.values[m], shifted.values[m])?;
            }
            w.flush()
        };
        body().map_err(|e| CliError::io(&path, e))
    }

    /// Runs the full pipeline at `rate` for every length and fits the scaling.
    pub fn scan(&self, lengths: &[usize], rate: f64) -> CliResult<ScalingReport> {
        for &l in lengths {
            let sub = self.cfg.with_length(l);
            sub.validate()?;
            self.budget.check(2 * l as u32, 3)?;
        }
        let mut reports = Vec::new();
        for &l in lengths {
            let mut cfg = self.cfg.with_length(l);
            cfg.protocol.rates = vec![rate];
            let sub = Pipeline {
                out: self.out.join("scan").join(format!("L{l}")),
                cfg,
                budget: self.budget,
            };
            sub.dos()?;
            sub.prepare()?;
            sub.run(&[rate])?;
            let summary = sub.analyze()?;
            reports.extend(summary.reports);
        }
        let report = finite_size_scan(&reports)?;
        write_json(&self.path("scaling_report.json"), &report)?;
        let path = self.path("scaling_report.csv");
        let mut w = create(&path)?;
        let mut body = || -> std::io::Result<()> {
            for (k, v) in self.meta(&[("rate", rate.to_string())]) {
                writeln!(w, "# {k}: {v}")?;
            }
            writeln!(w, "L,delta_E,Delta_E,ratio,copies_delta_E,copies_Delta_E")?;
            for r in &report.rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    r.length, r.delta_e, r.spread_e, r.ratio, r.copies_delta_e, r.copies_spread_e
                )?;
            }
            w.flush()
        };
        body().map_err(|e| CliError::io(&path, e))?;
        Ok(report)
    }
}
