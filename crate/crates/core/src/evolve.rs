//! Second-order product-formula propagation.
//!
//! The Hamiltonian is split into groups `H = H_1 + ... + H_n + H_z(c)` whose
//! terms commute within each group, and one step of length `dt` at field
//! factor `c` applies the symmetric product
//!
//! ```text
//! e^{-i dt H_1/2} ... e^{-i dt H_n/2} e^{-i dt H_z(c)} e^{-i dt H_n/2} ... e^{-i dt H_1/2}
//! ```
//!
//! `H_z` holds every `S^z S^z` exchange term and the staggered field and is
//! applied as a diagonal phase. Two splittings of the remaining exchange are
//! available:
//!
//! - [`Splitting::ExchangeLayers`] (default): the flip-flop part
//!   `J (S^x S^x + S^y S^y)` of each bond, layered into even leg bonds, odd leg
//!   bonds and rungs. Every factor commutes with the total `S^z`, so the
//!   magnetization is conserved to round-off.
//! - [`Splitting::Xyz`]: all `S^x S^x` terms, then all `S^y S^y` terms. The
//!   separate x and y factors do not commute with the total `S^z`, which then
//!   drifts at `O(dt^2)`.
//!
//! Bonds of a group are applied one after another as two-site rotations in the
//! order of [`LadderSpec::bonds`]. Consecutive steps share their outermost
//! half factors, which are fused whenever no observation falls in between.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, BondKind, Diagonal, FieldProtocol, LadderSpec, PairTerm, TermGroups};
use crate::statevec::{expectation_sz_total, StateVector};

/// Quads per parallel task in the two-site kernels.
const QUAD_CHUNK: usize = 1 << 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Time step. The field is always sampled at the midpoint of each step.
    pub dt: f64,
    #[serde(default)]
    pub splitting: Splitting,
}

impl IntegratorConfig {
    pub const DEFAULT_DT: f64 = 0.02;

    pub fn new(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self {
            dt,
            splitting: Splitting::default(),
        })
    }

    pub fn with_splitting(mut self, splitting: Splitting) -> Self {
        self.splitting = splitting;
        self
    }

    pub fn propagator(&self, spec: &LadderSpec) -> Result<Pf2> {
        Pf2::with_splitting(spec, self.dt, self.splitting)
    }

    /// Number of steps `m` with `tau = m dt`, or a configuration error.
    pub fn steps_for(&self, tau: f64) -> Result<usize> {
        let m = (tau / self.dt).round();
        if m < 1.0 || ((m * self.dt - tau).abs() > 1e-9 * tau.max(self.dt)) {
            return Err(Error::invalid(format!(
                "tau = {tau} is not an integer multiple of dt = {}",
                self.dt
            )));
        }
        Ok(m as usize)
    }
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: Self::DEFAULT_DT,
            splitting: Splitting::default(),
        }
    }
}

/// How the off-diagonal exchange is grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    #[default]
    ExchangeLayers,
    Xyz,
}

/// How the x and y group exponentials of [`Splitting::Xyz`] are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// Exact 4x4 rotations on the amplitude quads selected by each bond.
    #[default]
    PairGate,
    /// Rotate every spin into the x (or y) eigenbasis, apply the group as a
    /// diagonal phase, rotate back.
    BasisRotation,
}

#[derive(Clone, Copy)]
struct SendPtr(*mut Complex64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

#[inline]
fn insert_zero(x: usize, bit: usize) -> usize {
    let low = x & ((1 << bit) - 1);
    ((x >> bit) << (bit + 1)) | low
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
    /// `S^x S^x + S^y S^y`
    FlipFlop,
}

#[derive(Debug, Clone)]
struct Layer {
    axis: Axis,
    terms: Vec<PairTerm>,
}

/// `exp(-i theta w O)` with `O = S^x S^x`, `S^y S^y` or their sum, on all
/// quads of the bond.
fn pair_rotation(amps: &mut [Complex64], term: &PairTerm, theta: f64, axis: Axis) {
    let phi = match axis {
        Axis::X | Axis::Y => 0.25 * theta * term.weight,
        Axis::FlipFlop => 0.5 * theta * term.weight,
    };
    if phi == 0.0 {
        return;
    }
    let (c, s) = (phi.cos(), phi.sin());
    // -i s mixes the anti-aligned pair; under y the aligned pair picks up
    // sgn = -1, under flip-flop it is left alone.
    let anti = Complex64::new(0.0, -s);
    let (c_aligned, aligned) = match axis {
        Axis::X => (c, anti),
        Axis::Y => (c, -anti),
        Axis::FlipFlop => (1.0, Complex64::new(0.0, 0.0)),
    };
    let (lo, hi) = (term.a.min(term.b), term.a.max(term.b));
    let (blo, bhi) = (1usize << lo, 1usize << hi);
    let quads = amps.len() >> 2;
    let ptr = SendPtr(amps.as_mut_ptr());
    let body = move |q: usize| {
        let ptr = ptr;
        let s00 = insert_zero(insert_zero(q, lo), hi);
        let (s01, s10, s11) = (s00 | blo, s00 | bhi, s00 | blo | bhi);
        // SAFETY: distinct quads touch disjoint index sets {s00, s01, s10, s11}.
        unsafe {
            let p = ptr.0;
            if axis != Axis::FlipFlop {
                let (a, b) = (*p.add(s00), *p.add(s11));
                *p.add(s00) = a * c_aligned + b * aligned;
                *p.add(s11) = b * c_aligned + a * aligned;
            }
            let (a, b) = (*p.add(s01), *p.add(s10));
            *p.add(s01) = a * c + b * anti;
            *p.add(s10) = b * c + a * anti;
        }
    };
    if quads >= 2 * QUAD_CHUNK {
        (0..quads)
            .into_par_iter()
            .with_min_len(QUAD_CHUNK)
            .for_each(body);
    } else {
        (0..quads).for_each(body);
    }
}

fn hadamard_all(amps: &mut [Complex64], spins: u32) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for q in 0..spins as usize {
        let bit = 1 << q;
        amps.par_chunks_mut(2 * bit).for_each(|blk| {
            let (lo, hi) = blk.split_at_mut(bit);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = (x + y) * r;
                *b = (x - y) * r;
            }
        });
    }
}

/// Multiplies every bit-set amplitude by `phase` on each spin.
fn phase_all(amps: &mut [Complex64], phase: Complex64) {
    amps.par_iter_mut().enumerate().for_each(|(s, a)| {
        *a *= phase.powu(s.count_ones());
    });
}

fn diagonal_pair_phase(amps: &mut [Complex64], terms: &[PairTerm], theta: f64) {
    amps.par_iter_mut().enumerate().for_each(|(s, a)| {
        let mut e = 0.0;
        for t in terms {
            let zz = if ((s >> t.a) ^ (s >> t.b)) & 1 == 1 { -1.0 } else { 1.0 };
            e += 0.25 * t.weight * zz;
        }
        *a *= Complex64::from_polar(1.0, -theta * e);
    });
}

fn layers(spec: &LadderSpec, splitting: Splitting) -> Vec<Layer> {
    match splitting {
        Splitting::Xyz => {
            let TermGroups { x, y, .. } = lattice::term_groups(spec);
            vec![
                Layer {
                    axis: Axis::X,
                    terms: x,
                },
                Layer {
                    axis: Axis::Y,
                    terms: y,
                },
            ]
        }
        Splitting::ExchangeLayers => {
            let mut even = Vec::new();
            let mut odd = Vec::new();
            let mut rungs = Vec::new();
            for b in spec.bonds() {
                let term = PairTerm {
                    a: b.a,
                    b: b.b,
                    weight: b.coupling,
                };
                match b.kind {
                    BondKind::Rung => rungs.push(term),
                    BondKind::Leg if (b.a / 2) % 2 == 0 => even.push(term),
                    BondKind::Leg => odd.push(term),
                }
            }
            [even, odd, rungs]
                .into_iter()
                .filter(|t| !t.is_empty())
                .map(|terms| Layer {
                    axis: Axis::FlipFlop,
                    terms,
                })
                .collect()
        }
    }
}

/// Second-order product-formula propagator for one ladder and time step.
#[derive(Debug, Clone)]
pub struct Pf2 {
    spec: LadderSpec,
    splitting: Splitting,
    /// Off-diagonal groups from outermost to innermost.
    layers: Vec<Layer>,
    diag: Diagonal,
    dt: f64,
    kernel: Kernel,
    /// `exp(-i dt E_zz)` indexed by (anti-aligned leg bonds, anti-aligned rungs).
    zz_phase: Vec<Complex64>,
    rung_stride: usize,
}

impl Pf2 {
    pub fn new(spec: &LadderSpec, dt: f64) -> Result<Self> {
        Self::with_splitting(spec, dt, Splitting::default())
    }

    pub fn with_splitting(spec: &LadderSpec, dt: f64, splitting: Splitting) -> Result<Self> {
        spec.validate()?;
        if !dt.is_finite() || dt == 0.0 {
            return Err(Error::invalid(format!("time step must be finite and non-zero, got {dt}")));
        }
        let diag = spec.diagonal();
        let rung_stride = diag.rungs() as usize + 1;
        let mut zz_phase = Vec::with_capacity((diag.leg_bonds() as usize + 1) * rung_stride);
        for l in 0..=diag.leg_bonds() {
            for r in 0..=diag.rungs() {
                zz_phase.push(Complex64::from_polar(1.0, -dt * diag.zz_from_counts(l, r)));
            }
        }
        Ok(Self {
            spec: *spec,
            splitting,
            layers: layers(spec, splitting),
            diag,
            dt,
            kernel: Kernel::default(),
            zz_phase,
            rung_stride,
        })
    }

    /// Selects the x/y kernel; only meaningful for [`Splitting::Xyz`].
    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn splitting(&self) -> Splitting {
        self.splitting
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn spec(&self) -> &LadderSpec {
        &self.spec
    }

    fn check(&self, amps: &[Complex64]) -> Result<()> {
        if amps.len() != self.spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim(),
                found: amps.len(),
            });
        }
        Ok(())
    }

    fn apply_layer(&self, amps: &mut [Complex64], layer: &Layer, theta: f64) {
        match (self.kernel, layer.axis) {
            (Kernel::BasisRotation, axis @ (Axis::X | Axis::Y)) => {
                let spins = self.spec.spins();
                let i = Complex64::new(0.0, 1.0);
                // V = H S^dagger maps sigma^y to sigma^z; V^dagger = S H.
                if axis == Axis::Y {
                    phase_all(amps, -i);
                }
                hadamard_all(amps, spins);
                diagonal_pair_phase(amps, &layer.terms, theta);
                hadamard_all(amps, spins);
                if axis == Axis::Y {
                    phase_all(amps, i);
                }
            }
            _ => {
                for t in &layer.terms {
                    pair_rotation(amps, t, theta, layer.axis);
                }
            }
        }
    }

    fn outer(&self, amps: &mut [Complex64], theta: f64) {
        if let Some(first) = self.layers.first() {
            self.apply_layer(amps, first, theta);
        }
    }

    /// `exp(-i theta H_z(c))` for field factor `c`.
    fn z_group(&self, amps: &mut [Complex64], theta: f64, field_factor: f64) {
        let scale = theta / self.dt;
        let length = self.spec.length as i32;
        let field: Vec<Complex64> = (-length..=length)
            .map(|m| Complex64::from_polar(1.0, theta * field_factor * m as f64))
            .collect();
        let rescaled: Option<Vec<Complex64>> = (scale != 1.0).then(|| {
            self.zz_phase
                .iter()
                .map(|p| Complex64::from_polar(1.0, p.arg() * scale))
                .collect()
        });
        let table = rescaled.as_deref().unwrap_or(&self.zz_phase);
        let diag = self.diag;
        let stride = self.rung_stride;
        amps.par_chunks_mut(lattice::CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * lattice::CHUNK;
                for (off, a) in chunk.iter_mut().enumerate() {
                    let s = base + off;
                    let (l, r) = diag.antialigned(s);
                    let m = diag.imbalance(s);
                    *a *= table[l as usize * stride + r as usize] * field[(m + length) as usize];
                }
            });
    }

    /// One full step in place.
    pub fn step_in_place(&self, amps: &mut [Complex64], field_factor: f64) -> Result<()> {
        self.check(amps)?;
        let h = 0.5 * self.dt;
        self.outer(amps, h);
        self.inner_step(amps, field_factor);
        self.outer(amps, h);
        Ok(())
    }

    /// A step without its outermost half factors.
    fn inner_step(&self, amps: &mut [Complex64], field_factor: f64) {
        let h = 0.5 * self.dt;
        let inner = self.layers.get(1..).unwrap_or(&[]);
        for layer in inner {
            self.apply_layer(amps, layer, h);
        }
        self.z_group(amps, self.dt, field_factor);
        for layer in inner.iter().rev() {
            self.apply_layer(amps, layer, h);
        }
    }

    /// Applies the steps for `fields` in order, calling `observe(j, amps)`
    /// after step `j` whenever `observe_at(j)` holds. Observed states are
    /// complete (outer x factors applied).
    pub fn evolve<O, F>(
        &self,
        amps: &mut [Complex64],
        fields: &[f64],
        observe_at: O,
        mut observe: F,
    ) -> Result<()>
    where
        O: Fn(usize) -> bool,
        F: FnMut(usize, &[Complex64]),
    {
        self.check(amps)?;
        let h = 0.5 * self.dt;
        let mut open = false;
        for (j, &ff) in fields.iter().enumerate() {
            if !open {
                self.outer(amps, h);
            }
            self.inner_step(amps, ff);
            let last = j + 1 == fields.len();
            if last || observe_at(j) {
                self.outer(amps, h);
                open = false;
                observe(j, amps);
            } else {
                self.outer(amps, self.dt);
                open = true;
            }
        }
        Ok(())
    }

    /// Autocorrelation `<psi|U^j|psi>` for `j = 0..=steps` at constant field.
    pub fn autocorrelation(
        &self,
        psi: &StateVector,
        field_factor: f64,
        steps: usize,
    ) -> Result<Vec<Complex64>> {
        self.check(psi.amplitudes())?;
        // <psi|A_h chi> = <A_h^dag psi|chi>, so the trailing outer half
        // factor of every step can stay fused.
        let h = 0.5 * self.dt;
        let mut bra = psi.amplitudes().to_vec();
        self.outer(&mut bra, -h);
        let bra = StateVector::from_amplitudes(psi.spins(), bra)?;
        let mut chi = psi.clone();
        let mut out = Vec::with_capacity(steps + 1);
        out.push(psi.inner(psi)?);
        for j in 0..steps {
            let amps = chi.amplitudes_mut();
            self.outer(amps, if j == 0 { h } else { self.dt });
            self.inner_step(amps, field_factor);
            out.push(bra.inner(&chi)?);
        }
        Ok(out)
    }
}

/// One product-formula step, returning a new state.
pub fn step_pf2(
    spec: &LadderSpec,
    field_factor: f64,
    dt: f64,
    psi: &StateVector,
) -> Result<StateVector> {
    psi.check_dim(spec.dim())?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    let pf2 = Pf2::new(spec, dt)?;
    let mut out = psi.clone();
    pf2.step_in_place(out.amplitudes_mut(), field_factor)?;
    Ok(out)
}

/// Observables recorded along a protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub norm: f64,
    /// `<H_tot(t)>` with the field at `t`.
    pub energy: f64,
    pub sz_leg1: f64,
    pub sz_leg2: f64,
}

pub trait Observer {
    fn observe(&mut self, t: f64, field_factor: f64, psi: &StateVector) -> Result<()>;
}

/// Records a [`TraceRow`] per observation.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    spec: LadderSpec,
    pub rows: Vec<TraceRow>,
}

impl TraceRecorder {
    pub fn new(spec: &LadderSpec) -> Self {
        Self {
            spec: *spec,
            rows: Vec::new(),
        }
    }
}

impl Observer for TraceRecorder {
    fn observe(&mut self, t: f64, field_factor: f64, psi: &StateVector) -> Result<()> {
        let m = expectation_sz_total(psi);
        self.rows.push(TraceRow {
            t,
            norm: psi.norm(),
            energy: lattice::energy(&self.spec, field_factor, psi)?,
            sz_leg1: m.leg1,
            sz_leg2: m.leg2,
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub psi_final: StateVector,
    pub trace: Vec<TraceRow>,
    /// Steps per half ramp, `tau / dt`.
    pub half_steps: usize,
}

/// Midpoint field factors of all `2 tau / dt` steps.
pub fn protocol_fields(protocol: &FieldProtocol, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    let m = cfg.steps_for(protocol.tau)?;
    Ok((0..2 * m)
        .map(|j| protocol.field_factor((j as f64 + 0.5) * cfg.dt))
        .collect())
}

/// Drives `psi0` through the triangular ramp. With `stride = Some(n)` a
/// [`TraceRow`] is recorded at `t = 0`, every `n` steps, and at the end.
pub fn run_protocol(
    spec: &LadderSpec,
    protocol: &FieldProtocol,
    cfg: &IntegratorConfig,
    psi0: &StateVector,
    stride: Option<usize>,
) -> Result<ProtocolRun> {
    let mut recorder = TraceRecorder::new(spec);
    let mut observers: Vec<&mut dyn Observer> = Vec::new();
    if stride.is_some() {
        observers.push(&mut recorder);
    }
    let (psi_final, half_steps) =
        run_protocol_observed(spec, protocol, cfg, psi0, stride.unwrap_or(0), &mut observers)?;
    Ok(ProtocolRun {
        psi_final,
        trace: recorder.rows,
        half_steps,
    })
}

/// [`run_protocol`] with caller-supplied observers; `stride = 0` observes only
/// the initial and final states.
pub fn run_protocol_observed(
    spec: &LadderSpec,
    protocol: &FieldProtocol,
    cfg: &IntegratorConfig,
    psi0: &StateVector,
    stride: usize,
    observers: &mut [&mut dyn Observer],
) -> Result<(StateVector, usize)> {
    psi0.check_dim(spec.dim())?;
    let fields = protocol_fields(protocol, cfg)?;
    let pf2 = cfg.propagator(spec)?;
    let mut psi = psi0.clone();
    for o in observers.iter_mut() {
        o.observe(0.0, 0.0, &psi)?;
    }
    let observing = !observers.is_empty() && stride > 0;
    let mut failure = None;
    let (spins, seed) = (psi.spins(), psi.seed());
    pf2.evolve(
        psi.amplitudes_mut(),
        &fields,
        |j| observing && (j + 1) % stride == 0,
        |j, amps| {
            if failure.is_some() || observers.is_empty() || j + 1 == fields.len() {
                return;
            }
            let t = (j + 1) as f64 * cfg.dt;
            let snapshot = StateVector::from_amplitudes(spins, amps.to_vec())
                .map(|s| s.with_seed(seed));
            let result = snapshot.and_then(|s| {
                observers
                    .iter_mut()
                    .try_for_each(|o| o.observe(t, protocol.field_factor(t), &s))
            });
            if let Err(e) = result {
                failure = Some(e);
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let t_end = fields.len() as f64 * cfg.dt;
    for o in observers.iter_mut() {
        o.observe(t_end, protocol.field_factor(t_end), &psi)?;
    }
    Ok((psi, fields.len() / 2))
}

/// Runs the protocol forward and then every step's adjoint in reverse order;
/// returns `|<psi0|psi_back>|`.
pub fn reverse_check(
    spec: &LadderSpec,
    protocol: &FieldProtocol,
    cfg: &IntegratorConfig,
    psi0: &StateVector,
) -> Result<f64> {
    psi0.check_dim(spec.dim())?;
    let fields = protocol_fields(protocol, cfg)?;
    let forward = cfg.propagator(spec)?;
    let backward = Pf2::with_splitting(spec, -cfg.dt, cfg.splitting)?;
    let mut psi = psi0.clone();
    forward.evolve(psi.amplitudes_mut(), &fields, |_| false, |_, _| {})?;
    let reversed: Vec<f64> = fields.iter().rev().copied().collect();
    backward.evolve(psi.amplitudes_mut(), &reversed, |_| false, |_, _| {})?;
    Ok(psi0.inner(&psi)?.norm())
}

/// Writes the trace as CSV with columns `t,norm,energy,sz_leg1,sz_leg2`.
pub fn write_trace_csv<W: std::io::Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "t,norm,energy,sz_leg1,sz_leg2")?;
    for r in rows {
        writeln!(
            w,
            "{:.6},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.t, r.norm, r.energy, r.sz_leg1, r.sz_leg2
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &StateVector, b: &StateVector) -> f64 {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn null_hamiltonian_is_identity() {
        let spec = LadderSpec::new(3, 0.0, 0.0, 0.6).unwrap();
        let psi = StateVector::haar_random(6, 2).unwrap();
        let out = step_pf2(&spec, 0.0, 0.02, &psi).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn kernels_agree() {
        let spec = LadderSpec::standard(3);
        let psi = StateVector::haar_random(6, 5).unwrap();
        let a = Pf2::with_splitting(&spec, 0.07, Splitting::Xyz).unwrap();
        let b = Pf2::with_splitting(&spec, 0.07, Splitting::Xyz)
            .unwrap()
            .with_kernel(Kernel::BasisRotation);
        let (mut x, mut y) = (psi.clone(), psi.clone());
        for j in 0..20 {
            a.step_in_place(x.amplitudes_mut(), 0.1 * j as f64).unwrap();
            b.step_in_place(y.amplitudes_mut(), 0.1 * j as f64).unwrap();
        }
        assert!(max_diff(&x, &y) < 1e-12, "{}", max_diff(&x, &y));
    }

    #[test]
    fn fused_evolution_matches_plain_steps() {
        let spec = LadderSpec::standard(3);
        let psi = StateVector::haar_random(6, 6).unwrap();
        let pf2 = Pf2::new(&spec, 0.02).unwrap();
        let fields: Vec<f64> = (0..50).map(|j| 0.01 * j as f64).collect();
        let mut plain = psi.clone();
        for &ff in &fields {
            pf2.step_in_place(plain.amplitudes_mut(), ff).unwrap();
        }
        let mut fused = psi.clone();
        pf2.evolve(fused.amplitudes_mut(), &fields, |j| j == 20, |_, _| {})
            .unwrap();
        assert!(max_diff(&plain, &fused) < 1e-13);

        let auto = pf2.autocorrelation(&psi, 0.0, 30).unwrap();
        let mut chi = psi.clone();
        for j in 1..=30 {
            pf2.step_in_place(chi.amplitudes_mut(), 0.0).unwrap();
            assert!((auto[j] - psi.inner(&chi).unwrap()).norm() < 1e-13);
        }
    }

    #[test]
    fn unitary_and_conserving() {
        let spec = LadderSpec::standard(3);
        let psi = StateVector::haar_random(6, 7).unwrap();
        let sz0 = psi.leg_magnetization().total();
        let protocol = FieldProtocol::new(0.5, 4.0).unwrap();
        let run = run_protocol(&spec, &protocol, &IntegratorConfig::default(), &psi, Some(10))
            .unwrap();
        assert_eq!(run.half_steps, 200);
        assert_eq!(run.trace.len(), 41);
        assert_eq!(run.trace.last().unwrap().t, 8.0);
        for row in &run.trace {
            assert!((row.norm - 1.0).abs() < 1e-12);
            assert!((row.sz_leg1 + row.sz_leg2 - sz0).abs() < 1e-12);
        }
    }

    #[test]
    fn xyz_splitting_leaks_magnetization() {
        let spec = LadderSpec::standard(3);
        let psi = StateVector::haar_random(6, 7).unwrap();
        let sz0 = psi.leg_magnetization().total();
        let pf2 = Pf2::with_splitting(&spec, 0.02, Splitting::Xyz).unwrap();
        let mut x = psi.clone();
        let fields = vec![0.3; 200];
        pf2.evolve(x.amplitudes_mut(), &fields, |_| false, |_, _| {})
            .unwrap();
        let drift = (x.leg_magnetization().total() - sz0).abs();
        assert!(drift > 1e-8 && drift < 1e-3, "{drift}");
    }

    #[test]
    fn splittings_agree_to_second_order() {
        let spec = LadderSpec::standard(3);
        let psi = StateVector::haar_random(6, 12).unwrap();
        let run = |splitting, dt: f64| {
            let pf2 = Pf2::with_splitting(&spec, dt, splitting).unwrap();
            let mut x = psi.clone();
            let n = (1.0 / dt).round() as usize;
            pf2.evolve(x.amplitudes_mut(), &vec![0.2; n], |_| false, |_, _| {})
                .unwrap();
            x
        };
        let gap = |dt| max_diff(&run(Splitting::Xyz, dt), &run(Splitting::ExchangeLayers, dt));
        let ratio = gap(0.02) / gap(0.01);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn incommensurate_tau_rejected() {
        let spec = LadderSpec::standard(1);
        let psi = StateVector::haar_random(2, 0).unwrap();
        let protocol = FieldProtocol::new(0.5, 0.031).unwrap();
        let err = run_protocol(&spec, &protocol, &IntegratorConfig::default(), &psi, None);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reverse_is_exact_and_thread_independent() {
        let spec = LadderSpec::standard(3);
        let psi = StateVector::haar_random(6, 8).unwrap();
        let protocol = FieldProtocol::new(0.5, 2.0).unwrap();
        let cfg = IntegratorConfig::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let f1 = one.install(|| reverse_check(&spec, &protocol, &cfg, &psi).unwrap());
        let f3 = three.install(|| reverse_check(&spec, &protocol, &cfg, &psi).unwrap());
        assert_eq!(f1.to_bits(), f3.to_bits());
        assert!(f1 > 1.0 - 1e-12);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(
            &mut buf,
            &[TraceRow {
                t: 0.0,
                norm: 1.0,
                energy: -1.0,
                sz_leg1: 0.5,
                sz_leg2: -0.5,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,norm,energy,sz_leg1,sz_leg2\n0.000000,"));
    }
}
