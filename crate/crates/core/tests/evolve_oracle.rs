use ladder_core::evolve::{reverse_check, run_protocol, IntegratorConfig, Pf2, Splitting};
use ladder_core::lattice::energy;
use ladder_core::oracle::{diagonalize, exact_propagate};
use ladder_core::{FieldProtocol, LadderSpec, StateVector};

fn constant_evolve(spec: &LadderSpec, pf2: &Pf2, ff: f64, steps: usize, psi: &StateVector) -> StateVector {
    let mut out = psi.clone();
    let fields = vec![ff; steps];
    pf2.evolve(out.amplitudes_mut(), &fields, |_| false, |_, _| {}).unwrap();
    let _ = spec;
    out
}

fn distance(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[test]
fn eigenstate_acquires_phase() {
    // The xyz splitting leaks O(dt^2) amplitude out of the eigenstate.
    for (splitting, tol) in [(Splitting::ExchangeLayers, 1e-10), (Splitting::Xyz, 1e-9)] {
        let spec = LadderSpec::standard(3);
        let ff = 0.3;
        let s = diagonalize(&spec, ff).unwrap();
        let n = 20;
        let psi = s.eigenstate(n);
        let pf2 = Pf2::with_splitting(&spec, 0.02, splitting).unwrap();
        let steps = 500;
        let out = constant_evolve(&spec, &pf2, ff, steps, &psi);
        let overlap = psi.inner(&out).unwrap();
        assert!((overlap.norm() - 1.0).abs() < tol, "{splitting:?}: {}", 1.0 - overlap.norm());
        let t = steps as f64 * 0.02;
        let expected = -s.eigenvalues[n] * t;
        let diff = (overlap.arg() - expected).rem_euclid(std::f64::consts::TAU);
        let diff = diff.min(std::f64::consts::TAU - diff);
        assert!(diff < 1e-3, "phase off by {diff}");
    }
}

#[test]
fn global_error_is_second_order() {
    let spec = LadderSpec::standard(3);
    let ff = 0.25;
    let s = diagonalize(&spec, ff).unwrap();
    let psi = StateVector::haar_random(6, 8).unwrap();
    let exact = exact_propagate(&s, 10.0, &psi).unwrap();
    for splitting in [Splitting::ExchangeLayers, Splitting::Xyz] {
        let coarse = Pf2::with_splitting(&spec, 0.02, splitting).unwrap();
        let fine = Pf2::with_splitting(&spec, 0.01, splitting).unwrap();
        let e1 = distance(&constant_evolve(&spec, &coarse, ff, 500, &psi), &exact);
        let e2 = distance(&constant_evolve(&spec, &fine, ff, 1000, &psi), &exact);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "{splitting:?}: {e1} / {e2} = {ratio}");
    }
}

#[test]
fn energy_at_constant_field() {
    // <H> under a second-order product formula is conserved only up to a
    // bounded O(dt^2) oscillation; what must hold is the dt^2 scaling and the
    // absence of secular drift.
    let spec = LadderSpec::standard(5);
    let ff = 0.5;
    let psi = StateVector::haar_random(10, 2).unwrap();
    let e0 = energy(&spec, ff, &psi).unwrap();
    let mut worst = Vec::new();
    for dt in [0.02, 0.01] {
        let pf2 = Pf2::new(&spec, dt).unwrap();
        let steps = (100.0 / dt).round() as usize;
        let stride = steps / 50;
        let mut dev: Vec<f64> = Vec::new();
        let mut amps = psi.clone();
        let fields = vec![ff; steps];
        pf2.evolve(amps.amplitudes_mut(), &fields, |j| (j + 1) % stride == 0, |_, a| {
            let s = StateVector::from_amplitudes(10, a.to_vec()).unwrap();
            dev.push(energy(&spec, ff, &s).unwrap() - e0);
        })
        .unwrap();
        let max = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let first: f64 = dev[..25].iter().sum::<f64>() / 25.0;
        let second: f64 = dev[25..].iter().sum::<f64>() / (dev.len() - 25) as f64;
        assert!((second - first).abs() < 0.5 * max + 1e-14, "secular drift at dt={dt}");
        worst.push(max);
    }
    let ratio = worst[0] / worst[1];
    assert!((3.0..=5.0).contains(&ratio), "{worst:?}");
    assert!(worst[0] < 1e-3);
}

#[test]
fn protocol_reverses_to_start() {
    let spec = LadderSpec::standard(3);
    let cfg = IntegratorConfig::default();
    let gamma = 40.0 * 2.6e-4;
    let tau = ((0.5 / gamma) / cfg.dt).round() * cfg.dt;
    let p = FieldProtocol::new(0.5, tau).unwrap();
    let psi = StateVector::haar_random(6, 4).unwrap();
    let f = reverse_check(&spec, &p, &cfg, &psi).unwrap();
    assert!(f >= 1.0 - 1e-9, "{f}");
}

#[test]
fn protocol_conserves_norm_and_magnetization() {
    let spec = LadderSpec::standard(4);
    let cfg = IntegratorConfig::default();
    let p = FieldProtocol::new(0.5, 20.0).unwrap();
    let psi = StateVector::haar_random(8, 6).unwrap();
    let run = run_protocol(&spec, &p, &cfg, &psi, Some(100)).unwrap();
    let m0 = run.trace[0].sz_leg1 + run.trace[0].sz_leg2;
    for row in &run.trace {
        assert!((row.norm - 1.0).abs() <= 1e-10);
        assert!((row.sz_leg1 + row.sz_leg2 - m0).abs() <= 1e-10);
    }
    assert_eq!(run.half_steps, 1000);
}
