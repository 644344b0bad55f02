use ladder_core::evolve::IntegratorConfig;
use ladder_core::oracle::diagonalize;
use ladder_core::spectral::{
    autocorrelation, dos_estimate, ldos, moments, AutocorrSeries, Window,
};
use ladder_core::{LadderSpec, StateVector};

#[test]
fn single_rung_dos_peaks() {
    let spec = LadderSpec::standard(1);
    let cfg = IntegratorConfig::default();
    let k = 4096 * 5;
    let series: Vec<AutocorrSeries> = (0..64)
        .map(|seed| {
            let psi = StateVector::haar_random(2, seed).unwrap();
            autocorrelation(&spec, &psi, &cfg, k).unwrap()
        })
        .collect();
    assert!((series[0].theta() - 409.6).abs() < 1e-9);
    let one = dos_estimate(&series[0], 2, Window::Rectangular).unwrap();
    assert!((one.integral() - 4.0).abs() < 4e-3);
    let avg = dos_estimate(&AutocorrSeries::average(&series).unwrap(), 2, Window::Rectangular).unwrap();
    let peaks = avg.peaks(0.2);
    let levels = [-0.13, 0.03, 0.07];
    assert_eq!(peaks.len(), 3, "{peaks:?}");
    for ((e, _), level) in peaks.iter().zip(levels) {
        assert!((e - level).abs() < avg.resolution, "{e} vs {level}");
    }
    // Peak weights follow the projections of the same random vectors; the
    // doubly degenerate level carries twice the weight in expectation.
    let s = diagonalize(&spec, 0.0).unwrap();
    let mut expected = [0.0; 3];
    for seed in 0..64 {
        let w = s.ldos_weights(&StateVector::haar_random(2, seed).unwrap()).unwrap();
        expected[0] += w[0].1;
        expected[1] += w[1].1 + w[2].1;
        expected[2] += w[3].1;
    }
    let total: f64 = expected.iter().sum();
    // A truncated peak of weight w leaks at most w / (pi Theta d) past a
    // boundary at distance d.
    let edges = [(-0.25, -0.05), (-0.05, 0.05), (0.05, 0.15)];
    let theta = series[0].theta();
    for ((level, x), (lo, hi)) in levels.iter().zip(expected).zip(edges) {
        let got = avg.integral_between(lo, hi) / 4.0;
        let leak: f64 = levels
            .iter()
            .zip(expected)
            .map(|(l, w)| {
                let d = (l - lo).abs().min((l - hi).abs());
                w / total / (std::f64::consts::PI * theta * d)
            })
            .sum();
        assert!((got - x / total).abs() < leak, "{level}: {got} vs {} (bound {leak})", x / total);
    }
}

#[test]
fn eigenstate_ldos_is_one_peak() {
    let spec = LadderSpec::standard(3);
    let s = diagonalize(&spec, 0.0).unwrap();
    let psi = s.eigenstate(10);
    let cfg = IntegratorConfig::default();
    let series = autocorrelation(&spec, &psi, &cfg, 4096).unwrap();
    let mut worst = 0.0f64;
    for (j, a) in series.samples.iter().enumerate() {
        let exact = num_complex::Complex64::from_polar(1.0, -s.eigenvalues[10] * j as f64 * cfg.dt);
        if j > 0 {
            worst = worst.max((a - exact).norm() / (j as f64 * cfg.dt));
        }
        assert!((a.norm() - 1.0).abs() < 1e-9, "j={j}");
    }
    // The product formula propagates with an O(dt^2)-shifted energy, so the
    // phase error grows linearly in time.
    assert!(worst < 1e-5, "{worst}");
    assert!((series.samples[0] - 1.0).norm() < 1e-12);
    let d = ldos(&spec, &psi, &cfg, 4096, Window::Rectangular).unwrap();
    let e = s.eigenvalues[10];
    assert!(d.integral_between(e - d.resolution, e + d.resolution) >= 0.99);
    let peaks = d.peaks(0.5);
    assert_eq!(peaks.len(), 1);
    assert!((peaks[0].0 - e).abs() < d.resolution);
    assert!((moments(&d).unwrap().mean - e).abs() < d.resolution);
}

#[test]
fn ldos_weights_match_projections() {
    let spec = LadderSpec::standard(2);
    let s = diagonalize(&spec, 0.0).unwrap();
    let psi = StateVector::haar_random(4, 12).unwrap();
    let weights = s.ldos_weights(&psi).unwrap();
    let cfg = IntegratorConfig::default();
    let k = 4 * 20480;
    let series = autocorrelation(&spec, &psi, &cfg, k).unwrap();
    let window = Window::gaussian_for(series.theta());
    let sigma_e = 8.0 / series.theta();
    let d = ldos(&spec, &psi, &cfg, k, window).unwrap();
    // Group levels closer than 12 sigma and integrate between gap midpoints.
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for &(e, w) in &weights {
        match groups.last_mut() {
            Some(g) if e - g.1 < 12.0 * sigma_e => {
                g.1 = e;
                g.2 += w;
            }
            _ => groups.push((e, e, w)),
        }
    }
    for (i, g) in groups.iter().enumerate() {
        let lo = if i == 0 { d.origin } else { 0.5 * (groups[i - 1].1 + g.0) };
        let hi = if i + 1 == groups.len() { -d.origin } else { 0.5 * (g.1 + groups[i + 1].0) };
        let got = d.integral_between(lo, hi);
        assert!((got - g.2).abs() < 1e-6, "group {i} [{}, {}]: {got} vs {}", g.0, g.1, g.2);
    }
}
