use std::collections::BTreeMap;
use std::f64::consts::PI;

use isores_core::analysis::analyze;
use isores_core::averaging::average_first;
use isores_core::envelope::{Envelope, Phase};
use isores_core::presets::{preset, set_param};
use isores_core::sde::{
    ensemble, euler_maruyama_1d, path_rng, ExceedanceStats, Frame, InitialState, Metric, Model,
    PathStatus, PathSummary, Sample, SimConfig, SupTracker,
};
use isores_core::sysdef::{Resonance, SpecFile};
use rand::Rng;
use rand_distr::StandardNormal;

fn fig(name: &str, sets: &[(&str, f64)]) -> SpecFile {
    let p = preset(name).unwrap();
    let mut spec = p.spec;
    for &(k, v) in sets {
        set_param(p.base, &mut spec, k, v).unwrap();
    }
    spec
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * k * k * lam * lam).exp()
        })
        .sum::<f64>();
    (d, p.clamp(0.0, 1.0))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn ks_helper_separates_shifted_samples() {
    let mut rng = path_rng(1, 0);
    let a: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
    let c: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
    assert!(ks_two_sample(&a, &b).1 > 0.01);
    assert!(ks_two_sample(&a, &c).1 < 1e-6);
}

#[test]
fn euler_maruyama_strong_order() {
    // dX = −X μ² dt + ε μ X dW with μ = t^{-1/4}.
    let eps = 0.8;
    let (t0, t1, x0) = (1.0, 2.0, 1.0);
    let mu = |t: f64| t.powf(-0.25);
    let a = |t: f64, x: f64| -x * mu(t).powi(2);
    let b = |t: f64, x: f64| eps * mu(t) * x;
    let coarse = 1.0f64 / 32.0;
    let fine = coarse / 128.0;
    let n_fine = ((t1 - t0) / fine).round() as usize;
    let mut err = [0.0f64; 2];
    let n_paths = 2000;
    for path in 0..n_paths {
        let mut rng = path_rng(11, path);
        let dw: Vec<f64> = (0..n_fine)
            .map(|_| fine.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let reference = euler_maruyama_1d(a, b, x0, t0, fine, &dw);
        for (slot, h) in [coarse, coarse / 2.0].into_iter().enumerate() {
            let group = (h / fine).round() as usize;
            let sums: Vec<f64> = dw.chunks(group).map(|c| c.iter().sum()).collect();
            let x = euler_maruyama_1d(a, b, x0, t0, h, &sums);
            err[slot] += (x - reference).abs() / n_paths as f64;
        }
    }
    let ratio = err[0] / err[1];
    assert!(ratio >= 1.3, "errors {err:?}, ratio {ratio}");
}

/// RK4 for the unperturbed-plus-drift oscillator `x₁' = x₂`,
/// `x₂' = −x₁ + μ²f` with the ex0 nonlinearity written out by hand.
fn ex0_reference(b0: f64, b1: f64, c0: f64, x: [f64; 2], t0: f64, t1: f64, h: f64) -> Vec<(f64, f64)> {
    let rhs = |t: f64, x: [f64; 2]| {
        let s = 2.0 * t;
        let mu2 = t.powf(-0.5);
        let f = (b0 + b1 * s.sin()) * x[1] + c0 * x[1].powi(3);
        [x[1], -x[0] + mu2 * f]
    };
    let steps = ((t1 - t0) / h).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = x;
    let mut t = t0;
    out.push((t, y[0].hypot(y[1])));
    for _ in 0..steps {
        let k1 = rhs(t, y);
        let k2 = rhs(t + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = rhs(t + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = rhs(t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
        out.push((t, y[0].hypot(y[1])));
    }
    out
}

#[test]
fn deterministic_runs_match_rk4() {
    let (b0, b1, c0) = (-1.0, 2.5, -0.2);
    let spec = fig("fig-ex0b", &[("B0", b0), ("B1", b1), ("C0", c0)]).build().unwrap();
    let model = Model::new(spec);
    let dt = isores_core::sde::default_dt(1.0);
    // A whole number of steps so both grids end together.
    let t_end = 1.0 + (999.0 / dt).floor() * dt;
    let ic = InitialState { r: 0.9, psi: 0.4 };
    // ψ = φ − S/2 with S(1) = 2, and x = (r cos φ, −r sin φ).
    let phi0 = ic.psi + 1.0;
    let x0 = [ic.r * phi0.cos(), -ic.r * phi0.sin()];
    let reference = ex0_reference(b0, b1, c0, x0, 1.0, t_end, dt / 4.0);
    for frame in [Frame::Cartesian, Frame::Polar] {
        let mut cfg = SimConfig::new(frame, 1.0, t_end, dt);
        cfg.record_stride = 1;
        let path = model.simulate(&cfg, ic, 0).unwrap();
        assert_eq!(path.status, PathStatus::Completed);
        let mut worst = 0.0f64;
        for s in &path.samples {
            let k = ((s.t - 1.0) / (dt / 4.0)).round() as usize;
            let (tr, rr) = reference[k.min(reference.len() - 1)];
            assert!((tr - s.t).abs() < 1e-6 * s.t);
            worst = worst.max((s.rho - rr).abs());
        }
        assert!(worst <= 5.0 * dt, "{frame:?}: max |Δρ| = {worst}, 5dt = {}", 5.0 * dt);
    }
}

#[test]
fn cartesian_and_polar_terminal_laws_agree() {
    let spec = fig("fig-ex1", &[]).build().unwrap();
    let model = Model::new(spec);
    let ic = [InitialState { r: 1.2, psi: 0.5 }];
    let mut terminal = Vec::new();
    for (frame, seed) in [(Frame::Cartesian, 101), (Frame::Polar, 202)] {
        let mut cfg = SimConfig::new(frame, 1.0, 120.0, isores_core::sde::default_dt(1.0));
        cfg.seed = seed;
        cfg.n_paths = 200;
        let paths = model.simulate_many(&cfg, &ic).unwrap();
        assert!(paths.iter().all(|p| p.status == PathStatus::Completed));
        terminal.push(paths.iter().map(|p| p.last.rho).collect::<Vec<_>>());
    }
    let (d, p) = ks_two_sample(&terminal[0], &terminal[1]);
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

#[test]
fn truncated_linear_flow_matches_closed_form() {
    let mut drift = BTreeMap::new();
    drift.insert("2".to_string(), ["-r".to_string(), "0".to_string()]);
    let spec = SpecFile {
        resonance: Resonance {
            kappa: 1,
            varkappa: 1,
            nu0: 1.0,
        },
        envelope: Envelope::power(0.25, 1.0),
        phase: Phase {
            s: vec![1.0],
            offset: 0.0,
        },
        n: 2,
        p: 1,
        eps: 0.0,
        r_max: 5.0,
        params: BTreeMap::new(),
        drift,
        noise: BTreeMap::new(),
        cartesian: None,
    }
    .build()
    .unwrap();
    let avg = average_first(&spec, 2).unwrap();
    let model = Model::new(spec).with_averaged(avg, None);
    let mut cfg = SimConfig::new(Frame::Truncated, 1.0, 4.0, 0.05);
    cfg.record_stride = 1;
    let path = model.simulate(&cfg, InitialState { r: 2.0, psi: 0.3 }, 0).unwrap();
    assert_eq!(path.status, PathStatus::Completed);
    for s in &path.samples {
        // γ₂(t) = ∫₁ᵗ τ^{-1/2} dτ = 2(√t − 1)
        let want = 2.0 * (-2.0 * (s.t.sqrt() - 1.0)).exp();
        assert!((s.rho - want).abs() <= 1e-8, "t = {}: {} vs {want}", s.t, s.rho);
        assert!((s.psi - 0.3).abs() <= 1e-12);
    }
}

fn locking_setup(eps: f64) -> (Model, Metric) {
    let spec = fig("fig-ex1", &[("eps", eps)]).build().unwrap();
    let (avg, second, rep) = analyze(&spec, 2).unwrap();
    let (idx, fp) = rep.stable_points().next().unwrap();
    let metric = Metric::Locking {
        sol: rep.particular[idx].clone().unwrap(),
        family_period: fp.family_period,
        n: rep.n,
        q: rep.q.unwrap().q,
    };
    (Model::new(spec).with_averaged(avg, second), metric)
}

#[test]
fn noiseless_ensemble_never_exceeds_its_deterministic_sup() {
    let (model, metric) = locking_setup(0.0);
    let ic = [InitialState { r: 1.3, psi: 0.9 }];
    let window = (50.0, 400.0);
    let mut cfg = SimConfig::new(Frame::Cartesian, 1.0, 400.0, isores_core::sde::default_dt(1.0));
    let mut tr = SupTracker::new(&metric, model.spec.envelope, window);
    model.run(&cfg, ic[0], 0, |s| tr.observe(s)).unwrap();
    let det = tr.sup;
    assert!(det.is_finite() && det > 0.0);
    cfg.n_paths = 30;
    cfg.seed = 9;
    let (stats, paths) = ensemble(&model, &cfg, &ic, &metric, det + 1e-3, window).unwrap();
    assert_eq!(stats.n_exceed, 0);
    assert_eq!(stats.p_hat, 0.0);
    assert!(paths.iter().all(|p| p.sup.to_bits() == det.to_bits()));
}

#[test]
fn confidence_interval_scales_as_inverse_root_n() {
    let summary = |i: usize, exceeded: bool| PathSummary {
        index: i,
        status: PathStatus::Completed,
        last: Sample {
            t: 0.0,
            x1: 0.0,
            x2: 0.0,
            rho: 1.0,
            phi: 0.0,
            psi: 0.0,
        },
        sup: 0.0,
        exceeded,
    };
    for frac in [0.1, 0.25, 0.5] {
        let make = |n: usize| -> Vec<PathSummary> {
            (0..n).map(|i| summary(i, (i as f64) < frac * n as f64)).collect()
        };
        let a = ExceedanceStats::from_counts("M_L", 0.5, (0.0, 1.0), &make(200));
        let b = ExceedanceStats::from_counts("M_L", 0.5, (0.0, 1.0), &make(400));
        assert_eq!(a.p_hat, b.p_hat);
        let ratio = a.ci95_halfwidth / b.ci95_halfwidth;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.3, "ratio {ratio}");
    }
}

#[test]
fn ensemble_ci_shrinks_with_more_paths() {
    let (model, metric) = locking_setup(0.4);
    let ic = [InitialState { r: 1.3, psi: 0.8 }];
    let window = (20.0, 60.0);
    let mut half = Vec::new();
    for n in [200, 400] {
        let mut cfg = SimConfig::new(Frame::Cartesian, 1.0, 60.0, isores_core::sde::default_dt(1.0));
        cfg.n_paths = n;
        cfg.seed = 77;
        let (stats, _) = ensemble(&model, &cfg, &ic, &metric, 0.3, window).unwrap();
        assert_eq!(stats.n_total, n);
        half.push(stats);
    }
    // Nested seed streams: the first 200 paths coincide.
    let p = half[1].p_hat;
    if p > 0.05 && p < 0.95 {
        let ratio = half[0].ci95_halfwidth / half[1].ci95_halfwidth;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.3, "ratio {ratio}");
    }
}

#[test]
fn outputs_are_bit_identical_across_worker_counts() {
    let spec = fig("fig-ex1", &[]).build().unwrap();
    let model = Model::new(spec);
    let mut cfg = SimConfig::new(Frame::Cartesian, 1.0, 30.0, isores_core::sde::default_dt(1.0));
    cfg.n_paths = 12;
    cfg.seed = 4242;
    cfg.record_stride = 50;
    let ics = [InitialState { r: 1.0, psi: 0.0 }, InitialState { r: 1.6, psi: 2.0 }];
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| model.simulate_many(&cfg, &ics).unwrap())
    };
    let one = run(1);
    let bits = |paths: &[isores_core::sde::PathRecord]| -> Vec<u64> {
        paths
            .iter()
            .flat_map(|p| p.samples.iter().flat_map(|s| [s.t, s.x1, s.x2, s.rho, s.psi]))
            .map(f64::to_bits)
            .collect()
    };
    for threads in [3, 4] {
        assert_eq!(bits(&one), bits(&run(threads)));
    }
    assert_eq!(bits(&one), bits(&run(1)));
}

#[test]
fn psi_is_unwrapped_at_default_stride() {
    let spec = fig("fig-ex1", &[]).build().unwrap();
    let model = Model::new(spec);
    let mut cfg = SimConfig::new(Frame::Cartesian, 1.0, 400.0, isores_core::sde::default_dt(1.0));
    cfg.record_stride = cfg.stride_for(100_000);
    cfg.n_paths = 8;
    let paths = model.simulate_many(&cfg, &[InitialState { r: 0.6, psi: 3.0 }]).unwrap();
    for p in &paths {
        for w in p.samples.windows(2) {
            assert!((w[1].psi - w[0].psi).abs() < PI);
        }
    }
}

#[test]
fn drift_metric_median_falls_with_noise() {
    let mut medians = Vec::new();
    for eps in [0.5, 0.25, 0.125] {
        let spec = fig("fig-ex11", &[("eps", eps)]).build().unwrap();
        let (avg, second, rep) = analyze(&spec, 2).unwrap();
        let rho0 = rep.drift[0].rho0;
        assert!((rho0 - (8.0f64 / 3.0 + eps * eps / 2.0).sqrt()).abs() < 1e-9);
        let model = Model::new(spec).with_averaged(avg, second);
        let mut cfg = SimConfig::new(Frame::Cartesian, 1.0, 1500.0, isores_core::sde::default_dt(1.0));
        cfg.n_paths = 40;
        cfg.seed = 31;
        let (_, paths) = ensemble(
            &model,
            &cfg,
            &[InitialState { r: rho0, psi: 0.0 }],
            &Metric::Drift { rho0 },
            1.0,
            (500.0, 1500.0),
        )
        .unwrap();
        medians.push(median(paths.iter().map(|p| p.sup).collect()));
    }
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}

#[test]
fn polar_frame_rejects_bad_initial_state() {
    let model = Model::new(fig("fig-ex1", &[]).build().unwrap());
    let cfg = SimConfig::new(Frame::Polar, 1.0, 2.0, 0.01);
    assert!(model.run(&cfg, InitialState { r: -1.0, psi: 0.0 }, 0, |_| {}).is_err());
    let early = SimConfig::new(Frame::Polar, 0.5, 2.0, 0.01);
    assert!(model.run(&early, InitialState { r: 1.0, psi: 0.0 }, 0, |_| {}).is_err());
}
