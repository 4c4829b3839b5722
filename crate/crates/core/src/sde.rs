//! Path simulation: Euler–Maruyama for the stochastic systems in Cartesian
//! and polar form, RK4 for the truncated and limiting averaged systems,
//! and exceedance statistics over ensembles.
//!
//! Per-path random streams are derived from a master seed by
//! [`path_seed`] (a splitmix64 finaliser over `master + (i+1)·φ64`) and fed
//! to ChaCha8; normal increments come from `rand_distr::StandardNormal`.
//! Paths are independent, so results do not depend on the worker count.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::ParticularSolution;
use crate::averaging::{AveragedSystem, SecondAveraged};
use crate::cartpoly::CompiledCart;
use crate::envelope::{Envelope, PhaseClock};
use crate::error::{Error, Result};
use crate::numeric::{rk4_adaptive, Stop};
use crate::sysdef::{SystemSpec, DEFAULT_R_MIN};
use crate::trigpoly::TrigPoly;

pub const TRUNCATED_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Cartesian,
    Polar,
    Truncated,
    Truncated2,
    Limiting,
}

impl std::str::FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cartesian" => Frame::Cartesian,
            "polar" => Frame::Polar,
            "truncated" => Frame::Truncated,
            "truncated2" => Frame::Truncated2,
            "limiting" => Frame::Limiting,
            other => return Err(Error::Validation(format!("unknown frame '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_start: f64,
    pub t_end: f64,
    /// Step size; for the deterministic frames the largest step allowed.
    pub dt: f64,
    pub frame: Frame,
    pub seed: u64,
    pub n_paths: usize,
    pub r_min: f64,
    /// Keep every `record_stride`-th step; 0 keeps only the end points.
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(frame: Frame, t_start: f64, t_end: f64, dt: f64) -> Self {
        SimConfig {
            t_start,
            t_end,
            dt,
            frame,
            seed: 0,
            n_paths: 1,
            r_min: DEFAULT_R_MIN,
            record_stride: 0,
        }
    }

    /// Smallest stride keeping at most `max_samples` samples per path.
    pub fn stride_for(&self, max_samples: usize) -> usize {
        let steps = ((self.t_end - self.t_start) / self.dt).ceil().max(1.0) as usize;
        steps.div_ceil(max_samples.max(1)).max(1)
    }

    pub fn validate(&self, env: &Envelope) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation("dt must be positive".into()));
        }
        if self.t_start < env.t0 {
            return Err(Error::Validation(format!(
                "t_start = {} lies before the envelope start t0 = {}",
                self.t_start, env.t0
            )));
        }
        if self.t_end <= self.t_start {
            return Err(Error::Validation("t_end must exceed t_start".into()));
        }
        if self.r_min <= 0.0 {
            return Err(Error::Validation("r_min must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Completed,
    AbsorbedAtRmin,
    ExitedRmax,
}

/// One recorded state. `phi` and `psi` are unwrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub rho: f64,
    pub phi: f64,
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub index: usize,
    pub samples: Vec<Sample>,
    pub status: PathStatus,
    pub last: Sample,
}

/// Initial amplitude and phase detuning `ψ = φ − (κ/ϰ)S` at `t_start`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub r: f64,
    pub psi: f64,
}

/// splitmix64 finaliser applied to `master + (index + 1)·0x9E3779B97F4A7C15`.
pub fn path_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(master: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path_seed(master, index as u64))
}

/// Runs `f` on a pool capped by `ISORES_THREADS` when that is set.
pub fn with_pool<R: Send, F: FnOnce() -> R + Send>(f: F) -> R {
    let threads = std::env::var("ISORES_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0);
    match threads.and_then(|k| rayon::ThreadPoolBuilder::new().num_threads(k).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Continuous angle tracking.
fn unwrap_near(prev: f64, raw: f64) -> f64 {
    prev + crate::numeric::wrap_pi(raw - prev)
}

/// A system ready for simulation in any frame.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: SystemSpec,
    cart: Option<(u32, CompiledCart, CompiledCart, bool)>,
    pub avg: Option<AveragedSystem>,
    pub second: Option<SecondAveraged>,
}

impl Model {
    pub fn new(spec: SystemSpec) -> Self {
        let cart = spec
            .cartesian
            .as_ref()
            .map(|c| (c.n, c.f.compile(), c.g.compile(), c.g.is_zero()));
        Model {
            spec,
            cart,
            avg: None,
            second: None,
        }
    }

    pub fn with_averaged(mut self, avg: AveragedSystem, second: Option<SecondAveraged>) -> Self {
        self.avg = Some(avg);
        self.second = second;
        self
    }

    fn ratio(&self) -> f64 {
        self.spec.resonance.kappa as f64 / self.spec.resonance.varkappa as f64
    }

    fn sample(&self, t: f64, s: f64, rho: f64, phi: f64) -> Sample {
        Sample {
            t,
            x1: rho * phi.cos(),
            x2: -rho * phi.sin(),
            rho,
            phi,
            psi: phi - self.ratio() * s,
        }
    }

    /// Runs one path and hands every step to `observe`.
    pub fn run<O: FnMut(&Sample)>(
        &self,
        cfg: &SimConfig,
        ic: InitialState,
        index: usize,
        observe: O,
    ) -> Result<(PathStatus, Sample)> {
        cfg.validate(&self.spec.envelope)?;
        if !(ic.r > 0.0 && ic.r.is_finite() && ic.psi.is_finite()) {
            return Err(Error::Validation("initial amplitude must be positive".into()));
        }
        match cfg.frame {
            Frame::Cartesian => self.run_cartesian(cfg, ic, index, observe),
            Frame::Polar => self.run_polar(cfg, ic, index, observe),
            Frame::Truncated | Frame::Truncated2 | Frame::Limiting => {
                self.run_truncated(cfg, ic, observe)
            }
        }
    }

    fn run_cartesian<O: FnMut(&Sample)>(
        &self,
        cfg: &SimConfig,
        ic: InitialState,
        index: usize,
        mut observe: O,
    ) -> Result<(PathStatus, Sample)> {
        let (n, f, g, g_zero) = self
            .cart
            .as_ref()
            .ok_or_else(|| Error::Precondition("the Cartesian frame needs a Cartesian form".into()))?;
        if self.spec.resonance.nu0 != 1.0 {
            return Err(Error::Precondition("the Cartesian frame assumes nu0 = 1".into()));
        }
        let spec = &self.spec;
        let env = &spec.envelope;
        let (n, p) = (*n as f64, spec.p as f64);
        let mut rng = path_rng(cfg.seed, index);
        let noisy = spec.eps != 0.0 && !*g_zero;
        let mut clock = PhaseClock::new(&spec.phase, env, cfg.t_start);
        let mut t = cfg.t_start;
        let mut phi = ic.psi + self.ratio() * clock.value();
        let (mut x1, mut x2) = (ic.r * phi.cos(), -ic.r * phi.sin());
        let mut cur = self.sample(t, clock.value(), ic.r, phi);
        observe(&cur);
        let (c, s) = (cfg.dt.cos(), cfg.dt.sin());
        let mut k: u64 = 0;
        while t < cfg.t_end - 1e-12 * cfg.t_end {
            let dt = cfg.dt.min(cfg.t_end - t);
            let (cs, sn) = if dt == cfg.dt { (c, s) } else { (dt.cos(), dt.sin()) };
            let mu = env.mu_unchecked(t);
            let ph = clock.value();
            let force = mu.powf(n) * f.eval(x1, x2, ph);
            let kick = if noisy {
                let xi: f64 = StandardNormal.sample(&mut rng);
                spec.eps * mu.powf(p) * g.eval(x1, x2, ph) * dt.sqrt() * xi
            } else {
                0.0
            };
            let (r1, r2) = (x1 * cs + x2 * sn, -x1 * sn + x2 * cs);
            x1 = r1;
            x2 = r2 + force * dt + kick;
            k += 1;
            t = cfg.t_start + k as f64 * cfg.dt;
            if t > cfg.t_end {
                t = cfg.t_end;
            }
            let ph = clock.advance(t);
            let rho = x1.hypot(x2);
            phi = unwrap_near(phi, (-x2).atan2(x1));
            cur = Sample {
                t,
                x1,
                x2,
                rho,
                phi,
                psi: phi - self.ratio() * ph,
            };
            if !rho.is_finite() {
                return Err(Error::Numerical(format!("non-finite state at t = {t}")));
            }
            observe(&cur);
            if rho > spec.r_max {
                return Ok((PathStatus::ExitedRmax, cur));
            }
        }
        Ok((PathStatus::Completed, cur))
    }

    fn run_polar<O: FnMut(&Sample)>(
        &self,
        cfg: &SimConfig,
        ic: InitialState,
        index: usize,
        mut observe: O,
    ) -> Result<(PathStatus, Sample)> {
        let spec = &self.spec;
        let env = &spec.envelope;
        let drift: Vec<(i32, &[TrigPoly; 2])> =
            spec.drift.iter().map(|(&k, v)| (k as i32, v)).collect();
        let noise: Vec<(i32, &[[TrigPoly; 2]; 2])> =
            spec.noise.iter().map(|(&k, v)| (k as i32, v)).collect();
        let noisy = spec.eps != 0.0 && !noise.is_empty();
        let nu0 = spec.resonance.nu0;
        let mut rng = path_rng(cfg.seed, index);
        let mut clock = PhaseClock::new(&spec.phase, env, cfg.t_start);
        let mut t = cfg.t_start;
        let mut r = ic.r;
        let mut phi = ic.psi + self.ratio() * clock.value();
        let mut cur = self.sample(t, clock.value(), r, phi);
        observe(&cur);
        if r <= cfg.r_min {
            return Ok((PathStatus::AbsorbedAtRmin, cur));
        }
        let mut k: u64 = 0;
        while t < cfg.t_end - 1e-12 * cfg.t_end {
            let dt = cfg.dt.min(cfg.t_end - t);
            let mu = env.mu_unchecked(t);
            let s = clock.value();
            let (mut dr, mut dp) = (0.0, nu0 * dt);
            for &(order, [a1, a2]) in &drift {
                let w = mu.powi(order) * dt;
                dr += w * a1.eval_unchecked(r, phi, s);
                dp += w * a2.eval_unchecked(r, phi, s);
            }
            if noisy {
                let sq = dt.sqrt();
                let w1: f64 = StandardNormal.sample(&mut rng);
                let w2: f64 = StandardNormal.sample(&mut rng);
                let (w1, w2) = (w1 * sq, w2 * sq);
                for &(order, m) in &noise {
                    let c = spec.eps * mu.powi(order);
                    dr += c * (m[0][0].eval_unchecked(r, phi, s) * w1 + m[0][1].eval_unchecked(r, phi, s) * w2);
                    dp += c * (m[1][0].eval_unchecked(r, phi, s) * w1 + m[1][1].eval_unchecked(r, phi, s) * w2);
                }
            }
            r += dr;
            phi += dp;
            k += 1;
            t = (cfg.t_start + k as f64 * cfg.dt).min(cfg.t_end);
            let s = clock.advance(t);
            if !(r.is_finite() && phi.is_finite()) {
                return Err(Error::Numerical(format!("non-finite state at t = {t}")));
            }
            cur = self.sample(t, s, r, phi);
            observe(&cur);
            if r <= cfg.r_min {
                return Ok((PathStatus::AbsorbedAtRmin, cur));
            }
            if r > spec.r_max {
                return Ok((PathStatus::ExitedRmax, cur));
            }
        }
        Ok((PathStatus::Completed, cur))
    }

    fn run_truncated<O: FnMut(&Sample)>(
        &self,
        cfg: &SimConfig,
        ic: InitialState,
        mut observe: O,
    ) -> Result<(PathStatus, Sample)> {
        let avg = self.avg.as_ref().ok_or_else(|| {
            Error::Precondition("truncated frames need an averaged system".into())
        })?;
        let env = self.spec.envelope;
        let nonzero = |series: &[TrigPoly], from: usize, to: usize| -> Vec<(i32, TrigPoly)> {
            (from..=to.min(series.len().saturating_sub(1)))
                .filter(|&k| !series[k].is_zero())
                .map(|k| (k as i32, series[k].clone()))
                .collect()
        };
        let top = avg.order as usize;
        let (rho_eq, psi_eq) = match cfg.frame {
            Frame::Truncated => (nonzero(&avg.lambda, 1, top), nonzero(&avg.omega, 1, top)),
            Frame::Limiting => {
                let q = avg
                    .find_q()
                    .ok_or_else(|| Error::Precondition("no nonzero phase coefficient".into()))?
                    .q as usize;
                (
                    nonzero(&avg.lambda, avg.n as usize, avg.n as usize),
                    nonzero(&avg.omega, q, q),
                )
            }
            _ => {
                let sec = self.second.as_ref().ok_or_else(|| {
                    Error::Precondition("truncated2 needs the second averaging".into())
                })?;
                let mut om = Vec::new();
                for (k, p) in nonzero(&avg.omega, 1, top) {
                    om.push((k, p.average_psi()?));
                }
                (nonzero(&sec.f, 1, top), om)
            }
        };
        let sum = |terms: &[(i32, TrigPoly)], mu: f64, r: f64, psi: f64| {
            terms
                .iter()
                .map(|(k, p)| mu.powi(*k) * p.eval_unchecked(r, psi, 0.0))
                .sum::<f64>()
        };
        let rhs = |t: f64, y: &[f64; 2]| {
            let mu = env.mu_unchecked(t);
            [sum(&rho_eq, mu, y[0], y[1]), sum(&psi_eq, mu, y[0], y[1])]
        };
        let spec = &self.spec;
        let r_min = cfg.r_min;
        let (phase, ratio) = (&spec.phase, self.ratio());
        let mut last = self.sample(cfg.t_start, phase.value(&env, cfg.t_start), ic.r, 0.0);
        let mut emit = |t: f64, y: &[f64; 2]| {
            let s = phase.value(&env, t);
            last = Sample {
                t,
                x1: 0.0,
                x2: 0.0,
                rho: y[0],
                phi: y[1] + ratio * s,
                psi: y[1],
            };
            last.x1 = y[0] * last.phi.cos();
            last.x2 = -y[0] * last.phi.sin();
            observe(&last);
        };
        let (_, stop) = rk4_adaptive(
            rhs,
            cfg.t_start,
            [ic.r, ic.psi],
            cfg.t_end,
            cfg.dt,
            cfg.dt,
            TRUNCATED_TOL,
            &mut emit,
            |_, y| y[0] <= r_min || y[0] > spec.r_max,
        )?;
        let status = match stop {
            Stop::Completed => PathStatus::Completed,
            Stop::Halted(_) if last.rho <= r_min => PathStatus::AbsorbedAtRmin,
            Stop::Halted(_) => PathStatus::ExitedRmax,
        };
        Ok((status, last))
    }

    /// Runs one path and keeps samples at `cfg.record_stride`.
    pub fn simulate(&self, cfg: &SimConfig, ic: InitialState, index: usize) -> Result<PathRecord> {
        let mut samples = Vec::new();
        let mut k = 0usize;
        let stride = cfg.record_stride;
        let (status, last) = self.run(cfg, ic, index, |s| {
            if k == 0 || (stride > 0 && k.is_multiple_of(stride)) {
                samples.push(*s);
            }
            k += 1;
        })?;
        if samples.last().is_none_or(|s| s.t != last.t) {
            samples.push(last);
        }
        Ok(PathRecord {
            index,
            samples,
            status,
            last,
        })
    }

    /// `cfg.n_paths` paths in parallel; path `i` starts from `ics[i % len]`.
    pub fn simulate_many(&self, cfg: &SimConfig, ics: &[InitialState]) -> Result<Vec<PathRecord>> {
        if ics.is_empty() {
            return Err(Error::Validation("no initial states given".into()));
        }
        with_pool(|| {
            (0..cfg.n_paths)
                .into_par_iter()
                .map(|i| self.simulate(cfg, ics[i % ics.len()], i))
                .collect()
        })
    }
}

/// Distance from a target regime.
#[derive(Clone, Debug, Serialize)]
pub enum Metric {
    /// `M_L = √((r − ρ*)² + (ψ − φ*)² μ^{n−q})` with the angle reduced to
    /// the family branch nearest at the start of the window.
    Locking {
        sol: ParticularSolution,
        family_period: f64,
        n: u32,
        q: u32,
    },
    /// `M_D = |r − ρ₀|`.
    Drift { rho0: f64 },
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Locking { .. } => "M_L",
            Metric::Drift { .. } => "M_D",
        }
    }
}

/// Running supremum of a metric over `[window.0, window.1]`.
pub struct SupTracker<'a> {
    metric: &'a Metric,
    env: Envelope,
    window: (f64, f64),
    branch: Option<f64>,
    pub sup: f64,
    pub seen: usize,
}

impl<'a> SupTracker<'a> {
    pub fn new(metric: &'a Metric, env: Envelope, window: (f64, f64)) -> Self {
        SupTracker {
            metric,
            env,
            window,
            branch: None,
            sup: 0.0,
            seen: 0,
        }
    }

    pub fn value(&mut self, s: &Sample) -> f64 {
        match self.metric {
            Metric::Drift { rho0 } => (s.rho - rho0).abs(),
            Metric::Locking {
                sol,
                family_period,
                n,
                q,
            } => {
                let mu = self.env.mu_unchecked(s.t);
                let dpsi = s.psi - sol.phi_at(mu);
                let branch = *self
                    .branch
                    .get_or_insert_with(|| (dpsi / family_period).round() * family_period);
                let dr = s.rho - sol.rho_at(mu);
                let w = mu.powi(*n as i32 - *q as i32);
                (dr * dr + (dpsi - branch).powi(2) * w).sqrt()
            }
        }
    }

    pub fn observe(&mut self, s: &Sample) {
        if s.t < self.window.0 || s.t > self.window.1 {
            return;
        }
        let v = self.value(s);
        self.seen += 1;
        if v > self.sup || v.is_nan() {
            self.sup = v;
        }
    }
}

/// Supremum of a metric over a window of a recorded path.
pub fn metric_sup(path: &PathRecord, metric: &Metric, env: Envelope, window: (f64, f64)) -> Result<f64> {
    let mut tr = SupTracker::new(metric, env, window);
    for s in &path.samples {
        tr.observe(s);
    }
    if tr.seen == 0 {
        return Err(Error::Validation("window does not meet the path".into()));
    }
    Ok(tr.sup)
}

#[derive(Clone, Debug, Serialize)]
pub struct PathSummary {
    pub index: usize,
    pub status: PathStatus,
    pub last: Sample,
    pub sup: f64,
    pub exceeded: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExceedanceStats {
    pub metric: String,
    pub eps1: f64,
    pub window: (f64, f64),
    pub n_exceed: usize,
    pub n_total: usize,
    pub n_absorbed: usize,
    pub n_exited: usize,
    pub p_hat: f64,
    pub ci95_halfwidth: f64,
}

impl ExceedanceStats {
    pub fn from_counts(metric: &str, eps1: f64, window: (f64, f64), paths: &[PathSummary]) -> Self {
        let n_total = paths.len();
        let n_exceed = paths.iter().filter(|p| p.exceeded).count();
        let p_hat = if n_total == 0 {
            0.0
        } else {
            n_exceed as f64 / n_total as f64
        };
        let ci = if n_total == 0 {
            0.0
        } else {
            1.96 * (p_hat * (1.0 - p_hat) / n_total as f64).sqrt()
        };
        ExceedanceStats {
            metric: metric.to_string(),
            eps1,
            window,
            n_exceed,
            n_total,
            n_absorbed: paths
                .iter()
                .filter(|p| p.status == PathStatus::AbsorbedAtRmin)
                .count(),
            n_exited: paths
                .iter()
                .filter(|p| p.status == PathStatus::ExitedRmax)
                .count(),
            p_hat,
            ci95_halfwidth: ci,
        }
    }
}

/// Runs `cfg.n_paths` paths and counts those whose metric reaches `eps1`
/// inside `window`. Paths stopped at `r_min` or `R_max` count as
/// exceedances.
pub fn ensemble(
    model: &Model,
    cfg: &SimConfig,
    ics: &[InitialState],
    metric: &Metric,
    eps1: f64,
    window: (f64, f64),
) -> Result<(ExceedanceStats, Vec<PathSummary>)> {
    if ics.is_empty() {
        return Err(Error::Validation("no initial states given".into()));
    }
    if window.0 < cfg.t_start || window.1 > cfg.t_end || window.0 >= window.1 {
        return Err(Error::Validation("window must lie inside the simulated interval".into()));
    }
    let env = model.spec.envelope;
    let paths: Result<Vec<PathSummary>> = with_pool(|| {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| {
                let mut tr = SupTracker::new(metric, env, window);
                let (status, last) = model.run(cfg, ics[i % ics.len()], i, |s| tr.observe(s))?;
                let stopped = status != PathStatus::Completed;
                Ok(PathSummary {
                    index: i,
                    status,
                    last,
                    sup: tr.sup,
                    exceeded: stopped || !(tr.sup < eps1),
                })
            })
            .collect()
    });
    let paths = paths?;
    Ok((
        ExceedanceStats::from_counts(metric.name(), eps1, window, &paths),
        paths,
    ))
}

/// Euler–Maruyama for `dX = a(t, X)dt + b(t, X)dW` driven by given Wiener
/// increments.
pub fn euler_maruyama_1d<A, B>(a: A, b: B, x0: f64, t0: f64, dt: f64, dw: &[f64]) -> f64
where
    A: Fn(f64, f64) -> f64,
    B: Fn(f64, f64) -> f64,
{
    let mut x = x0;
    for (k, w) in dw.iter().enumerate() {
        let t = t0 + k as f64 * dt;
        x += a(t, x) * dt + b(t, x) * w;
    }
    x
}

/// Default step `2.5·10⁻³` of the unperturbed period `2π/ν₀`.
pub fn default_dt(nu0: f64) -> f64 {
    2.5e-3 * 2.0 * PI / nu0
}
