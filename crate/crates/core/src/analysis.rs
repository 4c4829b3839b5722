//! Regime detection: fixed points of the limiting system and their
//! stability parameters, asymptotic particular solutions, Lyapunov
//! coefficients and phase-drift radii.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::averaging::{average_first, average_second, AveragedSystem, QInfo, SecondAveraged};
use crate::envelope::Envelope;
use crate::error::{Error, Result};
use crate::numeric::{bisect, solve2, wrap_pi};
use crate::sysdef::{SystemSpec, DEFAULT_R_MIN};
use crate::trigpoly::{gcd, TrigPoly, Var};

pub const ROOT_TOL: f64 = 1e-9;
pub const DEGENERACY_TOL: f64 = 1e-8;
pub const MARGIN: f64 = 1e-10;
const GRID: usize = 64;
const DRIFT_GRID: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LockingStable,
    Unstable,
    Degenerate,
    /// Neither the stability nor the instability criterion applies.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointReport {
    pub rho0: f64,
    pub phi0: f64,
    /// Period in ψ of the family the point belongs to.
    pub family_period: f64,
    pub residual: f64,
    pub lambda_n: f64,
    pub xi_n: f64,
    pub eta_q: f64,
    pub omega_q: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub beta1: Option<Complex64>,
    pub beta2: Option<Complex64>,
    pub beta2_tilde: Option<Complex64>,
    pub q_constraint_ok: bool,
    pub p_constraint_ok: bool,
    /// `γ_q(t) → ∞`: asymptotic rather than plain stability.
    pub gamma_q_diverges: bool,
    pub verdict: Verdict,
}

/// Evaluation context for a pair of S-free polynomials and their Jacobian.
struct Pair<'a> {
    f: &'a TrigPoly,
    g: &'a TrigPoly,
    fr: TrigPoly,
    fp: TrigPoly,
    gr: TrigPoly,
    gp: TrigPoly,
}

impl<'a> Pair<'a> {
    fn new(f: &'a TrigPoly, g: &'a TrigPoly) -> Self {
        Pair {
            f,
            g,
            fr: f.diff(Var::R),
            fp: f.diff(Var::Psi),
            gr: g.diff(Var::R),
            gp: g.diff(Var::Psi),
        }
    }

    fn value(&self, r: f64, psi: f64) -> [f64; 2] {
        [
            self.f.eval_unchecked(r, psi, 0.0),
            self.g.eval_unchecked(r, psi, 0.0),
        ]
    }

    fn jacobian(&self, r: f64, psi: f64) -> [[f64; 2]; 2] {
        let e = |p: &TrigPoly| p.eval_unchecked(r, psi, 0.0);
        [[e(&self.fr), e(&self.fp)], [e(&self.gr), e(&self.gp)]]
    }
}

fn norm_inf(v: [f64; 2]) -> f64 {
    v[0].abs().max(v[1].abs())
}

fn newton(pair: &Pair, mut r: f64, mut psi: f64, r_min: f64, r_max: f64) -> Option<(f64, f64, f64)> {
    let mut res = norm_inf(pair.value(r, psi));
    // Iterate past the residual target until the step stalls, so that
    // multiple roots (linear convergence) are located as well as simple ones.
    for _ in 0..200 {
        if res == 0.0 {
            break;
        }
        let fv = pair.value(r, psi);
        let Ok(step) = solve2(pair.jacobian(r, psi), [-fv[0], -fv[1]]) else {
            break;
        };
        if step[0].abs().max(step[1].abs()) <= 1e-15 * (1.0 + r.abs() + psi.abs()) {
            break;
        }
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (nr, np) = (r + lam * step[0], psi + lam * step[1]);
            if nr > 0.0 {
                let nres = norm_inf(pair.value(nr, np));
                if nres < res {
                    r = nr;
                    psi = np;
                    res = nres;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (res <= ROOT_TOL && r >= r_min && r <= r_max).then_some((r, psi.rem_euclid(2.0 * PI), res))
}

/// All common zeros of two S-free polynomials in `[r_min, r_max] × [0, 2π)`,
/// seeded from sign changes on a 64×64 grid and refined by damped Newton.
/// Returns `(ρ₀, φ₀, residual)` triples sorted by angle.
pub fn find_fixed_points(
    lambda_n: &TrigPoly,
    omega_q: &TrigPoly,
    r_min: f64,
    r_max: f64,
) -> Result<Vec<(f64, f64, f64)>> {
    if !lambda_n.is_s_free() || !omega_q.is_s_free() {
        return Err(Error::Precondition(
            "fixed points need S-free averaged coefficients".into(),
        ));
    }
    let pair = Pair::new(lambda_n, omega_q);
    let rs: Vec<f64> = (0..=GRID)
        .map(|i| r_min + (r_max - r_min) * i as f64 / GRID as f64)
        .collect();
    let ps: Vec<f64> = (0..=GRID).map(|j| 2.0 * PI * j as f64 / GRID as f64).collect();
    let vals: Vec<Vec<[f64; 2]>> = rs
        .iter()
        .map(|&r| ps.iter().map(|&p| pair.value(r, p)).collect())
        .collect();
    let mut found: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..GRID {
        for j in 0..GRID {
            let corners = [vals[i][j], vals[i + 1][j], vals[i][j + 1], vals[i + 1][j + 1]];
            let brackets = (0..2).all(|c| {
                let lo = corners.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = corners.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                lo <= 0.0 && hi >= 0.0
            });
            if !brackets {
                continue;
            }
            let r0 = 0.5 * (rs[i] + rs[i + 1]);
            let p0 = 0.5 * (ps[j] + ps[j + 1]);
            if let Some((r, p, res)) = newton(&pair, r0, p0, r_min, r_max) {
                let dup = found
                    .iter()
                    .any(|&(fr, fp, _)| (fr - r).abs() < 1e-6 && wrap_pi(fp - p).abs() < 1e-6);
                if !dup {
                    found.push((r, p, res));
                }
            }
        }
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    Ok(found)
}

/// Period in ψ shared by two polynomials: `2π / gcd` of their frequencies.
pub fn family_period(a: &TrigPoly, b: &TrigPoly) -> f64 {
    let g = gcd(a.psi_frequency_gcd(), b.psi_frequency_gcd());
    if g == 0 {
        2.0 * PI
    } else {
        2.0 * PI / g as f64
    }
}

fn delta(a: u32, b: u32) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Stability parameters and verdict at a fixed point `(ρ₀, φ₀)` of
/// `(Λ_n, Ω_q)`.
pub fn classify_fixed_point(
    rho0: f64,
    phi0: f64,
    avg: &AveragedSystem,
    q: u32,
    env: &Envelope,
) -> FixedPointReport {
    let (n, big_n, p) = (avg.n, avg.order, avg.p);
    let (m, chi_m) = (avg.m, avg.chi_m);
    let lam = avg.lambda_at(n);
    let om = avg.omega_at(q);
    let pair = Pair::new(lam, om);
    let jac = pair.jacobian(rho0, phi0);
    let residual = norm_inf(pair.value(rho0, phi0));
    let [[lambda_n, xi_n], [eta_q, omega_q]] = jac;
    let d = lambda_n * omega_q - xi_n * eta_q;
    let q_constraint_ok = n <= q && 3 * q < 2 * big_n + 2 + n;
    let p_constraint_ok = q < n || 2 * p > q - n;
    let mut report = FixedPointReport {
        rho0,
        phi0,
        family_period: family_period(lam, om),
        residual,
        lambda_n,
        xi_n,
        eta_q,
        omega_q,
        d,
        beta1: None,
        beta2: None,
        beta2_tilde: None,
        q_constraint_ok,
        p_constraint_ok,
        gamma_q_diverges: !env.integrable(q),
        verdict: Verdict::Degenerate,
    };
    if d.abs() <= DEGENERACY_TOL {
        return report;
    }
    let (b1, b2) = if q == n {
        let tr = lambda_n + omega_q;
        let disc = Complex64::new(tr * tr - 4.0 * d, 0.0).sqrt();
        ((tr + disc) / 2.0, (tr - disc) / 2.0)
    } else {
        if lambda_n == 0.0 {
            report.verdict = Verdict::Inconclusive;
            return report;
        }
        (Complex64::new(lambda_n, 0.0), Complex64::new(d / lambda_n, 0.0))
    };
    let shift = if q >= n {
        delta(m, q) * (q - n) as f64 * chi_m / 2.0
    } else {
        0.0
    };
    let b2t = b2 - shift;
    report.beta1 = Some(b1);
    report.beta2 = Some(b2);
    report.beta2_tilde = Some(b2t);
    report.verdict = if b1.re < 0.0 && b2t.re < 0.0 && q_constraint_ok {
        Verdict::LockingStable
    } else if (q == n && (b1.re > 0.0 || b2.re > 0.0))
        || (q > n && b1.re > 0.0 && b2t.re > 0.0)
    {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    report
}

/// Coefficients of `Σ_i μ^i P_i(ρ₀ + Σ δρ_k μ^k, φ₀ + Σ δφ_k μ^k)` up to
/// order `k_max`, by Taylor expansion with exact derivatives.
fn compose_numeric(
    polys: &[(usize, &TrigPoly)],
    x0: (f64, f64),
    dr: &[f64],
    dp: &[f64],
    k_max: usize,
) -> Vec<f64> {
    let mul = |a: &[f64], b: &[f64]| {
        let mut out = vec![0.0; k_max + 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate().take(k_max + 1 - i) {
                out[i + j] += x * y;
            }
        }
        out
    };
    let mut one = vec![0.0; k_max + 1];
    one[0] = 1.0;
    let mut rp = vec![one.clone()];
    let mut pp = vec![one];
    for a in 1..=k_max {
        rp.push(mul(&rp[a - 1], dr));
        pp.push(mul(&pp[a - 1], dp));
    }
    let mut out = vec![0.0; k_max + 1];
    for &(i, poly) in polys {
        if i > k_max {
            continue;
        }
        let room = k_max - i;
        let mut fact_a = 1.0;
        for a in 0..=room {
            if a > 0 {
                fact_a *= a as f64;
            }
            let mut fact_b = 1.0;
            for b in 0..=(room - a) {
                if b > 0 {
                    fact_b *= b as f64;
                }
                let c = poly.diff_n(a as u32, b as u32).eval_unchecked(x0.0, x0.1, 0.0)
                    / (fact_a * fact_b);
                if c == 0.0 {
                    continue;
                }
                let prod = mul(&rp[a], &pp[b]);
                for (k, v) in prod.iter().enumerate().take(room + 1) {
                    out[i + k] += c * v;
                }
            }
        }
    }
    out
}

/// `ρ*(t) = Σ ρ_k μ^k`, `φ*(t) = Σ φ_k μ^k` of the truncated system.
#[derive(Clone, Debug, Serialize)]
pub struct ParticularSolution {
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub max_residual: f64,
}

impl ParticularSolution {
    pub fn rho_at(&self, mu: f64) -> f64 {
        self.rho.iter().rev().fold(0.0, |acc, c| acc * mu + c)
    }

    pub fn phi_at(&self, mu: f64) -> f64 {
        self.phi.iter().rev().fold(0.0, |acc, c| acc * mu + c)
    }

    pub fn constant(rho0: f64, phi0: f64) -> Self {
        ParticularSolution {
            rho: vec![rho0],
            phi: vec![phi0],
            max_residual: 0.0,
        }
    }
}

/// Solves `Y(ρ_k, φ_k) = −(known part)` for `k = 1..N−q`, matching the
/// orders `n + k` of the amplitude and `q + k` of the phase equation.
pub fn particular_solution(
    fp: &FixedPointReport,
    avg: &AveragedSystem,
    q: u32,
) -> Result<ParticularSolution> {
    if fp.verdict == Verdict::Degenerate {
        return Err(Error::Precondition(
            "particular solution needs a nondegenerate fixed point".into(),
        ));
    }
    let (n, q, big_n) = (avg.n as usize, q as usize, avg.order as usize);
    let k_max = big_n.saturating_sub(q);
    let lam: Vec<(usize, &TrigPoly)> = (n..=big_n).map(|i| (i, &avg.lambda[i])).collect();
    let om: Vec<(usize, &TrigPoly)> = (q..=big_n).map(|i| (i, &avg.omega[i])).collect();
    let y = [[fp.lambda_n, fp.xi_n], [fp.eta_q, fp.omega_q]];
    let mut rho = vec![fp.rho0];
    let mut phi = vec![fp.phi0];
    let mut max_residual = 0.0f64;
    for k in 1..=k_max {
        rho.push(0.0);
        phi.push(0.0);
        let mut dr = rho.clone();
        let mut dp = phi.clone();
        dr[0] = 0.0;
        dp[0] = 0.0;
        let a = compose_numeric(&lam, (fp.rho0, fp.phi0), &dr, &dp, n + k);
        let b = compose_numeric(&om, (fp.rho0, fp.phi0), &dr, &dp, q + k);
        let rhs = [-a[n + k], -b[q + k]];
        let sol = solve2(y, rhs)?;
        rho[k] = sol[0];
        phi[k] = sol[1];
        let res0 = y[0][0] * sol[0] + y[0][1] * sol[1] - rhs[0];
        let res1 = y[1][0] * sol[0] + y[1][1] * sol[1] - rhs[1];
        max_residual = max_residual.max(res0.abs()).max(res1.abs());
    }
    Ok(ParticularSolution {
        rho,
        phi,
        max_residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovCheck {
    pub alpha: f64,
    #[serde(rename = "B1")]
    pub b1: f64,
    #[serde(rename = "B2")]
    pub b2: f64,
    /// Largest `dV/dt` over the grid.
    pub max_dvdt: f64,
    /// Largest `dV/dt / (μ^q |z|²)` over the grid.
    pub max_scaled: f64,
    pub nodes: usize,
}

/// Sums `Σ μ^k P_k(r, ψ)` over a coefficient series.
fn series_value(series: &[TrigPoly], mu: f64, r: f64, psi: f64) -> f64 {
    let mut acc = 0.0;
    let mut pw = 1.0;
    for p in series.iter().skip(1) {
        pw *= mu;
        if !p.is_zero() {
            acc += pw * p.eval_unchecked(r, psi, 0.0);
        }
    }
    acc
}

/// Evaluates the Lyapunov function
/// `V = B₁z₁² + z₂² + μ^{(q−n)/2}B₂z₁z₂` with `z₁ = (ρ − ρ*)μ^{−α}`,
/// `z₂ = (φ − φ*)μ^{−α−(q−n)/2}` along the truncated averaged system on an
/// annulus in `z` and a list of times.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_check(
    fp: &FixedPointReport,
    sol: &ParticularSolution,
    avg: &AveragedSystem,
    q: u32,
    env: &Envelope,
    alpha: f64,
    annulus: (f64, f64),
    t_grid: &[f64],
) -> Result<LyapunovCheck> {
    if fp.lambda_n == 0.0 {
        return Err(Error::Precondition("Lyapunov coefficients need lambda_n != 0".into()));
    }
    let n = avg.n;
    let (m, chi_m) = (avg.m, avg.chi_m);
    let half = (q as f64 - n as f64) / 2.0;
    let dmq = delta(m, q);
    let b2t = fp.beta2_tilde.map_or(fp.omega_q, |b| b.re);
    let b2t_alpha = b2t - dmq * chi_m * alpha;
    let b1 = if fp.xi_n.abs() < 1e-12 {
        let omega_t = fp.omega_q - dmq * chi_m * (alpha + half);
        fp.lambda_n * omega_t
    } else {
        fp.lambda_n * b2t_alpha / (2.0 * fp.xi_n * fp.xi_n)
    };
    let b2 = -(2.0 * b1 * fp.xi_n + 2.0 * fp.eta_q) / fp.lambda_n;

    let z_of = |rho: f64, phi: f64, t: f64| -> (f64, f64, f64) {
        let mu = env.mu_unchecked(t);
        let z1 = (rho - sol.rho_at(mu)) * mu.powf(-alpha);
        let z2 = (phi - sol.phi_at(mu)) * mu.powf(-alpha - half);
        (z1, z2, mu)
    };
    let v_of = |rho: f64, phi: f64, t: f64| -> f64 {
        let (z1, z2, mu) = z_of(rho, phi, t);
        b1 * z1 * z1 + z2 * z2 + mu.powf(half) * b2 * z1 * z2
    };

    let (n_rad, n_ang) = (8, 64);
    let mut max_dvdt = f64::NEG_INFINITY;
    let mut max_scaled = f64::NEG_INFINITY;
    let mut nodes = 0;
    for &t in t_grid {
        let mu = env.mu(t)?;
        let (rs, ps) = (sol.rho_at(mu), sol.phi_at(mu));
        let sr = mu.powf(alpha);
        let sp = mu.powf(alpha + half);
        for i in 0..n_rad {
            let rad = annulus.0 + (annulus.1 - annulus.0) * i as f64 / (n_rad - 1) as f64;
            for j in 0..n_ang {
                let th = 2.0 * PI * j as f64 / n_ang as f64;
                let (z1, z2) = (rad * th.cos(), rad * th.sin());
                let rho = rs + z1 * sr;
                let phi = ps + z2 * sp;
                let rdot = series_value(&avg.lambda, mu, rho, phi);
                let pdot = series_value(&avg.omega, mu, rho, phi);
                let dv_dz1 = 2.0 * b1 * z1 + mu.powf(half) * b2 * z2;
                let dv_dz2 = 2.0 * z2 + mu.powf(half) * b2 * z1;
                let h = 1e-4 * t;
                let dv_dt = (v_of(rho, phi, t + h) - v_of(rho, phi, t - h)) / (2.0 * h);
                let dvdt = dv_dz1 * rdot / sr + dv_dz2 * pdot / sp + dv_dt;
                max_dvdt = max_dvdt.max(dvdt);
                max_scaled = max_scaled.max(dvdt / (mu.powi(q as i32) * rad * rad));
                nodes += 1;
            }
        }
    }
    Ok(LyapunovCheck {
        alpha,
        b1,
        b2,
        max_dvdt,
        max_scaled,
        nodes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// The amplitude equation vanishes identically in ψ at `ρ₀`.
    Lemma3,
    /// The amplitude equation is averaged over ψ first.
    Lemma5,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub mode: DriftMode,
    pub rho0: f64,
    /// `ξ̂_n = F_n′(ρ₀)` or `sup_ψ ∂_rΛ_n(ρ₀, ψ)`.
    pub slope: f64,
    pub threshold: f64,
    pub condition_ok: bool,
    /// `φ_D(t) ≈ −(κ s_q/ϰ)·γ_q(t)`: the coefficient `κ s_q/ϰ` and `q`.
    pub phase_rate: f64,
    pub q: u32,
}

impl DriftReport {
    pub fn phi_leading(&self, env: &Envelope, t: f64) -> Result<f64> {
        Ok(-self.phase_rate * env.gamma(self.q, t, env.t0)?)
    }
}

/// Sign-change roots of a function of `r` on a uniform grid, refined by
/// bisection.
fn radial_roots<F: Fn(f64) -> f64>(f: F, r_min: f64, r_max: f64) -> Vec<f64> {
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_r = r_min;
    let mut prev = f(r_min);
    for i in 1..=DRIFT_GRID {
        let r = r_min + (r_max - r_min) * i as f64 / DRIFT_GRID as f64;
        let v = f(r);
        if prev == 0.0 {
            roots.push(prev_r);
        } else if prev.signum() != v.signum() && v != 0.0 {
            if let Ok(root) = bisect(&f, prev_r, r, 1e-15) {
                roots.push(root);
            }
        }
        prev = v;
        prev_r = r;
    }
    if prev == 0.0 {
        roots.push(prev_r);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots
}

/// Phase-drift radii and the amplitude-stability condition.
pub fn classify_drift(
    avg: &AveragedSystem,
    second: Option<&SecondAveraged>,
    qi: QInfo,
    r_min: f64,
    r_max: f64,
) -> Result<Vec<DriftReport>> {
    let n = avg.n;
    let q = qi.q;
    let threshold = delta(avg.m, n) * avg.chi_m / 2.0;
    let phase_rate = avg.kappa as f64 * avg.s_coeff(q) / avg.varkappa as f64;
    let mut out = Vec::new();
    if let Some(sec) = second {
        let fn_ = &sec.f[n as usize];
        let dfn = fn_.diff(Var::R);
        for rho0 in radial_roots(|r| fn_.eval_unchecked(r, 0.0, 0.0), r_min, r_max) {
            let slope = dfn.eval_unchecked(rho0, 0.0, 0.0);
            if slope == 0.0 {
                continue;
            }
            out.push(DriftReport {
                mode: DriftMode::Lemma5,
                rho0,
                slope,
                threshold,
                condition_ok: slope < threshold - MARGIN,
                phase_rate,
                q,
            });
        }
        return Ok(out);
    }
    let lam = avg.lambda_at(n);
    let om = avg.omega_at(q);
    let groups = lam.angle_groups();
    let Some((_, first)) = groups.iter().next() else {
        return Ok(out);
    };
    let laurent = |cs: &[(i32, f64)], r: f64| cs.iter().map(|&(k, c)| c * r.powi(k)).sum::<f64>();
    let dl = lam.diff(Var::R);
    for rho0 in radial_roots(|r| laurent(first, r), r_min, r_max) {
        let common = groups
            .values()
            .all(|cs| laurent(cs, rho0).abs() <= ROOT_TOL);
        if !common {
            continue;
        }
        let mut min_abs = f64::INFINITY;
        let mut sup = f64::NEG_INFINITY;
        for j in 0..DRIFT_GRID {
            let psi = 2.0 * PI * j as f64 / DRIFT_GRID as f64;
            min_abs = min_abs.min(om.eval_unchecked(rho0, psi, 0.0).abs());
            sup = sup.max(dl.eval_unchecked(rho0, psi, 0.0));
        }
        if min_abs <= ROOT_TOL {
            continue;
        }
        out.push(DriftReport {
            mode: DriftMode::Lemma3,
            rho0,
            slope: sup,
            threshold,
            condition_ok: sup < threshold - MARGIN,
            phase_rate,
            q,
        });
    }
    Ok(out)
}

/// Everything the pipeline learns about a system at a given averaging order.
#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub order: u32,
    pub n: u32,
    pub p: u32,
    pub q: Option<QInfo>,
    pub m: u32,
    pub chi_m: f64,
    pub fixed_points: Vec<FixedPointReport>,
    pub particular: Vec<Option<ParticularSolution>>,
    pub drift: Vec<DriftReport>,
}

impl AnalysisReport {
    pub fn stable_points(&self) -> impl Iterator<Item = (usize, &FixedPointReport)> {
        self.fixed_points
            .iter()
            .enumerate()
            .filter(|(_, f)| f.verdict == Verdict::LockingStable)
    }
}

/// Averages `spec` to order `order` and analyses the result.
pub fn analyze(spec: &SystemSpec, order: u32) -> Result<(AveragedSystem, Option<SecondAveraged>, AnalysisReport)> {
    let avg = average_first(spec, order)?;
    analyze_with(avg, spec.r_max, &spec.envelope)
}

/// Analyses an already averaged system; `env` decides the `γ_q` status.
pub fn analyze_with(
    avg: AveragedSystem,
    r_max: f64,
    env: &Envelope,
) -> Result<(AveragedSystem, Option<SecondAveraged>, AnalysisReport)> {
    let qi = avg.find_q();
    let mut fixed_points = Vec::new();
    let mut particular = Vec::new();
    let mut drift = Vec::new();
    let mut second = None;
    if let Some(qi) = qi {
        let n = avg.n;
        if !qi.constant && qi.q >= n {
            let roots = find_fixed_points(avg.lambda_at(n), avg.omega_at(qi.q), DEFAULT_R_MIN, r_max)?;
            for (r, p, _) in roots {
                let fp = classify_fixed_point(r, p, &avg, qi.q, env);
                particular.push(if fp.verdict == Verdict::LockingStable {
                    particular_solution(&fp, &avg, qi.q).ok()
                } else {
                    None
                });
                fixed_points.push(fp);
            }
        }
        if qi.constant {
            let s_q = avg.s_coeff(qi.q);
            if n > qi.q && 2 * avg.p > qi.q && s_q != 0.0 {
                let sec = average_second(&avg)?;
                drift = classify_drift(&avg, Some(&sec), qi, DEFAULT_R_MIN, r_max)?;
                second = Some(sec);
            } else {
                drift = classify_drift(&avg, None, qi, DEFAULT_R_MIN, r_max)?;
            }
        }
    }
    let report = AnalysisReport {
        order: avg.order,
        n: avg.n,
        p: avg.p,
        q: qi,
        m: avg.m,
        chi_m: avg.chi_m,
        fixed_points,
        particular,
        drift,
    };
    Ok((avg, second, report))
}
