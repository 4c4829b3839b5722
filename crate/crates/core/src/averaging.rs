//! Resonance averaging.
//!
//! The first averaging removes the fast phase `S` from the drift order by
//! order through the near-identity change `r = R + Σ μ^k u_k(R, Ψ, S)`,
//! `ψ = Ψ + Σ μ^k v_k(R, Ψ, S)`. Matching powers of `μ` in the transformed
//! equations gives, for every `k`,
//!
//! ```text
//! s₀ ∂_S (u_k, v_k) = (Λ_k, Ω_k) − b_k + h̃_k,    (Λ_k, Ω_k) = ⟨b_k − h̃_k⟩_S
//! ```
//!
//! where `h̃_k` collects the composition of lower `Λ_j, Ω_j` with the shift,
//! the transport of lower generators by the slow-frame drift and the Itô
//! trace terms. The second averaging removes `ψ` from the amplitude equation
//! in the same way when the phase drifts.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sysdef::SystemSpec;
use crate::trigpoly::{TrigPoly, Var};

/// Truncated power series in `μ` with polynomial coefficients, indexed by order.
pub type Series = Vec<TrigPoly>;

fn zero_series(len: usize, d: u32) -> Series {
    vec![TrigPoly::zero(d); len]
}

/// Product of two series truncated at order `k_max`.
pub fn series_mul(a: &Series, b: &Series, k_max: usize) -> Result<Series> {
    let d = a.first().or(b.first()).map(TrigPoly::denom).unwrap_or(1);
    let mut out = zero_series(k_max + 1, d);
    for (i, ai) in a.iter().enumerate().take(k_max + 1) {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(k_max + 1 - i) {
            if bj.is_zero() {
                continue;
            }
            out[i + j] = out[i + j].add(&ai.mul(bj)?)?;
        }
    }
    Ok(out)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Coefficients of `f(r + Σ δr_i μ^i, ψ + Σ δψ_i μ^i)` up to order `k_max`
/// by Taylor expansion. The shift series must vanish at order zero.
pub fn taylor_shift(f: &TrigPoly, dr: &Series, dpsi: &Series, k_max: usize) -> Result<Series> {
    let d = f.denom();
    debug_assert!(dr.first().is_none_or(TrigPoly::is_zero));
    debug_assert!(dpsi.first().is_none_or(TrigPoly::is_zero));
    let trunc = |s: &Series| {
        let mut s: Series = s.iter().take(k_max + 1).cloned().collect();
        s.resize(k_max + 1, TrigPoly::zero(d));
        s
    };
    let (dr, dpsi) = (trunc(dr), trunc(dpsi));
    let r_zero = dr.iter().all(TrigPoly::is_zero);
    let p_zero = dpsi.iter().all(TrigPoly::is_zero);
    let mut one = zero_series(k_max + 1, d);
    one[0] = TrigPoly::constant(1.0, d);
    let mut rpow = vec![one.clone()];
    let mut ppow = vec![one];
    for a in 1..=k_max {
        rpow.push(if r_zero {
            zero_series(k_max + 1, d)
        } else {
            series_mul(&rpow[a - 1], &dr, k_max)?
        });
        ppow.push(if p_zero {
            zero_series(k_max + 1, d)
        } else {
            series_mul(&ppow[a - 1], &dpsi, k_max)?
        });
    }
    let mut out = zero_series(k_max + 1, d);
    out[0] = f.clone();
    for a in 0..=k_max {
        for b in 0..=(k_max - a) {
            if a + b == 0 {
                continue;
            }
            if (a > 0 && r_zero) || (b > 0 && p_zero) {
                continue;
            }
            let deriv = f.diff_n(a as u32, b as u32);
            if deriv.is_zero() {
                continue;
            }
            let coeff = deriv.scale(1.0 / (factorial(a) * factorial(b)));
            let prod = series_mul(&rpow[a], &ppow[b], k_max)?;
            for (k, pk) in prod.iter().enumerate().skip(1) {
                if !pk.is_zero() {
                    out[k] = out[k].add(&coeff.mul(pk)?)?;
                }
            }
        }
    }
    Ok(out)
}

type Mat = [[TrigPoly; 2]; 2];

fn hessian(u: &TrigPoly) -> Mat {
    let ur = u.diff(Var::R);
    let up = u.diff(Var::Psi);
    let urp = ur.diff(Var::Psi);
    [[ur.diff(Var::R), urp.clone()], [urp, up.diff(Var::Psi)]]
}

/// `tr(Bᵢᵀ H Bⱼ) = Σ_c Σ_{a,b} Bᵢ[a][c]·H[a][b]·Bⱼ[b][c]`.
fn trace_form(bi: &Mat, h: &Mat, bj: &Mat) -> Result<TrigPoly> {
    let d = h[0][0].denom();
    let mut acc = TrigPoly::zero(d);
    for c in 0..2 {
        for a in 0..2 {
            if bi[a][c].is_zero() {
                continue;
            }
            for b in 0..2 {
                if h[a][b].is_zero() || bj[b][c].is_zero() {
                    continue;
                }
                acc = acc.add(&bi[a][c].mul(&h[a][b])?.mul(&bj[b][c])?)?;
            }
        }
    }
    Ok(acc)
}

/// Terms of `p` that depend on `S`.
fn oscillating_s(p: &TrigPoly) -> TrigPoly {
    TrigPoly::from_terms(p.denom(), p.terms().filter(|t| t.lnum != 0))
}

/// Terms of an S-free `p` that depend on `ψ`.
fn oscillating_psi(p: &TrigPoly) -> TrigPoly {
    TrigPoly::from_terms(p.denom(), p.terms().filter(|t| t.jpsi != 0))
}

/// The system in the slow variables `(R, Ψ)`:
/// `b₁ₖ = a₁ₖ(R, (κ/ϰ)S + Ψ, S)`, `b₂ₖ = a₂ₖ(…) − κs_k/ϰ`, `B_k` likewise.
#[derive(Clone, Debug, Serialize)]
pub struct SlowFrame {
    pub b1: Series,
    pub b2: Series,
    pub noise: Vec<Option<Mat>>,
}

pub fn to_slow_frame(spec: &SystemSpec, order: u32) -> Result<SlowFrame> {
    let d = spec.denom();
    let kappa = spec.resonance.kappa();
    let len = order as usize + 1;
    let mut b1 = zero_series(len, d);
    let mut b2 = zero_series(len, d);
    let mut noise = vec![None; len];
    let ratio = kappa as f64 / d as f64;
    for k in 1..len {
        let sk = spec.phase.coeff(k as u32);
        if let Some([a1, a2]) = spec.drift.get(&(k as u32)) {
            b1[k] = a1.substitute_phase(kappa, d)?;
            b2[k] = a2.substitute_phase(kappa, d)?;
        }
        if sk != 0.0 {
            b2[k] = b2[k].add(&TrigPoly::constant(-ratio * sk, d))?;
        }
        if let Some(m) = spec.noise.get(&(k as u32)) {
            let sub = |p: &TrigPoly| p.substitute_phase(kappa, d);
            noise[k] = Some([
                [sub(&m[0][0])?, sub(&m[0][1])?],
                [sub(&m[1][0])?, sub(&m[1][1])?],
            ]);
        }
    }
    Ok(SlowFrame { b1, b2, noise })
}

/// Output of the first averaging up to order `N`; all series are indexed by
/// order with index 0 unused.
#[derive(Clone, Debug, Serialize)]
pub struct AveragedSystem {
    pub order: u32,
    pub n: u32,
    pub p: u32,
    pub m: u32,
    pub chi_m: f64,
    pub kappa: i32,
    pub varkappa: u32,
    pub eps: f64,
    pub s: Vec<f64>,
    #[serde(rename = "Lambda")]
    pub lambda: Series,
    #[serde(rename = "Omega")]
    pub omega: Series,
    pub u: Series,
    pub v: Series,
    pub h1: Series,
    pub h2: Series,
    #[serde(skip)]
    pub slow: SlowFrame,
}

/// Smallest order with a nonvanishing phase coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QInfo {
    pub q: u32,
    /// `Ω_q` is a constant (the phase drifts at this order).
    pub constant: bool,
    /// `Ω_q` as a number when constant.
    pub value: Option<f64>,
}

impl AveragedSystem {
    pub fn s_coeff(&self, k: u32) -> f64 {
        self.s.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn denom(&self) -> u32 {
        self.varkappa
    }

    /// `q`, the first order at which the averaged phase moves; `None` when
    /// every `Ω_k` vanishes up to `N`.
    pub fn find_q(&self) -> Option<QInfo> {
        (1..=self.order).find_map(|k| {
            let om = &self.omega[k as usize];
            (!om.is_zero()).then(|| QInfo {
                q: k,
                constant: om.is_psi_free() && om.as_constant().is_some(),
                value: om.as_constant(),
            })
        })
    }

    pub fn lambda_at(&self, k: u32) -> &TrigPoly {
        &self.lambda[k as usize]
    }

    pub fn omega_at(&self, k: u32) -> &TrigPoly {
        &self.omega[k as usize]
    }
}

/// Runs the first averaging up to order `order` (`n ≤ N ≤ m`).
pub fn average_first(spec: &SystemSpec, order: u32) -> Result<AveragedSystem> {
    let (m, chi_m) = spec.envelope.params();
    if order < spec.n {
        return Err(Error::Precondition(format!(
            "averaging order N = {order} must be at least n = {}",
            spec.n
        )));
    }
    if order > m {
        return Err(Error::Precondition(format!(
            "averaging order N = {order} exceeds m = {m} allowed by the envelope"
        )));
    }
    let d = spec.denom();
    let s0 = spec.s0();
    let eps2 = spec.eps * spec.eps;
    let p = spec.p as usize;
    let len = order as usize + 1;
    let slow = to_slow_frame(spec, order)?;
    let mut lambda = zero_series(len, d);
    let mut omega = zero_series(len, d);
    let mut u = zero_series(len, d);
    let mut v = zero_series(len, d);
    let mut h1 = zero_series(len, d);
    let mut h2 = zero_series(len, d);

    for k in 1..len {
        let mut hu = TrigPoly::zero(d);
        let mut hv = TrigPoly::zero(d);

        // composition: Λ_j, Ω_j evaluated at the shifted arguments
        let us: Series = u[..k].to_vec();
        let vs: Series = v[..k].to_vec();
        for j in 1..k {
            let shift = k - j;
            if !lambda[j].is_zero() {
                hu = hu.add(&taylor_shift(&lambda[j], &us, &vs, shift)?[shift])?;
            }
            if !omega[j].is_zero() {
                hv = hv.add(&taylor_shift(&omega[j], &us, &vs, shift)?[shift])?;
            }
        }

        // transport of earlier generators by the slow-frame drift
        for j in 1..k {
            let (ui, vi) = (&u[k - j], &v[k - j]);
            if ui.is_zero() && vi.is_zero() {
                continue;
            }
            let sj = spec.phase.coeff(j as u32);
            let transport = |w: &TrigPoly| -> Result<TrigPoly> {
                let mut t = slow.b1[j]
                    .mul(&w.diff(Var::R))?
                    .add(&slow.b2[j].mul(&w.diff(Var::Psi))?)?;
                if sj != 0.0 {
                    t = t.add(&w.diff(Var::S).scale(sj))?;
                }
                Ok(t)
            };
            hu = hu.sub(&transport(ui)?)?;
            hv = hv.sub(&transport(vi)?)?;
        }

        // Itô trace terms: i, j ≥ p, l ≥ 1, i + j + l = k
        if eps2 != 0.0 && k > 2 * p {
            for l in 1..=(k - 2 * p) {
                let (hu_l, hv_l) = (hessian(&u[l]), hessian(&v[l]));
                for i in p..=(k - l - p) {
                    let j = k - l - i;
                    let (Some(bi), Some(bj)) = (&slow.noise[i], &slow.noise[j]) else {
                        continue;
                    };
                    hu = hu.sub(&trace_form(bi, &hu_l, bj)?.scale(0.5 * eps2))?;
                    hv = hv.sub(&trace_form(bi, &hv_l, bj)?.scale(0.5 * eps2))?;
                }
            }
        }

        let wu = slow.b1[k].sub(&hu)?;
        let wv = slow.b2[k].sub(&hv)?;
        lambda[k] = wu.average_s();
        omega[k] = wv.average_s();
        u[k] = oscillating_s(&wu).neg().antiderivative_s()?.scale(1.0 / s0);
        v[k] = oscillating_s(&wv).neg().antiderivative_s()?.scale(1.0 / s0);
        h1[k] = hu;
        h2[k] = hv;
    }

    Ok(AveragedSystem {
        order,
        n: spec.n,
        p: spec.p,
        m,
        chi_m,
        kappa: spec.resonance.kappa(),
        varkappa: d,
        eps: spec.eps,
        s: spec.phase.s.clone(),
        lambda,
        omega,
        u,
        v,
        h1,
        h2,
        slow,
    })
}

/// Output of the second averaging: `ż = Σ μ^k F_k(z)` with
/// `r = z + Σ μ^j e_j(z, ψ)` (generators indexed by order).
#[derive(Clone, Debug, Serialize)]
pub struct SecondAveraged {
    pub q: u32,
    pub s_q: f64,
    #[serde(rename = "F")]
    pub f: Series,
    pub e: Series,
    pub g: Series,
}

/// Noise of the `(r, ψ)` system: `C = (J·B)(R(r, ψ), Ψ(r, ψ), S)` with
/// `J = I + Σ μ^k ∂(u_k, v_k)/∂(R, Ψ)`, up to order `k_max`.
fn averaged_noise(avg: &AveragedSystem, k_max: usize) -> Result<Vec<Mat>> {
    let d = avg.denom();
    let z = TrigPoly::zero(d);
    let zmat = || -> Mat { [[z.clone(), z.clone()], [z.clone(), z.clone()]] };
    let len = k_max + 1;
    let get_u = |k: usize| avg.u.get(k).cloned().unwrap_or_else(|| z.clone());
    let get_v = |k: usize| avg.v.get(k).cloned().unwrap_or_else(|| z.clone());

    // J·B in the original slow variables
    let mut jb: Vec<Mat> = (0..len).map(|_| zmat()).collect();
    for k in 1..len {
        if let Some(Some(b)) = avg.slow.noise.get(k) {
            jb[k] = b.clone();
        }
        for i in 1..k {
            let Some(Some(bj)) = avg.slow.noise.get(k - i) else {
                continue;
            };
            let jac = [
                [get_u(i).diff(Var::R), get_u(i).diff(Var::Psi)],
                [get_v(i).diff(Var::R), get_v(i).diff(Var::Psi)],
            ];
            for a in 0..2 {
                for c in 0..2 {
                    let mut acc = jb[k][a][c].clone();
                    for b in 0..2 {
                        acc = acc.add(&jac[a][b].mul(&bj[b][c])?)?;
                    }
                    jb[k][a][c] = acc;
                }
            }
        }
    }

    // inverse map R = r + Ũ, Ψ = ψ + Ṽ with Ũ = −Σ μ^k u_k(r + Ũ, ψ + Ṽ, S)
    let mut ut = zero_series(len, d);
    let mut vt = zero_series(len, d);
    for _ in 0..k_max {
        let mut nu = zero_series(len, d);
        let mut nv = zero_series(len, d);
        for k in 1..len {
            let (uk, vk) = (get_u(k), get_v(k));
            let su = taylor_shift(&uk, &ut, &vt, k_max - k)?;
            let sv = taylor_shift(&vk, &ut, &vt, k_max - k)?;
            for i in 0..=(k_max - k) {
                nu[k + i] = nu[k + i].sub(&su[i])?;
                nv[k + i] = nv[k + i].sub(&sv[i])?;
            }
        }
        ut = nu;
        vt = nv;
    }

    let mut out: Vec<Mat> = (0..len).map(|_| zmat()).collect();
    for j in 1..len {
        for a in 0..2 {
            for c in 0..2 {
                if jb[j][a][c].is_zero() {
                    continue;
                }
                let sh = taylor_shift(&jb[j][a][c], &ut, &vt, k_max - j)?;
                for i in 0..=(k_max - j) {
                    out[j + i][a][c] = out[j + i][a][c].add(&sh[i])?;
                }
            }
        }
    }
    Ok(out)
}

/// Runs the second averaging for a drifting phase (`n > q`, `2p > q`,
/// `s_q ≠ 0`), producing `F_k` for `k = n..N`.
pub fn average_second(avg: &AveragedSystem) -> Result<SecondAveraged> {
    let qi = avg
        .find_q()
        .ok_or_else(|| Error::Precondition("no order with nonzero phase dynamics".into()))?;
    let (n, p, q) = (avg.n as usize, avg.p as usize, qi.q as usize);
    let s_q = avg.s_coeff(qi.q);
    if !(n > q && 2 * p > q && s_q != 0.0) {
        return Err(Error::Precondition(format!(
            "second averaging needs n > q, 2p > q and s_q != 0 (n = {n}, p = {p}, q = {q}, s_q = {s_q})"
        )));
    }
    let d = avg.denom();
    let big_n = avg.order as usize;
    let len = big_n + 1;
    let eps2 = avg.eps * avg.eps;
    let factor = -(d as f64) / (avg.kappa as f64 * s_q);
    let mut f = zero_series(len, d);
    let mut g = zero_series(len, d);
    let mut e = zero_series(len, d);
    let trace_from = n + 2 * p - q;
    let noise = if eps2 != 0.0 && big_n >= trace_from {
        Some(averaged_noise(avg, big_n - (n - q) - p)?)
    } else {
        None
    };

    for k in n..len {
        let mut gk = TrigPoly::zero(d);
        // composition F_j(r + Σ e_l μ^l)
        for j in n..k {
            if f[j].is_zero() {
                continue;
            }
            let es: Series = e[..=(k - j)].to_vec();
            let zs = zero_series(k - j + 1, d);
            gk = gk.add(&taylor_shift(&f[j], &es, &zs, k - j)?[k - j])?;
        }
        // transport Λ_i ∂_r e_j + Ω_i ∂_ψ e_j
        for i in n..k {
            let j = k - i;
            if j >= n - q && !e[j].is_zero() {
                gk = gk.sub(&avg.lambda[i].mul(&e[j].diff(Var::R))?)?;
            }
        }
        for i in (q + 1)..k {
            let j = k - i;
            if j >= n - q && !e[j].is_zero() {
                gk = gk.sub(&avg.omega[i].mul(&e[j].diff(Var::Psi))?)?;
            }
        }
        // S-averaged Itô trace terms
        if let Some(c) = &noise {
            if k >= trace_from {
                let mut tr = TrigPoly::zero(d);
                for l in (n - q)..=(k - 2 * p) {
                    if e[l].is_zero() {
                        continue;
                    }
                    let h = hessian(&e[l]);
                    for i in p..=(k - l - p) {
                        let j = k - l - i;
                        tr = tr.add(&trace_form(&c[i], &h, &c[j])?)?;
                    }
                }
                gk = gk.sub(&tr.average_s().scale(0.5 * eps2))?;
            }
        }
        let w = avg.lambda[k].sub(&gk)?;
        f[k] = w.average_psi()?;
        e[k - q] = oscillating_psi(&w).neg().antiderivative_psi()?.scale(factor);
        g[k] = gk;
    }
    Ok(SecondAveraged {
        q: qi.q,
        s_q,
        f,
        e,
        g,
    })
}

/// Averaged coefficients as printable expressions keyed by order.
pub fn pretty(series: &Series, angle: &str) -> BTreeMap<u32, String> {
    series
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, p)| !p.is_zero())
        .map(|(k, p)| (k as u32, p.to_expr(angle)))
        .collect()
}
