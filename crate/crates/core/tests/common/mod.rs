#![allow(dead_code)]

use std::f64::consts::PI;

use isores_core::parse::{parse_expr, Angle, Params};
use isores_core::trigpoly::{Kind, TrigPoly, TrigTerm, Var};
use rand::Rng;

/// Raw term data: (coeff, rpow, kind 0..3, j, l).
pub type RawTerm = (f64, i32, u8, i32, i32);

pub fn poly_from_raw(denom: u32, raw: &[RawTerm]) -> TrigPoly {
    TrigPoly::from_terms(
        denom,
        raw.iter().map(|&(coeff, rpow, kind, jpsi, lnum)| {
            let kind = match kind {
                0 => Kind::Const,
                1 => Kind::Cos,
                _ => Kind::Sin,
            };
            let (jpsi, lnum) = if kind == Kind::Const { (0, 0) } else { (jpsi, lnum) };
            TrigTerm {
                coeff,
                rpow,
                kind,
                jpsi,
                lnum,
            }
        }),
    )
}

pub fn random_raw<R: Rng>(rng: &mut R) -> Vec<RawTerm> {
    let n = rng.random_range(1..7);
    (0..n)
        .map(|_| {
            (
                rng.random_range(-2.0..2.0),
                rng.random_range(-1..4),
                rng.random_range(0..3u8),
                rng.random_range(-3..4),
                rng.random_range(-4..5),
            )
        })
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Periodic trapezoid mean of `f` over `[0, period)`; exact for
/// trigonometric polynomials of degree below `m`.
pub fn periodic_mean<F: Fn(f64) -> f64>(f: F, period: f64, m: usize) -> f64 {
    (0..m).map(|i| f(period * i as f64 / m as f64)).sum::<f64>() / m as f64
}

/// Checks the algebraic, calculus and averaging identities on a pair of
/// polynomials at one evaluation point. Returns a description of the first
/// failure.
pub fn check_invariants(p: &TrigPoly, q: &TrigPoly, r: f64, psi: f64, s: f64) -> Result<(), String> {
    let d = p.denom();
    let ev = |x: &TrigPoly, r: f64, psi: f64, s: f64| x.eval(r, psi, s).unwrap();
    let (pv, qv) = (ev(p, r, psi, s), ev(q, r, psi, s));

    let sum = p.add(q).map_err(|e| e.to_string())?;
    if !close(ev(&sum, r, psi, s), pv + qv, 1e-12) {
        return Err("sum evaluation".into());
    }
    let prod = p.mul(q).map_err(|e| e.to_string())?;
    if !close(ev(&prod, r, psi, s), pv * qv, 1e-11) {
        return Err("product evaluation".into());
    }

    let avg_s = p.average_s();
    let quad = periodic_mean(|x| ev(p, r, psi, x), 2.0 * PI * d as f64, 64 * d as usize);
    if !close(ev(&avg_s, r, psi, 0.0), quad, 1e-10) {
        return Err("S-average against quadrature".into());
    }
    let avg_psi = avg_s.average_psi().map_err(|e| e.to_string())?;
    let quad2 = periodic_mean(|x| ev(&avg_s, r, x, 0.0), 2.0 * PI, 64);
    if !close(ev(&avg_psi, r, 0.0, 0.0), quad2, 1e-10) {
        return Err("psi-average against quadrature".into());
    }

    let osc = p.sub(&avg_s).map_err(|e| e.to_string())?;
    let anti = osc.antiderivative_s().map_err(|e| e.to_string())?;
    let back = anti.diff(Var::S);
    if back.max_coeff_diff(&osc).map_err(|e| e.to_string())? > 1e-12 * (1.0 + osc.max_abs_coeff()) {
        return Err("S-antiderivative round trip".into());
    }
    if !anti.average_s().is_zero() {
        return Err("S-antiderivative has nonzero mean".into());
    }
    let osc_psi = avg_s.sub(&avg_psi).map_err(|e| e.to_string())?;
    let anti_psi = osc_psi.antiderivative_psi().map_err(|e| e.to_string())?;
    if anti_psi
        .diff(Var::Psi)
        .max_coeff_diff(&osc_psi)
        .map_err(|e| e.to_string())?
        > 1e-12 * (1.0 + osc_psi.max_abs_coeff())
    {
        return Err("psi-antiderivative round trip".into());
    }

    for (kappa, mult) in [(1, 1u32), (-1, 2), (3, 2), (2, 3)] {
        let vk = d * mult;
        if kappa % vk as i32 == 0 {
            continue;
        }
        let sub = p.substitute_phase(kappa, vk).map_err(|e| e.to_string())?;
        let phi = psi + kappa as f64 / vk as f64 * s;
        if !close(ev(&sub, r, psi, s), ev(p, r, phi, s), 1e-11) {
            return Err(format!("substitution identity for kappa={kappa}, varkappa={vk}"));
        }
    }

    let h = 1e-5;
    let fd = [
        (Var::R, (ev(p, r + h, psi, s) - ev(p, r - h, psi, s)) / (2.0 * h)),
        (Var::Psi, (ev(p, r, psi + h, s) - ev(p, r, psi - h, s)) / (2.0 * h)),
        (Var::S, (ev(p, r, psi, s + h) - ev(p, r, psi, s - h)) / (2.0 * h)),
    ];
    for (var, approx) in fd {
        if !close(ev(&p.diff(var), r, psi, s), approx, 1e-6) {
            return Err(format!("derivative {var:?} against finite differences"));
        }
    }

    let text = p.to_expr("psi");
    let parsed = parse_expr(&text, Angle::Psi, d, &Params::new()).map_err(|e| e.to_string())?;
    if parsed.max_coeff_diff(p).map_err(|e| e.to_string())? > 1e-12 * (1.0 + p.max_abs_coeff()) {
        return Err(format!("print/parse round trip of '{text}'"));
    }
    Ok(())
}
