//! Small numerical kernels: quadrature, bracketing, 2×2 solves and an
//! adaptive RK4 integrator.

use crate::error::{Error, Result};

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance `rtol`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rtol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = rtol * whole.abs().max(f64::MIN_POSITIVE);
    simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Bisection on a sign-changing bracket until the relative width is below `rtol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rtol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Numerical(format!(
            "bisection bracket [{lo}, {hi}] does not change sign"
        )));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= rtol * mid.abs().max(f64::MIN_POSITIVE) {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves `[[a, b], [c, d]]·x = rhs` by Cramer's rule.
pub fn solve2(m: [[f64; 2]; 2], rhs: [f64; 2]) -> Result<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let scale = m.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs()));
    if det.abs() <= 1e-300 || det.abs() <= 1e-14 * scale * scale {
        return Err(Error::Numerical("singular 2x2 system".into()));
    }
    Ok([
        (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
        (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
    ])
}

pub fn rk4_step<const D: usize, F: Fn(f64, &[f64; D]) -> [f64; D]>(
    f: &F,
    t: f64,
    y: &[f64; D],
    h: f64,
) -> [f64; D] {
    let add = |y: &[f64; D], k: &[f64; D], s: f64| {
        let mut out = *y;
        for i in 0..D {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = f(t + h, &add(y, &k3, h));
    let mut out = *y;
    for i in 0..D {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Outcome of an adaptive integration.
#[derive(Clone, Debug, PartialEq)]
pub enum Stop {
    Completed,
    /// The `halt` predicate fired at the recorded time.
    Halted(f64),
}

/// RK4 with step doubling. Steps are halved while the doubling error
/// estimate exceeds `tol` and enlarged (never beyond `h_max`) when it is well
/// below. `observe` receives every accepted state; `halt` may stop early.
#[allow(clippy::too_many_arguments)]
pub fn rk4_adaptive<const D: usize, F, O, H>(
    f: F,
    t0: f64,
    y0: [f64; D],
    t_end: f64,
    h0: f64,
    h_max: f64,
    tol: f64,
    mut observe: O,
    halt: H,
) -> Result<([f64; D], Stop)>
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
    O: FnMut(f64, &[f64; D]),
    H: Fn(f64, &[f64; D]) -> bool,
{
    let mut t = t0;
    let mut y = y0;
    let mut h = h0.min(h_max);
    observe(t, &y);
    while t < t_end {
        let step = h.min(t_end - t);
        let full = rk4_step(&f, t, &y, step);
        let half = rk4_step(&f, t, &y, 0.5 * step);
        let two = rk4_step(&f, t + 0.5 * step, &half, 0.5 * step);
        let err = full
            .iter()
            .zip(&two)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if !err.is_finite() {
            return Err(Error::Numerical(format!("non-finite state at t = {t}")));
        }
        if err > tol && step > 1e-12 * t.abs().max(1.0) {
            h = 0.5 * step;
            continue;
        }
        // Richardson-corrected value of the two half steps
        for i in 0..D {
            y[i] = two[i] + (two[i] - full[i]) / 15.0;
        }
        t += step;
        observe(t, &y);
        if halt(t, &y) {
            return Ok((y, Stop::Halted(t)));
        }
        if err < tol / 32.0 {
            h = (2.0 * step).min(h_max);
        }
    }
    Ok((y, Stop::Completed))
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_pi(x: f64) -> f64 {
    use std::f64::consts::PI;
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Greatest common divisor of non-negative integers.
pub fn gcd_u(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd_u(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = simpson(|x| x.exp(), 0.0, 2.0, 1e-12);
        assert!((v - (2f64.exp() - 1.0)).abs() < 1e-11);
        let v = simpson(|x| 1.0 / x, 1.0, 1e4, 1e-12);
        assert!((v - 1e4f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn bisect_finds_square_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x * x + 1.0, 0.0, 1.0, 1e-10).is_err());
    }

    #[test]
    fn solve2_inverts() {
        let x = solve2([[2.0, 1.0], [1.0, 3.0]], [3.0, 5.0]).unwrap();
        assert!((2.0 * x[0] + x[1] - 3.0).abs() < 1e-15);
        assert!((x[0] + 3.0 * x[1] - 5.0).abs() < 1e-15);
        assert!(solve2([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]).is_err());
    }

    #[test]
    fn adaptive_rk4_matches_exponential_decay() {
        let (y, stop) = rk4_adaptive(
            |_, y: &[f64; 1]| [-y[0]],
            0.0,
            [1.0],
            10.0,
            0.5,
            1.0,
            1e-10,
            |_, _| {},
            |_, _| false,
        )
        .unwrap();
        assert_eq!(stop, Stop::Completed);
        assert!((y[0] - (-10f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn wrap_is_periodic() {
        use std::f64::consts::PI;
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_pi(-0.25) + 0.25).abs() < 1e-15);
    }
}
