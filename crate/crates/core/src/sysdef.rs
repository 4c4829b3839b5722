//! System definitions: resonance data, coefficient polynomials, the JSON
//! spec format and the Cartesian-to-polar Itô conversion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cartpoly::CartPoly;
use crate::envelope::{Envelope, Phase};
use crate::error::{Error, Result};
use crate::parse::{parse_cartesian, parse_expr, Angle, Params};
use crate::trigpoly::{gcd, Kind, TrigPoly};

/// Default inner radius below which polar numerics are not trusted.
pub const DEFAULT_R_MIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub kappa: i64,
    pub varkappa: i64,
    pub nu0: f64,
}

impl Resonance {
    pub fn validate(&self, s0: f64) -> Result<()> {
        if self.kappa < 1 || self.varkappa < 1 {
            return Err(Error::Validation(format!(
                "resonance integers must be positive (kappa = {}, varkappa = {})",
                self.kappa, self.varkappa
            )));
        }
        if self.kappa > i32::MAX as i64 || self.varkappa > i32::MAX as i64 {
            return Err(Error::Validation("resonance integers are too large".into()));
        }
        if gcd(self.kappa as i32, self.varkappa as i32) != 1 {
            return Err(Error::Validation(format!(
                "resonance condition: kappa = {} and varkappa = {} are not coprime",
                self.kappa, self.varkappa
            )));
        }
        if !(self.nu0 > 0.0) || !(s0 > 0.0) {
            return Err(Error::Validation(
                "natural frequency nu0 and phase rate s0 must be positive".into(),
            ));
        }
        let target = self.varkappa as f64 * self.nu0;
        if (self.kappa as f64 * s0 - target).abs() > 1e-12 * target.abs() {
            return Err(Error::Validation(format!(
                "resonance condition violated: kappa*s0 = {} but varkappa*nu0 = {}",
                self.kappa as f64 * s0,
                target
            )));
        }
        Ok(())
    }

    pub fn kappa(&self) -> i32 {
        self.kappa as i32
    }

    pub fn denom(&self) -> u32 {
        self.varkappa as u32
    }
}

/// The Cartesian form `dx₁ = x₂dt`, `dx₂ = (−x₁ + μⁿf)dt + εμᵖg dw₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianForm {
    /// Order of the forcing: `x″ + x = μⁿf + εμᵖg·ξ`.
    pub n: u32,
    pub f: CartPoly,
    pub g: CartPoly,
}

/// A perturbed isochronous system in polar form: drift
/// `(0, ν₀) + Σ μ^k (a₁ₖ, a₂ₖ)` and diffusion `ε Σ μ^k A_k`, with coefficients
/// polynomials in `(r, φ, S)` over the denominator `ϰ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub resonance: Resonance,
    pub envelope: Envelope,
    pub phase: Phase,
    pub n: u32,
    pub p: u32,
    pub eps: f64,
    pub r_max: f64,
    pub drift: BTreeMap<u32, [TrigPoly; 2]>,
    pub noise: BTreeMap<u32, [[TrigPoly; 2]; 2]>,
    pub cartesian: Option<CartesianForm>,
}

impl SystemSpec {
    pub fn denom(&self) -> u32 {
        self.resonance.denom()
    }

    pub fn s0(&self) -> f64 {
        self.phase.s0()
    }

    pub fn validate(&self) -> Result<()> {
        self.resonance.validate(self.s0())?;
        self.envelope.validate()?;
        if self.n < 1 || self.p < 1 {
            return Err(Error::Validation("orders n and p must be at least 1".into()));
        }
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::Validation(format!("eps = {} must be >= 0", self.eps)));
        }
        if !(self.r_max > DEFAULT_R_MIN) || !self.r_max.is_finite() {
            return Err(Error::Validation(format!(
                "R_max = {} must exceed r_min = {DEFAULT_R_MIN}",
                self.r_max
            )));
        }
        let d = self.denom();
        for (&k, pair) in &self.drift {
            if k == 0 {
                return Err(Error::Validation("drift orders start at 1".into()));
            }
            if pair.iter().any(|p| p.denom() != d) {
                return Err(Error::Validation(format!(
                    "drift order {k} is not expressed over varkappa = {d}"
                )));
            }
        }
        for (&k, m) in &self.noise {
            if k < self.p {
                return Err(Error::Validation(format!(
                    "noise order {k} lies below p = {}",
                    self.p
                )));
            }
            if m.iter().flatten().any(|p| p.denom() != d) {
                return Err(Error::Validation(format!(
                    "noise order {k} is not expressed over varkappa = {d}"
                )));
            }
        }
        if let Some(c) = &self.cartesian {
            if (self.resonance.nu0 - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(
                    "the Cartesian form describes a unit-frequency oscillator (nu0 = 1)".into(),
                ));
            }
            if c.g.depends_on_x2() {
                return Err(Error::Validation("the noise amplitude g must not depend on x2".into()));
            }
        }
        Ok(())
    }

    /// Highest order present in drift or noise.
    pub fn max_order(&self) -> u32 {
        let a = self.drift.keys().next_back().copied().unwrap_or(0);
        let b = self.noise.keys().next_back().copied().unwrap_or(0);
        a.max(b).max(self.n)
    }
}

/// Converts a Cartesian system to polar form via `x₁ = r cos φ`,
/// `x₂ = −r sin φ`, including the Itô drift at order `2p`.
///
/// When the Itô drift is nonzero and `2p < n`, the returned system's leading
/// drift order becomes `2p`.
pub fn cartesian_to_polar(
    resonance: Resonance,
    envelope: Envelope,
    phase: Phase,
    n: u32,
    p: u32,
    eps: f64,
    r_max: f64,
    form: CartesianForm,
) -> Result<SystemSpec> {
    let d = resonance.denom();
    let fp = form.f.to_polar()?;
    let gp = form.g.to_polar()?;
    let cos = TrigPoly::term(1.0, 0, Kind::Cos, 1, 0, d);
    let sin = TrigPoly::term(1.0, 0, Kind::Sin, 1, 0, d);
    let mut drift: BTreeMap<u32, [TrigPoly; 2]> = BTreeMap::new();
    let a1 = fp.mul(&sin)?.neg();
    let a2 = fp.mul(&cos)?.neg().shift_rpow(-1);
    add_drift(&mut drift, n, [a1, a2])?;

    let g2 = gp.mul(&gp)?;
    let ito1 = g2.mul(&cos.mul(&cos)?)?.shift_rpow(-1).scale(0.5 * eps * eps);
    let ito2 = g2.mul(&sin.mul(&cos)?)?.shift_rpow(-2).scale(-eps * eps);
    let has_ito = !(ito1.is_zero() && ito2.is_zero());
    add_drift(&mut drift, 2 * p, [ito1, ito2])?;
    drift.retain(|_, pair| !(pair[0].is_zero() && pair[1].is_zero()));

    let mut noise = BTreeMap::new();
    let z = TrigPoly::zero(d);
    let n11 = gp.mul(&sin)?.neg();
    let n21 = gp.mul(&cos)?.neg().shift_rpow(-1);
    if !(n11.is_zero() && n21.is_zero()) {
        noise.insert(p, [[n11, z.clone()], [n21, z]]);
    }
    let n_eff = if has_ito && 2 * p < n { 2 * p } else { n };
    Ok(SystemSpec {
        resonance,
        envelope,
        phase,
        n: n_eff,
        p,
        eps,
        r_max,
        drift,
        noise,
        cartesian: Some(CartesianForm { n, ..form }),
    })
}

fn add_drift(map: &mut BTreeMap<u32, [TrigPoly; 2]>, k: u32, pair: [TrigPoly; 2]) -> Result<()> {
    let merged = match map.remove(&k) {
        Some([a, b]) => [a.add(&pair[0])?, b.add(&pair[1])?],
        None => pair,
    };
    map.insert(k, merged);
    Ok(())
}

/// Cartesian right-hand sides as expressions in `x1`, `x2`, `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianSource {
    pub f: String,
    pub g: String,
}

/// The JSON document describing a system. Expressions are in the
/// coefficient language of [`crate::parse`]; `params` supplies named
/// constants (and `eps` is always available).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    pub resonance: Resonance,
    pub envelope: Envelope,
    pub phase: Phase,
    pub n: u32,
    pub p: u32,
    pub eps: f64,
    #[serde(rename = "R_max")]
    pub r_max: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub drift: BTreeMap<String, [String; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub noise: BTreeMap<String, [[String; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartesian: Option<CartesianSource>,
}

fn order_key(key: &str) -> Result<u32> {
    key.trim()
        .parse::<u32>()
        .ok()
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::Validation(format!("order key '{key}' is not a positive integer")))
}

fn located(what: &str, e: Error) -> Error {
    match e {
        Error::Parse { pos, msg } => Error::Validation(format!("{what}: {msg} (at byte {pos})")),
        other => other,
    }
}

impl SpecFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("malformed spec: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec files always serialize")
    }

    fn expr_params(&self) -> Params {
        let mut params = self.params.clone();
        params.insert("eps".into(), self.eps);
        params
    }

    /// Parses and validates the document.
    pub fn build(&self) -> Result<SystemSpec> {
        self.resonance.validate(self.phase.s0())?;
        self.envelope.validate()?;
        if self.phase.s.is_empty() {
            return Err(Error::Validation("phase.s must list at least s0".into()));
        }
        let d = self.resonance.denom();
        let params = self.expr_params();
        let spec = if let Some(src) = &self.cartesian {
            if !self.drift.is_empty() || !self.noise.is_empty() {
                return Err(Error::Validation(
                    "give either a cartesian form or polar drift/noise, not both".into(),
                ));
            }
            let f = parse_cartesian(&src.f, d, &params).map_err(|e| located("cartesian.f", e))?;
            let g = parse_cartesian(&src.g, d, &params).map_err(|e| located("cartesian.g", e))?;
            if g.depends_on_x2() {
                return Err(Error::Validation("the noise amplitude g must not depend on x2".into()));
            }
            cartesian_to_polar(
                self.resonance,
                self.envelope,
                self.phase.clone(),
                self.n,
                self.p,
                self.eps,
                self.r_max,
                CartesianForm { n: self.n, f, g },
            )?
        } else {
            let mut drift = BTreeMap::new();
            for (key, [e1, e2]) in &self.drift {
                let k = order_key(key)?;
                if k < self.n {
                    return Err(Error::Validation(format!(
                        "drift order {k} lies below n = {}",
                        self.n
                    )));
                }
                let what = |i| format!("drift[{key}][{i}]");
                let a1 = parse_expr(e1, Angle::Phi, d, &params).map_err(|e| located(&what(0), e))?;
                let a2 = parse_expr(e2, Angle::Phi, d, &params).map_err(|e| located(&what(1), e))?;
                drift.insert(k, [a1, a2]);
            }
            let mut noise = BTreeMap::new();
            for (key, rows) in &self.noise {
                let k = order_key(key)?;
                let z = TrigPoly::zero(d);
                let mut m = [[z.clone(), z.clone()], [z.clone(), z]];
                for (i, row) in rows.iter().enumerate() {
                    for (j, src) in row.iter().enumerate() {
                        m[i][j] = parse_expr(src, Angle::Phi, d, &params)
                            .map_err(|e| located(&format!("noise[{key}][{i}][{j}]"), e))?;
                    }
                }
                noise.insert(k, m);
            }
            SystemSpec {
                resonance: self.resonance,
                envelope: self.envelope,
                phase: self.phase.clone(),
                n: self.n,
                p: self.p,
                eps: self.eps,
                r_max: self.r_max,
                drift,
                noise,
                cartesian: None,
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(kappa: i64, varkappa: i64) -> Resonance {
        Resonance {
            kappa,
            varkappa,
            nu0: 1.0,
        }
    }

    #[test]
    fn resonance_validation() {
        assert!(res(1, 2).validate(2.0).is_ok());
        assert!(res(2, 4).validate(2.0).is_err());
        assert!(res(1, 2).validate(2.1).is_err());
        assert!(res(0, 1).validate(1.0).is_err());
    }

    fn ex0_like(eps: f64) -> SystemSpec {
        let params: Params = [("A1", 0.3), ("B0", -1.0), ("B1", 2.5), ("C0", -0.2)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let f = parse_cartesian("A1*x1*cos(S) + (B0 + B1*sin(S))*x2 + C0*x2^3", 2, &params)
            .unwrap();
        let g = parse_cartesian("x1*sin(S)", 2, &params).unwrap();
        cartesian_to_polar(
            res(1, 2),
            Envelope::power(0.25, 1.0),
            Phase {
                s: vec![2.0],
                offset: 0.0,
            },
            2,
            1,
            eps,
            5.0,
            CartesianForm { n: 2, f, g },
        )
        .unwrap()
    }

    #[test]
    fn polar_drift_reconstructs_cartesian_drift() {
        let sys = ex0_like(0.0);
        let form = sys.cartesian.clone().unwrap();
        let [a1, a2] = &sys.drift[&2];
        for &(x1, x2, s) in &[(0.4, -0.9, 1.7), (-1.3, 0.2, -0.4), (0.05, 1.1, 3.3)] {
            let r = f64::hypot(x1, x2);
            let phi = -f64::atan2(x2, x1);
            let rd = a1.eval(r, phi, s).unwrap();
            let pd = a2.eval(r, phi, s).unwrap();
            // x₂ = −r sin φ ⇒ ẋ₂ = −ṙ sin φ − r φ̇ cos φ for the perturbation part
            let x2dot = -rd * phi.sin() - r * pd * phi.cos();
            let x1dot = rd * phi.cos() - r * pd * phi.sin();
            assert!((x2dot - form.f.eval(x1, x2, s)).abs() < 1e-10);
            assert!(x1dot.abs() < 1e-10);
        }
    }

    #[test]
    fn ito_terms_match_direct_formulas() {
        let eps = 0.7;
        let sys = ex0_like(eps);
        assert_eq!(sys.n, 2);
        // a₂ₙ and the Itô part share order 2p = n = 2; isolate the Itô part
        let base = ex0_like(0.0);
        for &(r, phi, s) in &[(0.8, 0.3, 1.1), (1.7, -2.2, 0.4)] {
            let g: f64 = r * f64::cos(phi) * f64::sin(s);
            let i1 = sys.drift[&2][0].eval(r, phi, s).unwrap()
                - base.drift[&2][0].eval(r, phi, s).unwrap();
            let i2 = sys.drift[&2][1].eval(r, phi, s).unwrap()
                - base.drift[&2][1].eval(r, phi, s).unwrap();
            assert!((i1 - eps * eps * g * g * phi.cos().powi(2) / (2.0 * r)).abs() < 1e-12);
            assert!((i2 + eps * eps * g * g * (2.0 * phi).sin() / (2.0 * r * r)).abs() < 1e-12);
            let a21 = sys.noise[&1][1][0].eval(r, phi, s).unwrap();
            assert!((a21 + phi.cos().powi(2) * s.sin()).abs() < 1e-12);
            let a11 = sys.noise[&1][0][0].eval(r, phi, s).unwrap();
            assert!((a11 + g * phi.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_forms_give_empty_coefficients() {
        let sys = cartesian_to_polar(
            res(1, 1),
            Envelope::power(0.5, 1.0),
            Phase {
                s: vec![1.0],
                offset: 0.0,
            },
            2,
            1,
            0.5,
            5.0,
            CartesianForm {
                n: 2,
                f: CartPoly::zero(1),
                g: CartPoly::zero(1),
            },
        )
        .unwrap();
        assert!(sys.drift.is_empty());
        assert!(sys.noise.is_empty());
    }

    #[test]
    fn spec_file_round_trip_and_errors() {
        let text = r#"{
            "resonance": {"kappa": 1, "varkappa": 2, "nu0": 1.0},
            "envelope": {"family": "power", "alpha": 0.25, "t0": 1.0},
            "phase": {"s": [2.0, 0.0]},
            "n": 2, "p": 1, "eps": 0.4, "R_max": 4.0,
            "params": {"B0": -1.0},
            "drift": {"2": ["B0*r*sin(phi)^2", "r^-1*cos(phi)*sin(phi)*cos(S)"]},
            "noise": {"1": [["-r*sin(phi)", "0"], ["-cos(phi)", "0"]]}
        }"#;
        let file = SpecFile::from_json(text).unwrap();
        let sys = file.build().unwrap();
        assert_eq!(sys.drift[&2][0].denom(), 2);
        let again = SpecFile::from_json(&file.to_json()).unwrap();
        assert_eq!(again, file);

        let mut bad = file.clone();
        bad.resonance.kappa = 2;
        bad.resonance.varkappa = 4;
        assert!(matches!(bad.build(), Err(Error::Validation(m)) if m.contains("coprime")));

        let mut bad = file.clone();
        bad.drift.insert("1".into(), ["r".into(), "0".into()]);
        assert!(matches!(bad.build(), Err(Error::Validation(_))));

        let mut bad = file;
        bad.drift.insert("3".into(), ["r*cos(".into(), "0".into()]);
        assert!(matches!(bad.build(), Err(Error::Validation(m)) if m.contains("drift[3][0]")));
    }
}
