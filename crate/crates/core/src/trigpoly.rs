//! Exact algebra of trigonometric polynomials
//!
//! A [`TrigPoly`] is a finite sum of terms
//!
//! ```text
//! c · r^d · {1 | cos | sin}(j·ψ + (l/ϰ)·S)
//! ```
//!
//! with integer `d` (possibly negative), integer angle frequency `j` and an
//! S-frequency stored as the integer numerator `l` over a denominator `ϰ` that
//! is fixed per polynomial. Frequencies never leave the integers, so resonant
//! cancellations (`j·κ + l = 0`) are decided exactly; only the coefficients are
//! floating point.
//!
//! The same type is used before the phase substitution (angle = φ) and after it
//! (angle = ψ); the angle is only named when printing.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Terms whose magnitude falls below this fraction of the largest coefficient
/// are dropped.
pub const CANONICAL_REL_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Const,
    Cos,
    Sin,
}

/// Variable selector for [`TrigPoly::diff`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    R,
    Psi,
    S,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coeff: f64,
    pub rpow: i32,
    pub kind: Kind,
    pub jpsi: i32,
    pub lnum: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Key {
    rpow: i32,
    kind: Kind,
    jpsi: i32,
    lnum: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly {
    denom: u32,
    terms: BTreeMap<Key, f64>,
}

impl TrigPoly {
    pub fn zero(denom: u32) -> Self {
        assert!(denom > 0, "S-frequency denominator must be positive");
        TrigPoly {
            denom,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: f64, denom: u32) -> Self {
        let mut p = Self::zero(denom);
        p.push(c, 0, Kind::Const, 0, 0);
        p.canonicalize();
        p
    }

    /// The monomial `c · r^rpow`.
    pub fn monomial(c: f64, rpow: i32, denom: u32) -> Self {
        let mut p = Self::zero(denom);
        p.push(c, rpow, Kind::Const, 0, 0);
        p.canonicalize();
        p
    }

    /// A single term; the angle is brought to canonical form.
    pub fn term(coeff: f64, rpow: i32, kind: Kind, jpsi: i32, lnum: i32, denom: u32) -> Self {
        let mut p = Self::zero(denom);
        p.push(coeff, rpow, kind, jpsi, lnum);
        p.canonicalize();
        p
    }

    pub fn cos(jpsi: i32, lnum: i32, denom: u32) -> Self {
        Self::term(1.0, 0, Kind::Cos, jpsi, lnum, denom)
    }

    pub fn sin(jpsi: i32, lnum: i32, denom: u32) -> Self {
        Self::term(1.0, 0, Kind::Sin, jpsi, lnum, denom)
    }

    /// Builds a canonical polynomial from arbitrary (possibly non-canonical,
    /// possibly repeated) terms.
    pub fn from_terms(denom: u32, terms: impl IntoIterator<Item = TrigTerm>) -> Self {
        let mut p = Self::zero(denom);
        for t in terms {
            p.push(t.coeff, t.rpow, t.kind, t.jpsi, t.lnum);
        }
        p.canonicalize();
        p
    }

    pub fn denom(&self) -> u32 {
        self.denom
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = TrigTerm> + '_ {
        self.terms.iter().map(|(k, &c)| TrigTerm {
            coeff: c,
            rpow: k.rpow,
            kind: k.kind,
            jpsi: k.jpsi,
            lnum: k.lnum,
        })
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// `Some(c)` when the polynomial is the constant `c` (including zero).
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (k, &c) = self.terms.iter().next().unwrap();
                (k.kind == Kind::Const && k.rpow == 0).then_some(c)
            }
            _ => None,
        }
    }

    pub fn is_s_free(&self) -> bool {
        self.terms.keys().all(|k| k.lnum == 0)
    }

    pub fn is_psi_free(&self) -> bool {
        self.terms.keys().all(|k| k.jpsi == 0)
    }

    pub fn has_negative_rpow(&self) -> bool {
        self.terms.keys().any(|k| k.rpow < 0)
    }

    /// Greatest common divisor of the nonzero angle frequencies (0 if none).
    pub fn psi_frequency_gcd(&self) -> i32 {
        self.terms
            .keys()
            .filter(|k| k.jpsi != 0)
            .fold(0, |g, k| gcd(g, k.jpsi.abs()))
    }

    fn push(&mut self, coeff: f64, rpow: i32, kind: Kind, jpsi: i32, lnum: i32) {
        if coeff == 0.0 {
            return;
        }
        let (kind, jpsi, lnum, coeff) = match kind {
            Kind::Const => {
                debug_assert!(jpsi == 0 && lnum == 0, "const term with a frequency");
                (Kind::Const, 0, 0, coeff)
            }
            _ if jpsi == 0 && lnum == 0 => match kind {
                Kind::Cos => (Kind::Const, 0, 0, coeff),
                _ => return,
            },
            _ => {
                let negative = jpsi < 0 || (jpsi == 0 && lnum < 0);
                if negative {
                    let c = if kind == Kind::Sin { -coeff } else { coeff };
                    (kind, -jpsi, -lnum, c)
                } else {
                    (kind, jpsi, lnum, coeff)
                }
            }
        };
        let key = Key {
            rpow,
            kind,
            jpsi,
            lnum,
        };
        let entry = self.terms.entry(key).or_insert(0.0);
        *entry += coeff;
        if *entry == 0.0 {
            self.terms.remove(&key);
        }
    }

    fn canonicalize(&mut self) {
        let max = self.max_abs_coeff();
        if max == 0.0 {
            self.terms.clear();
            return;
        }
        let cut = CANONICAL_REL_TOL * max;
        self.terms.retain(|_, c| c.abs() >= cut && c.is_finite() || c.is_nan());
    }

    /// Re-applies the canonicalization rules. Idempotent.
    pub fn canonical(&self) -> Self {
        let mut p = self.clone();
        p.canonicalize();
        p
    }

    fn check_denom(&self, other: &Self) -> Result<()> {
        if self.denom != other.denom {
            return Err(Error::DenominatorMismatch(self.denom, other.denom));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_denom(other)?;
        let mut p = self.clone();
        for (k, &c) in &other.terms {
            p.push(c, k.rpow, k.kind, k.jpsi, k.lnum);
        }
        p.canonicalize();
        Ok(p)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = Self::zero(self.denom);
        if s != 0.0 {
            for (k, &c) in &self.terms {
                p.terms.insert(*k, c * s);
            }
            p.canonicalize();
        }
        p
    }

    /// Multiplies by `r^k`.
    pub fn shift_rpow(&self, k: i32) -> Self {
        let mut p = Self::zero(self.denom);
        for (key, &c) in &self.terms {
            p.terms.insert(
                Key {
                    rpow: key.rpow + k,
                    ..*key
                },
                c,
            );
        }
        p
    }

    /// Product expanded with the product-to-sum identities.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_denom(other)?;
        let mut p = Self::zero(self.denom);
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                let rpow = a.rpow + b.rpow;
                let c = ca * cb;
                let (sj, sl) = (a.jpsi + b.jpsi, a.lnum + b.lnum);
                let (dj, dl) = (a.jpsi - b.jpsi, a.lnum - b.lnum);
                match (a.kind, b.kind) {
                    (Kind::Const, _) => p.push(c, rpow, b.kind, b.jpsi, b.lnum),
                    (_, Kind::Const) => p.push(c, rpow, a.kind, a.jpsi, a.lnum),
                    (Kind::Cos, Kind::Cos) => {
                        p.push(0.5 * c, rpow, Kind::Cos, dj, dl);
                        p.push(0.5 * c, rpow, Kind::Cos, sj, sl);
                    }
                    (Kind::Sin, Kind::Sin) => {
                        p.push(0.5 * c, rpow, Kind::Cos, dj, dl);
                        p.push(-0.5 * c, rpow, Kind::Cos, sj, sl);
                    }
                    (Kind::Sin, Kind::Cos) => {
                        p.push(0.5 * c, rpow, Kind::Sin, sj, sl);
                        p.push(0.5 * c, rpow, Kind::Sin, dj, dl);
                    }
                    (Kind::Cos, Kind::Sin) => {
                        p.push(0.5 * c, rpow, Kind::Sin, sj, sl);
                        p.push(-0.5 * c, rpow, Kind::Sin, dj, dl);
                    }
                }
            }
        }
        p.canonicalize();
        Ok(p)
    }

    pub fn powi(&self, k: u32) -> Result<Self> {
        let mut acc = Self::constant(1.0, self.denom);
        for _ in 0..k {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    pub fn diff(&self, var: Var) -> Self {
        let mut p = Self::zero(self.denom);
        let d = self.denom as f64;
        for (k, &c) in &self.terms {
            match var {
                Var::R => {
                    if k.rpow != 0 {
                        p.push(c * k.rpow as f64, k.rpow - 1, k.kind, k.jpsi, k.lnum);
                    }
                }
                Var::Psi | Var::S => {
                    let w = match var {
                        Var::Psi => k.jpsi as f64,
                        _ => k.lnum as f64 / d,
                    };
                    match k.kind {
                        Kind::Const => {}
                        Kind::Cos => p.push(-c * w, k.rpow, Kind::Sin, k.jpsi, k.lnum),
                        Kind::Sin => p.push(c * w, k.rpow, Kind::Cos, k.jpsi, k.lnum),
                    }
                }
            }
        }
        p.canonicalize();
        p
    }

    /// Mixed partial derivative `∂_r^a ∂_ψ^b`.
    pub fn diff_n(&self, a: u32, b: u32) -> Self {
        let mut p = self.clone();
        for _ in 0..a {
            p = p.diff(Var::R);
        }
        for _ in 0..b {
            p = p.diff(Var::Psi);
        }
        p
    }

    /// Replaces φ by `(κ/ϰ)·S + ψ`. The result lives over denominator `ϰ`,
    /// which must be a multiple of the current denominator.
    pub fn substitute_phase(&self, kappa: i32, varkappa: u32) -> Result<Self> {
        if varkappa == 0 || !varkappa.is_multiple_of(self.denom) {
            return Err(Error::Precondition(format!(
                "denominator {} does not divide varkappa = {}",
                self.denom, varkappa
            )));
        }
        let scale = (varkappa / self.denom) as i32;
        let mut p = Self::zero(varkappa);
        for (k, &c) in &self.terms {
            p.push(c, k.rpow, k.kind, k.jpsi, k.jpsi * kappa + k.lnum * scale);
        }
        p.canonicalize();
        Ok(p)
    }

    /// Re-expresses the polynomial over a denominator that is a multiple of
    /// the current one.
    pub fn with_denom(&self, denom: u32) -> Result<Self> {
        self.substitute_phase(0, denom)
    }

    /// Mean over `S ∈ [0, 2πϰ]`: keeps the terms without S-dependence.
    pub fn average_s(&self) -> Self {
        let mut p = Self::zero(self.denom);
        for (k, &c) in &self.terms {
            if k.lnum == 0 {
                p.terms.insert(*k, c);
            }
        }
        p.canonicalize();
        p
    }

    /// The zero-mean S-antiderivative.
    pub fn antiderivative_s(&self) -> Result<Self> {
        let mut p = Self::zero(self.denom);
        let d = self.denom as f64;
        for (k, &c) in &self.terms {
            if k.lnum == 0 {
                return Err(Error::Precondition(
                    "antiderivative in S of a polynomial with nonzero S-mean".into(),
                ));
            }
            let w = k.lnum as f64 / d;
            match k.kind {
                Kind::Cos => p.push(c / w, k.rpow, Kind::Sin, k.jpsi, k.lnum),
                Kind::Sin => p.push(-c / w, k.rpow, Kind::Cos, k.jpsi, k.lnum),
                Kind::Const => unreachable!("const terms have lnum = 0"),
            }
        }
        p.canonicalize();
        Ok(p)
    }

    /// Mean over ψ of an S-free polynomial.
    pub fn average_psi(&self) -> Result<Self> {
        if !self.is_s_free() {
            return Err(Error::Precondition(
                "psi-average of a polynomial with residual S-dependence".into(),
            ));
        }
        let mut p = Self::zero(self.denom);
        for (k, &c) in &self.terms {
            if k.jpsi == 0 {
                p.terms.insert(*k, c);
            }
        }
        p.canonicalize();
        Ok(p)
    }

    /// The zero-mean ψ-antiderivative of an S-free polynomial.
    pub fn antiderivative_psi(&self) -> Result<Self> {
        if !self.is_s_free() {
            return Err(Error::Precondition(
                "psi-antiderivative of a polynomial with residual S-dependence".into(),
            ));
        }
        let mut p = Self::zero(self.denom);
        for (k, &c) in &self.terms {
            if k.jpsi == 0 {
                return Err(Error::Precondition(
                    "antiderivative in psi of a polynomial with nonzero psi-mean".into(),
                ));
            }
            let w = k.jpsi as f64;
            match k.kind {
                Kind::Cos => p.push(c / w, k.rpow, Kind::Sin, k.jpsi, k.lnum),
                Kind::Sin => p.push(-c / w, k.rpow, Kind::Cos, k.jpsi, k.lnum),
                Kind::Const => unreachable!(),
            }
        }
        p.canonicalize();
        Ok(p)
    }

    /// Substitutes a numeric radius, leaving a polynomial in (ψ, S) only.
    pub fn at_radius(&self, r: f64) -> Result<Self> {
        self.check_radius(r)?;
        let mut p = Self::zero(self.denom);
        for (k, &c) in &self.terms {
            p.push(c * r.powi(k.rpow), 0, k.kind, k.jpsi, k.lnum);
        }
        p.canonicalize();
        Ok(p)
    }

    /// Groups terms by angle: for every `(kind, j, l)` the Laurent polynomial
    /// in `r` that multiplies it, as `(rpow, coeff)` pairs.
    pub fn angle_groups(&self) -> BTreeMap<(Kind, i32, i32), Vec<(i32, f64)>> {
        let mut out: BTreeMap<(Kind, i32, i32), Vec<(i32, f64)>> = BTreeMap::new();
        for (k, &c) in &self.terms {
            out.entry((k.kind, k.jpsi, k.lnum))
                .or_default()
                .push((k.rpow, c));
        }
        out
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if r == 0.0 && self.has_negative_rpow() {
            return Err(Error::Domain(
                "evaluation at r = 0 with negative powers of r".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, r: f64, psi: f64, s: f64) -> Result<f64> {
        self.check_radius(r)?;
        Ok(self.eval_unchecked(r, psi, s))
    }

    /// Evaluation without the `r = 0` domain check.
    pub fn eval_unchecked(&self, r: f64, psi: f64, s: f64) -> f64 {
        let d = self.denom as f64;
        self.terms
            .iter()
            .map(|(k, &c)| {
                let rp = if k.rpow == 0 { 1.0 } else { r.powi(k.rpow) };
                let angle = || k.jpsi as f64 * psi + (k.lnum as f64 / d) * s;
                match k.kind {
                    Kind::Const => c * rp,
                    Kind::Cos => c * rp * angle().cos(),
                    Kind::Sin => c * rp * angle().sin(),
                }
            })
            .sum()
    }

    /// Largest coefficient difference against `other` over the union of keys.
    pub fn max_coeff_diff(&self, other: &Self) -> Result<f64> {
        self.check_denom(other)?;
        let mut m: f64 = 0.0;
        for (k, c) in &self.terms {
            m = m.max((c - other.terms.get(k).copied().unwrap_or(0.0)).abs());
        }
        for (k, c) in &other.terms {
            if !self.terms.contains_key(k) {
                m = m.max(c.abs());
            }
        }
        Ok(m)
    }

    /// Same set of canonical keys as `other`.
    pub fn same_terms(&self, other: &Self) -> bool {
        self.denom == other.denom && self.terms.keys().eq(other.terms.keys())
    }

    /// Prints as an expression accepted by the system-definition parser,
    /// naming the angle variable `angle` (`phi` or `psi`).
    pub fn to_expr(&self, angle: &str) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (i, (k, &c)) in self.terms.iter().enumerate() {
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            if i == 0 {
                if sign == "-" {
                    out.push('-');
                }
            } else {
                out.push_str(&format!(" {sign} "));
            }
            out.push_str(&format!("{mag:?}"));
            if k.rpow != 0 {
                if k.rpow == 1 {
                    out.push_str("*r");
                } else {
                    out.push_str(&format!("*r^{}", k.rpow));
                }
            }
            match k.kind {
                Kind::Const => {}
                Kind::Cos | Kind::Sin => {
                    let f = if k.kind == Kind::Cos { "cos" } else { "sin" };
                    out.push_str(&format!("*{f}({})", self.angle_expr(k, angle)));
                }
            }
        }
        out
    }

    fn angle_expr(&self, k: &Key, angle: &str) -> String {
        let mut s = String::new();
        if k.jpsi != 0 {
            s.push_str(&format!("{}*{angle}", k.jpsi));
        }
        if k.lnum != 0 {
            let g = gcd(k.lnum.abs(), self.denom as i32);
            let (num, den) = (k.lnum / g, self.denom as i32 / g);
            let mag = num.abs();
            if s.is_empty() {
                if num < 0 {
                    s.push('-');
                }
            } else {
                s.push_str(if num < 0 { " - " } else { " + " });
            }
            if den == 1 {
                s.push_str(&format!("{mag}*S"));
            } else {
                s.push_str(&format!("{mag}/{den}*S"));
            }
        }
        s
    }
}

impl fmt::Display for TrigPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_expr("psi"))
    }
}

#[derive(Serialize, Deserialize)]
struct TrigPolyRepr {
    denom: u32,
    terms: Vec<TrigTerm>,
}

impl Serialize for TrigPoly {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TrigPolyRepr {
            denom: self.denom,
            terms: self.terms().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TrigPoly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TrigPolyRepr::deserialize(deserializer)?;
        if repr.denom == 0 {
            return Err(serde::de::Error::custom("denom must be positive"));
        }
        Ok(TrigPoly::from_terms(repr.denom, repr.terms))
    }
}

pub(crate) fn gcd(a: i32, b: i32) -> i32 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn like_terms_merge_and_cancel() {
        let c = TrigPoly::cos(1, 0, 1);
        let two = c.add(&c).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two.terms().next().unwrap().coeff, 2.0);
        assert!(c.add(&c.neg()).unwrap().is_zero());

        let a = TrigPoly::term(1.0, 1, Kind::Sin, 0, 1, 1);
        let b = TrigPoly::term(1.0, 2, Kind::Sin, 0, 1, 1);
        assert_eq!(a.add(&b).unwrap().len(), 2);
    }

    #[test]
    fn mismatched_denominators_are_rejected() {
        let a = TrigPoly::cos(1, 1, 1);
        let b = TrigPoly::cos(1, 1, 2);
        assert_eq!(a.add(&b), Err(Error::DenominatorMismatch(1, 2)));
        assert!(a.mul(&b).is_err());
    }

    #[test]
    fn product_to_sum() {
        let c = TrigPoly::cos(1, 0, 1);
        let expect = TrigPoly::constant(0.5, 1)
            .add(&TrigPoly::term(0.5, 0, Kind::Cos, 2, 0, 1))
            .unwrap();
        assert_eq!(c.mul(&c).unwrap(), expect);

        let s = TrigPoly::sin(0, 1, 1);
        let cs = TrigPoly::cos(0, 1, 1);
        assert_eq!(
            s.mul(&cs).unwrap(),
            TrigPoly::term(0.5, 0, Kind::Sin, 0, 2, 1)
        );

        let a = TrigPoly::term(1.0, 1, Kind::Cos, 1, 0, 1);
        let b = TrigPoly::term(1.0, -1, Kind::Cos, 1, 0, 1);
        assert_eq!(a.mul(&b).unwrap(), expect);
    }

    #[test]
    fn sin_sign_flips_under_angle_negation() {
        let p = TrigPoly::term(3.0, 0, Kind::Sin, -2, 1, 1);
        let t = p.terms().next().unwrap();
        assert_eq!((t.coeff, t.jpsi, t.lnum), (-3.0, 2, -1));
        let q = TrigPoly::term(3.0, 0, Kind::Cos, 0, -4, 2);
        let t = q.terms().next().unwrap();
        assert_eq!((t.coeff, t.jpsi, t.lnum), (3.0, 0, 4));
        assert!(TrigPoly::term(1.0, 0, Kind::Sin, 0, 0, 1).is_zero());
    }

    #[test]
    fn derivatives() {
        let p = TrigPoly::term(1.0, 2, Kind::Cos, 2, 0, 1);
        assert_eq!(p.diff(Var::R), TrigPoly::term(2.0, 1, Kind::Cos, 2, 0, 1));

        let s = TrigPoly::sin(0, 1, 2);
        assert_eq!(s.diff(Var::S), TrigPoly::term(0.5, 0, Kind::Cos, 0, 1, 2));

        assert!(TrigPoly::constant(4.0, 1).diff(Var::Psi).is_zero());
    }

    #[test]
    fn phase_substitution() {
        let p = TrigPoly::cos(1, 0, 2).substitute_phase(1, 2).unwrap();
        assert_eq!(p, TrigPoly::cos(1, 1, 2));

        // sin(2φ − S) with φ = S/2 + ψ: 2·(1/2) − 1 = 0
        let q = TrigPoly::sin(2, -2, 2).substitute_phase(1, 2).unwrap();
        assert_eq!(q, TrigPoly::sin(2, 0, 2));

        let c = TrigPoly::constant(1.5, 1).substitute_phase(1, 2).unwrap();
        assert_eq!(c, TrigPoly::constant(1.5, 2));

        // denominator 1 rescales onto 2
        let d = TrigPoly::cos(1, 1, 1).substitute_phase(1, 2).unwrap();
        assert_eq!(d, TrigPoly::cos(1, 3, 2));
        assert!(TrigPoly::cos(1, 1, 2).substitute_phase(1, 3).is_err());
    }

    #[test]
    fn s_averaging() {
        assert_eq!(TrigPoly::sin(2, 0, 2).average_s(), TrigPoly::sin(2, 0, 2));
        assert!(TrigPoly::cos(1, 1, 2).average_s().is_zero());
        let p = TrigPoly::cos(1, 1, 2);
        assert_eq!(p.mul(&p).unwrap().average_s(), TrigPoly::constant(0.5, 2));
    }

    #[test]
    fn s_antiderivative() {
        assert_eq!(
            TrigPoly::cos(0, 1, 1).antiderivative_s().unwrap(),
            TrigPoly::sin(0, 1, 1)
        );
        assert_eq!(
            TrigPoly::sin(0, 1, 2).antiderivative_s().unwrap(),
            TrigPoly::term(-2.0, 0, Kind::Cos, 0, 1, 2)
        );
        assert!(matches!(
            TrigPoly::constant(1.0, 1).antiderivative_s(),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn psi_averaging() {
        // r/64 (32B0 + 24C0 r^2 + 16Q1 sin2ψ + ε²(6 − cos4ψ)) → r/32 (16B0 + 12C0 r^2 + 3ε²)
        let (b0, c0, q1, e) = (-0.7, -0.3, 1.9, 0.4);
        let lam = TrigPoly::from_terms(
            2,
            [
                TrigTerm { coeff: (32.0 * b0 + 6.0 * e * e) / 64.0, rpow: 1, kind: Kind::Const, jpsi: 0, lnum: 0 },
                TrigTerm { coeff: 24.0 * c0 / 64.0, rpow: 3, kind: Kind::Const, jpsi: 0, lnum: 0 },
                TrigTerm { coeff: 16.0 * q1 / 64.0, rpow: 1, kind: Kind::Sin, jpsi: 2, lnum: 0 },
                TrigTerm { coeff: -e * e / 64.0, rpow: 1, kind: Kind::Cos, jpsi: 4, lnum: 0 },
            ],
        );
        let f = lam.average_psi().unwrap();
        let expect = TrigPoly::from_terms(
            2,
            [
                TrigTerm { coeff: (16.0 * b0 + 3.0 * e * e) / 32.0, rpow: 1, kind: Kind::Const, jpsi: 0, lnum: 0 },
                TrigTerm { coeff: 12.0 * c0 / 32.0, rpow: 3, kind: Kind::Const, jpsi: 0, lnum: 0 },
            ],
        );
        assert!(f.same_terms(&expect));
        assert!(f.max_coeff_diff(&expect).unwrap() < 1e-15);

        assert!(TrigPoly::sin(2, 0, 1).average_psi().unwrap().is_zero());
        assert_eq!(
            TrigPoly::constant(2.0, 1).average_psi().unwrap(),
            TrigPoly::constant(2.0, 1)
        );
        assert!(TrigPoly::cos(1, 1, 1).average_psi().is_err());
    }

    #[test]
    fn evaluation() {
        let p = TrigPoly::term(1.0, 1, Kind::Cos, 1, 0, 1);
        assert!(close(p.eval(2.0, 0.0, 0.3).unwrap(), 2.0));
        assert!(close(TrigPoly::sin(2, 0, 1).eval(0.7, PI / 4.0, 1.1).unwrap(), 1.0));
        let q = TrigPoly::monomial(1.0, -1, 1);
        assert!(matches!(q.eval(0.0, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn print_round_trips_through_display() {
        let p = TrigPoly::from_terms(
            2,
            [
                TrigTerm { coeff: -0.25, rpow: -1, kind: Kind::Sin, jpsi: 2, lnum: -3 },
                TrigTerm { coeff: 1.0 / 3.0, rpow: 3, kind: Kind::Const, jpsi: 0, lnum: 0 },
                TrigTerm { coeff: 2.0, rpow: 0, kind: Kind::Cos, jpsi: 0, lnum: 1 },
            ],
        );
        let s = p.to_expr("phi");
        assert!(s.contains("3/2*S"), "{s}");
        assert!(s.contains("1/2*S"), "{s}");
    }

    #[test]
    fn canonical_threshold_drops_tiny_terms() {
        let p = TrigPoly::constant(1.0, 1)
            .add(&TrigPoly::term(1e-15, 0, Kind::Cos, 1, 0, 1))
            .unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.canonical(), p);
    }
}
