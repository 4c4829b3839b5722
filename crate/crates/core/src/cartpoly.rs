//! Polynomials in Cartesian coordinates `(x₁, x₂)` whose coefficients are
//! trigonometric polynomials in the excitation phase `S`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::trigpoly::{Kind, TrigPoly};

#[derive(Clone, Debug, PartialEq)]
pub struct CartPoly {
    denom: u32,
    /// `(deg x₁, deg x₂)` → coefficient in `S`.
    terms: BTreeMap<(u32, u32), TrigPoly>,
}

impl CartPoly {
    pub fn zero(denom: u32) -> Self {
        CartPoly {
            denom,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: f64, denom: u32) -> Self {
        Self::from_s_poly(TrigPoly::constant(c, denom))
    }

    /// Embeds an `S`-only trigonometric polynomial.
    pub fn from_s_poly(p: TrigPoly) -> Self {
        let mut out = Self::zero(p.denom());
        out.insert((0, 0), p);
        out
    }

    pub fn x1(denom: u32) -> Self {
        let mut out = Self::zero(denom);
        out.insert((1, 0), TrigPoly::constant(1.0, denom));
        out
    }

    pub fn x2(denom: u32) -> Self {
        let mut out = Self::zero(denom);
        out.insert((0, 1), TrigPoly::constant(1.0, denom));
        out
    }

    fn insert(&mut self, key: (u32, u32), p: TrigPoly) {
        if !p.is_zero() {
            self.terms.insert(key, p);
        }
    }

    pub fn denom(&self) -> u32 {
        self.denom
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn monomials(&self) -> impl Iterator<Item = (&(u32, u32), &TrigPoly)> {
        self.terms.iter()
    }

    pub fn depends_on_x2(&self) -> bool {
        self.terms.keys().any(|&(_, j)| j > 0)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => self.terms.get(&(0, 0)).and_then(TrigPoly::as_constant),
            _ => None,
        }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.denom != other.denom {
            return Err(Error::DenominatorMismatch(self.denom, other.denom));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = self.clone();
        for (k, p) in &other.terms {
            let sum = match out.terms.get(k) {
                Some(q) => q.add(p)?,
                None => p.clone(),
            };
            out.terms.remove(k);
            out.insert(*k, sum);
        }
        Ok(out)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = Self::zero(self.denom);
        for (k, p) in &self.terms {
            out.insert(*k, p.scale(s));
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let mut out = Self::zero(self.denom);
        for (&(a1, a2), p) in &self.terms {
            for (&(b1, b2), q) in &other.terms {
                let key = (a1 + b1, a2 + b2);
                let prod = p.mul(q)?;
                let sum = match out.terms.remove(&key) {
                    Some(prev) => prev.add(&prod)?,
                    None => prod,
                };
                out.insert(key, sum);
            }
        }
        Ok(out)
    }

    pub fn powi(&self, k: u32) -> Result<Self> {
        let mut acc = Self::constant(1.0, self.denom);
        for _ in 0..k {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    pub fn eval(&self, x1: f64, x2: f64, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(i, j), p)| p.eval_unchecked(1.0, 0.0, s) * x1.powi(i as i32) * x2.powi(j as i32))
            .sum()
    }

    /// Substitutes `x₁ = r cos φ`, `x₂ = −r sin φ`, giving a polynomial in
    /// `(r, φ, S)`.
    pub fn to_polar(&self) -> Result<TrigPoly> {
        let d = self.denom;
        let x1 = TrigPoly::term(1.0, 1, Kind::Cos, 1, 0, d);
        let x2 = TrigPoly::term(-1.0, 1, Kind::Sin, 1, 0, d);
        let mut out = TrigPoly::zero(d);
        for (&(i, j), p) in &self.terms {
            let m = x1.powi(i)?.mul(&x2.powi(j)?)?.mul(p)?;
            out = out.add(&m)?;
        }
        Ok(out)
    }

    /// Pre-arranged form for repeated evaluation in time-stepping loops.
    pub fn compile(&self) -> CompiledCart {
        let mut freqs: Vec<i32> = Vec::new();
        let mut monos = Vec::new();
        for (&(i, j), p) in &self.terms {
            let mut parts = Vec::new();
            for t in p.terms() {
                let idx = match freqs.iter().position(|&l| l == t.lnum) {
                    Some(idx) => idx,
                    None => {
                        freqs.push(t.lnum);
                        freqs.len() - 1
                    }
                };
                parts.push((t.kind, idx, t.coeff));
            }
            monos.push((i as i32, j as i32, parts));
        }
        CompiledCart {
            inv_denom: 1.0 / self.denom as f64,
            freqs,
            monos,
        }
    }
}

/// `(x₁ power, x₂ power, [(kind, frequency slot, coefficient)])`.
type Monomial = (i32, i32, Vec<(Kind, usize, f64)>);

/// Evaluation-only form of a [`CartPoly`]; each distinct `S`-frequency is
/// evaluated once per call.
#[derive(Clone, Debug)]
pub struct CompiledCart {
    inv_denom: f64,
    freqs: Vec<i32>,
    monos: Vec<Monomial>,
}

impl CompiledCart {
    pub fn eval(&self, x1: f64, x2: f64, s: f64) -> f64 {
        let mut cs = [(0.0f64, 0.0f64); 16];
        let mut heap;
        let table: &mut [(f64, f64)] = if self.freqs.len() <= cs.len() {
            &mut cs[..self.freqs.len()]
        } else {
            heap = vec![(0.0, 0.0); self.freqs.len()];
            &mut heap
        };
        for (slot, &l) in table.iter_mut().zip(&self.freqs) {
            let (sn, cn) = (l as f64 * self.inv_denom * s).sin_cos();
            *slot = (cn, sn);
        }
        let mut acc = 0.0;
        for (i, j, parts) in &self.monos {
            let mut c = 0.0;
            for &(kind, idx, coeff) in parts {
                c += match kind {
                    Kind::Const => coeff,
                    Kind::Cos => coeff * table[idx].0,
                    Kind::Sin => coeff * table[idx].1,
                };
            }
            acc += c * x1.powi(*i) * x2.powi(*j);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_and_evaluation() {
        let d = 1;
        let x1 = CartPoly::x1(d);
        let x2 = CartPoly::x2(d);
        let sin_s = CartPoly::from_s_poly(TrigPoly::sin(0, 1, d));
        let p = x1.mul(&sin_s).unwrap().add(&x2.powi(3).unwrap()).unwrap();
        let (a, b, s) = (0.3f64, -1.2f64, 2.1f64);
        let expect = a * s.sin() + b.powi(3);
        assert!((p.eval(a, b, s) - expect).abs() < 1e-14);
        assert!((p.compile().eval(a, b, s) - expect).abs() < 1e-14);
        assert!(p.depends_on_x2());
        assert!(!x1.mul(&sin_s).unwrap().depends_on_x2());
    }

    #[test]
    fn polar_substitution_matches_direct_evaluation() {
        let d = 1;
        let x1 = CartPoly::x1(d);
        let x2 = CartPoly::x2(d);
        let p = x1
            .mul(&x2)
            .unwrap()
            .add(&x2.scale(0.5))
            .unwrap()
            .mul(&CartPoly::from_s_poly(TrigPoly::cos(0, 2, d)))
            .unwrap();
        let polar = p.to_polar().unwrap();
        for &(r, phi, s) in &[(0.7, 0.2, 1.3), (2.0, -2.5, 0.1), (1.1, 3.0, -4.0)] {
            let direct = p.eval(r * f64::cos(phi), -r * f64::sin(phi), s);
            assert!((polar.eval(r, phi, s).unwrap() - direct).abs() < 1e-13);
        }
    }
}
