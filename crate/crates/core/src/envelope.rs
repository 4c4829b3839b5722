//! Decay envelopes `μ(t)`, their integrals `γ_k` and the excitation phase `S(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, simpson};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `μ(t) = t^{−α}`
    Power,
    /// `μ(t) = t^{−α}·log t`
    PowerLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub family: Family,
    pub alpha: f64,
    pub t0: f64,
}

/// Length of the interval on which a perturbation stays controlled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Horizon {
    Infinite,
    Finite(f64),
}

const INT_TOL: f64 = 1e-12;

fn near_integer(x: f64) -> Option<u32> {
    let r = x.round();
    ((x - r).abs() <= INT_TOL * x.abs().max(1.0) && r >= 1.0).then_some(r as u32)
}

impl Envelope {
    pub fn power(alpha: f64, t0: f64) -> Self {
        Envelope {
            family: Family::Power,
            alpha,
            t0,
        }
    }

    pub fn power_log(alpha: f64, t0: f64) -> Self {
        Envelope {
            family: Family::PowerLog,
            alpha,
            t0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Validation(format!(
                "envelope exponent alpha = {} must lie in (0, 1]",
                self.alpha
            )));
        }
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(Error::Validation(format!(
                "envelope start t0 = {} must be positive",
                self.t0
            )));
        }
        if self.family == Family::PowerLog && self.t0 < (1.0 / self.alpha).exp() * (1.0 - 1e-12) {
            return Err(Error::Validation(format!(
                "t^-alpha log t is decreasing only for t >= exp(1/alpha) = {}; got t0 = {}",
                (1.0 / self.alpha).exp(),
                self.t0
            )));
        }
        Ok(())
    }

    fn check(&self, t: f64) -> Result<()> {
        if t < self.t0 {
            return Err(Error::Domain(format!(
                "t = {t} lies before the envelope start t0 = {}",
                self.t0
            )));
        }
        Ok(())
    }

    pub fn mu(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.mu_unchecked(t))
    }

    pub fn mu_unchecked(&self, t: f64) -> f64 {
        match self.family {
            Family::Power => t.powf(-self.alpha),
            Family::PowerLog => t.powf(-self.alpha) * t.ln(),
        }
    }

    /// `ℓ(t) = d/dt log μ(t)`.
    pub fn ell(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(match self.family {
            Family::Power => -self.alpha / t,
            Family::PowerLog => -(self.alpha - 1.0 / t.ln()) / t,
        })
    }

    /// `(m, χ_m)` with `m = ⌊1/α⌋`.
    pub fn params(&self) -> (u32, f64) {
        let inv = 1.0 / self.alpha;
        match (self.family, near_integer(inv)) {
            (Family::Power, Some(m)) => (m, -self.alpha),
            (Family::PowerLog, Some(m)) => (m, 0.0),
            _ => (inv.floor() as u32, 0.0),
        }
    }

    pub fn m(&self) -> u32 {
        self.params().0
    }

    pub fn chi_m(&self) -> f64 {
        self.params().1
    }

    /// Whether `μ^k` is integrable on `(t₀, ∞)`.
    pub fn integrable(&self, k: u32) -> bool {
        k as f64 * self.alpha > 1.0 + INT_TOL
    }

    /// `γ_k(t) = ∫_{from}^{t} μ^k(ς) dς`.
    pub fn gamma(&self, k: u32, t: f64, from: f64) -> Result<f64> {
        self.check(from)?;
        self.check(t)?;
        Ok(self.gamma_unchecked(k, t, from))
    }

    fn gamma_unchecked(&self, k: u32, t: f64, from: f64) -> f64 {
        if k == 0 {
            return t - from;
        }
        let e = 1.0 - k as f64 * self.alpha;
        match self.family {
            Family::Power => {
                if e.abs() <= INT_TOL {
                    (t / from).ln()
                } else {
                    (t.powf(e) - from.powf(e)) / e
                }
            }
            Family::PowerLog => {
                // in x = log t the integrand is e^{x(1−kα)}·x^k
                let ki = k as i32;
                let (a, b) = (from.ln(), t.ln());
                simpson(|x| (e * x).exp() * x.powi(ki), a, b, 1e-13)
            }
        }
    }

    /// Solves `γ_c(T + t_s) − γ_c(t_s) = ε^{−2(1−l)}` for `T`.
    pub fn horizon(&self, exponent: u32, t_s: f64, eps: f64, l: f64) -> Result<Horizon> {
        if !(eps > 0.0) {
            return Err(Error::Precondition("horizon requires eps > 0".into()));
        }
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Precondition("horizon requires l in (0, 1)".into()));
        }
        self.check(t_s)?;
        if self.integrable(exponent) {
            return Ok(Horizon::Infinite);
        }
        let target = eps.powf(-2.0 * (1.0 - l));
        let g = |big_t: f64| self.gamma_unchecked(exponent, big_t + t_s, t_s) - target;
        let mut hi = t_s.max(1.0);
        let mut guard = 0;
        while g(hi) < 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 2000 || !hi.is_finite() {
                return Err(Error::Numerical("horizon bracket overflow".into()));
            }
        }
        Ok(Horizon::Finite(bisect(g, 0.0, hi, 1e-15)?))
    }
}

/// Excitation phase with `S′(t) ∼ s₀ + Σ s_k μ^k(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub s: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

impl Phase {
    pub fn s0(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }

    /// `s_k`, zero beyond the stored list.
    pub fn coeff(&self, k: u32) -> f64 {
        self.s.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn rate(&self, env: &Envelope, t: f64) -> f64 {
        let mu = env.mu_unchecked(t);
        let mut acc = 0.0;
        let mut pw = 1.0;
        for &sk in &self.s {
            acc += sk * pw;
            pw *= mu;
        }
        acc
    }

    /// `S(t)`: closed-form antiderivative for the power family, quadrature
    /// from `t₀` for power-log.
    pub fn value(&self, env: &Envelope, t: f64) -> f64 {
        let mut acc = self.offset + self.s0() * t;
        for (k, &sk) in self.s.iter().enumerate().skip(1) {
            if sk == 0.0 {
                continue;
            }
            acc += sk
                * match env.family {
                    Family::Power => {
                        let e = 1.0 - k as f64 * env.alpha;
                        if e.abs() <= INT_TOL {
                            t.ln()
                        } else {
                            t.powf(e) / e
                        }
                    }
                    Family::PowerLog => env.gamma_unchecked(k as u32, t, env.t0),
                };
        }
        acc
    }
}

/// Incremental evaluation of `S(t)` along a monotone time grid.
#[derive(Clone, Debug)]
pub struct PhaseClock<'a> {
    phase: &'a Phase,
    env: &'a Envelope,
    t: f64,
    value: f64,
}

impl<'a> PhaseClock<'a> {
    pub fn new(phase: &'a Phase, env: &'a Envelope, t: f64) -> Self {
        PhaseClock {
            phase,
            env,
            t,
            value: phase.value(env, t),
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Moves to `t`; power-log phases advance by three-point Simpson steps.
    pub fn advance(&mut self, t: f64) -> f64 {
        self.value = match self.env.family {
            Family::Power => self.phase.value(self.env, t),
            Family::PowerLog => {
                let (a, b) = (self.t, t);
                let m = 0.5 * (a + b);
                self.value
                    + (b - a) / 6.0
                        * (self.phase.rate(self.env, a)
                            + 4.0 * self.phase.rate(self.env, m)
                            + self.phase.rate(self.env, b))
            }
        };
        self.t = t;
        self.value
    }
}
