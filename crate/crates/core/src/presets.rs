//! Built-in example systems, figure scenarios and parameter-plane scans.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::analyze;
use crate::envelope::{Envelope, Phase};
use crate::error::{Error, Result};
use crate::numeric::wrap_pi;
use crate::sysdef::{CartesianSource, Resonance, SpecFile};

/// The two example families the presets are built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    /// `x″ + x = μ²f + εμ g ξ` with `S ≈ 2t`, `μ = t^{−1/4}`.
    Ex0,
    /// `x″ + x = μ²f + εμ g ξ` with `S ≈ t`, `μ = t^{−1/2}`.
    Ex2,
}

impl Base {
    pub fn name(self) -> &'static str {
        match self {
            Base::Ex0 => "ex0",
            Base::Ex2 => "ex2",
        }
    }

    /// Label of the second partition axis.
    pub fn second_axis(self) -> &'static str {
        match self {
            Base::Ex0 => "Q1",
            Base::Ex2 => "B1",
        }
    }
}

/// Default simulation window and step for a preset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimDefaults {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Preset {
    pub name: String,
    pub base: Base,
    pub order: u32,
    pub spec: SpecFile,
    pub sim: SimDefaults,
}

pub const PRESET_NAMES: [&str; 10] = [
    "ex0", "ex2", "fig-ex0a", "fig-ex0b", "fig-ex0c", "fig-ex1", "fig-ex11", "fig-ex2", "fig-ex20",
    "fig-ex22",
];

pub const DEFAULT_DT: f64 = 2.5e-3 * 2.0 * PI;

fn params(a1: f64, b0: f64, b1: f64, c0: f64) -> BTreeMap<String, f64> {
    [("A1", a1), ("B0", b0), ("B1", b1), ("C0", c0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn ex0_spec() -> SpecFile {
    SpecFile {
        resonance: Resonance {
            kappa: 1,
            varkappa: 2,
            nu0: 1.0,
        },
        envelope: Envelope::power(0.25, 1.0),
        phase: Phase {
            s: vec![2.0, 0.0],
            offset: 0.0,
        },
        n: 2,
        p: 1,
        eps: 0.4,
        r_max: 5.0,
        params: params(0.0, -1.0, 2.5, -0.2),
        drift: BTreeMap::new(),
        noise: BTreeMap::new(),
        cartesian: Some(CartesianSource {
            f: "A1*x1*cos(S) + (B0 + B1*sin(S))*x2 + C0*x2^3".into(),
            g: "x1*sin(S)".into(),
        }),
    }
}

fn ex2_spec() -> SpecFile {
    SpecFile {
        resonance: Resonance {
            kappa: 1,
            varkappa: 1,
            nu0: 1.0,
        },
        envelope: Envelope::power(0.5, 1.0),
        phase: Phase {
            s: vec![1.0, 0.0],
            offset: 0.0,
        },
        n: 2,
        p: 1,
        eps: 0.5,
        r_max: 5.0,
        params: params(0.0, -1.0, 2.5, -1.0),
        drift: BTreeMap::new(),
        noise: BTreeMap::new(),
        cartesian: Some(CartesianSource {
            f: "A1*x1*sin(S) + (B0 + B1*sin(2*S) + C0*x1^2)*x2".into(),
            g: "x1*sin(S)".into(),
        }),
    }
}

/// Sets one named parameter. `eps`, `s1` and `R_max` address the system
/// itself; `Q1` (ex0 only) sets `B1 = Q1 + A1` using the current `A1`.
pub fn set_param(base: Base, spec: &mut SpecFile, key: &str, value: f64) -> Result<()> {
    if key == "Q1" && base == Base::Ex0 {
        if !value.is_finite() {
            return Err(Error::Validation("Q1 must be finite".into()));
        }
        let a1 = spec.params.get("A1").copied().unwrap_or(0.0);
        spec.params.insert("B1".into(), value + a1);
        return Ok(());
    }
    set_spec_param(spec, key, value)
}

/// Sets `eps`, `s1`, `R_max` or an already declared parameter of any
/// system definition.
pub fn set_spec_param(spec: &mut SpecFile, key: &str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Validation(format!("{key} must be finite")));
    }
    match key {
        "eps" => spec.eps = value,
        "s1" => {
            if spec.phase.s.len() < 2 {
                spec.phase.s.resize(2, 0.0);
            }
            spec.phase.s[1] = value;
        }
        "R_max" => spec.r_max = value,
        k if spec.params.contains_key(k) => {
            spec.params.insert(k.to_string(), value);
        }
        other => {
            let known: Vec<&str> = spec.params.keys().map(String::as_str).collect();
            return Err(Error::Validation(format!(
                "unknown parameter '{other}' (settable: eps, s1, R_max, {})",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

/// Resolves a preset by name.
pub fn preset(name: &str) -> Result<Preset> {
    let (base, sets, t_end): (Base, &[(&str, f64)], f64) = match name {
        "ex0" => (Base::Ex0, &[], 3000.0),
        "ex2" => (Base::Ex2, &[], 10000.0),
        "fig-ex0a" => (Base::Ex0, &[("B1", 0.0), ("eps", 0.0), ("C0", -0.2)], 3000.0),
        "fig-ex0b" => (Base::Ex0, &[("C0", -0.2), ("eps", 0.0), ("B1", 2.5)], 3000.0),
        "fig-ex0c" => (Base::Ex0, &[("eps", 2.0 / 3.0)], 3000.0),
        "fig-ex1" => (
            Base::Ex0,
            &[("A1", 0.0), ("B0", -1.0), ("B1", 2.5), ("C0", -0.2), ("eps", 0.4), ("s1", 0.0)],
            3000.0,
        ),
        "fig-ex11" => (
            Base::Ex0,
            &[("s1", 8.0), ("B0", 1.0), ("B1", 1.0), ("C0", -0.5), ("eps", 0.5)],
            10000.0,
        ),
        "fig-ex2" => (
            Base::Ex2,
            &[("B0", -1.0), ("B1", 2.5), ("C0", -1.0), ("eps", 0.5)],
            10000.0,
        ),
        "fig-ex20" => (
            Base::Ex2,
            &[("eps", 0.0), ("B1", 2.5), ("C0", -1.0), ("B0", -1.0)],
            10000.0,
        ),
        "fig-ex22" => (
            Base::Ex2,
            &[("s1", 5.0), ("B0", 0.5), ("B1", 1.0), ("C0", -1.0), ("eps", 0.5)],
            10000.0,
        ),
        other => {
            return Err(Error::Validation(format!(
                "unknown preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let mut spec = match base {
        Base::Ex0 => ex0_spec(),
        Base::Ex2 => ex2_spec(),
    };
    for &(k, v) in sets {
        set_param(base, &mut spec, k, v)?;
    }
    Ok(Preset {
        name: name.to_string(),
        base,
        order: 2,
        spec,
        sim: SimDefaults {
            t_start: 1.0,
            t_end,
            dt: DEFAULT_DT,
        },
    })
}

/// Initial data `(r, ψ₀)` for multi-trajectory figures: radii 0.3 to 2.1
/// in steps of 0.3 crossed with ψ₀ ∈ {0, π/2, π, 3π/2}.
pub fn ic_lattice() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(28);
    for i in 1..=7 {
        let r = 0.3 * i as f64;
        for j in 0..4 {
            out.push((r, j as f64 * PI / 2.0));
        }
    }
    out
}

/// Lower boundary `g₊(B₀, ε)` of the region where the `+π/4` family of
/// ex0 is stably locked (`Q₁ > g₊`).
pub fn g_plus(b0: f64, eps: f64) -> f64 {
    let e2 = eps * eps;
    if b0 < -3.0 * e2 / 32.0 {
        -2.0 * (b0 + 7.0 * e2 / 32.0)
    } else {
        -e2 / 4.0
    }
}

/// Upper boundary of the `−π/4` region (`Q₁ < g₋ = −g₊`).
pub fn g_minus(b0: f64, eps: f64) -> f64 {
    -g_plus(b0, eps)
}

/// Boundary `g(B₁, ε)` of the ex2 locking region (`B₀ > g`).
pub fn g_ex2(b1: f64, eps: f64) -> f64 {
    let e2 = eps * eps;
    -(3.0 * e2 + 2.0 * (16.0 * b1 * b1 + e2 * e2).sqrt()) / 16.0
}

/// Closed-form labels `(plus, minus)` for a partition cell.
pub fn closed_form_label(base: Base, b0: f64, second: f64, eps: f64) -> (bool, bool) {
    match base {
        Base::Ex0 => (second > g_plus(b0, eps), second < g_minus(b0, eps)),
        Base::Ex2 => (b0 > g_ex2(second, eps), false),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.count <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionCell {
    pub i: usize,
    pub j: usize,
    pub param1: f64,
    pub param2: f64,
    pub label: String,
    pub has_stable_plus: bool,
    pub has_stable_minus: bool,
}

pub fn label(plus: bool, minus: bool) -> &'static str {
    match (plus, minus) {
        (true, true) => "D+-",
        (true, false) => "D+",
        (false, true) => "D-",
        (false, false) => "D0",
    }
}

/// Stable locking families found in one configuration. For ex0 the `+`
/// family sits at `π/4 (mod π)` and the `−` family at `3π/4 (mod π)`; ex2
/// has a single family reported as `+`.
pub fn stable_families(base: Base, spec: &SpecFile, order: u32) -> Result<(bool, bool)> {
    let sys = spec.build()?;
    let (_, _, report) = analyze(&sys, order)?;
    let mut plus = false;
    let mut minus = false;
    for (_, fp) in report.stable_points() {
        match base {
            Base::Ex2 => plus = true,
            Base::Ex0 => {
                let a = fp.phi0.rem_euclid(PI);
                if wrap_pi(2.0 * (a - PI / 4.0)).abs() < 1e-6 {
                    plus = true;
                } else if wrap_pi(2.0 * (a - 3.0 * PI / 4.0)).abs() < 1e-6 {
                    minus = true;
                }
            }
        }
    }
    Ok((plus, minus))
}

/// Classifies every cell of a `(B₀, second axis)` grid, in parallel.
/// Cells are returned in row-major order of `(i, j)`.
pub fn partition_scan(
    base: Base,
    template: &SpecFile,
    b0_axis: Axis,
    second_axis: Axis,
) -> Result<Vec<PartitionCell>> {
    let key2 = base.second_axis();
    let cells: Vec<(usize, usize)> = (0..b0_axis.count)
        .flat_map(|i| (0..second_axis.count).map(move |j| (i, j)))
        .collect();
    cells
        .into_par_iter()
        .map(|(i, j)| {
            let (b0, v2) = (b0_axis.value(i), second_axis.value(j));
            let mut spec = template.clone();
            set_param(base, &mut spec, "B0", b0)?;
            set_param(base, &mut spec, key2, v2)?;
            let (plus, minus) = stable_families(base, &spec, 2)?;
            Ok(PartitionCell {
                i,
                j,
                param1: b0,
                param2: v2,
                label: label(plus, minus).to_string(),
                has_stable_plus: plus,
                has_stable_minus: minus,
            })
        })
        .collect()
}

/// Cells whose computed label differs from the closed form although no
/// closed-form boundary passes through their 8-neighbourhood.
pub fn boundary_mismatches(
    base: Base,
    cells: &[PartitionCell],
    b0_axis: Axis,
    second_axis: Axis,
    eps: f64,
) -> Vec<PartitionCell> {
    let expected = |i: usize, j: usize| {
        closed_form_label(base, b0_axis.value(i), second_axis.value(j), eps)
    };
    cells
        .iter()
        .filter(|c| {
            let want = expected(c.i, c.j);
            if want == (c.has_stable_plus, c.has_stable_minus) {
                return false;
            }
            let (ni, nj) = (b0_axis.count as i64, second_axis.count as i64);
            let near_boundary = (-1..=1).any(|di: i64| {
                (-1..=1).any(|dj: i64| {
                    let (a, b) = (c.i as i64 + di, c.j as i64 + dj);
                    a >= 0 && b >= 0 && a < ni && b < nj && expected(a as usize, b as usize) != want
                })
            });
            !near_boundary
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_build() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            p.spec.build().unwrap();
        }
        assert!(preset("fig-ex9").is_err());
    }

    #[test]
    fn q1_override_respects_a1() {
        let mut spec = preset("ex0").unwrap().spec;
        set_param(Base::Ex0, &mut spec, "A1", 0.5).unwrap();
        set_param(Base::Ex0, &mut spec, "Q1", 1.0).unwrap();
        assert_eq!(spec.params["B1"], 1.5);
        assert!(set_param(Base::Ex2, &mut spec, "Q1", 1.0).is_err());
        assert!(set_param(Base::Ex0, &mut spec, "Z9", 1.0).is_err());
    }

    #[test]
    fn boundary_corners() {
        let e = 0.4f64;
        let e2 = e * e;
        assert!((g_plus(-7.0 * e2 / 32.0, e)).abs() < 1e-15);
        assert!((g_plus(-3.0 * e2 / 32.0 - 1e-12, e) + e2 / 4.0).abs() < 1e-10);
        assert!((g_plus(-0.03, 0.4) + 0.01).abs() < 1e-12);
        assert!((g_plus(-0.03, 0.0) - 0.06).abs() < 1e-12);
        assert_eq!(label(true, false), "D+");
    }

    #[test]
    fn lattice_shape() {
        let l = ic_lattice();
        assert_eq!(l.len(), 28);
        assert!((l[27].0 - 2.1).abs() < 1e-12);
    }
}
