mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use isores_core::analysis::{analyze, AnalysisReport};
use isores_core::averaging::{average_first, average_second, pretty, AveragedSystem, SecondAveraged};
use isores_core::envelope::Horizon;
use isores_core::presets::{
    closed_form_label, ic_lattice, label, partition_scan, preset, set_param, set_spec_param,
    boundary_mismatches, Axis, Base, Preset,
};
use isores_core::sde::{
    default_dt, ensemble, with_pool, Frame, InitialState, Metric, Model, PathRecord, SimConfig,
};
use isores_core::sysdef::{SpecFile, SystemSpec};
use isores_core::Error;

use output::{num, to_value, write_json, Csv, Provenance};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Usage(String),
    Io(PathBuf, std::io::Error),
    Json(serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(path.to_path_buf(), e)
    }

    /// 2 for rejected input, 3 for numerical failure, 1 otherwise.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Domain(_) | Error::Numerical(_)) => 3,
            CliError::Core(_) | CliError::Usage(_) => 2,
            CliError::Io(..) | CliError::Json(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Json(e) => write!(f, "serialization failed: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "isores",
    version,
    about = "Resonance averaging, regime analysis and simulation for decaying, noisy oscillators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a system definition and print its resonance data.
    Validate(SystemArgs),
    /// Average the system and write average.json.
    Average(SystemArgs),
    /// Classify locking and drift regimes and write analysis.json.
    Analyze(SystemArgs),
    /// Scan a (B0, Q1) or (B0, B1) grid and write partition.csv.
    Partition(PartitionArgs),
    /// Integrate sample paths and write paths/NNN.csv.
    Simulate(SimulateArgs),
    /// Estimate exceedance probabilities and write stats.json.
    Ensemble(EnsembleArgs),
    /// Run the analysis and trajectories behind one figure preset.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Clone, Debug)]
struct SystemArgs {
    /// Built-in preset: ex0, ex2, fig-ex0a, fig-ex0b, fig-ex0c, fig-ex1,
    /// fig-ex11, fig-ex2, fig-ex20 or fig-ex22.
    preset: Option<String>,
    /// JSON system definition, or an artifact whose config embeds one.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Parameter override; repeatable.
    #[arg(long = "set", value_name = "K=V", allow_hyphen_values = true)]
    sets: Vec<String>,
    /// Shorthand for --set eps=X.
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    /// Averaging order.
    #[arg(long, default_value_t = 2)]
    order: u32,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone, Debug)]
struct SimArgs {
    /// cartesian, polar, truncated, truncated2 or limiting.
    #[arg(long, value_parser = parse_frame)]
    frame: Option<Frame>,
    /// Master seed; path i draws from a stream derived from (seed, i).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of paths; initial states are reused cyclically.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t_start: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<f64>,
    /// Initial state as R,PSI; repeatable.
    #[arg(long = "ic", value_name = "R,PSI", allow_hyphen_values = true)]
    ics: Vec<String>,
    #[arg(long)]
    r_min: Option<f64>,
    /// Largest number of recorded samples per path.
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MetricChoice {
    Auto,
    Locking,
    Drift,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Exceedance level for the metric supremum.
    #[arg(long, default_value_t = 0.5)]
    eps1: f64,
    /// Window start t_s; paths start here unless --t-start is given.
    #[arg(long, allow_negative_numbers = true)]
    t_s: Option<f64>,
    /// Window end; defaults to t_s plus the stability horizon, capped at t_end.
    #[arg(long, allow_negative_numbers = true)]
    window_end: Option<f64>,
    /// Horizon parameter l in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    l: f64,
    #[arg(long, value_enum, default_value_t = MetricChoice::Auto)]
    metric: MetricChoice,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Two axes NAME=LO:HI:COUNT, one for B0 and one for Q1 (ex0) or B1 (ex2).
    #[arg(long, num_args = 2, value_name = "AXIS")]
    grid: Vec<String>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[command(flatten)]
    sim: SimArgs,
}

fn parse_frame(s: &str) -> std::result::Result<Frame, String> {
    s.parse::<Frame>().map_err(|e| e.to_string())
}

/// A fully resolved system definition.
struct Resolved {
    preset: Option<Preset>,
    base: Option<Base>,
    spec: SpecFile,
    order: u32,
    config: Value,
}

impl Resolved {
    fn build(&self) -> Result<SystemSpec> {
        Ok(self.spec.build()?)
    }

    fn provenance(&self, seed: Option<u64>, extra: Value) -> Provenance {
        let mut config = self.config.clone();
        if let (Value::Object(c), Value::Object(e)) = (&mut config, extra) {
            c.extend(e);
        }
        Provenance::new(seed, config)
    }
}

fn parse_override(text: &str) -> Result<(String, f64)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{text}' is not K=V")))?;
    let v = v
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("override '{text}' has a non-numeric value")))?;
    Ok((k.trim().to_string(), v))
}

fn resolve(cmd: &str, args: &SystemArgs) -> Result<Resolved> {
    let (preset_obj, mut spec, mut applied) = match (&args.preset, &args.spec) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give either a preset name or --spec, not both".into()))
        }
        (None, None) => return Err(CliError::Usage("a preset name or --spec FILE is required".into())),
        (Some(name), None) => {
            let p = preset(name)?;
            let spec = p.spec.clone();
            (Some(p), spec, Vec::new())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let loaded = load_spec(&text)?;
            let p = match loaded.preset {
                Some(name) => Some(preset(&name)?),
                None => None,
            };
            (p, loaded.spec, loaded.overrides)
        }
    };
    let base = preset_obj.as_ref().map(|p| p.base);
    let mut overrides = Vec::new();
    for text in &args.sets {
        overrides.push(parse_override(text)?);
    }
    if let Some(eps) = args.eps {
        overrides.push(("eps".to_string(), eps));
    }
    for (k, v) in &overrides {
        match base {
            Some(b) => set_param(b, &mut spec, k, *v)?,
            None => set_spec_param(&mut spec, k, *v)?,
        }
    }
    applied.extend(overrides);
    if args.order < 1 {
        return Err(CliError::Usage("--order must be at least 1".into()));
    }
    let mut config = json!({
        "command": cmd,
        "order": args.order,
        "overrides": applied.iter().map(|(k, v)| json!([k, v])).collect::<Vec<_>>(),
        "spec": to_value(&spec)?,
    });
    if let Some(p) = &preset_obj {
        config["preset"] = json!(p.name);
    }
    Ok(Resolved {
        preset: preset_obj,
        base,
        spec,
        order: args.order,
        config,
    })
}

struct Loaded {
    spec: SpecFile,
    preset: Option<String>,
    overrides: Vec<(String, f64)>,
}

/// Reads a system definition. An artifact written by this tool is accepted
/// too: its embedded resolved spec is used as is, and the preset name and
/// overrides it records are carried into the new provenance.
fn load_spec(text: &str) -> Result<Loaded> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::Core(Error::Validation(format!("malformed spec: {e}"))))?;
    if let Some(config) = value.get("provenance").and_then(|p| p.get("config")) {
        let spec = config
            .get("spec")
            .ok_or_else(|| CliError::Usage("artifact carries no spec".into()))?;
        let overrides: Vec<(String, f64)> = match config.get("overrides") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Usage(format!("artifact overrides unreadable: {e}")))?,
            None => Vec::new(),
        };
        return Ok(Loaded {
            spec: SpecFile::from_json(&spec.to_string())?,
            preset: config.get("preset").and_then(Value::as_str).map(str::to_string),
            overrides,
        });
    }
    Ok(Loaded {
        spec: SpecFile::from_json(text)?,
        preset: None,
        overrides: Vec::new(),
    })
}

fn parse_ic(text: &str) -> Result<InitialState> {
    let bad = || CliError::Usage(format!("initial state '{text}' is not R,PSI"));
    let (r, psi) = text.split_once(',').ok_or_else(bad)?;
    Ok(InitialState {
        r: r.trim().parse().map_err(|_| bad())?,
        psi: psi.trim().parse().map_err(|_| bad())?,
    })
}

fn initial_states(sim: &SimArgs) -> Result<Vec<InitialState>> {
    if sim.ics.is_empty() {
        return Ok(ic_lattice()
            .into_iter()
            .map(|(r, psi)| InitialState { r, psi })
            .collect());
    }
    sim.ics.iter().map(|s| parse_ic(s)).collect()
}

/// Simulation settings from the flags, falling back on the preset defaults.
fn sim_config(res: &Resolved, sys: &SystemSpec, sim: &SimArgs, n_default: usize) -> Result<SimConfig> {
    let (t_start, t_end, dt) = match &res.preset {
        Some(p) => (p.sim.t_start, p.sim.t_end, p.sim.dt),
        None => {
            let t0 = sys.envelope.t0;
            (t0, t0 + 1000.0, default_dt(sys.resonance.nu0))
        }
    };
    let frame = sim.frame.unwrap_or(if sys.cartesian.is_some() {
        Frame::Cartesian
    } else {
        Frame::Polar
    });
    if frame == Frame::Cartesian && sys.cartesian.is_none() {
        return Err(CliError::Usage("the cartesian frame needs a cartesian system definition".into()));
    }
    let mut cfg = SimConfig::new(
        frame,
        sim.t_start.unwrap_or(t_start),
        sim.t_end.unwrap_or(t_end),
        sim.dt.unwrap_or(dt),
    );
    cfg.seed = sim.seed;
    cfg.n_paths = sim.paths.unwrap_or(n_default);
    if cfg.n_paths == 0 {
        return Err(CliError::Usage("--paths must be at least 1".into()));
    }
    if let Some(r) = sim.r_min {
        cfg.r_min = r;
    }
    cfg.validate(&sys.envelope)?;
    Ok(cfg)
}

fn needs_averaging(frame: Frame) -> bool {
    matches!(frame, Frame::Truncated | Frame::Truncated2 | Frame::Limiting)
}

fn model_for(res: &Resolved, sys: SystemSpec, frame: Frame) -> Result<Model> {
    if needs_averaging(frame) {
        let (avg, second, _) = analyze(&sys, res.order)?;
        Ok(Model::new(sys).with_averaged(avg, second))
    } else {
        Ok(Model::new(sys))
    }
}

fn averaged_json(avg: &AveragedSystem, second: Option<&SecondAveraged>) -> Value {
    let mut v = json!({
        "Lambda": pretty(&avg.lambda, "psi"),
        "Omega": pretty(&avg.omega, "psi"),
    });
    if let Some(sec) = second {
        v["F"] = json!(pretty(&sec.f, "psi"));
    }
    v
}

fn report_summary(rep: &AnalysisReport) -> Value {
    let fixed: Vec<Value> = rep
        .fixed_points
        .iter()
        .map(|f| json!({ "rho0": f.rho0, "phi0": f.phi0, "verdict": to_value(&f.verdict).ok() }))
        .collect();
    let drift: Vec<Value> = rep
        .drift
        .iter()
        .map(|d| json!({ "rho0": d.rho0, "mode": to_value(&d.mode).ok(), "condition_ok": d.condition_ok }))
        .collect();
    json!({ "fixed_points": fixed, "drift": drift })
}

fn print_report(rep: &AnalysisReport) {
    for f in &rep.fixed_points {
        println!("fixed point rho0 = {:.6}, phi0 = {:.6}: {:?}", f.rho0, f.phi0, f.verdict);
    }
    for d in &rep.drift {
        println!("drift radius rho0 = {:.6} ({:?}, condition {})", d.rho0, d.mode, d.condition_ok);
    }
    if rep.fixed_points.is_empty() && rep.drift.is_empty() {
        println!("no fixed points or drift radii in range");
    }
}

fn write_analysis(res: &Resolved, sys: &SystemSpec, dir: &Path) -> Result<AnalysisReport> {
    let (avg, second, rep) = analyze(sys, res.order)?;
    let prov = res.provenance(None, json!({}));
    write_json(
        &dir.join("analysis.json"),
        &json!({
            "provenance": prov,
            "averaged": averaged_json(&avg, second.as_ref()),
            "summary": report_summary(&rep),
            "report": to_value(&rep)?,
        }),
    )?;
    Ok(rep)
}

fn cmd_validate(args: &SystemArgs) -> Result<()> {
    let res = resolve("validate", args)?;
    let sys = res.build()?;
    let r = &sys.resonance;
    println!(
        "valid: kappa/varkappa = {}/{}, nu0 = {}, s0 = {}, n = {}, p = {}, eps = {}, highest order {}",
        r.kappa,
        r.varkappa,
        r.nu0,
        sys.s0(),
        sys.n,
        sys.p,
        sys.eps,
        sys.max_order()
    );
    Ok(())
}

fn cmd_average(args: &SystemArgs) -> Result<()> {
    let res = resolve("average", args)?;
    let sys = res.build()?;
    let avg = average_first(&sys, res.order)?;
    let second = match avg.find_q() {
        Some(q) if q.constant => Some(average_second(&avg)?),
        _ => None,
    };
    let path = args.out.join("average.json");
    write_json(
        &path,
        &json!({
            "provenance": res.provenance(None, json!({})),
            "pretty": averaged_json(&avg, second.as_ref()),
            "first": to_value(&avg)?,
            "second": to_value(&second)?,
        }),
    )?;
    for (k, e) in pretty(&avg.lambda, "psi") {
        println!("Lambda_{k} = {e}");
    }
    for (k, e) in pretty(&avg.omega, "psi") {
        println!("Omega_{k} = {e}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_analyze(args: &SystemArgs) -> Result<()> {
    let res = resolve("analyze", args)?;
    let sys = res.build()?;
    let rep = write_analysis(&res, &sys, &args.out)?;
    print_report(&rep);
    println!("wrote {}", args.out.join("analysis.json").display());
    Ok(())
}

fn parse_axis(text: &str) -> Result<(String, Axis)> {
    let bad = || CliError::Usage(format!("grid axis '{text}' is not NAME=LO:HI:COUNT"));
    let (name, range) = text.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !(lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    Ok((name.trim().to_string(), Axis { lo, hi, count }))
}

fn cmd_partition(args: &PartitionArgs) -> Result<()> {
    let res = resolve("partition", &args.system)?;
    let base = res
        .base
        .ok_or_else(|| CliError::Usage("partition needs an ex0- or ex2-based preset".into()))?;
    let second_name = base.second_axis();
    let mut b0_axis = Axis {
        lo: -0.5,
        hi: 0.1,
        count: 81,
    };
    let mut second_axis = Axis {
        lo: -1.0,
        hi: 1.0,
        count: 81,
    };
    for text in &args.grid {
        let (name, axis) = parse_axis(text)?;
        if name == "B0" {
            b0_axis = axis;
        } else if name == second_name {
            second_axis = axis;
        } else {
            return Err(CliError::Usage(format!(
                "grid axis '{name}' is neither B0 nor {second_name}"
            )));
        }
    }
    res.build()?;
    let cells = with_pool(|| partition_scan(base, &res.spec, b0_axis, second_axis))?;
    let eps = res.spec.eps;
    let mismatches = boundary_mismatches(base, &cells, b0_axis, second_axis, eps);
    let prov = res.provenance(
        None,
        json!({ "grid": { "B0": to_value(&b0_axis)?, second_name: to_value(&second_axis)? } }),
    );
    let mut csv = Csv::new(
        &prov,
        &["i", "j", "B0", second_name, "label", "closed_form", "stable_plus", "stable_minus"],
    )?;
    let mut counts = std::collections::BTreeMap::<String, usize>::new();
    for c in &cells {
        let (cp, cm) = closed_form_label(base, c.param1, c.param2, eps);
        *counts.entry(c.label.clone()).or_default() += 1;
        csv.row([
            c.i.to_string(),
            c.j.to_string(),
            num(c.param1),
            num(c.param2),
            c.label.clone(),
            label(cp, cm).to_string(),
            c.has_stable_plus.to_string(),
            c.has_stable_minus.to_string(),
        ]);
    }
    let out = &args.system.out;
    csv.write(&out.join("partition.csv"))?;
    write_json(
        &out.join("partition.json"),
        &json!({
            "provenance": prov,
            "counts": counts,
            "cells": cells.len(),
            "off_boundary_mismatches": to_value(&mismatches)?,
        }),
    )?;
    println!(
        "{} cells; labels {:?}; {} mismatches away from the closed-form boundary",
        cells.len(),
        counts,
        mismatches.len()
    );
    println!("wrote {}", out.join("partition.csv").display());
    Ok(())
}

fn write_paths(
    dir: &Path,
    prov: &Provenance,
    paths: &[PathRecord],
    plot_only: bool,
) -> Result<()> {
    let header: &[&str] = if plot_only {
        &["t", "rho", "psi"]
    } else {
        &["t", "x1", "x2", "rho", "phi", "psi"]
    };
    for p in paths {
        let mut csv = Csv::new(prov, header)?;
        for s in &p.samples {
            if plot_only {
                csv.row([num(s.t), num(s.rho), num(s.psi)]);
            } else {
                csv.row([num(s.t), num(s.x1), num(s.x2), num(s.rho), num(s.phi), num(s.psi)]);
            }
        }
        csv.write(&dir.join("paths").join(format!("{:03}.csv", p.index)))?;
    }
    Ok(())
}

fn path_table(paths: &[PathRecord], ics: &[InitialState]) -> Result<Value> {
    let rows: Result<Vec<Value>> = paths
        .iter()
        .map(|p| {
            Ok(json!({
                "index": p.index,
                "initial": to_value(&ics[p.index % ics.len()])?,
                "status": to_value(&p.status)?,
                "last": to_value(&p.last)?,
            }))
        })
        .collect();
    Ok(Value::Array(rows?))
}

fn run_paths(
    res: &Resolved,
    sys: SystemSpec,
    sim: &SimArgs,
    max_default: usize,
) -> Result<(SimConfig, Vec<InitialState>, Vec<PathRecord>)> {
    let ics = initial_states(sim)?;
    let mut cfg = sim_config(res, &sys, sim, ics.len())?;
    cfg.record_stride = cfg.stride_for(sim.max_samples.unwrap_or(max_default));
    let model = model_for(res, sys, cfg.frame)?;
    let paths = model.simulate_many(&cfg, &ics)?;
    Ok((cfg, ics, paths))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let res = resolve("simulate", &args.system)?;
    let sys = res.build()?;
    let (cfg, ics, paths) = run_paths(&res, sys, &args.sim, 100_000)?;
    let prov = res.provenance(
        Some(cfg.seed),
        json!({ "sim": to_value(&cfg)?, "initial_states": to_value(&ics)? }),
    );
    let out = &args.system.out;
    write_paths(out, &prov, &paths, false)?;
    write_json(
        &out.join("simulate.json"),
        &json!({ "provenance": prov, "paths": path_table(&paths, &ics)? }),
    )?;
    println!("{} paths written to {}", paths.len(), out.join("paths").display());
    Ok(())
}

fn cmd_reproduce(args: &ReproduceArgs) -> Result<()> {
    if args.system.spec.is_some() {
        return Err(CliError::Usage("reproduce takes a figure preset name".into()));
    }
    let res = resolve("reproduce", &args.system)?;
    let sys = res.build()?;
    let out = &args.system.out;
    let rep = write_analysis(&res, &sys, out)?;
    print_report(&rep);
    let (cfg, ics, paths) = run_paths(&res, sys, &args.sim, 5_000)?;
    let prov = res.provenance(
        Some(cfg.seed),
        json!({ "sim": to_value(&cfg)?, "initial_states": to_value(&ics)? }),
    );
    write_paths(out, &prov, &paths, true)?;
    write_json(
        &out.join("reproduce.json"),
        &json!({
            "provenance": prov,
            "summary": report_summary(&rep),
            "paths": path_table(&paths, &ics)?,
        }),
    )?;
    println!("{} paths and analysis.json written to {}", paths.len(), out.display());
    Ok(())
}

fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let res = resolve("ensemble", &args.system)?;
    let sys = res.build()?;
    let env = sys.envelope;
    let (avg, second, rep) = analyze(&sys, res.order)?;
    let stable = rep.stable_points().find(|(i, _)| rep.particular[*i].is_some());
    let drift = rep
        .drift
        .iter()
        .find(|d| d.condition_ok)
        .or_else(|| rep.drift.first());
    let use_locking = match args.metric {
        MetricChoice::Locking => true,
        MetricChoice::Drift => false,
        MetricChoice::Auto => stable.is_some(),
    };
    let t_default = res.preset.as_ref().map_or(env.t0, |p| p.sim.t_start);
    let t_s = args.t_s.unwrap_or(50.0f64.max(t_default));
    let (metric, exponent, default_ic, regime) = if use_locking {
        let (idx, fp) = stable.ok_or_else(|| {
            CliError::Core(Error::Precondition("no stable locking point to measure against".into()))
        })?;
        let sol = rep.particular[idx].clone().expect("filtered above");
        let q = rep.q.map(|q| q.q).unwrap_or(rep.n);
        let mu = env.mu(t_s)?;
        let ic = InitialState {
            r: sol.rho_at(mu),
            psi: sol.phi_at(mu),
        };
        let exponent = (2 * rep.p + rep.n).saturating_sub(q).max(1);
        let metric = Metric::Locking {
            sol,
            family_period: fp.family_period,
            n: rep.n,
            q,
        };
        (metric, exponent, ic, to_value(fp)?)
    } else {
        let d = drift.ok_or_else(|| {
            CliError::Core(Error::Precondition("no drift radius to measure against".into()))
        })?;
        let exponent = (2 * rep.p).min(rep.n + 1);
        let ic = InitialState { r: d.rho0, psi: 0.0 };
        (Metric::Drift { rho0: d.rho0 }, exponent, ic, to_value(d)?)
    };

    let ics = if args.sim.ics.is_empty() {
        vec![default_ic]
    } else {
        initial_states(&args.sim)?
    };
    let mut sim = args.sim.clone();
    sim.t_start = Some(sim.t_start.unwrap_or(t_s));
    let cfg = sim_config(&res, &sys, &sim, 200)?;
    let horizon = if sys.eps > 0.0 {
        Some(env.horizon(exponent, t_s, sys.eps, args.l)?)
    } else {
        None
    };
    let window_end = args.window_end.unwrap_or(match horizon {
        Some(Horizon::Finite(big_t)) => (t_s + big_t).min(cfg.t_end),
        _ => cfg.t_end,
    });
    let window = (t_s, window_end);
    let model = Model::new(sys).with_averaged(avg, second);
    let (stats, summaries) = ensemble(&model, &cfg, &ics, &metric, args.eps1, window)?;

    let prov = res.provenance(
        Some(cfg.seed),
        json!({
            "sim": to_value(&cfg)?,
            "initial_states": to_value(&ics)?,
            "eps1": args.eps1,
            "l": args.l,
            "metric_choice": to_value(&args.metric)?,
        }),
    );
    let out = &args.system.out;
    write_json(
        &out.join("stats.json"),
        &json!({
            "provenance": prov,
            "stats": to_value(&stats)?,
            "horizon_exponent": exponent,
            "horizon": to_value(&horizon)?,
            "window_capped": window_end < window.0 + match horizon {
                Some(Horizon::Finite(big_t)) => big_t,
                _ => f64::INFINITY,
            },
            "regime": regime,
        }),
    )?;
    let mut csv = Csv::new(
        &prov,
        &["index", "status", "sup", "exceeded", "t_last", "rho_last", "psi_last"],
    )?;
    for s in &summaries {
        csv.row([
            s.index.to_string(),
            to_value(&s.status)?.as_str().unwrap_or("").to_string(),
            num(s.sup),
            s.exceeded.to_string(),
            num(s.last.t),
            num(s.last.rho),
            num(s.last.psi),
        ]);
    }
    csv.write(&out.join("sups.csv"))?;
    println!(
        "{}: p_hat = {:.4} +- {:.4} ({} of {} paths, window [{}, {}])",
        stats.metric, stats.p_hat, stats.ci95_halfwidth, stats.n_exceed, stats.n_total, window.0, window.1
    );
    println!("wrote {}", out.join("stats.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Average(a) => cmd_average(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| CliError::Core(e).exit_code();
        assert_eq!(code(Error::Validation("x".into())), 2);
        assert_eq!(code(Error::Precondition("x".into())), 2);
        assert_eq!(code(Error::DenominatorMismatch(1, 2)), 2);
        assert_eq!(code(Error::Numerical("x".into())), 3);
        assert_eq!(code(Error::Domain("x".into())), 3);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }

    #[test]
    fn axis_and_initial_state_parsing() {
        let (name, axis) = parse_axis("B0=-0.5:0.1:81").unwrap();
        assert_eq!(name, "B0");
        assert_eq!((axis.lo, axis.hi, axis.count), (-0.5, 0.1, 81));
        assert!(parse_axis("B0=-0.5:0.1").is_err());
        assert!(parse_axis("B0=0:1:0").is_err());
        let ic = parse_ic("1.5, -0.25").unwrap();
        assert_eq!((ic.r, ic.psi), (1.5, -0.25));
        assert!(parse_ic("1.5").is_err());
    }

    #[test]
    fn artifact_specs_load_with_their_overrides() {
        let spec = preset("ex2").unwrap().spec;
        let artifact = json!({
            "provenance": { "config": {
                "preset": "ex2",
                "overrides": [["B0", 0.25]],
                "spec": to_value(&spec).unwrap(),
            }}
        });
        let loaded = load_spec(&artifact.to_string()).unwrap();
        assert_eq!(loaded.spec, spec);
        assert_eq!(loaded.preset.as_deref(), Some("ex2"));
        assert_eq!(loaded.overrides, vec![("B0".to_string(), 0.25)]);
    }
}
