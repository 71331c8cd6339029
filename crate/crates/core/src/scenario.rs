//! Scenario files and the check → solve → verify pipeline with its on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admissibility::{
    assess, check_global_gate, check_local_gate, AdmissibilityReport, DecayCheckConfig, Gate, LipschitzEnvelope, QuadratureConfig,
    RadiusFunction,
};
use crate::bounds::{BoundFamily, TabulatedBounds, Verdict};
use crate::error::{Error, Result};
use crate::functions::ScalarFn;
use crate::linear_system::LinearSystem;
use crate::manifold::{fmt17, ManifoldGraph};
use crate::ode::IntegratorConfig;
use crate::perturbation::Perturbation;
use crate::solver::{solve_local, solve_manifold, LocalSolution, SolveDiagnostics, Solution, SolverConfig};
use crate::verification::{integrate_semiflow, verify_global, verify_local, SemiflowMode, VerificationConfig, VerificationReport};

pub const ADMISSIBILITY_FILE: &str = "admissibility.json";
pub const MANIFOLD_CSV: &str = "manifold.csv";
pub const MANIFOLD_JSON: &str = "manifold.json";
pub const DECAY_CSV: &str = "decay_curve.csv";
pub const VERIFICATION_FILE: &str = "verification.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// The planar product example built from the bounds' own product form.
    Matched {
        #[serde(default)]
        numeric: bool,
    },
    /// The planar product example from explicit scalar functions.
    Product {
        frak_a: ScalarFn,
        frak_b: ScalarFn,
        frak_c: ScalarFn,
        frak_d: ScalarFn,
        #[serde(default)]
        numeric: bool,
    },
    /// `A(t) = diag(rates)`, the first `dim_e` coordinates spanning `E`.
    Diagonal { rates: Vec<f64>, dim_e: usize },
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec::Matched { numeric: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    #[default]
    Zero,
    /// `Lip(r) · (tanh y, tanh x)` in each coordinate.
    TanhCross { envelope: LipschitzEnvelope },
    /// `c/(1+q) · (y‖y‖^q, x‖x‖^q)`.
    PowerCross { c: f64, q: f64 },
}

impl PerturbationSpec {
    pub fn build(&self) -> Perturbation {
        match self {
            PerturbationSpec::Zero => Perturbation::zero(),
            PerturbationSpec::TanhCross { envelope } => Perturbation::tanh_cross(envelope.clone()),
            PerturbationSpec::PowerCross { c, q } => Perturbation::power_cross(*c, *q),
        }
    }
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundFamily>,
    /// CSV with header `t,s,a,b`, resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds_csv: Option<PathBuf>,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<RadiusFunction>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub decay: DecayCheckConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
}

impl ScenarioConfig {
    pub fn new(name: &str, bounds: BoundFamily, perturbation: PerturbationSpec) -> Self {
        ScenarioConfig {
            name: name.into(),
            seed: 0,
            system: SystemSpec::default(),
            bounds: Some(bounds),
            bounds_csv: None,
            perturbation,
            radius: None,
            quadrature: QuadratureConfig::default(),
            decay: DecayCheckConfig::default(),
            solver: SolverConfig::default(),
            verification: VerificationConfig::default(),
            integrator: IntegratorConfig::default(),
        }
    }

    pub fn is_local(&self) -> bool {
        self.radius.is_some()
    }

    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    /// Parses, applies `key.path=value` overrides, and resolves `bounds_csv` against `base`.
    pub fn parse_with(text: &str, overrides: &[String], base: Option<&Path>) -> Result<Self> {
        let mut cfg = if overrides.is_empty() {
            Self::parse(text)?
        } else {
            let mut tree: Value = if text.trim_start().starts_with('{') {
                serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?
            } else {
                toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
            };
            for o in overrides {
                apply_override(&mut tree, o)?;
            }
            Self::from_tree(tree)?
        };
        if let (Some(p), Some(base)) = (&cfg.bounds_csv, base) {
            if p.is_relative() {
                cfg.bounds_csv = Some(base.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse_with(&text, overrides, path.parent())
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_config_prefix(&e))))?;
        Ok(cfg)
    }

    fn from_tree(tree: Value) -> Result<Self> {
        serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key.path=value` overrides to an already-built config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg = Self::from_tree(tree)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.bounds, &self.bounds_csv) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `bounds` or `bounds_csv`, not both".into())),
            (None, None) => return Err(Error::Config("missing `bounds` (or `bounds_csv`)".into())),
            _ => {}
        }
        self.solver.validate().map_err(|e| Error::Config(strip_config_prefix(&e)))?;
        if let Some(r) = &self.radius {
            r.validate().map_err(|e| Error::Config(strip_config_prefix(&e)))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn strip_config_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn parse_scalar(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).unwrap_or(Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` in a config tree, creating tables on the way.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut node = tree;
    for p in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(Error::Config(format!("override `{key}`: `{p}` is not a table")));
        }
        node = node.as_object_mut().expect("object").entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| Error::Config(format!("override `{key}` does not address a table field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}

/// A config resolved into the objects the pipeline runs on.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: LinearSystem,
    pub bounds: BoundFamily,
    pub perturbation: Perturbation,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let bounds = match (&config.bounds, &config.bounds_csv) {
            (Some(b), _) => b.clone(),
            (None, Some(p)) => BoundFamily::Tabulated(TabulatedBounds::load_csv(p).map_err(|e| Error::Config(e.to_string()))?),
            (None, None) => unreachable!("validated"),
        };
        bounds.validate().map_err(|e| Error::Config(strip_config_prefix(&e)))?;
        let cfg_err = |e: Error| Error::Config(strip_config_prefix(&e));
        let system = match &config.system {
            SystemSpec::Matched { numeric } => {
                let pf = bounds
                    .as_product_form()
                    .ok_or_else(|| Error::Config(format!("bounds `{}` have no product form; give an explicit system", bounds.name())))?;
                product_system(pf.frak_a, pf.frak_b, pf.frak_c, pf.frak_d, *numeric, &config.integrator).map_err(cfg_err)?
            }
            SystemSpec::Product { frak_a, frak_b, frak_c, frak_d, numeric } => {
                product_system(*frak_a, *frak_b, *frak_c, *frak_d, *numeric, &config.integrator).map_err(cfg_err)?
            }
            SystemSpec::Diagonal { rates, dim_e } => LinearSystem::diagonal(rates.clone(), *dim_e, config.integrator).map_err(cfg_err)?,
        };
        let perturbation = config.perturbation.build();
        let sp = system.splitting();
        perturbation.check_dims(sp.dim_e(), sp.dim_f()).map_err(cfg_err)?;
        Ok(Scenario { config, system, bounds, perturbation })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_config(ScenarioConfig::load(path, overrides)?)
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    /// The envelope the admissibility constants are computed from.
    pub fn envelope(&self) -> Result<LipschitzEnvelope> {
        match &self.config.radius {
            Some(r) => self
                .perturbation
                .ball_envelope(r)
                .ok_or_else(|| Error::Config("perturbation has no Lipschitz bound on balls".into())),
            None => self.perturbation.envelope().cloned().ok_or_else(|| {
                Error::Config("perturbation has no global Lipschitz envelope; add a `radius` table for the local theorem".into())
            }),
        }
    }
}

fn product_system(a: ScalarFn, b: ScalarFn, c: ScalarFn, d: ScalarFn, numeric: bool, integrator: &IntegratorConfig) -> Result<LinearSystem> {
    if numeric {
        LinearSystem::product_coefficient(a, b, c, d, *integrator)
    } else {
        LinearSystem::build_product_example(a, b, c, d)
    }
}

/// Process exit codes of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Pass,
    Fail,
    ConfigError,
    Divergent,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Pass => 0,
            ExitStatus::Fail => 1,
            ExitStatus::ConfigError => 2,
            ExitStatus::Divergent => 3,
        }
    }

    pub fn for_error(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Io(_) => ExitStatus::ConfigError,
            Error::Divergence { .. } => ExitStatus::Divergent,
            _ => ExitStatus::Fail,
        }
    }

    /// The more severe of two statuses, for multi-stage runs.
    pub fn worst(self, other: Self) -> Self {
        if other.code() > self.code() {
            other
        } else {
            self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub scenario: String,
    pub mode: String,
    pub envelope: LipschitzEnvelope,
    pub report: AdmissibilityReport,
    /// The gate the mode requires: global for `solve_manifold`, local with a radius.
    pub gate: Gate,
    pub status: ExitStatus,
    pub exit_code: i32,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.status == ExitStatus::Pass
    }
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), text)?;
    Ok(())
}

fn to_json_text<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Admissibility constants, gate and decay verdict; writes `admissibility.json` when `out` is given.
pub fn run_check(sc: &Scenario, out: Option<&Path>) -> Result<CheckOutcome> {
    let envelope = sc.envelope()?;
    let report = assess(&sc.bounds, &envelope, &sc.config.quadrature, &sc.config.decay)?;
    let local = sc.config.is_local();
    let gate = if local { check_local_gate(report.alpha, report.beta) } else { check_global_gate(report.alpha, report.beta) };
    let status = if report.decay.verdict == Verdict::Fail {
        ExitStatus::Fail
    } else if report.divergent {
        ExitStatus::Divergent
    } else if gate.passed && report.decay.verdict == Verdict::Pass {
        ExitStatus::Pass
    } else {
        ExitStatus::Fail
    };
    let outcome = CheckOutcome {
        scenario: sc.name().into(),
        mode: if local { "local" } else { "global" }.into(),
        envelope,
        report,
        gate,
        status,
        exit_code: status.code(),
    };
    if let Some(out) = out {
        write_text(out, ADMISSIBILITY_FILE, &to_json_text(&outcome)?)?;
    }
    Ok(outcome)
}

/// Extra data of a local solve, kept in the graph metadata so `verify` can rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalInfo {
    pub ball_alpha: f64,
    pub ball_beta: f64,
    pub local_margin: f64,
    pub s_factors: Vec<crate::admissibility::SFactor>,
    pub entry_radius: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub check: CheckOutcome,
    pub solution: Option<Solution>,
    pub local: Option<LocalSolution>,
    pub decay_curve: Vec<DecayPoint>,
    pub status: ExitStatus,
}

impl SolveOutcome {
    pub fn graph(&self) -> Option<&ManifoldGraph> {
        self.solution.as_ref().map(|s| &s.graph)
    }
}

/// One sampled point of the separation of two trajectories on the graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub s: f64,
    pub t: f64,
    pub a: f64,
    pub separation: f64,
    pub bound: f64,
}

/// Check, then solve when the check passes; writes the manifold and decay-curve files.
pub fn run_solve(sc: &Scenario, out: Option<&Path>) -> Result<SolveOutcome> {
    let check = run_check(sc, out)?;
    if !check.passed() {
        return Ok(SolveOutcome { status: check.status, check, solution: None, local: None, decay_curve: vec![] });
    }
    let cfg = &sc.config;
    let (mut solution, local) = match &cfg.radius {
        Some(r) => {
            let l = solve_local(&sc.system, &sc.bounds, &sc.perturbation, r, &cfg.quadrature, &cfg.decay, &cfg.solver)?;
            (l.solution.clone(), Some(l))
        }
        None => (solve_manifold(&sc.system, &sc.bounds, &sc.perturbation, &check.report, &cfg.solver)?, None),
    };
    solution.graph.metadata = graph_metadata(cfg, &check, &solution.diagnostics, local.as_ref())?;
    let local = local.map(|mut l| {
        l.solution = solution.clone();
        l
    });
    let decay_curve = decay_curve(sc, &solution.graph, local.as_ref())?;
    if let Some(out) = out {
        write_text(out, MANIFOLD_CSV, &solution.graph.to_csv())?;
        write_text(out, MANIFOLD_JSON, &solution.graph.to_json()?)?;
        write_text(out, DECAY_CSV, &decay_csv(&decay_curve))?;
    }
    Ok(SolveOutcome { check, solution: Some(solution), local, decay_curve, status: ExitStatus::Pass })
}

fn graph_metadata(cfg: &ScenarioConfig, check: &CheckOutcome, diag: &SolveDiagnostics, local: Option<&LocalSolution>) -> Result<Value> {
    let mut meta = serde_json::json!({
        "scenario": cfg,
        "admissibility": check,
        "diagnostics": diag,
    });
    if let Some(l) = local {
        let info = LocalInfo {
            ball_alpha: l.ball_alpha,
            ball_beta: l.ball_beta,
            local_margin: l.local_margin,
            s_factors: l.s_factors.clone(),
            entry_radius: l.entry_radius.clone(),
        };
        meta["local"] = serde_json::to_value(info)?;
    }
    Ok(meta)
}

const DECAY_CURVE_POINTS: usize = 41;

/// Separation of two graph trajectories started at the first node, against `prefactor · a(t,s) ‖ξ−ξ̄‖`.
pub fn decay_curve(sc: &Scenario, graph: &ManifoldGraph, local: Option<&LocalSolution>) -> Result<Vec<DecayPoint>> {
    let s = graph.s_grid[0];
    let end = graph.s_grid[graph.active_len - 1];
    let dim_e = graph.dim_e;
    let (reach, prefactor, f) = match local {
        Some(l) => (0.9 * l.entry_radius[0], 2.0 / (1.0 - 4.0 * l.ball_alpha), sc.perturbation.clone()),
        None => (0.5 * graph.halfwidth[0], 2.0 / (1.0 - 2.0 * graph.alpha), sc.perturbation.clone()),
    };
    let mut u = DVector::zeros(dim_e);
    let mut w = DVector::zeros(dim_e);
    u[0] = reach;
    w[0] = -reach;
    let sep0 = (&u - &w).norm();
    let sp = sc.system.splitting();
    let mut v1 = sp.join(&u, &graph.eval(s, &u)?);
    let mut v2 = sp.join(&w, &graph.eval(s, &w)?);
    let mode = SemiflowMode::Adaptive;
    let ic = &sc.config.integrator;
    let mut points = Vec::with_capacity(DECAY_CURVE_POINTS);
    let mut t = s;
    for k in 0..DECAY_CURVE_POINTS {
        let next = s + (end - s) * k as f64 / (DECAY_CURVE_POINTS - 1) as f64;
        if next > t {
            v1 = integrate_semiflow(&sc.system, &f, t, &v1, next - t, mode, ic, sc.config.verification.lawson_step)?.0;
            v2 = integrate_semiflow(&sc.system, &f, t, &v2, next - t, mode, ic, sc.config.verification.lawson_step)?.0;
            t = next;
        }
        let a = sc.bounds.eval_a(t, s)?;
        points.push(DecayPoint { s, t, a, separation: sp.norm(&(&v1 - &v2)), bound: prefactor * a * sep0 });
    }
    Ok(points)
}

pub fn decay_csv(points: &[DecayPoint]) -> String {
    let mut out = String::from("s,t,a,separation,bound\n");
    for p in points {
        out.push_str(&format!("{},{},{},{},{}\n", fmt17(p.s), fmt17(p.t), fmt17(p.a), fmt17(p.separation), fmt17(p.bound)));
    }
    out
}

/// Reads `manifold.json` from `out`; a missing file is a config error.
pub fn load_graph(out: &Path) -> Result<ManifoldGraph> {
    let path = out.join(MANIFOLD_JSON);
    if !path.exists() {
        return Err(Error::Config(format!("{} not found; run `solve` first", path.display())));
    }
    ManifoldGraph::load_json(&path)
}

/// Rebuilds the local solution from a graph written by [`run_solve`].
pub fn local_from_graph(graph: &ManifoldGraph) -> Result<LocalSolution> {
    let info: LocalInfo = serde_json::from_value(graph.metadata.get("local").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Config(format!("manifold.json lacks local data: {e}")))?;
    let diagnostics: SolveDiagnostics = serde_json::from_value(graph.metadata.get("diagnostics").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::Config(format!("manifold.json lacks diagnostics: {e}")))?;
    Ok(LocalSolution {
        solution: Solution { graph: graph.clone(), diagnostics },
        ball_alpha: info.ball_alpha,
        ball_beta: info.ball_beta,
        local_margin: info.local_margin,
        s_factors: info.s_factors,
        entry_radius: info.entry_radius,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub report: VerificationReport,
    pub status: ExitStatus,
}

/// Runs the verification suite on a solved graph; writes `verification.json` when `out` is given.
pub fn verify_graph(sc: &Scenario, graph: &ManifoldGraph, out: Option<&Path>) -> Result<VerifyOutcome> {
    let cfg = &sc.config;
    let report = match &cfg.radius {
        Some(r) => {
            let local = local_from_graph(graph)?;
            verify_local(sc.name(), &local, &sc.system, &sc.bounds, &sc.perturbation, r, &cfg.integrator, &cfg.verification, cfg.seed)?
        }
        None => verify_global(
            sc.name(),
            graph,
            &sc.system,
            &sc.bounds,
            &sc.perturbation,
            graph.alpha,
            &cfg.integrator,
            &cfg.verification,
            cfg.seed,
        )?,
    };
    if let Some(out) = out {
        write_text(out, VERIFICATION_FILE, &to_json_text(&report)?)?;
    }
    let status = if report.passed { ExitStatus::Pass } else { ExitStatus::Fail };
    Ok(VerifyOutcome { report, status })
}

/// Loads `manifold.json` from `out` and verifies it.
pub fn run_verify(sc: &Scenario, out: &Path) -> Result<VerifyOutcome> {
    let graph = load_graph(out)?;
    if graph.dim_e != sc.system.splitting().dim_e() || graph.dim_f != sc.system.splitting().dim_f() {
        return Err(Error::Config("manifold.json does not match the scenario dimensions".into()));
    }
    verify_graph(sc, &graph, Some(out))
}
