//! Experiment orchestration: the configuration schema, one runner per
//! stage, and the run report.
//!
//! A run parses and validates its configuration and every input before it
//! creates the output directory, computes in memory, and then writes each
//! artifact atomically. Reports are deterministic given the configuration,
//! seed and crate version; wall-clock timings go to a separate file.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acceptance::{constants_config, AcceptanceConfig, Counts, Suite};
use crate::ball::BallGrid;
use crate::dns::{generate_solution, generate_with_target, InitialCondition};
use crate::error::{LabError, Result};
use crate::field::{Grid, SpaceTimeField, SphereTrace, VectorField};
use crate::mild::picard_iterate;
use crate::norms::{mixed_norm, NormDomain, NormSpec};
use crate::nsf::{self, NsfData};
use crate::presets::{self, Resolution};
use crate::slicing::build_slice;
use crate::stokes::{eigen_decompose, linear_lift, veryweak_solve, BoundaryData, LiftConfig};
use crate::wsu::{epsreg_pipeline, estimate_constants, fit_envelope, ConstantsTable, PipelineConfig};

/// A named preset or an explicit resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ResolutionChoice {
    Small,
    Medium,
    Default,
    Custom(Resolution),
}

impl Default for ResolutionChoice {
    fn default() -> Self {
        ResolutionChoice::Small
    }
}

impl ResolutionChoice {
    /// A preset name or an inline JSON resolution object.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let r: Resolution = serde_json::from_str(s).map_err(|e| LabError::Schema(format!("resolution: {e}")))?;
            return Ok(ResolutionChoice::Custom(r));
        }
        match s {
            "small" => Ok(ResolutionChoice::Small),
            "medium" => Ok(ResolutionChoice::Medium),
            "default" => Ok(ResolutionChoice::Default),
            other => Err(LabError::Schema(format!(
                "unknown resolution `{other}` (expected small, medium, default or a JSON object)"
            ))),
        }
    }

    pub fn resolve(&self) -> Resolution {
        match self {
            ResolutionChoice::Small => presets::SMALL,
            ResolutionChoice::Medium => presets::MEDIUM,
            ResolutionChoice::Default => presets::DEFAULT,
            ResolutionChoice::Custom(r) => *r,
        }
    }
}

fn default_samples() -> usize {
    200
}

fn default_picard_iterations() -> usize {
    50
}

fn default_picard_tolerance() -> f64 {
    1e-8
}

/// Parameters of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Stage {
    DnsGenerate {
        initial: InitialCondition,
        /// Rescale the data so that `||U||_{L4(Q_1)}` meets this value.
        #[serde(default)]
        target_l4: Option<f64>,
    },
    Slice {
        field: PathBuf,
    },
    Lift {
        field: PathBuf,
        #[serde(default)]
        lift: LiftConfig,
    },
    StokesSolve {
        boundary: PathBuf,
        #[serde(default)]
        initial: Option<PathBuf>,
    },
    MildSolve {
        ubar: PathBuf,
        /// Estimated at the run seed when absent.
        #[serde(default)]
        constants: Option<PathBuf>,
        #[serde(default = "default_picard_iterations")]
        max_iterations: usize,
        #[serde(default = "default_picard_tolerance")]
        tolerance: f64,
    },
    EpsregRun {
        fields: Vec<PathBuf>,
        #[serde(default)]
        constants: Option<PathBuf>,
        #[serde(default)]
        pipeline: PipelineConfig,
    },
    ConstantsEstimate {
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Accept {
        #[serde(default)]
        counts: Counts,
    },
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::DnsGenerate { .. } => "dns-generate",
            Stage::Slice { .. } => "slice",
            Stage::Lift { .. } => "lift",
            Stage::StokesSolve { .. } => "stokes-solve",
            Stage::MildSolve { .. } => "mild-solve",
            Stage::EpsregRun { .. } => "epsreg-run",
            Stage::ConstantsEstimate { .. } => "constants-estimate",
            Stage::Accept { .. } => "accept",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Stage::Slice { field } | Stage::Lift { field, .. } => vec![field],
            Stage::StokesSolve { boundary, initial } => std::iter::once(boundary.as_path()).chain(initial.as_deref()).collect(),
            Stage::MildSolve { ubar, constants, .. } => std::iter::once(ubar.as_path()).chain(constants.as_deref()).collect(),
            Stage::EpsregRun { fields, constants, .. } => fields.iter().map(PathBuf::as_path).chain(constants.as_deref()).collect(),
            _ => Vec::new(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resolution: ResolutionChoice,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub stage: Stage,
}

impl ExperimentConfig {
    pub fn new(stage: Stage) -> Self {
        ExperimentConfig {
            seed: 0,
            resolution: ResolutionChoice::default(),
            out: default_out(),
            stage,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| LabError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |m: String| Err(LabError::Schema(m));
        self.resolution.resolve().validate().map_err(|e| LabError::Schema(e.to_string()))?;
        match &self.stage {
            Stage::DnsGenerate { initial, target_l4 } => {
                let amp = match initial {
                    InitialCondition::Zero => 0.0,
                    InitialCondition::TaylorGreen { amplitude } => *amplitude,
                    InitialCondition::Random { k_max, amplitude } => {
                        if !(*k_max >= 1.0) {
                            return schema(format!("k_max {k_max} must be at least 1"));
                        }
                        *amplitude
                    }
                };
                if !amp.is_finite() || amp < 0.0 {
                    return schema(format!("amplitude {amp} must be finite and nonnegative"));
                }
                if let Some(t) = target_l4 {
                    if !(*t > 0.0) || !t.is_finite() {
                        return schema(format!("target_l4 {t} must be positive"));
                    }
                    if amp == 0.0 {
                        return schema("target_l4 needs nonzero initial data".into());
                    }
                }
            }
            Stage::Lift { lift, .. } => {
                lift.cutoff.validate().map_err(|e| LabError::Schema(e.to_string()))?;
                if !(lift.heat_band > 0.0) {
                    return schema("heat_band must be positive".into());
                }
            }
            Stage::MildSolve {
                max_iterations, tolerance, ..
            } => {
                if *max_iterations == 0 || !(*tolerance > 0.0) {
                    return schema("max_iterations and tolerance must be positive".into());
                }
            }
            Stage::EpsregRun { fields, pipeline, .. } => {
                if fields.is_empty() {
                    return schema("epsreg-run needs at least one field".into());
                }
                if pipeline.picard_max_iterations == 0 || !(pipeline.picard_tolerance > 0.0) {
                    return schema("Picard settings must be positive".into());
                }
            }
            Stage::ConstantsEstimate { samples } => {
                if *samples == 0 {
                    return schema("samples must be positive".into());
                }
            }
            Stage::Accept { counts } => {
                if counts.dns_fields == 0 || counts.wsu_runs == 0 || counts.epsreg_seeds == 0 || counts.constants_samples == 0 {
                    return schema("acceptance counts must be positive".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The configuration without its output directory, which does not
    /// affect any result.
    pub fn experiment(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("out");
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Digested {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
}

impl CheckRecord {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        CheckRecord {
            name: name.into(),
            passed: lhs <= rhs,
            lhs: Some(lhs),
            rhs: Some(rhs),
        }
    }

    fn flag(name: &str, passed: bool) -> Self {
        CheckRecord {
            name: name.into(),
            passed,
            lhs: None,
            rhs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub resolution: Resolution,
    /// The configuration minus the output directory.
    pub config: Value,
    pub config_sha256: String,
    pub inputs: Vec<Digested>,
    /// Snapshot, with provenance, of the table used by the checks.
    pub constants: Option<ConstantsTable>,
    pub checks: Vec<CheckRecord>,
    pub norms: BTreeMap<String, f64>,
    pub details: Value,
    pub artifacts: Vec<Digested>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Everything a stage produces before anything is written.
struct StageOutput {
    artifacts: Vec<(String, Vec<u8>)>,
    constants: Option<ConstantsTable>,
    checks: Vec<CheckRecord>,
    norms: BTreeMap<String, f64>,
    details: Value,
    log: Vec<String>,
}

impl StageOutput {
    fn new() -> Self {
        StageOutput {
            artifacts: Vec::new(),
            constants: None,
            checks: Vec::new(),
            norms: BTreeMap::new(),
            details: Value::Null,
            log: Vec::new(),
        }
    }

    fn norm(&mut self, name: &str, v: f64) {
        self.norms.insert(name.into(), v);
    }
}

/// Result of a run: the report plus human-readable progress lines.
pub struct RunOutcome {
    pub report: RunReport,
    pub log: Vec<String>,
    pub seconds: f64,
}

/// Executes the configured stage and writes `report.json`, `timings.json`
/// and the stage artifacts under `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut inputs = Vec::new();
    for p in cfg.stage.inputs() {
        let bytes = std::fs::read(p).map_err(|e| LabError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
        inputs.push(Digested {
            name: p.display().to_string(),
            sha256: nsf::digest(&bytes),
        });
    }
    let res = cfg.resolution.resolve();
    let stage = cfg.stage.name();
    let out = run_stage(cfg, &res).map_err(|e| e.in_stage(stage))?;
    let seconds = start.elapsed().as_secs_f64();
    let experiment = cfg.experiment()?;
    let canonical = serde_json::to_string(&experiment)?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        command: stage.into(),
        seed: cfg.seed,
        resolution: res,
        config: experiment,
        config_sha256: nsf::digest(canonical.as_bytes()),
        inputs,
        constants: out.constants,
        checks: out.checks,
        norms: out.norms,
        details: out.details,
        artifacts: out
            .artifacts
            .iter()
            .map(|(name, bytes)| Digested {
                name: name.clone(),
                sha256: nsf::digest(bytes),
            })
            .collect(),
    };
    std::fs::create_dir_all(&cfg.out)?;
    for (name, bytes) in &out.artifacts {
        nsf::write_atomic(&cfg.out.join(name), bytes)?;
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    nsf::write_atomic(&cfg.out.join("report.json"), text.as_bytes())?;
    let timings = serde_json::to_string_pretty(&json!({ "command": stage, "seconds": seconds }))?;
    nsf::write_atomic(&cfg.out.join("timings.json"), timings.as_bytes())?;
    Ok(RunOutcome {
        report,
        log: out.log,
        seconds,
    })
}

/// Caps the worker pool at `NSE_LAB_THREADS` when set. Call once, before
/// any parallel work.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(v) = std::env::var("NSE_LAB_THREADS") else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| LabError::Schema(format!("NSE_LAB_THREADS `{v}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LabError::Parameter(format!("thread pool: {e}")))?;
    Ok(Some(n))
}

fn read_field(p: &Path) -> Result<SpaceTimeField> {
    match nsf::read_file(p)? {
        NsfData::Field(u) => Ok(u),
        NsfData::Trace(_) => Err(LabError::Format(format!("{}: expected a volume field", p.display()))),
    }
}

fn read_trace(p: &Path) -> Result<SphereTrace> {
    match nsf::read_file(p)? {
        NsfData::Trace(a) => Ok(a),
        NsfData::Field(_) => Err(LabError::Format(format!("{}: expected a sphere trace", p.display()))),
    }
}

fn load_constants(path: &Option<PathBuf>, res: &Resolution, seed: u64) -> Result<ConstantsTable> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| LabError::Schema(format!("{}: {e}", p.display())))
        }
        None => estimate_constants(&constants_config(res, seed, default_samples())),
    }
}

fn critical(u: &SpaceTimeField) -> Result<f64> {
    mixed_norm(u, &NormSpec::critical(NormDomain::Full))
}

fn run_stage(cfg: &ExperimentConfig, res: &Resolution) -> Result<StageOutput> {
    let mut o = StageOutput::new();
    match &cfg.stage {
        Stage::DnsGenerate { initial, target_l4 } => {
            let dc = res.dns(*initial, cfg.seed);
            let (run, rounds) = match target_l4 {
                Some(t) => {
                    let tr = generate_with_target(&dc, *t)?;
                    o.checks.push(CheckRecord::le("target L4 met", tr.relative_error, 1e-3));
                    (tr.run, Some(tr.rounds))
                }
                None => (generate_solution(&dc)?, None),
            };
            o.norm("l4_q1", run.l4_norm);
            o.norm("energy_m", run.energy.m);
            o.norm("critical", critical(&run.field)?);
            o.details = json!({ "dns": run.config, "energy": run.energy, "target_rounds": rounds });
            o.log.push(format!("||U||_L4(Q1) = {:.6e}, M = {:.6e}, {} steps", run.l4_norm, run.energy.m, run.energy.steps));
            o.artifacts.push(("field.nsf".into(), nsf::encode_field(&run.field)?));
        }
        Stage::Slice { field } => {
            let u = read_field(field)?;
            let s = build_slice(&u)?;
            let lim = 4.0 * 1.05;
            o.checks.push(CheckRecord::le("radius certificate", s.shell_factor(), lim));
            o.checks.push(CheckRecord::le("time certificate", s.time_factor(), lim));
            o.checks.push(CheckRecord::le("kappa / ||U||_L4", s.kappa_factor(), 2.0 * SQRT_2 * 1.05));
            o.norm("kappa", s.kappa);
            o.norm("a_l4", s.a_l4);
            o.norm("b_l4", s.b_l4);
            o.details = serde_json::to_value(&s)?;
            o.log.push(format!("r0 = {:.4}, t0 = {:.4}, kappa = {:.6e}", s.r0, s.t0, s.kappa));
            // The window from t0 on; its first frame is the initial datum.
            let window = u.from_time(s.t0)?;
            o.artifacts.push(("boundary.nsf".into(), nsf::encode_trace(&s.a)?));
            o.artifacts.push(("initial.nsf".into(), nsf::encode_field(&window)?));
        }
        Stage::Lift { field, lift } => {
            let u = read_field(field)?;
            let s = build_slice(&u).map_err(|e| e.in_stage("slicing"))?;
            let g = Arc::new(u.grid.ball()?.with_radius(s.r0));
            let basis = eigen_decompose(&g)?;
            let l = linear_lift(&basis, &s.a, &s.b, lift)?;
            o.checks.push(CheckRecord::le("heat lift flux", l.report.lift.max_flux, 1e-8));
            o.norm("ubar_critical", l.report.ubar_norm);
            o.norm("lift_ratio", l.report.ratio);
            o.details = json!({ "slice": s, "lift": l.report });
            o.log.push(format!("||Ubar|| = {:.6e}, ratio {:.4}", l.report.ubar_norm, l.report.ratio));
            o.artifacts.push(("ubar.nsf".into(), nsf::encode_field(&l.ubar)?));
        }
        Stage::StokesSolve { boundary, initial } => {
            let a = read_trace(boundary)?;
            let g = Arc::new(BallGrid::new(a.sphere.l_max(), res.n_radial, a.radius)?);
            if g.sphere().n_theta() != a.sphere.n_theta() || g.sphere().n_phi() != a.sphere.n_phi() {
                return Err(LabError::Compatibility("boundary sphere does not match the ball grid of its degree".into()));
            }
            let basis = eigen_decompose(&g)?;
            let times = a.time_nodes.clone();
            let bd = BoundaryData::new(a)?;
            let b0 = match initial {
                Some(p) => {
                    let u = read_field(p)?.resample(&g)?;
                    Some(VectorField::new(Grid::Ball(g.clone()), u.frames[0].clone())?)
                }
                None => None,
            };
            let sol = veryweak_solve(&basis, &times, Some(&bd), None, b0.as_ref())?;
            o.norm("critical", critical(&sol.field)?);
            o.norm("flux_removed", bd.flux_removed);
            o.details = json!({ "modes": basis.len(), "radius": g.radius(), "time_nodes": times.len() });
            o.artifacts.push(("solution.nsf".into(), nsf::encode_field(&sol.field)?));
        }
        Stage::MildSolve {
            ubar,
            constants,
            max_iterations,
            tolerance,
        } => {
            let u = read_field(ubar)?;
            let table = load_constants(constants, res, cfg.seed)?;
            let basis = eigen_decompose(u.grid.ball()?)?;
            let mut pc = table.picard_config();
            pc.max_iterations = *max_iterations;
            pc.tolerance = *tolerance;
            let p = picard_iterate(&u, &pc, &basis)?;
            let last = p.residuals.last().copied().unwrap_or(0.0);
            o.checks.push(CheckRecord::le("final residual", last, *tolerance));
            o.checks.push(CheckRecord::le("||V|| <= 4 C0 ||Ubar||^2 (1.1)", p.v_norm, p.bound * 1.1));
            o.norm("v_critical", p.v_norm);
            o.norm("ubar_critical", p.ubar_norm);
            o.details = serde_json::to_value(p.summary())?;
            o.log.push(format!("{} iterations, contraction {:.3}", p.iterations, p.contraction));
            o.constants = Some(table);
            o.artifacts.push(("v.nsf".into(), nsf::encode_field(&p.v)?));
        }
        Stage::EpsregRun {
            fields,
            constants,
            pipeline,
        } => {
            let table = load_constants(constants, res, cfg.seed)?;
            let mut rows = Vec::new();
            let mut csv = String::from("field,gated,epsilon,m,kappa,critical_norm,l6_half,sup_quarter,agreement,passed\n");
            let mut pts = Vec::new();
            for (i, p) in fields.iter().enumerate() {
                let u = read_field(p)?;
                match epsreg_pipeline(&u, &table, pipeline) {
                    Ok(r) => {
                        for c in &r.checks {
                            o.checks.push(CheckRecord {
                                name: format!("field {i}: {}", c.name),
                                passed: c.passed,
                                lhs: Some(c.lhs),
                                rhs: Some(c.rhs),
                            });
                        }
                        csv.push_str(&format!(
                            "{i},true,{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                            r.epsilon,
                            r.m,
                            r.kappa,
                            r.critical_norm,
                            r.l6_norm_half,
                            r.sup_norm_quarter,
                            r.decomposition.agreement,
                            r.passed()
                        ));
                        o.log.push(format!("field {i}: eps {:.4e}, passed {}", r.epsilon, r.passed()));
                        pts.push((r.epsilon, r.m, r.sup_norm_quarter));
                        rows.push(serde_json::to_value(&r)?);
                    }
                    Err(LabError::Smallness { gate, measured, threshold }) => {
                        csv.push_str(&format!("{i},false,{measured:e},,,,,,,\n"));
                        o.log.push(format!("field {i}: not gated ({gate}: {measured:.4e} >= {threshold:.4e})"));
                        rows.push(json!({ "gated": false, "gate": gate, "measured": measured, "threshold": threshold }));
                    }
                    Err(e) => return Err(e),
                }
            }
            let envelope = if pts.is_empty() { None } else { Some(fit_envelope(&pts)?) };
            o.norm("eps_bar", table.eps_bar());
            o.norm("kappa_bar", table.kappa_bar());
            o.details = json!({ "runs": rows, "envelope": envelope });
            o.constants = Some(table);
            o.artifacts.push(("epsreg.csv".into(), csv.into_bytes()));
        }
        Stage::ConstantsEstimate { samples } => {
            let table = estimate_constants(&constants_config(res, cfg.seed, *samples))?;
            for (k, v) in [
                ("c0", table.c0),
                ("c1", table.c1),
                ("k", table.k),
                ("eta_bar", table.eta_bar),
                ("c2", table.c2()),
                ("kappa_bar", table.kappa_bar()),
                ("c_thm", table.c_thm()),
                ("eps_bar", table.eps_bar()),
            ] {
                o.norm(k, v);
            }
            o.log.push(format!("C0 {:.4}, C1 {:.4}, K {:.4}, eta_bar {:.4}", table.c0, table.c1, table.k, table.eta_bar));
            let mut text = serde_json::to_string_pretty(&table)?;
            text.push('\n');
            o.artifacts.push(("constants.json".into(), text.into_bytes()));
            o.constants = Some(table);
        }
        Stage::Accept { counts } => {
            let mut ac = AcceptanceConfig::new(*res, cfg.seed);
            ac.counts = *counts;
            let suite = Suite::new(ac);
            let outcomes: Vec<_> = (1..=10)
                .map(|id| {
                    let c = suite.run(id);
                    eprintln!("{}", c.line());
                    c
                })
                .collect();
            for c in &outcomes {
                o.checks.push(CheckRecord::flag(&format!("criterion {}: {}", c.id, c.title), c.passed));
                o.log.push(c.line());
            }
            o.constants = suite.table(0).ok();
            o.details = json!({ "acceptance": ac, "criteria": outcomes });
        }
    }
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_schema_rejects_unknown_keys_and_bad_values() {
        let ok = r#"{"seed": 3, "resolution": "small", "stage": {"dns-generate": {"initial": {"kind": "taylor_green", "amplitude": 0.5}}}}"#;
        let cfg = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(cfg.out, PathBuf::from("out"));
        assert_eq!(cfg.stage.name(), "dns-generate");
        let custom = r#"{"resolution": {"custom": {"torus_n": 16, "l_max": 6, "n_radial": 16, "n_frames": 16, "dt": 0.05}}, "stage": {"accept": {}}}"#;
        assert!(ExperimentConfig::from_json(custom).is_ok());
        for bad in [
            r#"{"seed": 3, "stage": {"dns-generate": {"initial": {"kind": "zero"}}}, "extra": 1}"#,
            r#"{"stage": {"slice": {"field": "a", "radius": 1}}}"#,
            r#"{"stage": {"constants-estimate": {"samples": 0}}}"#,
            r#"{"resolution": "huge", "stage": {"accept": {}}}"#,
            r#"{"stage": {"dns-generate": {"initial": {"kind": "zero"}, "target_l4": 0.1}}}"#,
            r#"{"resolution": {"custom": {"torus_n": 7, "l_max": 6, "n_radial": 16, "n_frames": 16, "dt": 0.05}}, "stage": {"accept": {}}}"#,
            "not json",
        ] {
            let e = ExperimentConfig::from_json(bad).unwrap_err();
            assert!(matches!(e, LabError::Schema(_)), "{bad}: {e}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn resolution_choice_parses_presets_and_objects() {
        assert_eq!(ResolutionChoice::parse("medium").unwrap().resolve(), presets::MEDIUM);
        let c = ResolutionChoice::parse(r#"{"torus_n": 16, "l_max": 6, "n_radial": 16, "n_frames": 16, "dt": 0.05}"#).unwrap();
        assert_eq!(c.resolve().l_max, 6);
        assert!(ResolutionChoice::parse("large").is_err());
    }

    #[test]
    fn missing_inputs_fail_before_any_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(Stage::Slice {
            field: dir.path().join("absent.nsf"),
        });
        cfg.out = dir.path().join("out");
        assert!(run(&cfg).is_err());
        assert!(!cfg.out.exists());
    }
}
