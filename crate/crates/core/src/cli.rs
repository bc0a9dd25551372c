//! Command-line front end: `build`, `modify`, `export-values`, `simulate`,
//! `inspect`.
//!
//! Every setting can come from a TOML file (`--config`) with the same
//! snake_case keys as the long flags; flags win over the file.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::builder::{build, BuildConfig, StopCriterion};
use crate::controller::{fmt_num, simulate, ControlSearchConfig, Fallback, InterpConfig, SimulateConfig};
use crate::dynamics::{IntegratorConfig, SystemDef};
use crate::error::Error;
use crate::graph::{self, Store, StoreConfig, StoreMeta};
use crate::rewire::{load_constraints, modify, ConstraintSet};
use crate::systems::{self, PendulumConfig, SingleIntegratorConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// The command ran but failed (e.g. a simulation diverged).
    pub const RUNTIME: i32 = 1;
    /// Bad command line; emitted by the argument parser.
    pub const USAGE: i32 = 2;
    /// Invalid or inconsistent configuration values.
    pub const CONFIG: i32 = 3;
    /// An input file does not exist.
    pub const MISSING_FILE: i32 = 4;
    /// An input file exists but cannot be parsed or has the wrong schema.
    pub const MALFORMED: i32 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "valuetree", version, about = "Sampled value-function stores for optimal control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow a store backward from the terminal state.
    Build(BuildArgs),
    /// Apply a constraint file to a store and rebuild its tree.
    Modify(ModifyArgs),
    /// Write one CSV row per vertex: state components and cost-to-go.
    ExportValues(ExportArgs),
    /// Run the interpolating controller in closed loop.
    Simulate(SimulateArgs),
    /// Print store statistics.
    Inspect(InspectArgs),
}

/// Settings shared by the commands. Unset values fall back to the config
/// file, then to per-system defaults.
#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `single_integrator`, `pendulum` or `mlp:<weights.json>` [default: single_integrator]
    #[arg(long)]
    pub system: Option<String>,
    /// RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for reports [default: .]
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Control box half-width [default: 1 (single_integrator), 4 (pendulum, mlp)]
    #[arg(long)]
    pub control_limit: Option<f64>,
    /// Pendulum angular-velocity half-width [default: 4]
    #[arg(long)]
    pub velocity_limit: Option<f64>,
    /// Single-integrator state box half-width [default: 5]
    #[arg(long)]
    pub state_limit: Option<f64>,
    /// Macro step [default: 0.5 (single_integrator), 0.1 (pendulum, mlp)]
    #[arg(long)]
    pub step_dt: Option<f64>,
    /// Integration substep [default: step_dt / 10]
    #[arg(long)]
    pub sub_dt: Option<f64>,
    /// Edge feasibility tolerance [default: 0.001 (single_integrator), 0.03 (pendulum, mlp)]
    #[arg(long)]
    pub eps_connect: Option<f64>,
    /// Stop once the store holds this many vertices [default: 1000]
    #[arg(long)]
    pub max_vertices: Option<usize>,
    /// Stop after this much wall time instead of a vertex count
    #[arg(long)]
    pub max_seconds: Option<f64>,
    /// Backward control samples per expansion [default: 8]
    #[arg(long)]
    pub controls_per_expand: Option<usize>,
    /// Parent candidates per new vertex [default: 10]
    #[arg(long)]
    pub k_parents: Option<usize>,
    /// Child candidates per new vertex [default: 10]
    #[arg(long)]
    pub k_children: Option<usize>,
    /// Candidate screening factor; negative disables screening [default: 2]
    #[arg(long, allow_hyphen_values = true)]
    pub screen_factor: Option<f64>,
    /// Constraint file applied by `modify` (and after `build`)
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Vertices targeted inside the interpolation kernel [default: 10]
    #[arg(long)]
    pub support_neighbors: Option<usize>,
    /// Explicit kernel sharpness; overrides support_neighbors
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `nearest` or `reject` when the kernel covers no finite vertex [default: nearest]
    #[arg(long)]
    pub fallback: Option<String>,
    /// Simulation steps [default: 600]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Goal-region radius [default: 0.05]
    #[arg(long)]
    pub goal_tol: Option<f64>,
    /// Steps the state must stay in the goal region to count as stabilized [default: 50]
    #[arg(long)]
    pub min_dwell: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.clone().or_else(|| $base.$f.clone())),* }
    };
}

impl RunConfig {
    /// `top` wins field by field.
    pub fn merged(&self, top: &RunConfig) -> RunConfig {
        overlay!(
            self, top, system, seed, output_dir, control_limit, velocity_limit, state_limit, step_dt, sub_dt,
            eps_connect, max_vertices, max_seconds, controls_per_expand, k_parents, k_children, screen_factor,
            constraints, support_neighbors, gamma, fallback, horizon, goal_tol, min_dwell
        )
    }

    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()).into());
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())).into())
    }

    /// Config file (if any) overlaid with the flags.
    pub fn resolve(file: Option<&Path>, flags: &RunConfig) -> anyhow::Result<RunConfig> {
        match file {
            Some(p) => Ok(RunConfig::load(p)?.merged(flags)),
            None => Ok(flags.clone()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Hex SHA-256 of the canonical JSON of this config.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    SingleIntegrator,
    Pendulum,
    Mlp,
}

/// Everything needed to rebuild a system; stored in the store header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
    pub control_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_dt: Option<f64>,
}

impl SystemSpec {
    /// Parses a selector and fills in limits from `cfg`.
    pub fn from_selector(selector: &str, cfg: &RunConfig) -> anyhow::Result<SystemSpec> {
        let (kind, weights) = match selector {
            "single_integrator" => (SystemKind::SingleIntegrator, None),
            "pendulum" => (SystemKind::Pendulum, None),
            s => match s.strip_prefix("mlp:") {
                Some(p) if !p.is_empty() => (SystemKind::Mlp, Some(PathBuf::from(p))),
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown system `{s}` (expected single_integrator, pendulum or mlp:<path>)"
                    ))
                    .into())
                }
            },
        };
        let weights_sha256 = match &weights {
            Some(p) => Some(file_sha256(p)?),
            None => None,
        };
        let spec = match kind {
            SystemKind::SingleIntegrator => {
                let d = SingleIntegratorConfig::default();
                SystemSpec {
                    kind,
                    weights,
                    weights_sha256,
                    control_limit: cfg.control_limit.unwrap_or(d.control_limit),
                    velocity_limit: None,
                    state_limit: Some(cfg.state_limit.unwrap_or(d.state_limit)),
                    step_dt: Some(cfg.step_dt.unwrap_or(d.step_dt)),
                }
            }
            _ => {
                let d = PendulumConfig::default();
                SystemSpec {
                    kind,
                    weights,
                    weights_sha256,
                    control_limit: cfg.control_limit.unwrap_or(d.control_limit),
                    velocity_limit: Some(cfg.velocity_limit.unwrap_or(d.velocity_limit)),
                    state_limit: None,
                    step_dt: None,
                }
            }
        };
        Ok(spec)
    }

    /// The same limits on a different vector field.
    pub fn with_selector(&self, selector: &str) -> anyhow::Result<SystemSpec> {
        let cfg = RunConfig {
            control_limit: Some(self.control_limit),
            velocity_limit: self.velocity_limit,
            state_limit: self.state_limit,
            step_dt: self.step_dt,
            ..Default::default()
        };
        SystemSpec::from_selector(selector, &cfg)
    }

    pub fn system(&self) -> anyhow::Result<SystemDef> {
        Ok(match self.kind {
            SystemKind::SingleIntegrator => systems::single_integrator(&SingleIntegratorConfig {
                state_limit: self.state_limit.unwrap_or(5.0),
                control_limit: self.control_limit,
                step_dt: self.step_dt.unwrap_or(0.5),
            }),
            SystemKind::Pendulum => systems::pendulum_with(&self.pendulum_config())?,
            SystemKind::Mlp => {
                let path = self.weights.as_ref().ok_or_else(|| anyhow!("mlp system without a weight file"))?;
                let model = systems::load_mlp(path)?;
                if let Some(want) = &self.weights_sha256 {
                    if &file_sha256(path)? != want {
                        return Err(Error::InvalidParameter(format!(
                            "weight file {} changed since the store was built",
                            path.display()
                        ))
                        .into());
                    }
                }
                systems::mlp_system_with(model, &self.pendulum_config())?
            }
        })
    }

    fn pendulum_config(&self) -> PendulumConfig {
        PendulumConfig {
            control_limit: self.control_limit,
            velocity_limit: self.velocity_limit.unwrap_or(PendulumConfig::default().velocity_limit),
        }
    }

    fn default_step(&self) -> f64 {
        match self.kind {
            SystemKind::SingleIntegrator => self.step_dt.unwrap_or(0.5),
            _ => 0.1,
        }
    }

    fn default_eps(&self) -> f64 {
        match self.kind {
            SystemKind::SingleIntegrator => 1e-3,
            _ => 0.03,
        }
    }

    pub fn from_store(store: &Store) -> anyhow::Result<SystemSpec> {
        serde_json::from_value(store.meta().system_params.clone()).map_err(|e| {
            Error::Schema(format!(
                "store header does not describe a known system ({}): {e}",
                store.meta().system_name
            ))
            .into()
        })
    }
}

fn file_sha256(path: &Path) -> anyhow::Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
    /// Store file to write [default: <output-dir>/store.json]
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModifyArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
    /// Store to modify
    #[arg(long)]
    pub store: PathBuf,
    /// Write the result here instead of in place
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Also emit vertices with infinite cost-to-go, flagged in a `finite` column
    #[arg(long)]
    pub include_infinite: bool,
    /// Emit extra copies shifted by ±2π along each angular axis
    #[arg(long)]
    pub replicate: bool,
    /// CSV file to write [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long)]
    pub store: PathBuf,
    /// Initial state, comma separated; `pi` and `-pi` are accepted
    #[arg(long, allow_hyphen_values = true)]
    pub x0: String,
    /// System the store was built on [default: the store's system]
    #[arg(long)]
    pub plan_system: Option<String>,
    /// System that is actually integrated [default: the plan system]
    #[arg(long)]
    pub exec_system: Option<String>,
    /// Trajectory CSV [default: <output-dir>/trajectory.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub store: PathBuf,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Build(a) => cmd_build(&a, &mut stdout),
        Command::Modify(a) => cmd_modify(&a, &mut stdout),
        Command::ExportValues(a) => cmd_export_values(&a, &mut stdout),
        Command::Simulate(a) => cmd_simulate(&a, &mut stdout),
        Command::Inspect(a) => cmd_inspect(&a, &mut stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Maps an error to its exit code.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::MissingFile(_) => exit::MISSING_FILE,
                Error::Schema(_) | Error::CorruptFile(_) | Error::DimensionChain(_) | Error::VersionMismatch { .. } => {
                    exit::MALFORMED
                }
                Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::OutOfBounds { .. } => {
                    exit::CONFIG
                }
                _ => exit::RUNTIME,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return exit::MISSING_FILE;
            }
        }
    }
    exit::RUNTIME
}

/// A JSON number rounded to nine significant digits; non-finite values
/// become strings.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(fmt_num(v).parse::<f64>().unwrap_or(v))
    } else {
        json!(fmt_num(v))
    }
}

fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn write_report(dir: &Path, name: &str, report: &Value, out: &mut dyn Write) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let text = serde_json::to_string_pretty(report)? + "\n";
    std::fs::write(dir.join(name), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn load_store(path: &Path) -> anyhow::Result<Store> {
    graph::deserialize(path).with_context(|| format!("reading store {}", path.display()))
}

fn cost_stats(store: &Store) -> Value {
    let mut finite: Vec<f64> = store.cost_to_go_all().into_iter().filter(|j| j.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let (min, median, max, mean) = if finite.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = finite.iter().sum::<f64>() / finite.len() as f64;
        (finite[0], finite[finite.len() / 2], finite[finite.len() - 1], mean)
    };
    json!({
        "finite": finite.len(),
        "infinite": store.len() - finite.len(),
        "min": num(min),
        "median": num(median),
        "max": num(max),
        "mean": num(mean),
    })
}

fn build_config(cfg: &RunConfig) -> BuildConfig {
    let d = BuildConfig::default();
    let stop = match (cfg.max_seconds, cfg.max_vertices) {
        (Some(s), None) => StopCriterion::MaxSeconds(s),
        (_, Some(n)) => StopCriterion::MaxVertices(n),
        (None, None) => d.stop.clone(),
    };
    BuildConfig {
        stop,
        controls_per_expand: cfg.controls_per_expand.unwrap_or(d.controls_per_expand),
        k_parents: cfg.k_parents.unwrap_or(d.k_parents),
        k_children: cfg.k_children.unwrap_or(d.k_children),
        rng_seed: cfg.seed(),
        screen_factor: match cfg.screen_factor {
            Some(f) if f < 0.0 => None,
            Some(f) => Some(f),
            None => d.screen_factor,
        },
        ..d
    }
}

fn constraints_for(cfg: &RunConfig) -> anyhow::Result<Option<ConstraintSet>> {
    match &cfg.constraints {
        Some(p) => Ok(Some(
            load_constraints(p).with_context(|| format!("reading constraints {}", p.display()))?,
        )),
        None => Ok(None),
    }
}

pub fn cmd_build(args: &BuildArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.run)?;
    let spec = SystemSpec::from_selector(cfg.system.as_deref().unwrap_or("single_integrator"), &cfg)?;
    let sys = spec.system()?;
    let step = cfg.step_dt.unwrap_or(spec.default_step());
    let integrator = match cfg.sub_dt {
        Some(sub) => IntegratorConfig::new(step, sub)?,
        None => IntegratorConfig::with_step(step),
    };
    integrator.validate()?;
    let mut store_cfg = StoreConfig::new(integrator);
    store_cfg.eps_connect = cfg.eps_connect.unwrap_or(spec.default_eps());
    if !(store_cfg.eps_connect > 0.0) {
        bail!(Error::InvalidParameter("eps_connect must be positive".into()));
    }
    let bcfg = build_config(&cfg);
    bcfg.validate(&sys)?;
    let constraints = constraints_for(&cfg)?;

    let mut store = Store::new(&sys, store_cfg);
    store.set_meta(StoreMeta {
        system_name: sys.name.clone(),
        system_params: serde_json::to_value(&spec)?,
    });
    let report = build(&mut store, &sys, &bcfg)?;
    let modified = match &constraints {
        Some(cs) => Some(modify(&mut store, &sys, cs)?),
        None => None,
    };

    let dir = cfg.output_dir();
    let store_path = args.store.clone().unwrap_or_else(|| dir.join("store.json"));
    if let Some(parent) = store_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    graph::serialize(&store, &store_path)?;

    let mut doc = json!({
        "command": "build",
        "seed": cfg.seed(),
        "config_hash": cfg.hash(),
        "system": sys.name,
        "store": store_path,
        "vertices": store.len(),
        "edges": store.edge_count(),
        "iterations": report.iterations,
        "rewires": report.rewires,
        "elapsed_secs": num(report.elapsed_secs),
        "cost_to_go": cost_stats(&store),
    });
    if let Some(m) = modified {
        doc["unreachable"] = json!(m.unreachable);
        doc["edges_infinite"] = json!(m.edges_infinite);
    }
    write_report(&dir, "build_report.json", &doc, out)?;
    Ok(exit::OK)
}

pub fn cmd_modify(args: &ModifyArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.run)?;
    let mut store = load_store(&args.store)?;
    let sys = SystemSpec::from_store(&store)?.system()?;
    let cs = constraints_for(&cfg)?.unwrap_or_default();
    let report = modify(&mut store, &sys, &cs)?;
    let target = args.out.clone().unwrap_or_else(|| args.store.clone());
    graph::serialize(&store, &target)?;
    let doc = json!({
        "command": "modify",
        "seed": cfg.seed(),
        "config_hash": cfg.hash(),
        "store": target,
        "constraints": cfg.constraints,
        "vertices": store.len(),
        "edges_infinite": report.edges_infinite,
        "reachable": report.reachable,
        "unreachable": report.unreachable,
        "sweeps": report.sweeps,
        "elapsed_secs": num(report.elapsed_secs),
        "cost_to_go": cost_stats(&store),
    });
    write_report(&cfg.output_dir(), "modify_report.json", &doc, out)?;
    Ok(exit::OK)
}

/// Writes the value table for `store`.
pub fn export_values<W: Write>(store: &Store, include_infinite: bool, replicate: bool, mut w: W) -> anyhow::Result<()> {
    let n = store.space().dim();
    let mut header: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    header.push("J".into());
    if include_infinite {
        header.push("finite".into());
    }
    writeln!(w, "{}", header.join(","))?;

    let wrapped: Vec<usize> = (0..n).filter(|&i| replicate && store.space().wrap[i]).collect();
    let shifts = 3usize.pow(wrapped.len() as u32);
    let tau = 2.0 * std::f64::consts::PI;
    for v in store.vertices() {
        let j = v.cost_to_go;
        if !j.is_finite() && !include_infinite {
            continue;
        }
        for s in 0..shifts {
            let mut x = v.state.to_vec();
            let mut code = s;
            for &axis in &wrapped {
                // 0, +2π, -2π so the unshifted copy comes first
                x[axis] += match code % 3 {
                    0 => 0.0,
                    1 => tau,
                    _ => -tau,
                };
                code /= 3;
            }
            let mut row: Vec<String> = x.iter().map(|&c| fmt_num(c)).collect();
            row.push(fmt_num(j));
            if include_infinite {
                row.push(if j.is_finite() { "1" } else { "0" }.into());
            }
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn cmd_export_values(args: &ExportArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let store = load_store(&args.store)?;
    match &args.out {
        Some(p) => {
            let file = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = std::io::BufWriter::new(file);
            export_values(&store, args.include_infinite, args.replicate, &mut w)?;
            w.flush()?;
        }
        None => export_values(&store, args.include_infinite, args.replicate, out)?,
    }
    Ok(exit::OK)
}

/// Parses `"a,b,..."`; `pi` and `-pi` stand for ±π.
pub fn parse_state(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            match t {
                "pi" => Ok(std::f64::consts::PI),
                "-pi" => Ok(-std::f64::consts::PI),
                _ => t
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidParameter(format!("bad state component `{t}`")).into()),
            }
        })
        .collect()
}

fn interp_config(cfg: &RunConfig, store: &Store) -> anyhow::Result<InterpConfig> {
    let fallback = match cfg.fallback.as_deref() {
        None | Some("nearest") => Fallback::Nearest,
        Some("reject") => Fallback::Reject,
        Some(f) => bail!(Error::InvalidParameter(format!("unknown fallback `{f}`"))),
    };
    let mut icfg = match cfg.gamma {
        Some(g) => InterpConfig::new(g)?,
        None => InterpConfig::for_store(store, cfg.support_neighbors.unwrap_or(10))?,
    };
    icfg.fallback = fallback;
    Ok(icfg)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.run)?;
    let store = load_store(&args.store)?;
    let built_on = SystemSpec::from_store(&store)?;
    let plan_spec = match &args.plan_system {
        Some(sel) => {
            let spec = built_on.with_selector(sel)?;
            if spec.kind != built_on.kind || spec.weights_sha256 != built_on.weights_sha256 {
                bail!(Error::InvalidParameter(format!(
                    "plan system `{sel}` is not the system the store was built on ({})",
                    store.meta().system_name
                )));
            }
            spec
        }
        None => built_on.clone(),
    };
    let exec_spec = match &args.exec_system {
        Some(sel) => built_on.with_selector(sel)?,
        None => plan_spec.clone(),
    };
    let plan = plan_spec.system()?;
    let exec = exec_spec.system()?;
    let x0 = parse_state(&args.x0)?;
    exec.check_state(&x0)?;

    let d = SimulateConfig::default();
    let sim = SimulateConfig {
        horizon: cfg.horizon.unwrap_or(d.horizon),
        goal_tol: cfg.goal_tol.unwrap_or(d.goal_tol),
        min_dwell: cfg.min_dwell.unwrap_or(d.min_dwell),
        ..d
    };
    let icfg = interp_config(&cfg, &store)?;
    let traj = simulate(&store, &plan, &exec, &icfg, &ControlSearchConfig::default(), &sim, &x0)?;

    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    let csv = args.out.clone().unwrap_or_else(|| dir.join("trajectory.csv"));
    traj.save_csv(&csv)?;
    let (mean, std) = traj.compute_stats();
    let doc = json!({
        "command": "simulate",
        "seed": cfg.seed(),
        "config_hash": cfg.hash(),
        "plan_system": plan.name,
        "exec_system": exec.name,
        "x0": nums(&x0),
        "horizon": sim.horizon,
        "gamma": num(icfg.gamma),
        "steps": traj.controls.len(),
        "total_cost": num(traj.total_cost),
        "steps_to_goal": traj.steps_to_goal,
        "settle_step": traj.settle_step,
        "stabilized": traj.stabilized,
        "final_state": nums(traj.final_state().as_slice()),
        "failure": traj.failure,
        "compute_mean_secs": num(mean),
        "compute_std_secs": num(std),
        "trajectory": csv,
    });
    write_report(&dir, "simulate_summary.json", &doc, out)?;
    Ok(if traj.failure.is_some() { exit::RUNTIME } else { exit::OK })
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let store = load_store(&args.store)?;
    let cfg = store.config();
    let stats = cost_stats(&store);
    let root = store.root();
    writeln!(out, "system: {}", store.meta().system_name)?;
    writeln!(out, "vertices: {}", store.len())?;
    writeln!(out, "edges: {}", store.edge_count())?;
    writeln!(out, "root: {} at {:?}", root.0, store.state(root).as_slice())?;
    writeln!(out, "step_dt: {}", fmt_num(cfg.integrator.step_dt))?;
    writeln!(out, "sub_dt: {}", fmt_num(cfg.integrator.sub_dt))?;
    writeln!(out, "eps_connect: {}", fmt_num(cfg.eps_connect))?;
    writeln!(out, "finite: {}", stats["finite"])?;
    writeln!(out, "infinite: {}", stats["infinite"])?;
    for key in ["min", "median", "max", "mean"] {
        let v = stats[key].as_f64().unwrap_or(f64::NAN);
        writeln!(out, "J_{key}: {}", fmt_num(v))?;
    }
    let invariants = match store.check_invariants(None) {
        Ok(()) => "ok".to_string(),
        Err(e) => e,
    };
    writeln!(out, "invariants: {invariants}")?;
    Ok(exit::OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig {
            system: Some("pendulum".into()),
            seed: Some(3),
            max_vertices: Some(100),
            ..Default::default()
        };
        let flags = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let m = file.merged(&flags);
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.system.as_deref(), Some("pendulum"));
        assert_eq!(m.max_vertices, Some(100));
    }

    #[test]
    fn toml_keys_match_flag_names() {
        let cfg: RunConfig = toml::from_str("system = \"pendulum\"\nmax_vertices = 50\ngoal_tol = 0.1\n").unwrap();
        assert_eq!(cfg.max_vertices, Some(50));
        assert!(toml::from_str::<RunConfig>("max_vertexes = 50\n").is_err());
    }

    #[test]
    fn hash_depends_on_every_field() {
        let a = RunConfig::default();
        let b = RunConfig {
            min_dwell: Some(1),
            ..Default::default()
        };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn state_parsing() {
        assert_eq!(parse_state("pi, -0.5").unwrap(), vec![std::f64::consts::PI, -0.5]);
        assert_eq!(parse_state("-pi").unwrap(), vec![-std::f64::consts::PI]);
        assert!(parse_state("1,x").is_err());
    }

    #[test]
    fn selectors() {
        let cfg = RunConfig::default();
        assert_eq!(SystemSpec::from_selector("pendulum", &cfg).unwrap().control_limit, 4.0);
        assert_eq!(SystemSpec::from_selector("single_integrator", &cfg).unwrap().control_limit, 1.0);
        let e = SystemSpec::from_selector("cartpole", &cfg).unwrap_err();
        assert_eq!(exit_code(&e), exit::CONFIG);
        let e = SystemSpec::from_selector("mlp:/nonexistent/w.json", &cfg).unwrap_err();
        assert_eq!(exit_code(&e), exit::MISSING_FILE);
    }

    #[test]
    fn report_numbers_have_nine_digits() {
        assert_eq!(num(1.0 / 3.0).to_string(), "0.333333333");
        assert_eq!(num(f64::INFINITY), json!("inf"));
    }

    #[test]
    fn replication_emits_shifted_copies() {
        let sys = systems::pendulum(4.0).unwrap();
        let store = Store::new(&sys, StoreConfig::new(IntegratorConfig::with_step(0.1)));
        let mut buf = Vec::new();
        export_values(&store, false, true, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x0,x1,J\n0,0,0\n6.28318531,0,0\n-6.28318531,0,0\n");
    }
}
