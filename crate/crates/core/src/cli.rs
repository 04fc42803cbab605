//! Command-line front end. The binary parses arguments and forwards here;
//! everything that decides exit codes lives in this module so it can be
//! tested without spawning processes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, ConfigFile, Resolved, MAX_SEED};
use crate::model::NodeId;
use crate::oracle::{GridStep, OracleError};
use crate::presets::{preset, PRESET_NAMES};
use crate::report;
use crate::reproduce::{reproduce, solve_oracle, ReproduceError};
use crate::sim::{run_with, CheckMode, RunOptions, SimError};

pub const SEED_ENV: &str = "OVERLOADNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "overloadnet", version, about = "Overload-resilient network control simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment in a config file and write its outputs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `run.output` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Check every invariant after every slot.
        #[arg(long, conflicts_with = "fast")]
        checked: bool,
        /// Check invariants periodically.
        #[arg(long)]
        fast: bool,
        /// Overrides the config seed and the environment.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the optimal throughput and its flow certificate.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Grid spacing for concave utilities, e.g. `1/120` or `0.05`.
        #[arg(long, default_value_t = GridStep::DEFAULT)]
        grid_step: GridStep,
    },
    /// Run a built-in preset and compare against published and optimal values.
    Reproduce {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a built-in preset as a config file.
    Export {
        #[arg(long)]
        preset: String,
    },
}

/// Process environment the commands depend on.
#[derive(Debug, Clone, Default)]
pub struct Context {
    /// Value of `OVERLOADNET_SEED`, if set.
    pub env_seed: Option<String>,
    #[doc(hidden)]
    pub options: RunOptions,
}

impl Context {
    pub fn from_env() -> Self {
        Self { env_seed: std::env::var(SEED_ENV).ok(), options: RunOptions::default() }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown preset {0:?}; expected one of {list}", list = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("{0}")]
    Usage(String),
    #[error("simulation aborted: {0}")]
    Invariant(SimError),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("preset {preset}: {failed} check(s) failed")]
    Verdict { preset: String, failed: usize },
}

impl CliError {
    /// 2 for bad input, 3 for a broken invariant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownPreset(_) | CliError::Usage(_) | CliError::Sim(_) => 2,
            CliError::Oracle(OracleError::GridTooLarge { .. }) => 2,
            CliError::Invariant(_) => 3,
            CliError::Oracle(_) | CliError::Io { .. } | CliError::Verdict { .. } => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invariant { .. } | SimError::Dynamics { .. } => CliError::Invariant(e),
            other => CliError::Sim(other),
        }
    }
}

impl From<ReproduceError> for CliError {
    fn from(e: ReproduceError) -> Self {
        match e {
            ReproduceError::Sim(s) => s.into(),
            ReproduceError::Oracle(o) => o.into(),
            ReproduceError::NoOptimum => CliError::Usage(e.to_string()),
        }
    }
}

/// What a successful command has to say on stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
}

/// Flag, then environment, then file.
fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: u64) -> Result<u64, CliError> {
    let seed = match (flag, env) {
        (Some(s), _) => s,
        (None, Some(e)) => e.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}={e:?} is not an unsigned integer")))?,
        (None, None) => file,
    };
    if seed > MAX_SEED {
        return Err(CliError::Usage(format!("seed {seed} exceeds {MAX_SEED}")));
    }
    Ok(seed)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

fn load(path: &Path) -> Result<Resolved, CliError> {
    let resolved = ConfigFile::load(path)?.resolve()?;
    for w in &resolved.warnings {
        log::warn!("{w}");
    }
    Ok(resolved)
}

pub fn execute(cli: Cli, ctx: &Context) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Simulate { config, output, checked, fast, seed } => simulate(&config, output, checked, fast, seed, ctx),
        Command::Oracle { config, grid_step } => oracle(&config, grid_step),
        Command::Reproduce { preset, output, seed } => reproduce_cmd(&preset, &output, seed, ctx),
        Command::Export { preset: name } => {
            let p = preset(&name).ok_or(CliError::UnknownPreset(name))?;
            let sweep = (p.vs.len() > 1).then(|| p.vs.clone());
            Ok(Outcome { stdout: ConfigFile::from_experiment(&p.config, sweep, None).to_toml() })
        }
    }
}

fn simulate(
    path: &Path,
    output: Option<PathBuf>,
    checked: bool,
    fast: bool,
    seed: Option<u64>,
    ctx: &Context,
) -> Result<Outcome, CliError> {
    let mut resolved = load(path)?;
    let exp = &mut resolved.experiment;
    exp.seed = resolve_seed(seed, ctx.env_seed.as_deref(), exp.seed)?;
    if checked {
        exp.check = CheckMode::Checked;
    } else if fast {
        exp.check = CheckMode::Fast;
    }
    let dir =
        output.or(resolved.output.clone()).ok_or_else(|| CliError::Usage("no output directory: pass --output or set run.output".into()))?;
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;

    let vs = resolved.vs();
    let runs = {
        use rayon::prelude::*;
        vs.par_iter()
            .map(|v| {
                let mut e = resolved.experiment.clone();
                e.policy = e.policy.with_v(*v);
                run_with(&e, &ctx.options)
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let exp = &resolved.experiment;
    let net = &exp.network;
    write(&dir, "summary.csv", &report::summary_csv(&runs, net))?;
    write(&dir, "metrics.toml", &report::metrics_toml(&runs, net))?;
    if !exp.intervals.is_empty() {
        write(&dir, "intervals.csv", &report::intervals_csv(&runs, net))?;
    }
    if exp.stride.is_some() {
        write(&dir, "timeseries.csv", &report::timeseries_csv(&runs, net))?;
    }
    let manifest = ConfigFile::from_experiment(exp, resolved.sweep.clone(), resolved.output.as_ref().map(|p| p.display().to_string()));
    write(&dir, "manifest.toml", &manifest.to_toml())?;

    let mut stdout = String::new();
    for r in &runs {
        let m = &r.metrics;
        writeln!(stdout, "V={} throughput={:?} objective={}", m.v, m.throughput, m.objective).unwrap();
    }
    writeln!(stdout, "wrote {}", dir.display()).unwrap();
    Ok(Outcome { stdout })
}

fn oracle(path: &Path, step: GridStep) -> Result<Outcome, CliError> {
    let resolved = load(path)?;
    let exp = &resolved.experiment;
    let net = &exp.network;
    let lambda = exp.schedule.mean_rates(net, 0, exp.horizon);
    let summary = solve_oracle(net, &lambda, step)?;

    // Re-solve through the module API to get the certificate itself.
    let cert = crate::oracle::region_membership(net, &lambda, &summary.r)?
        .ok_or_else(|| CliError::Usage("optimum failed re-verification".into()))?;
    let nc = net.num_classes();
    let t = &net.topology;
    let mut out = String::new();
    let ids: Vec<u32> = net.classes().iter().map(|c| c.id).collect();
    writeln!(out, "classes = {ids:?}").unwrap();
    writeln!(out, "r = {:?}", summary.r).unwrap();
    writeln!(out, "utility = {}", summary.value).unwrap();
    if let Some((step, indices, err)) = &summary.grid {
        writeln!(out, "grid_step = \"{step}\"\ngrid_indices = {indices:?}\ngrid_error = {err}").unwrap();
    }
    writeln!(out, "max_residual = {}", cert.max_residual(net, &lambda)).unwrap();
    writeln!(out, "\n[certificate]").unwrap();
    for (li, link) in t.links().iter().enumerate() {
        for (c, id) in ids.iter().enumerate() {
            let f = cert.f[li * nc + c];
            if f != 0.0 {
                writeln!(out, "flow {} -> {} class {id} = {f}", t.node_name(link.from), t.node_name(link.to)).unwrap();
            }
        }
    }
    for n in t.nodes() {
        for (c, id) in ids.iter().enumerate() {
            let q = cert.q[n.0 * nc + c];
            if q != 0.0 {
                writeln!(out, "overflow {} class {id} = {q}", t.node_name(NodeId(n.0))).unwrap();
            }
        }
    }
    Ok(Outcome { stdout: out })
}

fn reproduce_cmd(name: &str, dir: &Path, seed: Option<u64>, ctx: &Context) -> Result<Outcome, CliError> {
    let mut p = preset(name).ok_or_else(|| CliError::UnknownPreset(name.to_string()))?;
    p.config.seed = resolve_seed(seed, ctx.env_seed.as_deref(), p.config.seed)?;
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_owned(), source })?;
    let rep = reproduce(&p)?;
    let net = &p.config.network;
    write(dir, "comparison.csv", &rep.to_csv())?;
    write(dir, "summary.csv", &report::summary_csv(&rep.runs, net))?;
    write(dir, "metrics.toml", &report::metrics_toml(&rep.runs, net))?;
    if !p.config.intervals.is_empty() {
        write(dir, "intervals.csv", &report::intervals_csv(&rep.runs, net))?;
    }
    if p.config.stride.is_some() {
        write(dir, "timeseries.csv", &report::timeseries_csv(&rep.runs, net))?;
    }
    let sweep = (p.vs.len() > 1).then(|| p.vs.clone());
    write(dir, "manifest.toml", &ConfigFile::from_experiment(&p.config, sweep, None).to_toml())?;

    let failed: Vec<_> = rep.failures().collect();
    let mut verdict = format!("{}: {}\n", p.name, if failed.is_empty() { "pass" } else { "fail" });
    for f in &failed {
        writeln!(verdict, "  {} {} = {} not {}", f.row, f.quantity, f.ours, f.rule).unwrap();
    }
    write(dir, "verdict.txt", &verdict)?;
    if failed.is_empty() {
        Ok(Outcome { stdout: verdict })
    } else {
        print!("{verdict}");
        Err(CliError::Verdict { preset: p.name.to_string(), failed: failed.len() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(5), Some("7"), 9).unwrap(), 5);
        assert_eq!(resolve_seed(None, Some("7"), 9).unwrap(), 7);
        assert_eq!(resolve_seed(None, None, 9).unwrap(), 9);
        assert_eq!(resolve_seed(None, Some("x"), 9).unwrap_err().exit_code(), 2);
        assert_eq!(resolve_seed(Some(u64::MAX), None, 9).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::UnknownPreset("x".into()).exit_code(), 2);
        assert_eq!(CliError::from(SimError::Invariant { slot: 0, what: String::new() }).exit_code(), 3);
        assert_eq!(CliError::from(SimError::Config(String::new())).exit_code(), 2);
        assert_eq!(CliError::Verdict { preset: "t".into(), failed: 1 }.exit_code(), 1);
    }

    #[test]
    fn parses_grid_step_flag() {
        let cli = Cli::try_parse_from(["overloadnet", "oracle", "--config", "x.toml", "--grid-step", "1/2"]).unwrap();
        match cli.command {
            Command::Oracle { grid_step, .. } => assert_eq!(grid_step.value(), 0.5),
            _ => unreachable!(),
        }
    }
}
