//! Runs a preset end to end and compares it with the published values and
//! the oracle.

use std::fmt::{self, Write};

use thiserror::Error;

use crate::model::{ConcaveUtility, Network, NodeId, Utility};
use crate::oracle::{optimal_concave, optimal_linear, GridStep, OracleError, DEFAULT_GRID_BUDGET};
use crate::presets::{Preset, OVERLOAD_WINDOW};
use crate::sim::{sweep_v, RunOutput, SimError};

#[derive(Debug, Error)]
pub enum ReproduceError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("the oracle found no feasible grid point")]
    NoOptimum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Info,
    Within { target: f64, tolerance: f64 },
    AtMost(f64),
    AtLeast(f64),
    Above(f64),
}

impl Rule {
    pub fn holds(&self, x: f64) -> Option<bool> {
        match *self {
            Rule::Info => None,
            Rule::Within { target, tolerance } => Some((x - target).abs() <= tolerance),
            Rule::AtMost(b) => Some(x <= b),
            Rule::AtLeast(b) => Some(x >= b),
            Rule::Above(b) => Some(x > b),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Info => Ok(()),
            Rule::Within { target, tolerance } => write!(f, "within {tolerance} of {target}"),
            Rule::AtMost(b) => write!(f, "<= {b}"),
            Rule::AtLeast(b) => write!(f, ">= {b}"),
            Rule::Above(b) => write!(f, "> {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub row: String,
    pub quantity: String,
    pub ours: f64,
    pub published: Option<f64>,
    pub oracle: Option<f64>,
    pub rule: Rule,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub r: Vec<f64>,
    pub value: f64,
    pub max_residual: f64,
    /// Step, indices and error bound of the grid search, for concave utilities.
    pub grid: Option<(GridStep, Vec<u64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reproduction {
    pub preset: &'static str,
    pub runs: Vec<RunOutput>,
    pub oracle: OracleSummary,
    pub rows: Vec<Comparison>,
}

impl Reproduction {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> impl Iterator<Item = &Comparison> {
        self.rows.iter().filter(|r| r.pass == Some(false))
    }

    /// Columns: `row, quantity, ours, published, oracle, rule, verdict`.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("row,quantity,ours,published,oracle,rule,verdict\n");
        for r in &self.rows {
            let verdict = match r.pass {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "",
            };
            writeln!(out, "{},{},{},{},{},{},{}", r.row, r.quantity, r.ours, opt(r.published), opt(r.oracle), r.rule, verdict).unwrap();
        }
        out
    }
}

/// Linear LP when every utility is linear, grid search otherwise. Arrival
/// rates are averaged over the horizon.
pub fn solve_oracle(net: &Network, lambda: &[f64], step: GridStep) -> Result<OracleSummary, ReproduceError> {
    let utilities: Vec<Utility> = net.classes().iter().map(|c| c.utility).collect();
    let weights: Option<Vec<f64>> = utilities
        .iter()
        .map(|u| match u {
            Utility::Linear { weight } => Some(*weight),
            _ => None,
        })
        .collect();
    if let Some(w) = weights {
        let opt = optimal_linear(net, &w, lambda)?;
        let max_residual = opt.solution.max_residual(net, lambda);
        return Ok(OracleSummary { r: opt.r, value: opt.value, max_residual, grid: None });
    }
    let opt = optimal_concave(net, &utilities, lambda, step, DEFAULT_GRID_BUDGET)?.ok_or(ReproduceError::NoOptimum)?;
    let max_residual = opt.solution.max_residual(net, lambda);
    Ok(OracleSummary { r: opt.r, value: opt.utility, max_residual, grid: Some((opt.step, opt.indices, opt.grid_error)) })
}

/// Named queues of the line network, as (label, node, class index).
const LINE_QUEUES: [(&str, usize, usize); 4] = [("max Q_B1", 1, 0), ("max Q_B2", 1, 1), ("max Q_A2", 0, 1), ("max Q_A3", 0, 2)];

pub fn reproduce(preset: &Preset) -> Result<Reproduction, ReproduceError> {
    let cfg = &preset.config;
    let net = &cfg.network;
    let lambda = cfg.schedule.mean_rates(net, 0, cfg.horizon);
    let (runs, oracle) = rayon::join(|| sweep_v(cfg, &preset.vs), || solve_oracle(net, &lambda, GridStep::DEFAULT));
    let (runs, oracle) = (runs?, oracle?);
    let rows = compare(preset, &runs, &oracle);
    Ok(Reproduction { preset: preset.name, runs, oracle, rows })
}

fn compare(preset: &Preset, runs: &[RunOutput], oracle: &OracleSummary) -> Vec<Comparison> {
    let net = &preset.config.network;
    let nc = net.num_classes();
    let reference = |row: &str, q: &str| preset.published.iter().find(|r| r.row == row && r.quantity == q).map(|r| r.value);
    let mut rows = Vec::new();
    let mut push = |row: String, quantity: String, ours: f64, oracle: Option<f64>, rule: Rule| {
        let p = reference(&row, &quantity);
        rows.push(Comparison { pass: rule.holds(ours), row, quantity, ours, published: p, oracle, rule });
    };
    let within = |target: f64, tolerance: f64| Rule::Within { target, tolerance };

    match preset.name {
        "table2" | "fig5" => {
            let run = &runs[0];
            let targets = [[0.8, 0.1, 0.8], [0.0, 1.0, 0.0], [0.8, 0.1, 0.8]];
            for (rec, target) in run.metrics.intervals.iter().zip(targets) {
                let label = format!("[{},{})", rec.start, rec.end);
                for (c, r) in rec.throughput().into_iter().enumerate() {
                    let rule = if preset.name == "table2" { within(target[c], 0.03) } else { Rule::Info };
                    push(label.clone(), format!("r{}", c + 1), r, Some(target[c]), rule);
                }
            }
            if preset.name == "fig5" {
                let (s, e) = OVERLOAD_WINDOW;
                let i = NodeId(1).0 * nc + 1;
                let peak = |lo: u64, hi: u64| run.series.iter().filter(|x| (lo..hi).contains(&x.slot)).map(|x| x.q[i]).fold(0.0, f64::max);
                let (before, during) = (peak(0, s), peak(s, e));
                let bound = run.metrics.bounds.q_max[1];
                push("overload".into(), "max Q_B2".into(), during, None, Rule::AtMost(bound));
                push("overload".into(), "rise over earlier peak".into(), during - before, None, Rule::Above(0.0));
            }
        }
        _ => {
            let fairness = matches!(preset.name, "table3" | "table4" | "table5");
            for run in runs {
                let m = &run.metrics;
                let label = format!("V={}", m.v);
                if preset.name != "table4" {
                    for c in 0..nc {
                        let rule = match (preset.name, m.v) {
                            ("table1a", 100.0) => within([1.0, 0.0, 1.0][c], 0.02),
                            ("table1a", 50.0) => within([0.992, 0.008, 0.967][c], 0.03),
                            ("table1b", 100.0) => within([0.0, 1.0, 0.0][c], 0.02),
                            ("table5", 50.0) => within(2.0 / 3.0, 0.02),
                            _ => Rule::Info,
                        };
                        push(label.clone(), format!("r{}", c + 1), m.throughput[c], Some(oracle.r[c]), rule);
                    }
                    if preset.name == "table1a" && m.v == 50.0 {
                        push(label.clone(), "r2 ceiling".into(), m.throughput[1], None, Rule::AtMost(0.05));
                    }
                } else {
                    for (name, n, c) in LINE_QUEUES {
                        let q = m.max_q[n * nc + c];
                        push(label.clone(), name.into(), q, None, Rule::AtMost(m.bounds.q_max[c]));
                    }
                    for c in 0..nc {
                        push(
                            label.clone(),
                            format!("max backlog class {}", c + 1),
                            m.max_backlog_per_class()[c],
                            None,
                            Rule::AtMost(10.0 * m.v + 42.0),
                        );
                    }
                }
                if preset.name == "table3" {
                    let rule = if m.v == 100.0 { within(-1.912, 0.02) } else { Rule::Info };
                    push(label.clone(), "utility".into(), m.objective, Some(oracle.value), rule);
                }
                let floor = oracle.value - m.bounds.gap;
                let quantity = if fairness { "utility vs gap" } else { "objective vs gap" };
                push(label, quantity.into(), m.objective, Some(oracle.value), Rule::AtLeast(floor));
            }
            if preset.name == "table3" {
                for w in runs.windows(2) {
                    let (a, b) = (&w[0].metrics, &w[1].metrics);
                    push(format!("V={}..{}", a.v, b.v), "utility change".into(), b.objective - a.objective, None, Rule::AtLeast(-0.01));
                }
                if let Some((_, _, err)) = &oracle.grid {
                    push("oracle".into(), "utility".into(), oracle.value, None, within(-1.910, *err));
                }
            }
        }
    }
    rows.push(Comparison {
        row: "oracle".into(),
        quantity: "certificate residual".into(),
        ours: oracle.max_residual,
        published: None,
        oracle: None,
        rule: Rule::AtMost(1e-9),
        pass: Some(oracle.max_residual <= 1e-9),
    });
    rows
}

/// Utility of a throughput vector under the network's class utilities.
pub fn utility_of(net: &Network, r: &[f64]) -> f64 {
    net.classes().iter().zip(r).map(|(c, x)| c.utility.value(*x)).sum()
}
