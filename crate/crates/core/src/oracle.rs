//! Ground truth for a given arrival-rate matrix: membership in the
//! achievable throughput region, membership in the capacity region, and the
//! optimal throughput vector for linear and concave utilities.
//!
//! The region is described by multicommodity flow variables `f` (per link and
//! class) and overflow variables `q` (per node and class):
//!
//! ```text
//! λ_n^c + Σ_a f_an^c = q_n^c + Σ_b f_nb^c     for every class c, node n ≠ d_c
//! Σ_c f_ab^c <= capacity(a, b)                 for every link
//! r_c <= Σ_a f_{a d_c}^c                       for every class
//! ```
//!
//! All arrival-rate matrices are node-major (`node * classes + class`).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lp::{lp_solve, LpError, LpProblem, Relation};
use crate::model::{derivative_bound, ConcaveUtility, LinkId, Network, NodeId};

/// Flow and overflow rates certifying a throughput vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Link-major flow per (link, class).
    pub f: Vec<f64>,
    /// Overflow per (node, class); zero at destinations.
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl FlowSolution {
    /// Largest residual of the region constraints at `lambda`, recomputed
    /// directly from the definitions (no LP involved).
    pub fn max_residual(&self, net: &Network, lambda: &[f64]) -> f64 {
        let nc = net.num_classes();
        let t = &net.topology;
        let mut worst = 0.0_f64;
        for v in self.f.iter().chain(&self.q).chain(&self.r) {
            worst = worst.max(-v);
        }
        for c in 0..nc {
            for n in t.nodes() {
                let i = n.0 * nc + c;
                if !net.has_queue(n, c) {
                    worst = worst.max(self.q[i].abs());
                    continue;
                }
                let inflow: f64 = t.in_links(n).iter().map(|l| self.f[l.0 * nc + c]).sum();
                let outflow: f64 = t.out_links(n).iter().map(|l| self.f[l.0 * nc + c]).sum();
                worst = worst.max((lambda[i] + inflow - self.q[i] - outflow).abs());
            }
            for (li, _) in t.links().iter().enumerate() {
                if !net.eligible(LinkId(li), c) {
                    worst = worst.max(self.f[li * nc + c].abs());
                }
            }
            let d = net.destination(c);
            let delivered: f64 = t.in_links(d).iter().map(|l| self.f[l.0 * nc + c]).sum();
            let offered: f64 = t.nodes().filter(|n| net.has_queue(*n, c)).map(|n| lambda[n.0 * nc + c] - self.q[n.0 * nc + c]).sum();
            worst = worst.max(self.r[c] - delivered);
            worst = worst.max((delivered - offered).abs());
        }
        for (li, link) in t.links().iter().enumerate() {
            let used: f64 = (0..nc).map(|c| self.f[li * nc + c]).sum();
            worst = worst.max(used - link.capacity);
        }
        worst
    }
}

/// Variable layout of the flow LP.
struct FlowLp {
    problem: LpProblem,
    f: Vec<Option<usize>>,
    q: Vec<Option<usize>>,
    r: Vec<usize>,
}

impl FlowLp {
    fn build(net: &Network, lambda: &[f64], allow_overflow: bool) -> Self {
        let nc = net.num_classes();
        let t = &net.topology;
        let mut next = 0;
        let mut alloc = || {
            next += 1;
            next - 1
        };
        let f: Vec<Option<usize>> = (0..t.num_links() * nc).map(|i| net.eligible(LinkId(i / nc), i % nc).then(&mut alloc)).collect();
        let q: Vec<Option<usize>> =
            (0..t.num_nodes() * nc).map(|i| (allow_overflow && net.has_queue(NodeId(i / nc), i % nc)).then(&mut alloc)).collect();
        let r: Vec<usize> = (0..nc).map(|_| alloc()).collect();
        let mut problem = LpProblem::new(next);

        for c in 0..nc {
            for n in t.nodes() {
                if !net.has_queue(n, c) {
                    continue;
                }
                let mut terms = Vec::new();
                terms.extend(t.in_links(n).iter().filter_map(|l| f[l.0 * nc + c]).map(|j| (j, 1.0)));
                terms.extend(t.out_links(n).iter().filter_map(|l| f[l.0 * nc + c]).map(|j| (j, -1.0)));
                if let Some(j) = q[n.0 * nc + c] {
                    terms.push((j, -1.0));
                }
                problem.constrain(terms, Relation::Eq, -lambda[n.0 * nc + c]);
            }
            let d = net.destination(c);
            let mut terms = vec![(r[c], 1.0)];
            terms.extend(t.in_links(d).iter().filter_map(|l| f[l.0 * nc + c]).map(|j| (j, -1.0)));
            problem.constrain(terms, Relation::Le, 0.0);
        }
        for (li, link) in t.links().iter().enumerate() {
            let terms: Vec<_> = (0..nc).filter_map(|c| f[li * nc + c]).map(|j| (j, 1.0)).collect();
            if !terms.is_empty() {
                problem.constrain(terms, Relation::Le, link.capacity);
            }
        }
        Self { problem, f, q, r }
    }

    fn extract(&self, x: &[f64]) -> FlowSolution {
        let pick = |ix: &Vec<Option<usize>>| ix.iter().map(|j| j.map_or(0.0, |j| x[j])).collect();
        FlowSolution { f: pick(&self.f), q: pick(&self.q), r: self.r.iter().map(|&j| x[j]).collect() }
    }

    fn fix_throughput(&mut self, class: usize, value: f64) {
        self.problem.constrain(vec![(self.r[class], 1.0)], Relation::Eq, value);
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("arrival matrix has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("grid of {points} points exceeds the budget of {budget}")]
    GridTooLarge { points: f64, budget: f64 },
    #[error("weights must be positive")]
    BadWeights,
    #[error("lp solver: {0}")]
    Lp(#[from] LpError),
}

fn check_shape(net: &Network, lambda: &[f64]) -> Result<(), OracleError> {
    let expected = net.num_nodes() * net.num_classes();
    if lambda.len() != expected {
        return Err(OracleError::Shape { got: lambda.len(), expected });
    }
    Ok(())
}

/// Whether throughput vector `r` is achievable under arrival rates `lambda`.
/// Returns a certificate when it is.
pub fn region_membership(net: &Network, lambda: &[f64], r: &[f64]) -> Result<Option<FlowSolution>, OracleError> {
    check_shape(net, lambda)?;
    let mut lp = FlowLp::build(net, lambda, true);
    for (c, &rc) in r.iter().enumerate() {
        lp.fix_throughput(c, rc);
    }
    match lp_solve(&lp.problem) {
        Ok(s) => Ok(Some(lp.extract(&s.x))),
        Err(LpError::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CapacityVerdict {
    Inside(FlowSolution),
    Outside,
}

/// Whether `lambda` can be carried with zero overflow everywhere.
pub fn capacity_membership(net: &Network, lambda: &[f64]) -> Result<CapacityVerdict, OracleError> {
    check_shape(net, lambda)?;
    let lp = FlowLp::build(net, lambda, false);
    match lp_solve(&lp.problem) {
        Ok(s) => Ok(CapacityVerdict::Inside(lp.extract(&s.x))),
        Err(LpError::Infeasible) => Ok(CapacityVerdict::Outside),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOptimum {
    pub r: Vec<f64>,
    pub value: f64,
    pub solution: FlowSolution,
}

/// Maximizes `Σ_c weights[c]·r_c` over the achievable region.
pub fn optimal_linear(net: &Network, weights: &[f64], lambda: &[f64]) -> Result<LinearOptimum, OracleError> {
    check_shape(net, lambda)?;
    if weights.len() != net.num_classes() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(OracleError::BadWeights);
    }
    let mut lp = FlowLp::build(net, lambda, true);
    for (c, w) in weights.iter().enumerate() {
        lp.problem.objective[lp.r[c]] = *w;
    }
    let s = lp_solve(&lp.problem)?;
    let solution = lp.extract(&s.x);
    Ok(LinearOptimum { r: solution.r.clone(), value: s.objective, solution })
}

/// Largest achievable throughput of one class, all others unconstrained.
pub fn max_class_throughput(net: &Network, lambda: &[f64], class: usize) -> Result<f64, OracleError> {
    check_shape(net, lambda)?;
    let mut lp = FlowLp::build(net, lambda, true);
    lp.problem.objective[lp.r[class]] = 1.0;
    Ok(lp_solve(&lp.problem)?.objective)
}

/// Spacing of the throughput grid, kept as a ratio so that points like 2/3
/// are computed as `80 / 120` rather than accumulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridStep {
    pub numer: f64,
    pub denom: f64,
}

impl GridStep {
    pub const DEFAULT: GridStep = GridStep { numer: 1.0, denom: 120.0 };

    pub fn value(&self) -> f64 {
        self.numer / self.denom
    }

    pub fn point(&self, k: u64) -> f64 {
        k as f64 * self.numer / self.denom
    }

    /// Number of whole steps that fit in `x`, tolerating rounding.
    pub fn steps_in(&self, x: f64) -> u64 {
        let k = (x * self.denom / self.numer + 1e-7).floor();
        if k <= 0.0 {
            0
        } else {
            k as u64
        }
    }
}

impl Default for GridStep {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl FromStr for GridStep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad grid step {s:?}: {e}"));
        let step = match s.split_once('/') {
            Some((a, b)) => GridStep { numer: parse(a)?, denom: parse(b)? },
            None => GridStep { numer: parse(s)?, denom: 1.0 },
        };
        if !(step.value() > 0.0 && step.value().is_finite()) {
            return Err(format!("grid step must be positive, got {s:?}"));
        }
        Ok(step)
    }
}

impl fmt::Display for GridStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom == 1.0 {
            write!(f, "{}", self.numer)
        } else {
            write!(f, "{}/{}", self.numer, self.denom)
        }
    }
}

pub const DEFAULT_GRID_BUDGET: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcaveOptimum {
    /// Grid coordinates of the best point.
    pub indices: Vec<u64>,
    pub r: Vec<f64>,
    pub utility: f64,
    pub step: GridStep,
    /// `Σ_c m_c · step · |C|`: how far below the true optimum the grid value can sit.
    pub grid_error: f64,
    pub solution: FlowSolution,
}

/// Best grid point of the achievable region for increasing concave utilities.
///
/// The search enumerates every grid value of all classes but the last, and
/// for each prefix solves one LP for the largest feasible last coordinate.
/// Since the region is closed under decreasing any coordinate and utilities
/// are increasing, the best point with a given prefix is the largest grid
/// value below that maximum; the result is the same point an exhaustive
/// membership test of the full grid returns.
pub fn optimal_concave<U: ConcaveUtility>(
    net: &Network,
    utilities: &[U],
    lambda: &[f64],
    step: GridStep,
    budget: f64,
) -> Result<Option<ConcaveOptimum>, OracleError> {
    check_shape(net, lambda)?;
    let nc = net.num_classes();
    if nc == 0 {
        return Ok(None);
    }
    let limits: Vec<u64> = (0..nc).map(|c| max_class_throughput(net, lambda, c).map(|ub| step.steps_in(ub))).collect::<Result<_, _>>()?;
    let points: f64 = limits.iter().map(|k| (k + 1) as f64).product();
    if points > budget {
        return Err(OracleError::GridTooLarge { points, budget });
    }

    let mut search = Search { net, utilities, lambda, step, limits, best: None, prefix: vec![0; nc] };
    search.descend(0)?;
    let Some((utility, indices)) = search.best else {
        return Ok(None);
    };
    let r: Vec<f64> = indices.iter().map(|&k| step.point(k)).collect();
    let solution = region_membership(net, lambda, &r)?.expect("grid optimum was feasible during search");
    let grid_error =
        net.classes().iter().map(|c| derivative_bound(&c.utility, step.value()).map_or(f64::INFINITY, |b| b.value)).sum::<f64>()
            * step.value()
            * nc as f64;
    Ok(Some(ConcaveOptimum { indices, r, utility, step, grid_error, solution }))
}

struct Search<'a, U> {
    net: &'a Network,
    utilities: &'a [U],
    lambda: &'a [f64],
    step: GridStep,
    limits: Vec<u64>,
    best: Option<(f64, Vec<u64>)>,
    prefix: Vec<u64>,
}

impl<U: ConcaveUtility> Search<'_, U> {
    /// Returns whether the current prefix (coordinates `< depth`) is feasible.
    fn descend(&mut self, depth: usize) -> Result<bool, OracleError> {
        let last = self.limits.len() - 1;
        if depth == last {
            let mut lp = FlowLp::build(self.net, self.lambda, true);
            for c in 0..last {
                lp.fix_throughput(c, self.step.point(self.prefix[c]));
            }
            lp.problem.objective[lp.r[last]] = 1.0;
            let top = match lp_solve(&lp.problem) {
                Ok(s) => s.objective,
                Err(LpError::Infeasible) => return Ok(false),
                Err(e) => return Err(e.into()),
            };
            self.prefix[last] = self.step.steps_in(top).min(self.limits[last]);
            let value: f64 = self.prefix.iter().zip(self.utilities).map(|(&k, u)| u.value(self.step.point(k))).sum();
            if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                self.best = Some((value, self.prefix.clone()));
            }
            return Ok(true);
        }
        let mut any = false;
        for k in 0..=self.limits[depth] {
            self.prefix[depth] = k;
            if !self.descend(depth + 1)? {
                break;
            }
            any = true;
        }
        self.prefix[depth] = 0;
        Ok(any)
    }
}
