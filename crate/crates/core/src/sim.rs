//! The slotted simulation loop, its metrics, and V-sweeps.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    validate_dmax, ArrivalSampler, ArrivalSchedule, ConcaveUtility, DerivedConstants, DmaxViolation, LinkId, Network, NodeId,
};
use crate::ora::{self, OraParams, ParamError};
use crate::queues::{self, check_conservation, ConservationAccount, DynamicsError, QueueState, SlotDecision, SlotLedger};
use crate::uora::{self, UoraParams};

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyConfig {
    Ora {
        v: f64,
        d_max: f64,
    },
    Uora {
        v: f64,
        d_max: f64,
        epsilon: f64,
        nu_max: f64,
        q_center: f64,
        /// Defaults to `g_c'(ε)` per class.
        theta: Option<Vec<f64>>,
    },
}

impl PolicyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Ora { .. } => "ora",
            PolicyConfig::Uora { .. } => "uora",
        }
    }

    pub fn v(&self) -> f64 {
        match self {
            PolicyConfig::Ora { v, .. } | PolicyConfig::Uora { v, .. } => *v,
        }
    }

    pub fn d_max(&self) -> f64 {
        match self {
            PolicyConfig::Ora { d_max, .. } | PolicyConfig::Uora { d_max, .. } => *d_max,
        }
    }

    pub fn with_v(&self, new_v: f64) -> Self {
        let mut p = self.clone();
        match &mut p {
            PolicyConfig::Ora { v, .. } | PolicyConfig::Uora { v, .. } => *v = new_v,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckMode {
    /// Every invariant after every slot.
    #[default]
    Checked,
    /// Conservation and capacity every [`FAST_CHECK_PERIOD`] slots.
    Fast,
}

pub const FAST_CHECK_PERIOD: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub network: Network,
    pub schedule: ArrivalSchedule,
    pub policy: PolicyConfig,
    pub horizon: u64,
    pub seed: u64,
    /// Time-series sampling stride; `None` records no series.
    pub stride: Option<u64>,
    /// Measurement windows `[start, end)`.
    pub intervals: Vec<(u64, u64)>,
    pub check: CheckMode,
}

impl ExperimentConfig {
    /// The same experiment cut to its first `horizon` slots. Windows are
    /// clipped and dropped when empty.
    pub fn shortened(&self, horizon: u64) -> Self {
        let horizon = horizon.min(self.horizon);
        Self {
            schedule: self.schedule.truncated(horizon),
            horizon,
            intervals: self.intervals.iter().filter(|w| w.0 < horizon).map(|&(s, e)| (s, e.min(horizon))).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::Config(s));
        if self.horizon == 0 {
            return bad("horizon must be at least one slot".into());
        }
        if self.schedule.horizon != self.horizon {
            return bad(format!("arrival schedule covers {} slots, run has {}", self.schedule.horizon, self.horizon));
        }
        if self.stride == Some(0) {
            return bad("time-series stride must be at least 1".into());
        }
        for &(s, e) in &self.intervals {
            if s >= e {
                return bad(format!("interval [{s}, {e}) is empty"));
            }
            if e > self.horizon {
                return bad(format!("interval [{s}, {e}) exceeds the horizon {}", self.horizon));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Dmax(#[from] DmaxViolation),
    #[error("slot {slot}: {source}")]
    Dynamics { slot: u64, source: DynamicsError },
    #[error("invariant violated at slot {slot}: {what}")]
    Invariant { slot: u64, what: String },
    #[error("window [{0}, {1}) was not declared in the experiment")]
    UnknownWindow(u64, u64),
}

/// Analytic constants of the run's policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// `B` for ORA, `B₁` for UORA.
    pub b: f64,
    /// Guaranteed distance below the optimum of the long-run objective.
    pub gap: f64,
    pub q_max: Vec<f64>,
    pub d_lower: Vec<f64>,
    pub d_upper: Vec<f64>,
    /// UORA only.
    pub z_max: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub start: u64,
    pub end: u64,
    pub delivered: Vec<f64>,
}

impl IntervalRecord {
    pub fn throughput(&self) -> Vec<f64> {
        let len = (self.end - self.start) as f64;
        self.delivered.iter().map(|d| d / len).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub policy: &'static str,
    pub v: f64,
    /// Seed actually fed to the arrival sampler.
    pub arrival_seed: u64,
    pub horizon: u64,
    pub delivered: Vec<f64>,
    pub dropped: Vec<f64>,
    /// `delivered / horizon` per class.
    pub throughput: Vec<f64>,
    pub intervals: Vec<IntervalRecord>,
    /// Node-major maxima over all observed states.
    pub max_q: Vec<f64>,
    pub max_d: Vec<f64>,
    pub min_d: Vec<f64>,
    pub max_z: Option<Vec<f64>>,
    /// `Σ_c g_c(throughput_c)`.
    pub objective: f64,
    pub bounds: BoundReport,
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Metrics {
    /// Largest real backlog of each class over all nodes.
    pub fn max_backlog_per_class(&self) -> Vec<f64> {
        let nc = self.delivered.len();
        (0..nc).map(|c| self.max_q.iter().skip(c).step_by(nc).fold(0.0, |a: f64, b| a.max(*b))).collect()
    }
}

/// Per-class throughput over a window declared in the experiment.
pub fn interval_throughput(metrics: &Metrics, window: (u64, u64)) -> Result<Vec<f64>, SimError> {
    metrics
        .intervals
        .iter()
        .find(|r| (r.start, r.end) == window)
        .map(IntervalRecord::throughput)
        .ok_or(SimError::UnknownWindow(window.0, window.1))
}

/// Queue state at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub slot: u64,
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub series: Vec<Snapshot>,
}

/// Corrupts the state after the given slot. Exists to exercise the
/// invariant checks.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub fault_at: Option<u64>,
}

/// Sampler seed for a run at `v`: splitmix64 of the master seed xored with
/// the bit pattern of `v`. Runs of a sweep are therefore independent, and a
/// run is reproducible from `(seed, v)` alone.
pub fn seed_for(master: u64, v: f64) -> u64 {
    let mut z = master ^ v.to_bits();
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

enum Policy {
    Ora(OraParams),
    Uora(UoraParams),
}

impl Policy {
    fn decide(&self, state: &QueueState, net: &Network, decision: &mut SlotDecision) {
        match self {
            Policy::Ora(p) => {
                ora::route_into(state, net, &|_| 0.0, &mut decision.mu);
                ora::drop_into(state, net, p.d_max, &mut decision.drop);
                ora::drop_service_into(state, net, p.v, &p.theta, p.d_max, &mut decision.phi);
            }
            Policy::Uora(p) => {
                uora::route_uora_into(state, net, p, &mut decision.mu);
                ora::drop_into(state, net, p.d_max, &mut decision.drop);
                ora::drop_service_into(state, net, p.v, &p.theta, p.d_max, &mut decision.phi);
                uora::flow_control_into(&state.z, p, net, &mut decision.nu);
            }
        }
    }
}

fn prepare(config: &ExperimentConfig) -> Result<(Policy, BoundReport, Vec<String>, Vec<f64>), SimError> {
    config.validate()?;
    let net = &config.network;
    let consts = DerivedConstants::new(&net.topology, config.policy.d_max());
    validate_dmax(&consts, &config.schedule)?;
    let a_max = config.schedule.a_max as f64;
    let nc = net.num_classes();
    Ok(match &config.policy {
        PolicyConfig::Ora { v, d_max } => {
            let p = OraParams::new(net, *v, *d_max)?;
            let b = ora::ora_bound_constants(net.num_nodes(), nc, consts.mu_in, consts.mu_out, a_max, *d_max);
            let report = BoundReport {
                b,
                gap: b / v,
                q_max: (0..nc).map(|c| p.q_max(c)).collect(),
                d_lower: (0..nc).map(|c| p.d_lower(c)).collect(),
                d_upper: (0..nc).map(|c| p.d_upper(c)).collect(),
                z_max: None,
            };
            let init = p.drop_init();
            (Policy::Ora(p), report, Vec::new(), init)
        }
        PolicyConfig::Uora { v, epsilon, nu_max, q_center, theta, .. } => {
            let (p, warnings) = uora::derive_params(net, &consts, *epsilon, *q_center, *v, *nu_max, theta.as_deref())?;
            let ub = uora::uora_bound_constants(&p, net, &consts, a_max);
            let report = BoundReport {
                b: ub.b1,
                gap: ub.gap,
                q_max: (0..nc).map(|c| p.q_max(c)).collect(),
                d_lower: (0..nc).map(|c| p.d_lower(c)).collect(),
                d_upper: (0..nc).map(|c| p.d_upper(c)).collect(),
                z_max: Some(ub.z_max),
            };
            let init = p.drop_init();
            (Policy::Uora(p), report, warnings, init)
        }
    })
}

fn slack(bound: f64) -> f64 {
    1e-9 * bound.abs().max(1.0)
}

fn check_state(state: &QueueState, net: &Network, bounds: &BoundReport, slot: u64) -> Result<(), SimError> {
    let nc = net.num_classes();
    let fail = |what: String| Err(SimError::Invariant { slot, what });
    for n in net.topology.nodes() {
        for c in 0..nc {
            if !net.has_queue(n, c) {
                continue;
            }
            let (q, d) = (state.q(n, c), state.d(n, c));
            if q > bounds.q_max[c] + slack(bounds.q_max[c]) {
                return fail(format!("Q at node {n}, class index {c} is {q}, above {}", bounds.q_max[c]));
            }
            if d > bounds.d_upper[c] + slack(bounds.d_upper[c]) || d < bounds.d_lower[c] - slack(bounds.d_lower[c]) {
                return fail(format!("D at node {n}, class index {c} is {d}, outside [{}, {}]", bounds.d_lower[c], bounds.d_upper[c]));
            }
        }
    }
    if let Some(z_max) = &bounds.z_max {
        for (c, (z, zm)) in state.z.iter().zip(z_max).enumerate() {
            if *z > zm + slack(*zm) {
                return fail(format!("Z for class index {c} is {z}, above {zm}"));
            }
        }
    }
    Ok(())
}

fn check_slot(decision: &SlotDecision, ledger: &SlotLedger, net: &Network, slot: u64) -> Result<(), SimError> {
    let nc = net.num_classes();
    for (li, link) in net.topology.links().iter().enumerate() {
        let mut total = 0.0;
        for c in 0..nc {
            let (moved, alloc) = (ledger.moved[li * nc + c], decision.mu(LinkId(li), c));
            if moved > alloc + slack(alloc) {
                return Err(SimError::Invariant {
                    slot,
                    what: format!("link {li} moved {moved} of class index {c} with allocation {alloc}"),
                });
            }
            total += moved;
        }
        if total > link.capacity + slack(link.capacity) {
            return Err(SimError::Invariant { slot, what: format!("link {li} carried {total}, capacity {}", link.capacity) });
        }
    }
    Ok(())
}

fn check_balance(account: &ConservationAccount, slot: u64) -> Result<(), SimError> {
    check_conservation(account).map_err(|e| SimError::Invariant { slot, what: e.to_string() })
}

/// Validates the experiment and the policy parameters without running.
/// Returns parameter warnings.
pub fn check_experiment(config: &ExperimentConfig) -> Result<Vec<String>, SimError> {
    prepare(config).map(|(_, _, warnings, _)| warnings)
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutput, SimError> {
    run_with(config, &RunOptions::default())
}

#[doc(hidden)]
pub fn run_with(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutput, SimError> {
    let (policy, bounds, warnings, drop_init) = prepare(config)?;
    let net = &config.network;
    let nc = net.num_classes();
    let v = config.policy.v();
    let arrival_seed = seed_for(config.seed, v);
    let mut sampler = ArrivalSampler::new(&config.schedule, net, arrival_seed);

    let mut state = QueueState::new(net, &drop_init);
    let mut decision = SlotDecision::zeros(net);
    let mut ledger = SlotLedger::zeros(net);
    let mut account = ConservationAccount::new(nc);
    let mut arrivals = vec![0.0; net.num_nodes() * nc];
    let mut interval_delivered = vec![vec![0.0; nc]; config.intervals.len()];
    let mut max_q = state.q.clone();
    let mut max_d = state.d.clone();
    let mut min_d = state.d.clone();
    let mut max_z = state.z.clone();
    let mut series = Vec::new();
    check_state(&state, net, &bounds, 0)?;

    for t in 0..config.horizon {
        if let Some(stride) = config.stride {
            if t % stride == 0 {
                series.push(Snapshot { slot: t, q: state.q.clone(), d: state.d.clone(), z: state.z.clone() });
            }
        }
        policy.decide(&state, net, &mut decision);
        sampler.sample_into(t, &mut arrivals);
        queues::actual_transfers_into(&state, &decision, net, &mut ledger);
        queues::actual_drops(&state, &decision, net, &mut ledger);
        queues::apply_slot_in_place(&mut state, &decision, &arrivals, &mut ledger, net, &mut account)
            .map_err(|source| SimError::Dynamics { slot: t, source })?;
        if options.fault_at == Some(t) {
            inject_fault(&mut state, net, &bounds);
        }

        for ((s, e), acc) in config.intervals.iter().zip(interval_delivered.iter_mut()) {
            if (*s..*e).contains(&t) {
                acc.iter_mut().zip(&ledger.delivered).for_each(|(a, d)| *a += d);
            }
        }
        for i in 0..state.q.len() {
            max_q[i] = max_q[i].max(state.q[i]);
            max_d[i] = max_d[i].max(state.d[i]);
            if net.has_queue(NodeId(i / nc), i % nc) {
                min_d[i] = min_d[i].min(state.d[i]);
            }
        }
        max_z.iter_mut().zip(&state.z).for_each(|(m, z)| *m = m.max(*z));

        let due = match config.check {
            CheckMode::Checked => true,
            CheckMode::Fast => (t + 1) % FAST_CHECK_PERIOD == 0 || t + 1 == config.horizon,
        };
        if due {
            check_state(&state, net, &bounds, t)?;
            check_slot(&decision, &ledger, net, t)?;
            check_balance(&account, t)?;
        }
    }
    check_balance(&account, config.horizon)?;

    let horizon = config.horizon as f64;
    let throughput: Vec<f64> = account.delivered.iter().map(|d| d / horizon).collect();
    let objective = net.classes().iter().zip(&throughput).map(|(c, r)| c.utility.value(*r)).sum();
    let is_uora = matches!(policy, Policy::Uora(_));
    let metrics = Metrics {
        policy: config.policy.name(),
        v,
        arrival_seed,
        horizon: config.horizon,
        delivered: account.delivered.clone(),
        dropped: account.dropped.clone(),
        throughput,
        intervals: config
            .intervals
            .iter()
            .zip(interval_delivered)
            .map(|(&(start, end), delivered)| IntervalRecord { start, end, delivered })
            .collect(),
        max_q,
        max_d,
        min_d,
        max_z: is_uora.then_some(max_z),
        objective,
        bounds,
        residuals: (0..nc).map(|c| account.residual(c)).collect(),
        warnings,
    };
    Ok(RunOutput { metrics, series })
}

fn inject_fault(state: &mut QueueState, net: &Network, bounds: &BoundReport) {
    let nc = net.num_classes();
    if let Some(i) = (0..state.q.len()).find(|&i| net.has_queue(NodeId(i / nc), i % nc)) {
        state.q[i] += 2.0 * bounds.q_max[i % nc] + 1.0;
    }
}

/// Runs the experiment once per `V` in parallel. Rows come back sorted by
/// `V`, each identical to [`run`] on the config with that `V`.
pub fn sweep_v(config: &ExperimentConfig, vs: &[f64]) -> Result<Vec<RunOutput>, SimError> {
    if let Some(v) = vs.iter().find(|v| !(**v > 0.0)) {
        return Err(SimError::Param(ParamError::NonPositiveV(*v)));
    }
    let mut vs = vs.to_vec();
    vs.sort_by(f64::total_cmp);
    vs.par_iter()
        .map(|v| {
            let mut c = config.clone();
            c.policy = config.policy.with_v(*v);
            run(&c)
        })
        .collect()
}

/// Queue snapshots every `stride` slots.
pub fn time_series(config: &ExperimentConfig, stride: u64) -> Result<Vec<Snapshot>, SimError> {
    let mut c = config.clone();
    c.stride = Some(stride);
    Ok(run(&c)?.series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrivalStream, Segment, Topology, TrafficClass, Utility};

    fn chain(weights: [f64; 3], rate_prob: [f64; 3], horizon: u64) -> ExperimentConfig {
        let t = Topology::new(&["A", "B", "C"], &[("A", "B", 1.0), ("B", "C", 1.0)]).unwrap();
        let cls = |id, dest, w| TrafficClass { id, destination: NodeId(dest), utility: Utility::Linear { weight: w }, allowed_links: None };
        let net = Network::new(t, vec![cls(1, 2, weights[0]), cls(2, 2, weights[1]), cls(3, 1, weights[2])]).unwrap();
        let seg = |p| vec![Segment { start: 0, end: horizon, batch: 20, prob: p }];
        let streams = vec![
            ArrivalStream { node: NodeId(1), class: 0, segments: seg(rate_prob[0]) },
            ArrivalStream { node: NodeId(0), class: 1, segments: seg(rate_prob[1]) },
            ArrivalStream { node: NodeId(0), class: 2, segments: seg(rate_prob[2]) },
        ];
        let schedule = ArrivalSchedule::new(&net, 20, horizon, streams).unwrap();
        ExperimentConfig {
            network: net,
            schedule,
            policy: PolicyConfig::Ora { v: 10.0, d_max: 21.0 },
            horizon,
            seed: 7,
            stride: None,
            intervals: vec![(0, horizon / 2), (horizon / 2, horizon)],
            check: CheckMode::Checked,
        }
    }

    #[test]
    fn zero_arrivals_stay_empty() {
        let mut cfg = chain([3.0, 2.0, 1.0], [0.0; 3], 2000);
        cfg.stride = Some(100);
        let out = run(&cfg).unwrap();
        assert!(out.metrics.throughput.iter().all(|r| *r == 0.0));
        assert!(out.metrics.max_q.iter().all(|q| *q == 0.0));
        assert!(out.series.iter().all(|s| s.q.iter().all(|q| *q == 0.0)));
        assert_eq!(out.series.len(), 20);
    }

    #[test]
    fn deterministic_and_intervals_partition() {
        let cfg = chain([3.0, 2.0, 1.0], [0.1; 3], 20_000);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        for c in 0..3 {
            let sum: f64 = a.metrics.intervals.iter().map(|r| r.delivered[c]).sum();
            assert_eq!(sum, a.metrics.delivered[c]);
        }
        assert!(a.metrics.residuals.iter().all(|r| r.abs() < 1e-6));
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(run(&other).unwrap().metrics.delivered, a.metrics.delivered);
    }

    #[test]
    fn stride_equal_to_horizon_gives_one_sample() {
        let cfg = chain([3.0, 2.0, 1.0], [0.1; 3], 500);
        let s = time_series(&cfg, 500).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].slot, 0);
    }

    #[test]
    fn one_row_sweep_equals_run() {
        let cfg = chain([3.0, 2.0, 1.0], [0.1; 3], 5000);
        let rows = sweep_v(&cfg, &[10.0]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0], run(&cfg).unwrap());
        let rows = sweep_v(&cfg, &[20.0, 5.0, 10.0]).unwrap();
        let vs: Vec<f64> = rows.iter().map(|r| r.metrics.v).collect();
        assert_eq!(vs, vec![5.0, 10.0, 20.0]);
        assert!(sweep_v(&cfg, &[0.0]).is_err());
    }

    #[test]
    fn rejects_bad_windows() {
        let mut cfg = chain([3.0, 2.0, 1.0], [0.1; 3], 100);
        cfg.intervals = vec![(5, 5)];
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        cfg.intervals = vec![(0, 200)];
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        cfg.intervals = vec![(0, 50)];
        let m = run(&cfg).unwrap().metrics;
        assert!(interval_throughput(&m, (0, 50)).is_ok());
        assert_eq!(interval_throughput(&m, (0, 60)), Err(SimError::UnknownWindow(0, 60)));
    }

    #[test]
    fn fault_is_caught_in_both_modes() {
        let mut cfg = chain([3.0, 2.0, 1.0], [0.1; 3], 3000);
        let opts = RunOptions { fault_at: Some(10) };
        assert!(matches!(run_with(&cfg, &opts), Err(SimError::Invariant { slot: 10, .. })));
        cfg.check = CheckMode::Fast;
        assert!(matches!(run_with(&cfg, &opts), Err(SimError::Invariant { .. })));
    }

    #[test]
    fn dmax_too_small_is_rejected() {
        let mut cfg = chain([3.0, 2.0, 1.0], [0.1; 3], 100);
        cfg.policy = PolicyConfig::Ora { v: 10.0, d_max: 20.0 };
        assert!(matches!(run(&cfg), Err(SimError::Dmax(_))));
    }

    #[test]
    fn seeds_differ_per_v() {
        assert_ne!(seed_for(1, 10.0), seed_for(1, 20.0));
        assert_ne!(seed_for(1, 10.0), seed_for(2, 10.0));
        assert_eq!(seed_for(1, 10.0), seed_for(1, 10.0));
    }

    #[test]
    fn shortened_keeps_the_prefix() {
        let p = crate::presets::preset("table2").unwrap();
        let short = p.config.shortened(400_000);
        short.validate().unwrap();
        assert_eq!(short.intervals, vec![(0, 300_000), (300_000, 400_000)]);
        let net = &p.config.network;
        assert_eq!(short.schedule.mean_rates(net, 0, 400_000), p.config.schedule.mean_rates(net, 0, 400_000));
        let a = run(&short.shortened(5000)).unwrap();
        let b = run(&p.config.shortened(5000)).unwrap();
        assert_eq!(a, b);
    }
}
