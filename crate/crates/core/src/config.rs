//! TOML experiment files.
//!
//! ```toml
//! [topology]
//! nodes = ["A", "B", "C"]
//! links = [{ from = "A", to = "B", capacity = 1.0 }, { from = "B", to = "C", capacity = 1.0 }]
//!
//! [[classes]]
//! id = 1
//! destination = "C"
//! utility = { kind = "linear", weight = 3.0 }
//!
//! [arrivals]
//! a_max = 20
//! [[arrivals.streams]]
//! node = "B"
//! class = 1
//! rate = 2.0
//!
//! [policy]
//! name = "ora"
//! v = 100.0
//! d_max = 21.0
//!
//! [run]
//! slots = 1000000
//! seed = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ArrivalSchedule, ArrivalStream, Network, Segment, Topology, TrafficClass, Utility, DEFAULT_BATCH};
use crate::sim::{check_experiment, CheckMode, ExperimentConfig, PolicyConfig, SimError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field<T>(field: impl Into<String>, message: impl ToString) -> Result<T, ConfigError> {
    Err(ConfigError::Field { field: field.into(), message: message.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: TopologySection,
    pub classes: Vec<ClassSection>,
    pub arrivals: ArrivalsSection,
    pub policy: PolicySection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub nodes: Vec<String>,
    pub links: Vec<LinkEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub from: String,
    pub to: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub id: u32,
    /// Optional at parse time so a missing key reports its field path.
    #[serde(default)]
    pub destination: Option<String>,
    pub utility: UtilitySection,
    /// Links the class may use, as `[from, to]` pairs; all links if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<[String; 2]>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UtilitySection {
    Linear {
        weight: f64,
    },
    Log {
        #[serde(default = "one")]
        weight: f64,
        #[serde(default)]
        shift: f64,
    },
    AlphaFair {
        alpha: f64,
    },
}

impl From<UtilitySection> for Utility {
    fn from(u: UtilitySection) -> Self {
        match u {
            UtilitySection::Linear { weight } => Utility::Linear { weight },
            UtilitySection::Log { weight, shift } => Utility::Log { weight, shift },
            UtilitySection::AlphaFair { alpha } => Utility::AlphaFair { alpha },
        }
    }
}

impl From<Utility> for UtilitySection {
    fn from(u: Utility) -> Self {
        match u {
            Utility::Linear { weight } => UtilitySection::Linear { weight },
            Utility::Log { weight, shift } => UtilitySection::Log { weight, shift },
            Utility::AlphaFair { alpha } => UtilitySection::AlphaFair { alpha },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsSection {
    pub a_max: u32,
    #[serde(default)]
    pub streams: Vec<StreamSection>,
}

/// Either a constant `rate` (batches of `batch`, default 20, with
/// probability `rate / batch`) or an explicit `segments` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub node: String,
    pub class: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub start: u64,
    pub end: u64,
    pub batch: u32,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicySection {
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
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckSection {
    #[default]
    Checked,
    Fast,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub slots: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    #[serde(default)]
    pub intervals: Vec<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub check: CheckSection,
    /// Values of V to sweep; the policy's `v` alone if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
}

/// A validated experiment plus the run options that are not part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    pub sweep: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
    pub warnings: Vec<String>,
}

impl Resolved {
    /// `V` values to run, sorted.
    pub fn vs(&self) -> Vec<f64> {
        let mut vs = self.sweep.clone().unwrap_or_else(|| vec![self.experiment.policy.v()]);
        vs.sort_by(f64::total_cmp);
        vs
    }
}

/// Seeds are stored as TOML integers, which are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config sections serialize")
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let t = &self.topology;
        for (i, l) in t.links.iter().enumerate() {
            for (name, end) in [("from", &l.from), ("to", &l.to)] {
                if !t.nodes.contains(end) {
                    return field(format!("topology.links[{i}].{name}"), format!("unknown node {end:?}"));
                }
            }
        }
        let links: Vec<(&str, &str, f64)> = t.links.iter().map(|l| (l.from.as_str(), l.to.as_str(), l.capacity)).collect();
        let topology = Topology::new(&t.nodes, &links).or_else(|e| field("topology", e))?;

        let mut classes = Vec::with_capacity(self.classes.len());
        for (i, c) in self.classes.iter().enumerate() {
            let path = format!("classes[{i}]");
            let Some(dest_name) = &c.destination else {
                return field(format!("{path}.destination"), "missing destination node");
            };
            let Some(destination) = topology.node(dest_name) else {
                return field(format!("{path}.destination"), format!("unknown node {dest_name:?}"));
            };
            let utility = Utility::from(c.utility);
            if let Err(e) = utility.validate() {
                return field(format!("{path}.utility"), e);
            }
            let allowed_links = match &c.links {
                None => None,
                Some(ls) => {
                    let mut ids = Vec::with_capacity(ls.len());
                    for (j, [a, b]) in ls.iter().enumerate() {
                        let id = topology.node(a).zip(topology.node(b)).and_then(|(a, b)| topology.find_link(a, b));
                        match id {
                            Some(id) => ids.push(id),
                            None => return field(format!("{path}.links[{j}]"), format!("no link {a} -> {b}")),
                        }
                    }
                    Some(ids)
                }
            };
            classes.push(TrafficClass { id: c.id, destination, utility, allowed_links });
        }
        let network = Network::new(topology, classes).or_else(|e| field("classes", e))?;

        let horizon = self.run.slots;
        if horizon == 0 {
            return field("run.slots", "must be at least 1");
        }
        let mut streams = Vec::with_capacity(self.arrivals.streams.len());
        for (i, s) in self.arrivals.streams.iter().enumerate() {
            let path = format!("arrivals.streams[{i}]");
            let Some(node) = network.topology.node(&s.node) else {
                return field(format!("{path}.node"), format!("unknown node {:?}", s.node));
            };
            let Some(class) = network.class_index(s.class) else {
                return field(format!("{path}.class"), format!("unknown class {}", s.class));
            };
            let segments = match (s.rate, &s.segments) {
                (Some(rate), None) => {
                    let batch = s.batch.unwrap_or(DEFAULT_BATCH);
                    if batch == 0 {
                        return field(format!("{path}.batch"), "must be at least 1");
                    }
                    let prob = rate / batch as f64;
                    if !(0.0..=1.0).contains(&prob) {
                        return field(format!("{path}.rate"), format!("{rate} is not reachable with batches of {batch}"));
                    }
                    vec![Segment { start: 0, end: horizon, batch, prob }]
                }
                (None, Some(segs)) if s.batch.is_none() => {
                    segs.iter().map(|g| Segment { start: g.start, end: g.end, batch: g.batch, prob: g.prob }).collect()
                }
                (None, Some(_)) => return field(format!("{path}.batch"), "goes with `rate`; segments carry their own batch"),
                _ => return field(path, "exactly one of `rate` and `segments` is required"),
            };
            streams.push(ArrivalStream { node, class, segments });
        }
        let schedule = ArrivalSchedule::new(&network, self.arrivals.a_max, horizon, streams).or_else(|e| field("arrivals", e))?;

        let policy = match &self.policy {
            PolicySection::Ora { v, d_max } => PolicyConfig::Ora { v: *v, d_max: *d_max },
            PolicySection::Uora { v, d_max, epsilon, nu_max, q_center, theta } => {
                PolicyConfig::Uora { v: *v, d_max: *d_max, epsilon: *epsilon, nu_max: *nu_max, q_center: *q_center, theta: theta.clone() }
            }
        };

        let r = &self.run;
        if r.seed > MAX_SEED {
            return field("run.seed", format!("must not exceed {MAX_SEED}"));
        }
        if r.stride == Some(0) {
            return field("run.stride", "must be at least 1");
        }
        for (i, [s, e]) in r.intervals.iter().enumerate() {
            if s >= e {
                return field(format!("run.intervals[{i}]"), format!("[{s}, {e}) is empty"));
            }
            if *e > horizon {
                return field(format!("run.intervals[{i}]"), format!("[{s}, {e}) extends past {horizon} slots"));
            }
        }
        if let Some(vs) = &r.sweep {
            if vs.is_empty() {
                return field("run.sweep", "must list at least one value");
            }
            if let Some((i, v)) = vs.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return field(format!("run.sweep[{i}]"), format!("V must be positive, got {v}"));
            }
        }
        let experiment = ExperimentConfig {
            network,
            schedule,
            policy,
            horizon,
            seed: r.seed,
            stride: r.stride,
            intervals: r.intervals.iter().map(|[s, e]| (*s, *e)).collect(),
            check: match r.check {
                CheckSection::Checked => CheckMode::Checked,
                CheckSection::Fast => CheckMode::Fast,
            },
        };
        let mut warnings = Vec::new();
        for v in r.sweep.clone().unwrap_or_else(|| vec![experiment.policy.v()]) {
            let mut probe = experiment.clone();
            probe.policy = experiment.policy.with_v(v);
            match check_experiment(&probe) {
                Ok(w) => warnings.extend(w),
                Err(e) => return field(sim_error_field(&e), e),
            }
        }
        warnings.dedup();
        Ok(Resolved { experiment, sweep: r.sweep.clone(), output: r.output.as_ref().map(PathBuf::from), warnings })
    }

    /// The fully explicit file for a resolved experiment: every stream as
    /// segments, every default written out.
    pub fn from_experiment(exp: &ExperimentConfig, sweep: Option<Vec<f64>>, output: Option<String>) -> Self {
        let t = &exp.network.topology;
        let name = |n| t.node_name(n).to_string();
        let classes = exp.network.classes();
        ConfigFile {
            topology: TopologySection {
                nodes: t.node_names().to_vec(),
                links: t.links().iter().map(|l| LinkEntry { from: name(l.from), to: name(l.to), capacity: l.capacity }).collect(),
            },
            classes: classes
                .iter()
                .map(|c| ClassSection {
                    id: c.id,
                    destination: Some(name(c.destination)),
                    utility: c.utility.into(),
                    links: c.allowed_links.as_ref().map(|ls| {
                        ls.iter()
                            .map(|l| {
                                let l = t.link(*l);
                                [name(l.from), name(l.to)]
                            })
                            .collect()
                    }),
                })
                .collect(),
            arrivals: ArrivalsSection {
                a_max: exp.schedule.a_max,
                streams: exp
                    .schedule
                    .streams()
                    .iter()
                    .map(|s| StreamSection {
                        node: name(s.node),
                        class: classes[s.class].id,
                        rate: None,
                        batch: None,
                        segments: Some(
                            s.segments.iter().map(|g| SegmentEntry { start: g.start, end: g.end, batch: g.batch, prob: g.prob }).collect(),
                        ),
                    })
                    .collect(),
            },
            policy: match &exp.policy {
                PolicyConfig::Ora { v, d_max } => PolicySection::Ora { v: *v, d_max: *d_max },
                PolicyConfig::Uora { v, d_max, epsilon, nu_max, q_center, theta } => PolicySection::Uora {
                    v: *v,
                    d_max: *d_max,
                    epsilon: *epsilon,
                    nu_max: *nu_max,
                    q_center: *q_center,
                    theta: theta.clone(),
                },
            },
            run: RunSection {
                slots: exp.horizon,
                seed: exp.seed,
                stride: exp.stride,
                intervals: exp.intervals.iter().map(|(s, e)| [*s, *e]).collect(),
                output,
                check: match exp.check {
                    CheckMode::Checked => CheckSection::Checked,
                    CheckMode::Fast => CheckSection::Fast,
                },
                sweep,
            },
        }
    }
}

fn sim_error_field(e: &SimError) -> &'static str {
    match e {
        SimError::Dmax(_) => "policy.d_max",
        SimError::Config(_) | SimError::UnknownWindow(..) => "run",
        _ => "policy",
    }
}
