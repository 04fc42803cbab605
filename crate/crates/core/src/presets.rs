//! Built-in experiment presets on the three-node line and the four-source tree.

use crate::model::{ArrivalSchedule, ArrivalStream, Network, NodeId, Segment, Topology, TrafficClass, Utility, DEFAULT_BATCH};
use crate::sim::{CheckMode, ExperimentConfig, PolicyConfig};

pub const PRESET_NAMES: [&str; 7] = ["table1a", "table1b", "table2", "table3", "table4", "table5", "fig5"];

pub const HORIZON: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;
const A_MAX: u32 = 20;

/// `A -> B -> C`, unit links. Class 1 enters at B for C, class 2 at A for C,
/// class 3 at A for B.
pub fn line_network(utilities: [Utility; 3]) -> Network {
    let t = Topology::new(&["A", "B", "C"], &[("A", "B", 1.0), ("B", "C", 1.0)]).expect("static topology");
    let [u1, u2, u3] = utilities;
    let cls = |id, dest, utility| TrafficClass { id, destination: NodeId(dest), utility, allowed_links: None };
    Network::new(t, vec![cls(1, 2, u1), cls(2, 2, u2), cls(3, 1, u3)]).expect("static classes")
}

/// `A -> B -> R` and `C -> D -> R`, unit links, all classes for R. Class 1
/// enters at A and C, class 2 at B, class 3 at D.
pub fn tree_network(utility: Utility) -> Network {
    let t = Topology::new(&["A", "B", "C", "D", "R"], &[("A", "B", 1.0), ("B", "R", 1.0), ("C", "D", 1.0), ("D", "R", 1.0)])
        .expect("static topology");
    let cls = |id| TrafficClass { id, destination: NodeId(4), utility, allowed_links: None };
    Network::new(t, vec![cls(1), cls(2), cls(3)]).expect("static classes")
}

/// Where each class of the line network enters.
pub const LINE_SOURCES: [(usize, usize); 3] = [(1, 0), (0, 1), (0, 2)];
/// Where each class of the tree enters, as (node, class index).
pub const TREE_SOURCES: [(usize, usize); 4] = [(0, 0), (2, 0), (1, 1), (3, 2)];

fn constant(rate: f64) -> Vec<Segment> {
    vec![Segment { start: 0, end: HORIZON, batch: DEFAULT_BATCH, prob: rate / DEFAULT_BATCH as f64 }]
}

fn streams(sources: &[(usize, usize)], rates: impl Fn(usize) -> Vec<Segment>) -> Vec<ArrivalStream> {
    sources.iter().enumerate().map(|(i, &(node, class))| ArrivalStream { node: NodeId(node), class, segments: rates(i) }).collect()
}

/// Class 2 offers 2 packets/slot in the middle window and 0.1 elsewhere;
/// classes 1 and 3 offer 0.8 throughout.
pub const OVERLOAD_WINDOW: (u64, u64) = (300_000, 600_000);

fn time_varying_class2() -> Vec<Segment> {
    let (s, e) = OVERLOAD_WINDOW;
    let seg = |start, end, rate: f64| Segment { start, end, batch: DEFAULT_BATCH, prob: rate / DEFAULT_BATCH as f64 };
    vec![seg(0, s, 0.1), seg(s, e, 2.0), seg(e, HORIZON, 0.1)]
}

/// A reference value reported alongside a preset, keyed by row label and
/// quantity name.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub row: String,
    pub quantity: String,
    pub value: f64,
}

fn references(rows: &[(&str, &[(&str, f64)])]) -> Vec<Reference> {
    rows.iter()
        .flat_map(|(row, qs)| qs.iter().map(move |(q, v)| Reference { row: row.to_string(), quantity: q.to_string(), value: *v }))
        .collect()
}

fn throughput_refs(vs: &[f64], table: &[[f64; 3]]) -> Vec<Reference> {
    vs.iter()
        .zip(table)
        .flat_map(|(v, r)| (0..3).map(move |c| Reference { row: format!("V={v}"), quantity: format!("r{}", c + 1), value: r[c] }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// Configured with the first entry of `vs`.
    pub config: ExperimentConfig,
    pub vs: Vec<f64>,
    pub published: Vec<Reference>,
}

pub fn preset(name: &str) -> Option<Preset> {
    let linear = |w: [f64; 3]| w.map(|weight| Utility::Linear { weight });
    let log = Utility::Log { weight: 1.0, shift: 0.0 };
    let fixed_line = |net: &Network| ArrivalSchedule::new(net, A_MAX, HORIZON, streams(&LINE_SOURCES, |_| constant(2.0)));
    let ora_vs = vec![10.0, 20.0, 50.0, 100.0];
    let uora_line = |v| PolicyConfig::Uora { v, d_max: 21.0, epsilon: 0.1, nu_max: 3.0, q_center: 1000.0, theta: Some(vec![10.0; 3]) };

    let (net, schedule, policy, vs, published, stride, intervals) = match name {
        "table1a" | "table1b" => {
            let (w, table) = if name == "table1a" {
                ([3.0, 2.0, 1.0], [[0.787, 0.168, 0.099], [0.867, 0.133, 0.410], [0.992, 0.008, 0.967], [0.999, 0.0, 0.999]])
            } else {
                ([3.0, 5.0, 1.0], [[0.185, 0.815, 0.083], [0.107, 0.893, 0.095], [0.031, 0.969, 0.031], [0.002, 0.998, 0.001]])
            };
            let net = line_network(linear(w));
            let schedule = fixed_line(&net);
            let published = throughput_refs(&ora_vs, &table);
            (net, schedule, PolicyConfig::Ora { v: 10.0, d_max: 21.0 }, ora_vs, published, None, vec![])
        }
        "table2" | "fig5" => {
            let net = line_network(linear([3.0, 5.0, 1.0]));
            let rates = |i: usize| if i == 1 { time_varying_class2() } else { constant(0.8) };
            let schedule = ArrivalSchedule::new(&net, A_MAX, HORIZON, streams(&LINE_SOURCES, rates));
            let (s, e) = OVERLOAD_WINDOW;
            let intervals = vec![(0, s), (s, e), (e, HORIZON)];
            let published = if name == "table2" {
                references(&[
                    ("[0,300000)", &[("r1", 0.797), ("r2", 0.097), ("r3", 0.771)]),
                    ("[300000,600000)", &[("r1", 0.001), ("r2", 0.998), ("r3", 0.0)]),
                    ("[600000,1000000)", &[("r1", 0.798), ("r2", 0.102), ("r3", 0.772)]),
                ])
            } else {
                references(&[("overload", &[("max Q_B2", 542.0)])])
            };
            let stride = (name == "fig5").then_some(1000);
            (net, schedule, PolicyConfig::Ora { v: 100.0, d_max: 21.0 }, vec![100.0], published, stride, intervals)
        }
        "table3" | "table4" => {
            let net = line_network([log; 3]);
            let schedule = fixed_line(&net);
            let published = if name == "table3" {
                let rs = [[0.522, 0.478, 0.522], [0.585, 0.415, 0.585], [0.631, 0.369, 0.631], [0.648, 0.352, 0.647]];
                let mut refs = throughput_refs(&ora_vs, &rs);
                for (v, u) in ora_vs.iter().zip([-2.038, -1.952, -1.918, -1.912]) {
                    refs.push(Reference { row: format!("V={v}"), quantity: "utility".into(), value: u });
                }
                refs
            } else {
                let maxima = [
                    [140.0, 97.0, 137.0, 137.0],
                    [237.0, 187.0, 240.0, 236.0],
                    [539.0, 441.0, 538.0, 540.0],
                    [1036.0, 865.0, 1039.0, 1039.0],
                ];
                let names = ["max Q_B1", "max Q_B2", "max Q_A2", "max Q_A3"];
                ora_vs
                    .iter()
                    .zip(maxima)
                    .flat_map(|(v, row)| {
                        names.iter().zip(row).map(move |(n, m)| Reference { row: format!("V={v}"), quantity: n.to_string(), value: m })
                    })
                    .collect()
            };
            (net, schedule, uora_line(10.0), ora_vs, published, None, vec![])
        }
        "table5" => {
            let net = tree_network(Utility::AlphaFair { alpha: 100.0 });
            let schedule = ArrivalSchedule::new(&net, A_MAX, HORIZON, streams(&TREE_SOURCES, |_| constant(2.0)));
            let vs = vec![10.0, 20.0, 30.0, 50.0];
            let table = [[0.200, 0.100, 0.100], [0.364, 0.206, 0.205], [0.661, 0.650, 0.651], [0.667, 0.667, 0.667]];
            let published = throughput_refs(&vs, &table);
            let policy = PolicyConfig::Uora { v: 10.0, d_max: 22.0, epsilon: 1.0, nu_max: 4.0, q_center: 100.0, theta: Some(vec![1.0; 3]) };
            (net, schedule, policy, vs, published, None, vec![])
        }
        _ => return None,
    };
    let schedule = schedule.expect("static schedule");
    Some(Preset {
        name: PRESET_NAMES.iter().find(|n| **n == name).copied().expect("listed preset"),
        config: ExperimentConfig {
            network: net,
            schedule,
            policy,
            horizon: HORIZON,
            seed: DEFAULT_SEED,
            stride,
            intervals,
            check: CheckMode::Checked,
        },
        vs,
        published,
    })
}
