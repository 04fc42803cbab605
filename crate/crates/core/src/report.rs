//! Text renderings of run results. All output is a pure function of its
//! input, so repeated runs write identical bytes.

use std::fmt::Write;

use serde::Serialize;

use crate::model::{Network, NodeId};
use crate::sim::RunOutput;

/// One row per (V, class).
///
/// Columns: `v, class, throughput, delivered, dropped, max_backlog,
/// backlog_bound, max_z, z_bound, residual`. `max_backlog` is over all
/// nodes; the Z columns are empty for ORA.
pub fn summary_csv(runs: &[RunOutput], net: &Network) -> String {
    let mut out = String::from("v,class,throughput,delivered,dropped,max_backlog,backlog_bound,max_z,z_bound,residual\n");
    for run in runs {
        let m = &run.metrics;
        let max_q = m.max_backlog_per_class();
        for (c, class) in net.classes().iter().enumerate() {
            let z = m.max_z.as_ref().map(|z| z[c].to_string()).unwrap_or_default();
            let zb = m.bounds.z_max.as_ref().map(|z| z[c].to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                m.v, class.id, m.throughput[c], m.delivered[c], m.dropped[c], max_q[c], m.bounds.q_max[c], z, zb, m.residuals[c]
            )
            .unwrap();
        }
    }
    out
}

/// Columns: `v, start, end, class, delivered, throughput`.
pub fn intervals_csv(runs: &[RunOutput], net: &Network) -> String {
    let mut out = String::from("v,start,end,class,delivered,throughput\n");
    for run in runs {
        let m = &run.metrics;
        for rec in &m.intervals {
            let r = rec.throughput();
            for (c, class) in net.classes().iter().enumerate() {
                writeln!(out, "{},{},{},{},{},{}", m.v, rec.start, rec.end, class.id, rec.delivered[c], r[c]).unwrap();
            }
        }
    }
    out
}

/// Columns: `v, slot, node, class, Q, D, Z`. Real queues fill Q and D;
/// under UORA each class also gets a row at its destination with Z.
pub fn timeseries_csv(runs: &[RunOutput], net: &Network) -> String {
    let nc = net.num_classes();
    let t = &net.topology;
    let mut out = String::from("v,slot,node,class,Q,D,Z\n");
    for run in runs {
        let v = run.metrics.v;
        let uora = run.metrics.max_z.is_some();
        for s in &run.series {
            for n in t.nodes() {
                for (c, class) in net.classes().iter().enumerate() {
                    let i = n.0 * nc + c;
                    if net.has_queue(n, c) {
                        writeln!(out, "{v},{},{},{},{},{},", s.slot, t.node_name(n), class.id, s.q[i], s.d[i]).unwrap();
                    } else if uora && net.destination(c) == n {
                        writeln!(out, "{v},{},{},{},,,{}", s.slot, t.node_name(n), class.id, s.z[c]).unwrap();
                    }
                }
            }
        }
    }
    out
}

#[derive(Serialize)]
struct MetricsDoc<'a> {
    run: Vec<RunDoc<'a>>,
}

#[derive(Serialize)]
struct RunDoc<'a> {
    policy: &'a str,
    v: f64,
    arrival_seed: String,
    slots: u64,
    objective: f64,
    bound_constant: f64,
    gap: f64,
    throughput: &'a [f64],
    delivered: &'a [f64],
    dropped: &'a [f64],
    residuals: &'a [f64],
    warnings: &'a [String],
    max_backlog: Vec<QueueMax>,
}

#[derive(Serialize)]
struct QueueMax {
    node: String,
    class: u32,
    q: f64,
    d_min: f64,
    d_max: f64,
}

/// Key-value document with the scalar metrics of every run.
pub fn metrics_toml(runs: &[RunOutput], net: &Network) -> String {
    let nc = net.num_classes();
    let doc = MetricsDoc {
        run: runs
            .iter()
            .map(|r| {
                let m = &r.metrics;
                let mut max_backlog = Vec::new();
                for n in net.topology.nodes() {
                    for (c, class) in net.classes().iter().enumerate() {
                        if net.has_queue(n, c) {
                            let i = n.0 * nc + c;
                            max_backlog.push(QueueMax {
                                node: net.topology.node_name(NodeId(n.0)).to_string(),
                                class: class.id,
                                q: m.max_q[i],
                                d_min: m.min_d[i],
                                d_max: m.max_d[i],
                            });
                        }
                    }
                }
                RunDoc {
                    policy: m.policy,
                    v: m.v,
                    // u64 seeds do not fit TOML integers
                    arrival_seed: format!("{:#018x}", m.arrival_seed),
                    slots: m.horizon,
                    objective: m.objective,
                    bound_constant: m.bounds.b,
                    gap: m.bounds.gap,
                    throughput: &m.throughput,
                    delivered: &m.delivered,
                    dropped: &m.dropped,
                    residuals: &m.residuals,
                    warnings: &m.warnings,
                    max_backlog,
                }
            })
            .collect(),
    };
    toml::to_string(&doc).expect("metrics serialize")
}
