//! Overload-resilient control for weighted-sum throughput: max-differential
//! backlog routing plus threshold packet dropping.
//!
//! Each queue `Q` drops at full rate `d_max` whenever it exceeds its drop
//! queue `D`, and each `D` drains at `d_max` whenever it exceeds `V·θ_c`. The
//! result keeps every queue inside a fixed buffer of `V·θ_c + 2·d_max` while
//! discarding as little weighted traffic as possible.

use thiserror::Error;

use crate::model::{LinkId, Network, Utility};
use crate::queues::QueueState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("V must be positive, got {0}")]
    NonPositiveV(f64),
    #[error("d_max must be positive, got {0}")]
    NonPositiveDmax(f64),
    #[error("class {0} does not have a linear utility; throughput control needs weights")]
    NotLinear(u32),
    #[error("theta for class {class} must be positive, got {theta}")]
    BadTheta { class: u32, theta: f64 },
    #[error("{0}")]
    Constraint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraParams {
    pub v: f64,
    pub d_max: f64,
    /// Per-class drop weights; equal to the linear utility weights.
    pub theta: Vec<f64>,
}

impl OraParams {
    /// Takes `θ_c = a_c` from each class' linear utility.
    pub fn new(net: &Network, v: f64, d_max: f64) -> Result<Self, ParamError> {
        if !(v > 0.0) {
            return Err(ParamError::NonPositiveV(v));
        }
        if !(d_max > 0.0) {
            return Err(ParamError::NonPositiveDmax(d_max));
        }
        let theta = net
            .classes()
            .iter()
            .map(|c| match c.utility {
                Utility::Linear { weight } => Ok(weight),
                _ => Err(ParamError::NotLinear(c.id)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { v, d_max, theta })
    }

    pub fn drop_init(&self) -> Vec<f64> {
        self.theta.iter().map(|t| self.v * t).collect()
    }

    /// Buffer bound `V·θ_c + 2·d_max`.
    pub fn q_max(&self, c: usize) -> f64 {
        self.v * self.theta[c] + 2.0 * self.d_max
    }

    pub fn d_upper(&self, c: usize) -> f64 {
        self.v * self.theta[c] + self.d_max
    }

    pub fn d_lower(&self, c: usize) -> f64 {
        self.v * self.theta[c] - self.d_max
    }
}

/// Back-pressure allocation. `receiver_backlog(c)` is the backlog seen at
/// class `c`'s destination (zero for plain back-pressure). Returns
/// link-major rates.
pub fn route_backpressure(state: &QueueState, net: &Network, receiver_backlog: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut mu = vec![0.0; net.topology.num_links() * net.num_classes()];
    route_into(state, net, &receiver_backlog, &mut mu);
    mu
}

pub(crate) fn route_into(state: &QueueState, net: &Network, receiver_backlog: &dyn Fn(usize) -> f64, mu: &mut [f64]) {
    let nc = net.num_classes();
    mu.iter_mut().for_each(|m| *m = 0.0);
    for (li, link) in net.topology.links().iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..nc {
            if !net.eligible(LinkId(li), c) {
                continue;
            }
            let head = if link.to == net.destination(c) { receiver_backlog(c) } else { state.q(link.to, c) };
            let w = state.q(link.from, c) - head;
            // strict comparison keeps the smallest class on ties
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((c, w));
            }
        }
        if let Some((c, w)) = best {
            if w > 0.0 {
                mu[li * nc + c] = link.capacity;
            }
        }
    }
}

/// `d_max` wherever `Q > D`, else zero.
pub fn drop_decision(state: &QueueState, net: &Network, d_max: f64) -> Vec<f64> {
    let mut out = vec![0.0; state.q.len()];
    drop_into(state, net, d_max, &mut out);
    out
}

pub(crate) fn drop_into(state: &QueueState, net: &Network, d_max: f64, out: &mut [f64]) {
    let nc = net.num_classes();
    for (i, o) in out.iter_mut().enumerate() {
        let has = net.has_queue(crate::model::NodeId(i / nc), i % nc);
        *o = if has && state.q[i] > state.d[i] { d_max } else { 0.0 };
    }
}

/// `d_max` wherever `D > V·θ_c`, else zero.
pub fn drop_queue_service(state: &QueueState, net: &Network, v: f64, theta: &[f64], d_max: f64) -> Vec<f64> {
    let mut out = vec![0.0; state.d.len()];
    drop_service_into(state, net, v, theta, d_max, &mut out);
    out
}

pub(crate) fn drop_service_into(state: &QueueState, net: &Network, v: f64, theta: &[f64], d_max: f64, out: &mut [f64]) {
    let nc = net.num_classes();
    for (i, o) in out.iter_mut().enumerate() {
        let c = i % nc;
        let has = net.has_queue(crate::model::NodeId(i / nc), c);
        *o = if has && state.d[i] > v * theta[c] { d_max } else { 0.0 };
    }
}

/// The constant `B` in the `B/V` throughput gap:
/// `|N||C| [(μ_out + d_max)² + (A_max + μ_in)² + 2 d_max²]`.
pub fn ora_bound_constants(nodes: usize, classes: usize, mu_in: f64, mu_out: f64, a_max: f64, d_max: f64) -> f64 {
    (nodes * classes) as f64 * ((mu_out + d_max).powi(2) + (a_max + mu_in).powi(2) + 2.0 * d_max.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeId, Topology, TrafficClass};

    /// A -> B -> C. Class 1: B to C, class 2: A to C, class 3: A to B.
    fn three_node(weights: [f64; 3]) -> Network {
        let t = Topology::new(&["A", "B", "C"], &[("A", "B", 1.0), ("B", "C", 1.0)]).unwrap();
        let cls = |id, dest, w| TrafficClass { id, destination: NodeId(dest), utility: Utility::Linear { weight: w }, allowed_links: None };
        Network::new(t, vec![cls(1, 2, weights[0]), cls(2, 2, weights[1]), cls(3, 1, weights[2])]).unwrap()
    }

    #[test]
    fn backpressure_picks_largest_differential() {
        let net = three_node([3.0, 2.0, 1.0]);
        let mut s = QueueState::zeros(&net);
        s.set_q(NodeId(1), 0, 10.0);
        s.set_q(NodeId(1), 1, 4.0);
        let mu = route_backpressure(&s, &net, |_| 0.0);
        // link 1 = (B, C)
        assert_eq!(&mu[3..6], &[1.0, 0.0, 0.0]);
        assert_eq!(&mu[0..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn idle_when_no_positive_differential() {
        let net = three_node([3.0, 2.0, 1.0]);
        let mut s = QueueState::zeros(&net);
        s.set_q(NodeId(0), 1, 5.0);
        s.set_q(NodeId(1), 1, 5.0);
        let mu = route_backpressure(&s, &net, |_| 0.0);
        // class 2 on (A,B): W = 0, class 3 empty: link idles
        assert_eq!(&mu[0..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn ties_go_to_smallest_class() {
        let net = three_node([3.0, 2.0, 1.0]);
        let mut s = QueueState::zeros(&net);
        s.set_q(NodeId(1), 0, 7.0);
        s.set_q(NodeId(1), 1, 7.0);
        let mu = route_backpressure(&s, &net, |_| 0.0);
        assert_eq!(&mu[3..6], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn thresholds() {
        let net = three_node([3.0, 2.0, 1.0]);
        let p = OraParams::new(&net, 100.0, 21.0).unwrap();
        let mut s = QueueState::new(&net, &p.drop_init());
        let i = |n: usize, c: usize| n * 3 + c;
        // fresh start: Q = 0 < D = Vθ
        assert!(drop_decision(&s, &net, 21.0).iter().all(|d| *d == 0.0));
        s.q[i(1, 0)] = 1050.0;
        s.d[i(1, 0)] = 1000.0;
        s.q[i(0, 1)] = 200.0;
        s.d[i(0, 1)] = 200.0;
        let d = drop_decision(&s, &net, 21.0);
        assert_eq!(d[i(1, 0)], 21.0);
        assert_eq!(d[i(0, 1)], 0.0);

        s.d[i(1, 0)] = 300.0 + 5.0;
        s.d[i(0, 1)] = 200.0;
        s.d[i(0, 2)] = 100.0 - 21.0;
        let phi = drop_queue_service(&s, &net, p.v, &p.theta, p.d_max);
        assert_eq!(phi[i(1, 0)], 21.0);
        assert_eq!(phi[i(0, 1)], 0.0);
        assert_eq!(phi[i(0, 2)], 0.0);
    }

    #[test]
    fn params_need_linear_weights() {
        let t = Topology::new(&["A", "B"], &[("A", "B", 1.0)]).unwrap();
        let net = Network::new(
            t,
            vec![TrafficClass { id: 1, destination: NodeId(1), utility: Utility::Log { weight: 1.0, shift: 0.0 }, allowed_links: None }],
        )
        .unwrap();
        assert_eq!(OraParams::new(&net, 1.0, 1.0), Err(ParamError::NotLinear(1)));
        assert!(OraParams::new(&three_node([1.0; 3]), 0.0, 1.0).is_err());
    }

    #[test]
    fn bound_constant() {
        // Independent evaluation of the formula for the three-node instance.
        let (n, c, mu_out, d, a, mu_in) = (3.0, 3.0, 1.0, 21.0, 20.0, 1.0);
        let expected: f64 = n * c * ((mu_out + d) * (mu_out + d) + (a + mu_in) * (a + mu_in) + 2.0 * d * d);
        assert_eq!(expected, 16263.0);
        assert_eq!(ora_bound_constants(3, 3, 1.0, 1.0, 20.0, 21.0), 16263.0);
        assert_eq!(ora_bound_constants(3, 3, 0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(ora_bound_constants(3, 6, 1.0, 1.0, 20.0, 21.0), 2.0 * 16263.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weight_scaling_preserves_decisions(
                q in prop::collection::vec(0.0..2000.0f64, 9),
                dq in prop::collection::vec(0.0..2000.0f64, 9),
                scale in 0.1..10.0f64,
            ) {
                let net = three_node([3.0, 2.0, 1.0]);
                let scaled = three_node([3.0 * scale, 2.0 * scale, 1.0 * scale]);
                let p = OraParams::new(&net, 100.0, 21.0).unwrap();
                let ps = OraParams::new(&scaled, 100.0 / scale, 21.0).unwrap();
                let mut s = QueueState::zeros(&net);
                s.q.copy_from_slice(&q);
                s.d.copy_from_slice(&dq);
                for c in 0..3 {
                    s.q[net.destination(c).0 * 3 + c] = 0.0;
                    s.d[net.destination(c).0 * 3 + c] = 0.0;
                }
                prop_assert_eq!(route_backpressure(&s, &net, |_| 0.0), route_backpressure(&s, &scaled, |_| 0.0));
                prop_assert_eq!(drop_decision(&s, &net, 21.0), drop_decision(&s, &scaled, 21.0));
                let a = drop_queue_service(&s, &net, p.v, &p.theta, 21.0);
                let b = drop_queue_service(&s, &scaled, ps.v, &ps.theta, 21.0);
                for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                    let c = i % 3;
                    // thresholds agree up to rounding of V·θ
                    if (s.d[i] - p.v * p.theta[c]).abs() > 1e-9 {
                        prop_assert_eq!(x, y);
                    }
                }
            }

            #[test]
            fn never_serves_nonpositive_differential(q in prop::collection::vec(0.0..50.0f64, 9)) {
                let net = three_node([1.0; 3]);
                let mut s = QueueState::zeros(&net);
                s.q.copy_from_slice(&q);
                let mu = route_backpressure(&s, &net, |_| 0.0);
                for (li, link) in net.topology.links().iter().enumerate() {
                    for c in 0..3 {
                        if mu[li * 3 + c] > 0.0 {
                            let head = if link.to == net.destination(c) { 0.0 } else { s.q(link.to, c) };
                            prop_assert!(s.q(link.from, c) - head > 0.0);
                        }
                    }
                }
            }
        }
    }
}
