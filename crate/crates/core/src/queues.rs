//! Queue state and the per-slot update.
//!
//! A slot runs in three steps on the start-of-slot snapshot: transmit
//! (`actual_transfers`), drop (`actual_drops`), then add exogenous and
//! endogenous arrivals (`apply_slot`). The allocated rates in a
//! [`SlotDecision`] are upper limits; the [`SlotLedger`] records what actually
//! moved, which is what the conservation account is built from.

use thiserror::Error;

use crate::model::{LinkId, Network, NodeId};

/// Real queues `Q`, drop queues `D` and receiver virtual queues `Z`.
///
/// `q` and `d` are node-major (`node * classes + class`). Entries at a class'
/// destination exist in storage only and are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    classes: usize,
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
}

impl QueueState {
    /// Empty real and virtual queues, drop queues at `drop_init[c]`.
    pub fn new(net: &Network, drop_init: &[f64]) -> Self {
        let nc = net.num_classes();
        let mut d = vec![0.0; net.num_nodes() * nc];
        for n in net.topology.nodes() {
            for c in 0..nc {
                if net.has_queue(n, c) {
                    d[n.0 * nc + c] = drop_init[c];
                }
            }
        }
        Self { classes: nc, q: vec![0.0; net.num_nodes() * nc], d, z: vec![0.0; nc] }
    }

    pub fn zeros(net: &Network) -> Self {
        Self::new(net, &vec![0.0; net.num_classes()])
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn q(&self, n: NodeId, c: usize) -> f64 {
        self.q[n.0 * self.classes + c]
    }

    #[inline]
    pub fn d(&self, n: NodeId, c: usize) -> f64 {
        self.d[n.0 * self.classes + c]
    }

    pub fn set_q(&mut self, n: NodeId, c: usize, v: f64) {
        self.q[n.0 * self.classes + c] = v;
    }

    pub fn set_d(&mut self, n: NodeId, c: usize, v: f64) {
        self.d[n.0 * self.classes + c] = v;
    }
}

/// Allocated rates for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDecision {
    /// Service rate per (link, class), link-major.
    pub mu: Vec<f64>,
    /// Drop rate per (node, class).
    pub drop: Vec<f64>,
    /// Drop-queue deletion rate per (node, class).
    pub phi: Vec<f64>,
    /// Virtual service rate per class.
    pub nu: Vec<f64>,
}

impl SlotDecision {
    pub fn zeros(net: &Network) -> Self {
        let nc = net.num_classes();
        Self {
            mu: vec![0.0; net.topology.num_links() * nc],
            drop: vec![0.0; net.num_nodes() * nc],
            phi: vec![0.0; net.num_nodes() * nc],
            nu: vec![0.0; nc],
        }
    }

    pub fn mu(&self, l: LinkId, c: usize) -> f64 {
        self.mu[l.0 * self.nu.len() + c]
    }
}

/// What actually happened in a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLedger {
    /// Packets moved per (link, class).
    pub moved: Vec<f64>,
    /// Packets moved from `Q` into `D` per (node, class).
    pub dropped: Vec<f64>,
    /// Packets received at each class' destination.
    pub delivered: Vec<f64>,
    /// Packets removed from `D` per (node, class).
    pub deleted: Vec<f64>,
}

impl SlotLedger {
    pub fn zeros(net: &Network) -> Self {
        let nc = net.num_classes();
        Self {
            moved: vec![0.0; net.topology.num_links() * nc],
            dropped: vec![0.0; net.num_nodes() * nc],
            delivered: vec![0.0; nc],
            deleted: vec![0.0; net.num_nodes() * nc],
        }
    }

    fn clear(&mut self) {
        for v in [&mut self.moved, &mut self.dropped, &mut self.delivered, &mut self.deleted] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Total packets sent out of `n` for class `c` this slot.
    pub fn sent(&self, net: &Network, n: NodeId, c: usize) -> f64 {
        let nc = net.num_classes();
        net.topology.out_links(n).iter().map(|l| self.moved[l.0 * nc + c]).sum()
    }

    pub fn received(&self, net: &Network, n: NodeId, c: usize) -> f64 {
        let nc = net.num_classes();
        net.topology.in_links(n).iter().map(|l| self.moved[l.0 * nc + c]).sum()
    }
}

/// Computes the packets actually moved on every link.
///
/// At each (node, class), out-links with positive allocation are served in
/// descending order of allocated rate (ties to the smaller link index), each
/// taking `min(remaining backlog, allocation)` from the start-of-slot backlog.
pub fn actual_transfers(state: &QueueState, decision: &SlotDecision, net: &Network) -> SlotLedger {
    let mut ledger = SlotLedger::zeros(net);
    actual_transfers_into(state, decision, net, &mut ledger);
    ledger
}

pub(crate) fn actual_transfers_into(state: &QueueState, decision: &SlotDecision, net: &Network, ledger: &mut SlotLedger) {
    ledger.clear();
    let nc = net.num_classes();
    let mut order: Vec<LinkId> = Vec::new();
    for n in net.topology.nodes() {
        let outs = net.topology.out_links(n);
        for c in 0..nc {
            if !net.has_queue(n, c) {
                continue;
            }
            order.clear();
            order.extend(outs.iter().copied().filter(|l| decision.mu[l.0 * nc + c] > 0.0));
            if order.is_empty() {
                continue;
            }
            if order.len() > 1 {
                order.sort_by(|a, b| {
                    let (ra, rb) = (decision.mu[a.0 * nc + c], decision.mu[b.0 * nc + c]);
                    rb.total_cmp(&ra).then(a.cmp(b))
                });
            }
            let mut remaining = state.q(n, c);
            for l in &order {
                if remaining <= 0.0 {
                    break;
                }
                let take = remaining.min(decision.mu[l.0 * nc + c]);
                ledger.moved[l.0 * nc + c] = take;
                remaining -= take;
            }
        }
    }
    for c in 0..nc {
        let dest = net.destination(c);
        ledger.delivered[c] = net.topology.in_links(dest).iter().map(|l| ledger.moved[l.0 * nc + c]).sum();
    }
}

/// Fills `ledger.dropped` with `min((Q - sent)^+, d)` for every real queue.
pub fn actual_drops(state: &QueueState, decision: &SlotDecision, net: &Network, ledger: &mut SlotLedger) {
    let nc = net.num_classes();
    for n in net.topology.nodes() {
        for c in 0..nc {
            let i = n.0 * nc + c;
            ledger.dropped[i] =
                if net.has_queue(n, c) { (state.q[i] - ledger.sent(net, n, c)).max(0.0).min(decision.drop[i]) } else { 0.0 };
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("negative backlog {value} at node {node}, class index {class}")]
    NegativeBacklog { node: usize, class: usize, value: f64 },
}

/// Advances the state by one slot using the ledger from
/// [`actual_transfers`] and [`actual_drops`]. Fills `ledger.deleted` and
/// records the slot in `account`.
pub fn apply_slot(
    state: &QueueState,
    decision: &SlotDecision,
    arrivals: &[f64],
    ledger: &mut SlotLedger,
    net: &Network,
    account: &mut ConservationAccount,
) -> Result<QueueState, DynamicsError> {
    let mut next = state.clone();
    apply_slot_in_place(&mut next, decision, arrivals, ledger, net, account)?;
    Ok(next)
}

pub(crate) fn apply_slot_in_place(
    state: &mut QueueState,
    decision: &SlotDecision,
    arrivals: &[f64],
    ledger: &mut SlotLedger,
    net: &Network,
    account: &mut ConservationAccount,
) -> Result<(), DynamicsError> {
    let nc = net.num_classes();
    // Transmit and drop against the snapshot first, then add arrivals, so the
    // order of nodes does not matter.
    for n in net.topology.nodes() {
        for c in 0..nc {
            if !net.has_queue(n, c) {
                continue;
            }
            let i = n.0 * nc + c;
            let after = state.q[i] - ledger.sent(net, n, c) - ledger.dropped[i];
            if after < -1e-9 {
                return Err(DynamicsError::NegativeBacklog { node: n.0, class: c, value: after });
            }
            state.q[i] = after.max(0.0);
            let deleted = state.d[i].min(decision.phi[i]);
            ledger.deleted[i] = deleted;
            state.d[i] = state.d[i] - deleted + ledger.dropped[i];
        }
    }
    for n in net.topology.nodes() {
        for c in 0..nc {
            if net.has_queue(n, c) {
                let i = n.0 * nc + c;
                state.q[i] += arrivals[i] + ledger.received(net, n, c);
            }
        }
    }
    for c in 0..nc {
        state.z[c] = (state.z[c] - decision.nu[c]).max(0.0) + ledger.delivered[c];
    }
    account.record(net, arrivals, ledger, state);
    Ok(())
}

/// Running per-class totals behind the flow-conservation identity
/// `arrivals = delivered + dropped + backlog`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConservationAccount {
    pub arrivals: Vec<f64>,
    pub delivered: Vec<f64>,
    pub dropped: Vec<f64>,
    pub backlog: Vec<f64>,
}

impl ConservationAccount {
    pub fn new(classes: usize) -> Self {
        Self { arrivals: vec![0.0; classes], delivered: vec![0.0; classes], dropped: vec![0.0; classes], backlog: vec![0.0; classes] }
    }

    pub fn record(&mut self, net: &Network, arrivals: &[f64], ledger: &SlotLedger, next: &QueueState) {
        let nc = net.num_classes();
        for c in 0..nc {
            let mut a = 0.0;
            let mut dropped = 0.0;
            let mut backlog = 0.0;
            for n in net.topology.nodes() {
                if net.has_queue(n, c) {
                    let i = n.0 * nc + c;
                    a += arrivals[i];
                    dropped += ledger.dropped[i];
                    backlog += next.q[i];
                }
            }
            self.arrivals[c] += a;
            self.dropped[c] += dropped;
            self.delivered[c] += ledger.delivered[c];
            self.backlog[c] = backlog;
        }
    }

    /// `arrivals - delivered - dropped - backlog` for one class.
    pub fn residual(&self, c: usize) -> f64 {
        self.arrivals[c] - self.delivered[c] - self.dropped[c] - self.backlog[c]
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("flow conservation broken for class index {class}: residual {residual}")]
pub struct ConservationBroken {
    pub class: usize,
    pub residual: f64,
}

pub fn check_conservation(account: &ConservationAccount) -> Result<(), ConservationBroken> {
    for c in 0..account.arrivals.len() {
        let residual = account.residual(c);
        if residual.abs() > 1e-9 * account.arrivals[c].max(1.0) {
            return Err(ConservationBroken { class: c, residual });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Topology, TrafficClass, Utility};

    /// `A` with two out-links to `B` and `C`, one class destined to `C`.
    fn fork() -> Network {
        let t = Topology::new(&["A", "B", "C"], &[("A", "B", 1.0), ("A", "C", 1.0), ("B", "C", 1.0)]).unwrap();
        Network::new(t, vec![TrafficClass { id: 1, destination: NodeId(2), utility: Utility::Linear { weight: 1.0 }, allowed_links: None }])
            .unwrap()
    }

    fn with_q(net: &Network, node: usize, v: f64) -> QueueState {
        let mut s = QueueState::zeros(net);
        s.set_q(NodeId(node), 0, v);
        s
    }

    #[test]
    fn transfer_is_min_of_backlog_and_rate() {
        let net = fork();
        let mut dec = SlotDecision::zeros(&net);
        dec.mu[1] = 1.0; // A->C
        assert_eq!(actual_transfers(&with_q(&net, 0, 5.0), &dec, &net).moved[1], 1.0);
        assert_eq!(actual_transfers(&with_q(&net, 0, 0.4), &dec, &net).moved[1], 0.4);
    }

    #[test]
    fn shortage_served_in_link_order() {
        let net = fork();
        let mut dec = SlotDecision::zeros(&net);
        dec.mu[0] = 1.0;
        dec.mu[1] = 1.0;
        let ledger = actual_transfers(&with_q(&net, 0, 1.0), &dec, &net);
        assert_eq!((ledger.moved[0], ledger.moved[1]), (1.0, 0.0));
        // Enumerating both serving orders: either way one packet leaves A.
        for order in [[0usize, 1], [1, 0]] {
            let mut remaining = 1.0_f64;
            let mut total = 0.0;
            for l in order {
                let take = remaining.min(dec.mu[l]);
                remaining -= take;
                total += take;
            }
            assert_eq!(total, ledger.moved[0] + ledger.moved[1]);
        }
    }

    #[test]
    fn larger_allocation_served_first() {
        let net = fork();
        let mut dec = SlotDecision::zeros(&net);
        dec.mu[0] = 0.5;
        dec.mu[1] = 1.0;
        let ledger = actual_transfers(&with_q(&net, 0, 1.2), &dec, &net);
        assert_eq!(ledger.moved[1], 1.0);
        assert!((ledger.moved[0] - 0.2).abs() < 1e-12);
        assert_eq!(ledger.delivered[0], 1.0);
    }

    #[test]
    fn drops() {
        let net = fork();
        let mut dec = SlotDecision::zeros(&net);
        dec.mu[1] = 1.0;
        dec.drop[0] = 21.0;
        for (q, expect) in [(3.0, 2.0), (0.0, 0.0), (30.0, 21.0)] {
            let s = with_q(&net, 0, q);
            let mut ledger = actual_transfers(&s, &dec, &net);
            actual_drops(&s, &dec, &net, &mut ledger);
            assert_eq!(ledger.dropped[0], expect);
        }
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let net = fork();
        let s = QueueState::zeros(&net);
        let dec = SlotDecision::zeros(&net);
        let mut ledger = actual_transfers(&s, &dec, &net);
        actual_drops(&s, &dec, &net, &mut ledger);
        let mut acct = ConservationAccount::new(1);
        let next = apply_slot(&s, &dec, &[0.0; 3], &mut ledger, &net, &mut acct).unwrap();
        assert_eq!(next, s);
        assert!(check_conservation(&acct).is_ok());
    }

    #[test]
    fn drop_and_virtual_queue_arithmetic() {
        let net = fork();
        let mut s = with_q(&net, 0, 3.0);
        s.set_d(NodeId(0), 0, 1000.0);
        s.z[0] = 5.0;
        let mut dec = SlotDecision::zeros(&net);
        dec.mu[1] = 1.0;
        dec.drop[0] = 21.0;
        dec.nu[0] = 0.1;
        let mut ledger = actual_transfers(&s, &dec, &net);
        actual_drops(&s, &dec, &net, &mut ledger);
        let mut acct = ConservationAccount::new(1);
        let next = apply_slot(&s, &dec, &[0.0; 3], &mut ledger, &net, &mut acct).unwrap();
        assert_eq!(next.d(NodeId(0), 0), 1002.0);
        assert!((next.z[0] - 5.9).abs() < 1e-12);
        assert_eq!(next.q(NodeId(0), 0), 0.0);
        // 3 packets were already in the network before this account started.
        assert_eq!(acct.residual(0), -3.0);
    }

    #[test]
    fn conservation_detects_corruption() {
        let acct = ConservationAccount::new(2);
        assert!(check_conservation(&acct).is_ok());
        let mut acct = ConservationAccount { arrivals: vec![10.0], delivered: vec![4.0], dropped: vec![5.0], backlog: vec![1.0] };
        assert!(check_conservation(&acct).is_ok());
        acct.delivered[0] += 1.0;
        let err = check_conservation(&acct).unwrap_err();
        assert_eq!(err.class, 0);
        assert_eq!(err.residual, -1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn updates_stay_nonnegative_and_conserve(
                steps in prop::collection::vec(
                    (prop::collection::vec(0.0..3.0f64, 3), prop::collection::vec(0.0..25.0f64, 3), 0.0..5.0f64, 0u32..4),
                    1..40,
                )
            ) {
                let net = fork();
                let mut s = QueueState::zeros(&net);
                let mut acct = ConservationAccount::new(1);
                for (mu, drop, nu, arrive) in steps {
                    let mut dec = SlotDecision::zeros(&net);
                    dec.mu.copy_from_slice(&mu);
                    dec.drop.copy_from_slice(&drop);
                    dec.phi.copy_from_slice(&drop);
                    dec.nu[0] = nu;
                    let arrivals = [arrive as f64, 1.0, 0.0];
                    let mut ledger = actual_transfers(&s, &dec, &net);
                    actual_drops(&s, &dec, &net, &mut ledger);
                    for (m, a) in ledger.moved.iter().zip(&dec.mu) {
                        prop_assert!(*m <= *a);
                    }
                    for (d, a) in ledger.dropped.iter().zip(&dec.drop) {
                        prop_assert!(*d <= *a);
                    }
                    let again = apply_slot(&s, &dec, &arrivals, &mut ledger.clone(), &net, &mut acct.clone()).unwrap();
                    let next = apply_slot(&s, &dec, &arrivals, &mut ledger, &net, &mut acct).unwrap();
                    prop_assert_eq!(&again, &next);
                    prop_assert!(next.q.iter().chain(&next.d).chain(&next.z).all(|v| *v >= 0.0));
                    for (x, p) in ledger.deleted.iter().zip(&dec.phi) {
                        prop_assert!(*x <= *p);
                    }
                    prop_assert!(check_conservation(&acct).is_ok());
                    s = next;
                }
            }
        }
    }
}
