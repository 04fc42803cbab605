//! Utility-optimal overload control: the threshold dropping of [`crate::ora`]
//! plus receiver-side flow control through virtual queues.
//!
//! Each destination keeps a virtual queue `Z_c` fed by delivered packets and
//! drained at a rate `ν_c` chosen every slot. Routing sees the receiver's
//! backlog as a signed exponential of `Z_c - Q_center` (the pseudo-backlog):
//! far below the center it pulls data in, far above it pushes back until the
//! upstream links idle.

use log::warn;

use crate::model::{derivative_bound, ConcaveUtility, DerivedConstants, Network};
use crate::ora::{route_into, ParamError};
use crate::queues::QueueState;

#[derive(Debug, Clone, PartialEq)]
pub struct UoraParams {
    pub epsilon: f64,
    pub nu_max: f64,
    pub delta_max: f64,
    pub w: f64,
    pub q_center: f64,
    pub v: f64,
    pub d_max: f64,
    pub theta: Vec<f64>,
    /// Derivative bounds `m_c`, valid on `[ε, ∞)` for utilities unbounded at zero.
    pub m: Vec<f64>,
}

impl UoraParams {
    pub fn drop_init(&self) -> Vec<f64> {
        self.theta.iter().map(|t| self.v * t).collect()
    }

    pub fn q_max(&self, c: usize) -> f64 {
        self.v * self.theta[c] + 2.0 * self.d_max
    }

    pub fn d_upper(&self, c: usize) -> f64 {
        self.v * self.theta[c] + self.d_max
    }

    pub fn d_lower(&self, c: usize) -> f64 {
        self.v * self.theta[c] - self.d_max
    }

    /// Virtual backlog at which the pseudo-backlog reaches `q_max(c)`.
    pub fn choke_point(&self, c: usize) -> f64 {
        self.q_center + (self.q_max(c) / self.w).ln() / self.w
    }
}

/// `(ε / δ²) · e^{-ε/δ}`
pub fn exponent_weight(epsilon: f64, delta_max: f64) -> f64 {
    epsilon / (delta_max * delta_max) * (-epsilon / delta_max).exp()
}

/// Builds and validates the flow-control parameters.
///
/// `theta` defaults to `g_c'(ε)`, the smallest value for which `h_c = g_c - θ_c x`
/// is nonincreasing on `[ε, ∞)`. A `nu_max` below the sum of receiver in-link
/// capacities plus `ε/2` is accepted with a warning, returned alongside the
/// parameters.
pub fn derive_params(
    net: &Network,
    consts: &DerivedConstants,
    epsilon: f64,
    q_center: f64,
    v: f64,
    nu_max: f64,
    theta: Option<&[f64]>,
) -> Result<(UoraParams, Vec<String>), ParamError> {
    let bad = |s: String| Err(ParamError::Constraint(s));
    if !(epsilon > 0.0) {
        return bad(format!("epsilon must be positive, got {epsilon}"));
    }
    if !(v > 0.0) {
        return Err(ParamError::NonPositiveV(v));
    }
    if !(consts.d_max > 0.0) {
        return Err(ParamError::NonPositiveDmax(consts.d_max));
    }
    if !(nu_max > 0.0) {
        return bad(format!("nu_max must be positive, got {nu_max}"));
    }
    if q_center < nu_max {
        return bad(format!("Q_center >= nu_max violated: {q_center} < {nu_max}"));
    }
    let classes = net.classes();
    let mut m = Vec::with_capacity(classes.len());
    let mut th = Vec::with_capacity(classes.len());
    for (i, c) in classes.iter().enumerate() {
        let bound = derivative_bound(&c.utility, epsilon).map_err(|reason| ParamError::Constraint(format!("class {}: {reason}", c.id)))?;
        m.push(bound.value);
        let slope_at_eps = c.utility.derivative(epsilon);
        let t = match theta {
            Some(t) if t.len() != classes.len() => {
                return bad(format!("theta has {} entries for {} classes", t.len(), classes.len()));
            }
            Some(t) => t[i],
            None => slope_at_eps,
        };
        if !(t > 0.0) {
            return Err(ParamError::BadTheta { class: c.id, theta: t });
        }
        if t < slope_at_eps * (1.0 - 1e-12) {
            return bad(format!("theta >= g'(epsilon) violated for class {}: {t} < {slope_at_eps}", c.id));
        }
        th.push(t);
    }
    let delta_max = nu_max.max(consts.mu_in);
    let w = exponent_weight(epsilon, delta_max);
    for (c, t) in classes.iter().zip(&th) {
        if v * t + 2.0 * consts.d_max < w {
            return bad(format!("V*theta + 2*d_max >= w violated for class {}", c.id));
        }
    }

    let mut warnings = Vec::new();
    let mut receivers: Vec<_> = classes.iter().map(|c| c.destination).collect();
    receivers.sort();
    receivers.dedup();
    let into_receivers: f64 = receivers.iter().flat_map(|r| net.topology.in_links(*r)).map(|l| net.topology.link(*l).capacity).sum();
    if nu_max < into_receivers + epsilon / 2.0 {
        let msg = format!(
            "nu_max = {nu_max} is below the receiver capacity surrogate {}; it must still exceed max_c r*_c + epsilon/2",
            into_receivers + epsilon / 2.0
        );
        warn!("{msg}");
        warnings.push(msg);
    }

    Ok((UoraParams { epsilon, nu_max, delta_max, w, q_center, v, d_max: consts.d_max, theta: th, m }, warnings))
}

/// Signed exponential backlog presented by a receiver with virtual backlog `z`.
#[inline]
pub fn pseudo_backlog_of(z: f64, w: f64, q_center: f64) -> f64 {
    if z >= q_center {
        w * (w * (z - q_center)).exp()
    } else {
        -w * (w * (q_center - z)).exp()
    }
}

pub fn pseudo_backlog(z: &[f64], params: &UoraParams) -> Vec<f64> {
    z.iter().map(|&zc| pseudo_backlog_of(zc, params.w, params.q_center)).collect()
}

/// Maximizes `V (g(ν) - θν) + ν·p` over `ν ∈ [0, ν_max]`.
///
/// Uses the utility's inverse derivative when available and bisection on the
/// objective's derivative otherwise. A flat objective returns 0.
pub fn solve_flow_control<U: ConcaveUtility + ?Sized>(u: &U, v: f64, theta: f64, pseudo: f64, nu_max: f64) -> f64 {
    let slope = |x: f64| v * (u.derivative(x) - theta) + pseudo;
    if !(slope(0.0) > 0.0) {
        return 0.0;
    }
    if slope(nu_max) >= 0.0 {
        return nu_max;
    }
    if let Some(x) = u.inverse_derivative(theta - pseudo / v) {
        if x.is_finite() {
            return x.clamp(0.0, nu_max);
        }
    }
    let (mut lo, mut hi) = (0.0_f64, nu_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = slope(mid);
        if s.abs() <= 1e-9 {
            return mid;
        }
        if s > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Virtual service rates for every class.
pub fn flow_control(z: &[f64], params: &UoraParams, net: &Network) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    flow_control_into(z, params, net, &mut out);
    out
}

pub(crate) fn flow_control_into(z: &[f64], params: &UoraParams, net: &Network, out: &mut [f64]) {
    for (c, class) in net.classes().iter().enumerate() {
        let p = pseudo_backlog_of(z[c], params.w, params.q_center);
        out[c] = solve_flow_control(&class.utility, params.v, params.theta[c], p, params.nu_max);
    }
}

/// Back-pressure routing with each receiver's pseudo-backlog in place of its
/// (empty) real backlog.
pub fn route_uora(state: &QueueState, net: &Network, params: &UoraParams) -> Vec<f64> {
    let mut mu = vec![0.0; net.topology.num_links() * net.num_classes()];
    route_uora_into(state, net, params, &mut mu);
    mu
}

pub(crate) fn route_uora_into(state: &QueueState, net: &Network, params: &UoraParams, mu: &mut [f64]) {
    let recv = |c: usize| pseudo_backlog_of(state.z[c], params.w, params.q_center);
    route_into(state, net, &recv, mu);
}

#[derive(Debug, Clone, PartialEq)]
pub struct UoraBounds {
    /// Deterministic ceiling on each `Z_c`.
    pub z_max: Vec<f64>,
    pub b1: f64,
    /// `B₁/V + (3ε/2) Σ_c (m_c + θ_c)`
    pub gap: f64,
}

pub fn uora_bound_constants(params: &UoraParams, net: &Network, consts: &DerivedConstants, a_max: f64) -> UoraBounds {
    let nc = net.num_classes() as f64;
    let (w, eps) = (params.w, params.epsilon);
    let z_max = (0..net.num_classes()).map(|c| params.choke_point(c) + consts.mu_in).collect();
    let b = crate::ora::ora_bound_constants(net.num_nodes(), net.num_classes(), consts.mu_in, consts.mu_out, a_max, params.d_max);
    let eq = (w * params.q_center).exp();
    let b1 = b + nc * (w * (2.0 * params.delta_max + eps) + (w * (params.nu_max + consts.mu_in)).exp() + 0.5 * w * eps * eq + eq);
    let gap = b1 / params.v + 1.5 * eps * params.m.iter().zip(&params.theta).map(|(m, t)| m + t).sum::<f64>();
    UoraBounds { z_max, b1, gap }
}
