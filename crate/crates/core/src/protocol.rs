//! Per-iteration state updates for the distributed dispatch protocols.
//!
//! All four variants move each node against weighted marginal-cost
//! differences with its neighbours. Every undirected link's contribution is
//! computed once and applied with opposite signs to its two endpoints, so the
//! total generation is invariant by construction rather than by cancellation
//! of separately rounded terms. One discrete iteration stands for one second,
//! so a ramp limit `R` [MW/s] bounds the per-iteration step directly.
//!
//! * `Sat` — saturated updates; per-step moves bounded by `η·R`.
//! * `SatSgn` — saturated with an inner odd power map (or soft sign) that
//!   accelerates convergence once differences are inside the saturation band.
//! * `Linear` — the unclamped baseline; deliberately not rate-bounded.
//! * `DelayedSat` — saturated updates fed by time-stamped gradient messages
//!   subject to bounded random per-link delays.
//!
//! Per-node accumulation order is fixed (ascending neighbour index) so runs
//! are bit-reproducible.

use crate::cost::{GeneratorParams, PenaltyConfig};
use crate::network::{Topology, TopologyError, TopologySchedule};
use crate::oracle::OracleSolution;
use crate::trace::{SimTrace, TraceMeta, TraceRecord};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("state has {state} entries but the topology has {topology} nodes")]
    SizeMismatch { state: usize, topology: usize },
    #[error("parameter list has {params} entries but the topology has {topology} nodes")]
    ParamMismatch { params: usize, topology: usize },
    #[error("invalid protocol configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Which update rule drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Sat,
    SatSgn,
    Linear,
    DelayedSat,
}

impl ProtocolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::Sat => "sat",
            ProtocolKind::SatSgn => "sat_sgn",
            ProtocolKind::Linear => "linear",
            ProtocolKind::DelayedSat => "delayed_sat",
        }
    }

    pub fn parse(s: &str) -> Option<ProtocolKind> {
        match s {
            "sat" => Some(ProtocolKind::Sat),
            "sat_sgn" => Some(ProtocolKind::SatSgn),
            "linear" => Some(ProtocolKind::Linear),
            "delayed_sat" => Some(ProtocolKind::DelayedSat),
            _ => None,
        }
    }

    /// True for the kinds whose every step is bounded by `η·R`. Delayed runs
    /// may deliver several matured messages on one link in the same
    /// iteration, which legitimately exceeds the single-step bound.
    pub fn rate_bounded(&self) -> bool {
        matches!(self, ProtocolKind::Sat | ProtocolKind::SatSgn)
    }
}

/// Step-rule parameters shared by all protocol variants.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    /// Step rate, in (0, 1].
    pub eta: f64,
    /// Ramp-rate limit R [MW/s].
    pub rrl: f64,
    /// Signum exponent for `SatSgn`, in (0, 1).
    pub mu: Option<f64>,
    /// When positive, `SatSgn` uses the soft sign `u/(|u| + ε)` instead of
    /// the odd power map, trading finite-time behaviour for no chattering.
    pub soft_sign_eps: Option<f64>,
    /// Maximum message delay τ̄ [iterations] for `DelayedSat`.
    pub delay_bound: Option<u32>,
    /// Seed for the per-link delay draws.
    pub delay_seed: u64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::BadConfig(m));
        if !self.eta.is_finite() || self.eta <= 0.0 || self.eta > 1.0 {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !self.rrl.is_finite() || self.rrl <= 0.0 {
            return bad(format!("rrl must be strictly positive, got {}", self.rrl));
        }
        if self.kind == ProtocolKind::SatSgn {
            match self.mu {
                Some(mu) if mu > 0.0 && mu < 1.0 => {}
                Some(mu) => return bad(format!("mu must lie in (0, 1), got {mu}")),
                None => return bad("sat_sgn requires mu".into()),
            }
            if let Some(eps) = self.soft_sign_eps {
                if !eps.is_finite() || eps < 0.0 {
                    return bad(format!("soft_sign_eps must be nonnegative, got {eps}"));
                }
            }
        } else if self.mu.is_some() || self.soft_sign_eps.is_some() {
            return bad(format!("mu/soft_sign_eps only apply to sat_sgn, kind is {}", self.kind.as_str()));
        }
        if self.kind == ProtocolKind::DelayedSat {
            if self.delay_bound.is_none() {
                return bad("delayed_sat requires delay_bound".into());
            }
        } else if self.delay_bound.is_some() {
            return bad(format!("delay_bound only applies to delayed_sat, kind is {}", self.kind.as_str()));
        }
        Ok(())
    }
}

/// The power vector at a discrete iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerState {
    pub x: Vec<f64>,
    pub k: u64,
}

impl PowerState {
    pub fn new(x: Vec<f64>) -> PowerState {
        PowerState { x, k: 0 }
    }
}

/// Unit saturation: clamp to [−1, 1].
pub fn sat(u: f64) -> f64 {
    u.clamp(-1.0, 1.0)
}

/// Odd power map `sign(u)·|u|^μ`, `0 < μ < 1`; fixes 0 and ±1 and expands
/// the band |u| < 1.
pub fn sgn_mu(u: f64, mu: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.signum() * u.abs().powf(mu)
    }
}

/// Smooth sign surrogate `u/(|u| + ε)`; odd, sign-preserving, |·| < 1.
pub fn soft_sign(u: f64, eps: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u / (u.abs() + eps)
    }
}

fn gradients(params: &[GeneratorParams], pen: &PenaltyConfig, x: &[f64]) -> Vec<f64> {
    params
        .iter()
        .zip(x)
        .map(|(p, &xi)| p.gradient(pen, xi))
        .collect()
}

/// Max minus min marginal cost over all nodes; zero exactly at gradient
/// consensus.
pub fn gradient_spread(params: &[GeneratorParams], pen: &PenaltyConfig, x: &[f64]) -> f64 {
    let g = gradients(params, pen, x);
    let max = g.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = g.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    max - min
}

fn check_sizes(
    state: &PowerState,
    topo: &Topology,
    params: &[GeneratorParams],
) -> Result<(), ProtocolError> {
    if state.x.len() != topo.n() {
        return Err(ProtocolError::SizeMismatch {
            state: state.x.len(),
            topology: topo.n(),
        });
    }
    if params.len() != topo.n() {
        return Err(ProtocolError::ParamMismatch {
            params: params.len(),
            topology: topo.n(),
        });
    }
    Ok(())
}

/// Accumulate one antisymmetric contribution per undirected link, in
/// lexicographic edge order (which yields ascending neighbour order at every
/// node). The returned increments sum to zero in exact pairs.
fn edge_descent<F: Fn(f64) -> f64>(
    n: usize,
    topo: &Topology,
    grads: &[f64],
    scale: f64,
    inner: F,
) -> Vec<f64> {
    let mut dx = vec![0.0; n];
    for &(i, j, w) in topo.edges() {
        let t = scale * w * inner(grads[i] - grads[j]);
        dx[i] -= t;
        dx[j] += t;
    }
    dx
}

fn advance(state: &PowerState, dx: &[f64]) -> PowerState {
    PowerState {
        x: state.x.iter().zip(dx).map(|(x, d)| x + d).collect(),
        k: state.k + 1,
    }
}

/// Saturated update: `x_i ← x_i − η·(R/W_max)·Σ_j W_ij·sat(∇f_i − ∇f_j)`.
///
/// `w_max` is the run-governing maximum weighted degree (over the whole
/// schedule for switching runs), which keeps every per-step move within
/// `η·R` in every segment.
pub fn step_sat(
    state: &PowerState,
    topo: &Topology,
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    cfg: &ProtocolConfig,
    w_max: f64,
) -> Result<PowerState, ProtocolError> {
    check_sizes(state, topo, params)?;
    let grads = gradients(params, pen, &state.x);
    let scale = cfg.eta * cfg.rrl / w_max;
    let dx = edge_descent(topo.n(), topo, &grads, scale, sat);
    Ok(advance(state, &dx))
}

/// Saturated update with an inner odd map: `sat(g(∇f_i − ∇f_j))` where `g`
/// is `sgn_mu` or, when `soft_sign_eps > 0`, the soft sign.
pub fn step_sat_sgn(
    state: &PowerState,
    topo: &Topology,
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    cfg: &ProtocolConfig,
    w_max: f64,
) -> Result<PowerState, ProtocolError> {
    check_sizes(state, topo, params)?;
    let mu = cfg
        .mu
        .ok_or_else(|| ProtocolError::BadConfig("sat_sgn requires mu".into()))?;
    let eps = cfg.soft_sign_eps.unwrap_or(0.0);
    let grads = gradients(params, pen, &state.x);
    let scale = cfg.eta * cfg.rrl / w_max;
    let inner = move |u: f64| {
        if eps > 0.0 {
            sat(soft_sign(u, eps))
        } else {
            sat(sgn_mu(u, mu))
        }
    };
    let dx = edge_descent(topo.n(), topo, &grads, scale, inner);
    Ok(advance(state, &dx))
}

/// Unclamped gradient-Laplacian baseline: `x_i ← x_i − η·Σ_j W_ij(∇f_i − ∇f_j)`.
/// Sum-preserving but not rate-bounded.
pub fn step_linear(
    state: &PowerState,
    topo: &Topology,
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    cfg: &ProtocolConfig,
) -> Result<PowerState, ProtocolError> {
    check_sizes(state, topo, params)?;
    let grads = gradients(params, pen, &state.x);
    let dx = edge_descent(topo.n(), topo, &grads, cfg.eta, |u| u);
    Ok(advance(state, &dx))
}

struct GradientMessage {
    i: usize,
    j: usize,
    weight: f64,
    grad_i: f64,
    grad_j: f64,
}

/// In-flight time-stamped gradient messages for the delayed protocol.
///
/// Each iteration every present link emits exactly one message carrying both
/// endpoint gradients; its delay is drawn per link per iteration, uniform on
/// `{0, …, τ̄}`, as `next_u64 % (τ̄+1)` from a ChaCha8 stream seeded with
/// `delay_seed` (links visited in lexicographic order). A message delivers
/// once, and both endpoints apply its contribution in the same iteration, so
/// feasibility survives delays exactly. During the first τ̄ iterations only
/// messages sent since the start can mature, so early steps see fewer
/// deliveries rather than underflowing.
pub struct DelayBuffer {
    rng: ChaCha8Rng,
    max_delay: u32,
    /// Slot d holds messages maturing d iterations from now.
    pending: VecDeque<Vec<GradientMessage>>,
}

impl DelayBuffer {
    pub fn new(max_delay: u32, seed: u64) -> DelayBuffer {
        DelayBuffer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_delay,
            pending: (0..=max_delay).map(|_| Vec::new()).collect(),
        }
    }

    pub fn max_delay(&self) -> u32 {
        self.max_delay
    }

    /// Emit this iteration's messages (weights read at emission time) and
    /// return the ones maturing now; a zero delay matures immediately.
    fn emit_and_mature(&mut self, topo: &Topology, grads: &[f64]) -> Vec<GradientMessage> {
        let slots = self.max_delay as u64 + 1;
        for &(i, j, w) in topo.edges() {
            let tau = (self.rng.next_u64() % slots) as usize;
            self.pending[tau].push(GradientMessage {
                i,
                j,
                weight: w,
                grad_i: grads[i],
                grad_j: grads[j],
            });
        }
        let due = self.pending.pop_front().expect("ring buffer is never empty");
        self.pending.push_back(Vec::new());
        due
    }
}

/// Saturated update driven by delayed gradient pairs: every matured message
/// contributes `sat(∇f_i(k−r) − ∇f_j(k−r))` with equal and opposite signs at
/// its two endpoints.
pub fn step_delayed(
    state: &PowerState,
    topo: &Topology,
    buffer: &mut DelayBuffer,
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    cfg: &ProtocolConfig,
    w_max: f64,
) -> Result<PowerState, ProtocolError> {
    check_sizes(state, topo, params)?;
    let grads = gradients(params, pen, &state.x);
    let due = buffer.emit_and_mature(topo, &grads);
    let scale = cfg.eta * cfg.rrl / w_max;
    let mut dx = vec![0.0; topo.n()];
    for m in &due {
        let t = scale * m.weight * sat(m.grad_i - m.grad_j);
        dx[m.i] -= t;
        dx[m.j] += t;
    }
    Ok(advance(state, &dx))
}

/// Everything a simulation run needs besides trace metadata.
#[derive(Debug)]
pub struct RunInputs<'a> {
    pub params: &'a [GeneratorParams],
    pub pen: PenaltyConfig,
    pub cfg: ProtocolConfig,
    pub schedule: &'a TopologySchedule,
    pub x0: &'a [f64],
    pub p_mis: f64,
    pub steps: u64,
    /// Terminate once the global gradient spread drops below this; zero
    /// disables early termination.
    pub tol: f64,
}

fn make_record(
    k: u64,
    x: Vec<f64>,
    dx: Vec<f64>,
    params: &[GeneratorParams],
    pen: &PenaltyConfig,
    p_mis: f64,
    oracle: Option<&OracleSolution>,
) -> TraceRecord {
    let cost: f64 = params
        .iter()
        .zip(&x)
        .map(|(p, &xi)| p.total_cost(pen, xi))
        .sum();
    let residual = oracle.map_or(f64::NAN, |o| cost - o.cost_star);
    let total: f64 = x.iter().sum();
    let grad_spread = gradient_spread(params, pen, &x);
    TraceRecord {
        k,
        x,
        dx,
        cost,
        residual,
        feas_residual: (total - p_mis).abs(),
        grad_spread,
    }
}

/// Iterate the selected step rule, recording one trace row per iteration
/// plus the initial state. Stops after `steps` iterations or as soon as the
/// gradient spread falls below `tol`.
pub fn run(
    inputs: &RunInputs,
    oracle: Option<&OracleSolution>,
    meta: TraceMeta,
) -> Result<SimTrace, ProtocolError> {
    inputs.cfg.validate()?;
    let n = inputs.schedule.n();
    if inputs.x0.len() != n || inputs.params.len() != n {
        return Err(ProtocolError::SizeMismatch {
            state: inputs.x0.len(),
            topology: n,
        });
    }
    let w_max = if inputs.cfg.kind == ProtocolKind::Linear {
        1.0
    } else {
        inputs.schedule.run_w_max()?
    };
    let mut buffer = match inputs.cfg.kind {
        ProtocolKind::DelayedSat => Some(DelayBuffer::new(
            inputs.cfg.delay_bound.unwrap_or(0),
            inputs.cfg.delay_seed,
        )),
        _ => None,
    };

    let mut state = PowerState::new(inputs.x0.to_vec());
    let mut records = vec![make_record(
        0,
        state.x.clone(),
        vec![0.0; n],
        inputs.params,
        &inputs.pen,
        inputs.p_mis,
        oracle,
    )];

    for k in 0..inputs.steps {
        if records.last().expect("nonempty").grad_spread < inputs.tol {
            break;
        }
        let topo = inputs.schedule.topology_at(k);
        let next = match inputs.cfg.kind {
            ProtocolKind::Sat => {
                step_sat(&state, topo, inputs.params, &inputs.pen, &inputs.cfg, w_max)?
            }
            ProtocolKind::SatSgn => {
                step_sat_sgn(&state, topo, inputs.params, &inputs.pen, &inputs.cfg, w_max)?
            }
            ProtocolKind::Linear => {
                step_linear(&state, topo, inputs.params, &inputs.pen, &inputs.cfg)?
            }
            ProtocolKind::DelayedSat => step_delayed(
                &state,
                topo,
                buffer.as_mut().expect("delay buffer initialised"),
                inputs.params,
                &inputs.pen,
                &inputs.cfg,
                w_max,
            )?,
        };
        let dx: Vec<f64> = next.x.iter().zip(&state.x).map(|(a, b)| a - b).collect();
        records.push(make_record(
            k + 1,
            next.x.clone(),
            dx,
            inputs.params,
            &inputs.pen,
            inputs.p_mis,
            oracle,
        ));
        state = next;
    }

    Ok(SimTrace { meta, records })
}
