//! Adaptable symplectic recurrent network.
//!
//! The Hamiltonian is learned as `K(p) + V(q; lambda)` with two networks;
//! parameter channels are appended to the potential input only. Rollouts use
//! the same kick-drift-kick leapfrog as the ground-truth integrator with the
//! networks' input gradients as the field, so training differentiates
//! through every step of the recurrence.

use serde::{Deserialize, Serialize};

use super::{LearnedHamiltonian, ParamChannels};
use crate::dynamics::{integrate, PhaseState, PotentialParams, SeparableField, Trajectory, HenonHeiles, ESCAPE_RADIUS};
use crate::error::{Error, Result};
use crate::nn::{grad_params_through, DenseNet, DenseNetSpec, Graph, NetVars, Var};

/// Loss assigned to a training window whose rollout escapes or blows up,
/// on top of the distance at the point of divergence.
pub const DIVERGENCE_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableModel {
    /// `K(p)`; `None` fixes `K = |p|^2 / 2`.
    pub kinetic: Option<DenseNet>,
    /// `V(q [, alpha, beta])`.
    pub potential: DenseNet,
    pub channels: ParamChannels,
}

impl SeparableModel {
    /// Both networks share the hidden layout. With `fixed_kinetic` only the
    /// potential is learned.
    pub fn new(hidden: &[usize], channels: ParamChannels, seed: u64, fixed_kinetic: bool) -> Result<Self> {
        let kinetic = if fixed_kinetic {
            None
        } else {
            Some(DenseNet::init(DenseNetSpec::mlp(2, hidden, 1)?, seed))
        };
        let potential = DenseNet::init(DenseNetSpec::mlp(2 + channels.count(), hidden, 1)?, seed.wrapping_add(1));
        Ok(Self {
            kinetic,
            potential,
            channels,
        })
    }

    pub fn from_nets(kinetic: Option<DenseNet>, potential: DenseNet, channels: ParamChannels) -> Result<Self> {
        if let Some(k) = &kinetic {
            if k.spec.input_size() != 2 || k.spec.output_size() != 1 {
                return Err(Error::ShapeMismatch("kinetic network must be 2 -> 1".into()));
            }
        }
        let want = 2 + channels.count();
        if potential.spec.input_size() != want || potential.spec.output_size() != 1 {
            return Err(Error::ShapeMismatch(format!("potential network must be {want} -> 1")));
        }
        Ok(Self {
            kinetic,
            potential,
            channels,
        })
    }

    pub fn fixed_kinetic(&self) -> bool {
        self.kinetic.is_none()
    }

    pub fn num_params(&self) -> usize {
        self.kinetic.as_ref().map_or(0, |k| k.num_params()) + self.potential.num_params()
    }

    /// Kinetic parameters followed by potential parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        if let Some(k) = &self.kinetic {
            out.extend_from_slice(k.params.as_slice());
        }
        out.extend_from_slice(self.potential.params.as_slice());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        if let Some(k) = &mut self.kinetic {
            let (a, b) = rest.split_at(k.num_params());
            k.params.as_mut_slice().copy_from_slice(a);
            rest = b;
        }
        self.potential.params.as_mut_slice().copy_from_slice(rest);
        Ok(())
    }

    fn potential_input(&self, q: [f64; 2], params: &PotentialParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 + self.channels.count());
        x.extend_from_slice(&q);
        self.channels.push_features(params, &mut x);
        x
    }

    pub fn kinetic_energy(&self, p: [f64; 2]) -> f64 {
        match &self.kinetic {
            Some(k) => k.eval_scalar(&p),
            None => 0.5 * (p[0] * p[0] + p[1] * p[1]),
        }
    }

    pub fn potential_energy(&self, q: [f64; 2], params: &PotentialParams) -> f64 {
        self.potential.eval_scalar(&self.potential_input(q, params))
    }

    /// Copy the parameters into `graph` for differentiable rollouts.
    pub fn bind(&self, graph: &mut Graph) -> BoundSeparable<'_> {
        BoundSeparable {
            model: self,
            kinetic: self.kinetic.as_ref().map(|k| k.bind(graph)),
            potential: self.potential.bind(graph),
        }
    }
}

impl SeparableField for SeparableModel {
    fn grad_v(&self, q: [f64; 2], params: &PotentialParams) -> [f64; 2] {
        let g = self.potential.eval_input_grad(&self.potential_input(q, params));
        [g[0], g[1]]
    }

    fn grad_k(&self, p: [f64; 2]) -> [f64; 2] {
        match &self.kinetic {
            Some(k) => {
                let g = k.eval_input_grad(&p);
                [g[0], g[1]]
            }
            None => p,
        }
    }
}

impl LearnedHamiltonian for SeparableModel {
    fn hamiltonian(&self, state: &PhaseState, params: &PotentialParams) -> f64 {
        self.kinetic_energy(state.p) + self.potential_energy(state.q, params)
    }
}

/// A separable field whose gradients can be recorded on a [`Graph`].
pub trait GraphField {
    /// `dV/dq` at the position node `q` (length 2).
    fn record_grad_v(&self, graph: &mut Graph, q: Var, params: &PotentialParams) -> Result<Var>;
    /// `dK/dp` at the momentum node `p` (length 2).
    fn record_grad_k(&self, graph: &mut Graph, p: Var) -> Result<Var>;
}

/// A [`SeparableModel`] whose parameters live on a graph.
#[derive(Debug)]
pub struct BoundSeparable<'a> {
    model: &'a SeparableModel,
    kinetic: Option<NetVars>,
    potential: NetVars,
}

impl BoundSeparable<'_> {
    /// Parameter nodes in the order of [`SeparableModel::flat_params`].
    pub fn nets(&self) -> Vec<&NetVars> {
        self.kinetic.iter().chain(std::iter::once(&self.potential)).collect()
    }

    /// Gradient of `loss` with respect to all model parameters.
    pub fn grad_params(&self, graph: &mut Graph, loss: Var) -> Result<Vec<f64>> {
        grad_params_through(graph, loss, &self.nets())
    }
}

impl GraphField for BoundSeparable<'_> {
    fn record_grad_v(&self, graph: &mut Graph, q: Var, params: &PotentialParams) -> Result<Var> {
        let x = if self.model.channels.is_adaptable() {
            let ch = graph.leaf(&self.model.channels.features(params));
            graph.concat(q, ch)
        } else {
            q
        };
        let v = self.potential.forward(graph, x);
        Ok(graph.grad(v, &[q])?[0])
    }

    fn record_grad_k(&self, graph: &mut Graph, p: Var) -> Result<Var> {
        match &self.kinetic {
            Some(k) => k.input_gradient(graph, p),
            None => Ok(p),
        }
    }
}

/// Analytic Henon-Heiles gradients as graph operations, in the same
/// floating-point order as [`crate::dynamics::hh_grad_v`].
impl GraphField for HenonHeiles {
    fn record_grad_v(&self, graph: &mut Graph, q: Var, params: &PotentialParams) -> Result<Var> {
        let x = graph.slice(q, 0, 1);
        let y = graph.slice(q, 1, 1);
        let xy = graph.mul(x, y);
        let cross = graph.scale(xy, 2.0 * params.alpha);
        let gx = graph.add(x, cross);
        let xx = graph.mul(x, x);
        let yy = graph.mul(y, y);
        let a = graph.scale(xx, params.alpha);
        let b = graph.scale(yy, params.beta);
        let t = graph.add(y, a);
        let gy = graph.sub(t, b);
        Ok(graph.concat(gx, gy))
    }

    fn record_grad_k(&self, _graph: &mut Graph, p: Var) -> Result<Var> {
        Ok(p)
    }
}

/// Leapfrog rollout of a learned separable model.
pub fn asrnn_rollout<F: SeparableField + ?Sized>(
    model: &F,
    state0: &PhaseState,
    params: &PotentialParams,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    integrate(state0, dt, n_steps, model, params)
}

fn diverged(state: &PhaseState) -> bool {
    !state.is_finite() || state.q_sup_norm() > ESCAPE_RADIUS
}

fn sq_dist(a: &PhaseState, b: &PhaseState) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_window(window: &[PhaseState]) -> Result<()> {
    if window.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "a training window needs at least 2 states, got {}",
            window.len()
        )));
    }
    Ok(())
}

/// Sum over the window of `|q_t - q^_t|^2 + |p_t - p^_t|^2` for a leapfrog
/// rollout from `window[0]`. Divergent rollouts score
/// [`DIVERGENCE_PENALTY`] plus the squared distance at the last finite step.
pub fn srnn_loss<F: SeparableField + ?Sized>(
    model: &F,
    window: &[PhaseState],
    params: &PotentialParams,
    dt: f64,
) -> Result<f64> {
    check_window(window)?;
    let mut state = window[0];
    let mut loss = 0.0;
    for (t, truth) in window.iter().enumerate().skip(1) {
        let next = crate::dynamics::leapfrog_map(&state, dt, model, params);
        if diverged(&next) {
            let d = if next.is_finite() {
                sq_dist(&next, truth)
            } else {
                sq_dist(&state, &window[t - 1])
            };
            return Ok(DIVERGENCE_PENALTY + d);
        }
        let q = [next.q[0] - truth.q[0], next.q[1] - truth.q[1]];
        let p = [next.p[0] - truth.p[0], next.p[1] - truth.p[1]];
        loss += (q[0] * q[0] + q[1] * q[1]) + (p[0] * p[0] + p[1] * p[1]);
        state = next;
    }
    Ok(loss)
}

/// Record [`srnn_loss`] on `graph` for any differentiable field.
pub fn record_srnn_loss<F: GraphField + ?Sized>(
    graph: &mut Graph,
    field: &F,
    window: &[PhaseState],
    params: &PotentialParams,
    dt: f64,
) -> Result<Var> {
    check_window(window)?;
    let h = 0.5 * dt;
    let mut q = graph.leaf(&window[0].q);
    let mut p = graph.leaf(&window[0].p);
    let mut gv = field.record_grad_v(graph, q, params)?;
    let mut total: Option<Var> = None;
    for t in 1..window.len() {
        let kick = graph.scale(gv, h);
        let p_half = graph.sub(p, kick);
        let k = field.record_grad_k(graph, p_half)?;
        let drift = graph.scale(k, dt);
        let q_next = graph.add(q, drift);
        gv = field.record_grad_v(graph, q_next, params)?;
        let kick = graph.scale(gv, h);
        let p_next = graph.sub(p_half, kick);

        let qv = graph.value(q_next);
        let pv = graph.value(p_next);
        let next = PhaseState::new([qv[0], qv[1]], [pv[0], pv[1]]);
        if diverged(&next) {
            let (qd, pd, idx) = if next.is_finite() { (q_next, p_next, t) } else { (q, p, t - 1) };
            let d = record_sq_dist(graph, qd, pd, &window[idx]);
            return Ok(graph.affine(d, 1.0, DIVERGENCE_PENALTY));
        }

        let d = record_sq_dist(graph, q_next, p_next, &window[t]);
        total = Some(match total {
            Some(acc) => graph.add(acc, d),
            None => d,
        });
        q = q_next;
        p = p_next;
    }
    Ok(total.expect("window has at least one step"))
}

fn record_sq_dist(graph: &mut Graph, q: Var, p: Var, truth: &PhaseState) -> Var {
    let tq = graph.leaf(&truth.q);
    let tp = graph.leaf(&truth.p);
    let dq = graph.sub(q, tq);
    let dp = graph.sub(p, tp);
    let a = graph.sq_norm(dq);
    let b = graph.sq_norm(dp);
    graph.add(a, b)
}

/// Loss of one window and its gradient with respect to
/// [`SeparableModel::flat_params`]. `graph` is cleared first.
pub fn srnn_loss_and_grad(
    model: &SeparableModel,
    window: &[PhaseState],
    params: &PotentialParams,
    dt: f64,
    graph: &mut Graph,
) -> Result<(f64, Vec<f64>)> {
    graph.clear();
    let bound = model.bind(graph);
    let loss = record_srnn_loss(graph, &bound, window, params, dt)?;
    let value = graph.scalar_value(loss);
    let grad = bound.grad_params(graph, loss)?;
    Ok((value, grad))
}
