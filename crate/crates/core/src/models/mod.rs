//! Learned-dynamics models: derivative regression baseline, (adaptable)
//! Hamiltonian network and the adaptable symplectic recurrent network.

pub mod baseline;
pub mod checkpoint;
pub mod hnn;
pub mod separable;

use serde::{Deserialize, Serialize};

use crate::dynamics::{hh_derivatives, hh_energy, HenonHeiles, PhaseState, PotentialParams, Trajectory, ESCAPE_RADIUS};
use crate::error::{Error, Result};

pub use baseline::{baseline_derivatives, baseline_loss, BaselineModel};
pub use checkpoint::{Architecture, Checkpoint, Model, ModelKind, CHECKPOINT_FORMAT_VERSION};
pub use hnn::{hnn_derivatives, hnn_loss, HnnModel};
pub use separable::{
    asrnn_rollout, record_srnn_loss, srnn_loss, srnn_loss_and_grad, BoundSeparable, GraphField, SeparableModel,
    DIVERGENCE_PENALTY,
};

/// Which potential parameters are appended to a network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamChannels {
    /// Plain, non-adaptable model.
    #[default]
    None,
    /// Single-parameter family: `alpha` only.
    Alpha,
    /// `alpha` and `beta`.
    AlphaBeta,
}

impl ParamChannels {
    pub fn count(self) -> usize {
        match self {
            ParamChannels::None => 0,
            ParamChannels::Alpha => 1,
            ParamChannels::AlphaBeta => 2,
        }
    }

    pub fn is_adaptable(self) -> bool {
        self != ParamChannels::None
    }

    pub fn push_features(self, params: &PotentialParams, out: &mut Vec<f64>) {
        match self {
            ParamChannels::None => {}
            ParamChannels::Alpha => out.push(params.alpha),
            ParamChannels::AlphaBeta => {
                out.push(params.alpha);
                out.push(params.beta);
            }
        }
    }

    pub fn features(self, params: &PotentialParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(2);
        self.push_features(params, &mut v);
        v
    }
}

/// Supervised target for derivative-regression models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeSample {
    pub state: PhaseState,
    pub params: PotentialParams,
    pub qdot: [f64; 2],
    pub pdot: [f64; 2],
}

impl DerivativeSample {
    /// Target built from the analytic equations of motion.
    pub fn analytic(state: PhaseState, params: PotentialParams) -> Self {
        let (qdot, pdot) = hh_derivatives(&state, &params);
        Self {
            state,
            params,
            qdot,
            pdot,
        }
    }
}

/// A model that predicts `(qdot, pdot)` at a state.
pub trait VectorField {
    fn derivatives(&self, state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]);
}

impl VectorField for HenonHeiles {
    fn derivatives(&self, state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]) {
        hh_derivatives(state, params)
    }
}

/// A model with a scalar Hamiltonian.
pub trait LearnedHamiltonian {
    fn hamiltonian(&self, state: &PhaseState, params: &PotentialParams) -> f64;
}

impl LearnedHamiltonian for HenonHeiles {
    fn hamiltonian(&self, state: &PhaseState, params: &PotentialParams) -> f64 {
        hh_energy(state, params)
    }
}

/// The model's own Hamiltonian evaluated along a trajectory.
pub fn conserved_quantity<M: LearnedHamiltonian + ?Sized>(
    model: &M,
    traj: &Trajectory,
    params: &PotentialParams,
) -> Vec<f64> {
    traj.states().iter().map(|s| model.hamiltonian(s, params)).collect()
}

fn rk4_step<M: VectorField + ?Sized>(model: &M, s: &PhaseState, dt: f64, params: &PotentialParams) -> PhaseState {
    let f = |x: &PhaseState| {
        let (dq, dp) = model.derivatives(x, params);
        [dq[0], dq[1], dp[0], dp[1]]
    };
    let x0 = s.to_array();
    let shift = |k: &[f64; 4], h: f64| {
        let mut y = x0;
        for i in 0..4 {
            y[i] += h * k[i];
        }
        PhaseState::from_array(y)
    };
    let k1 = f(s);
    let k2 = f(&shift(&k1, 0.5 * dt));
    let k3 = f(&shift(&k2, 0.5 * dt));
    let k4 = f(&shift(&k3, dt));
    let mut out = x0;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    PhaseState::from_array(out)
}

/// Classical fourth-order Runge-Kutta rollout for models whose field is not
/// separable (baseline and HNN).
pub fn rk4_rollout<M: VectorField + ?Sized>(
    model: &M,
    state0: &PhaseState,
    params: &PotentialParams,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be >= 1".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(*state0);
    let mut s = *state0;
    for step in 1..=n_steps {
        s = rk4_step(model, &s, dt, params);
        if !s.is_finite() || s.q_sup_norm() > ESCAPE_RADIUS {
            return Err(Error::IntegrationDiverged {
                step,
                reason: "rollout left the bounded region".into(),
            });
        }
        states.push(s);
    }
    Trajectory::new(dt, states, *params)
}
