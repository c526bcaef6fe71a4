//! Henon-Heiles Hamiltonian, its analytic gradients and the kick-drift-kick
//! leapfrog integrator.
//!
//! Units have `m = omega_x = omega_y = 1`, so
//!
//! ```text
//! H(q, p) = (px^2 + py^2)/2 + (qx^2 + qy^2)/2 + alpha*qx^2*qy - beta*qy^3/3
//! ```
//!
//! Setting `alpha = beta = 0` gives two decoupled unit harmonic oscillators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orbits whose position leaves this sup-norm ball are treated as escaped.
pub const ESCAPE_RADIUS: f64 = 10.0;

/// Canonical coordinates of the 4-dimensional phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseState {
    pub q: [f64; 2],
    pub p: [f64; 2],
}

impl PhaseState {
    pub const fn new(q: [f64; 2], p: [f64; 2]) -> Self {
        Self { q, p }
    }

    /// `(qx, qy, px, py)`.
    pub fn to_array(&self) -> [f64; 4] {
        [self.q[0], self.q[1], self.p[0], self.p[1]]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new([a[0], a[1]], [a[2], a[3]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Sup-norm of the position.
    pub fn q_sup_norm(&self) -> f64 {
        self.q[0].abs().max(self.q[1].abs())
    }
}

/// Nonlinearity parameters `(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    pub alpha: f64,
    pub beta: f64,
}

impl PotentialParams {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    /// Single-parameter family, `beta = alpha`.
    pub const fn single(alpha: f64) -> Self {
        Self { alpha, beta: alpha }
    }

    pub const fn harmonic() -> Self {
        Self::single(0.0)
    }

    /// The standard Henon-Heiles system, `alpha = beta = 1`.
    pub const fn standard() -> Self {
        Self::single(1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite()
    }
}

/// Potential energy `V(q)`.
pub fn hh_potential(q: [f64; 2], params: &PotentialParams) -> f64 {
    let [x, y] = q;
    0.5 * (x * x + y * y) + params.alpha * (x * x) * y - params.beta * (y * y * y) / 3.0
}

/// Total energy of a state.
pub fn hh_energy(state: &PhaseState, params: &PotentialParams) -> f64 {
    let [px, py] = state.p;
    0.5 * (px * px + py * py) + hh_potential(state.q, params)
}

/// `dV/dq`. Note that `pdot = -hh_grad_v(q)`.
pub fn hh_grad_v(q: [f64; 2], params: &PotentialParams) -> [f64; 2] {
    let [x, y] = q;
    [
        x + (2.0 * params.alpha) * (x * y),
        y + params.alpha * (x * x) - params.beta * (y * y),
    ]
}

/// `dK/dp` for unit mass, i.e. `qdot = p`.
pub fn kinetic_grad(p: [f64; 2]) -> [f64; 2] {
    p
}

/// Analytic time derivatives `(qdot, pdot)`.
pub fn hh_derivatives(state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]) {
    let g = hh_grad_v(state.q, params);
    (kinetic_grad(state.p), [-g[0], -g[1]])
}

/// Gradients of a separable Hamiltonian `H = K(p) + V(q; params)`.
///
/// Implemented by the analytic Henon-Heiles system and by learned separable
/// models, so the same leapfrog code drives data generation and rollouts.
pub trait SeparableField {
    fn grad_v(&self, q: [f64; 2], params: &PotentialParams) -> [f64; 2];
    fn grad_k(&self, p: [f64; 2]) -> [f64; 2];
}

/// Ground-truth field.
#[derive(Debug, Clone, Copy, Default)]
pub struct HenonHeiles;

impl SeparableField for HenonHeiles {
    fn grad_v(&self, q: [f64; 2], params: &PotentialParams) -> [f64; 2] {
        hh_grad_v(q, params)
    }

    fn grad_k(&self, p: [f64; 2]) -> [f64; 2] {
        kinetic_grad(p)
    }
}

impl<F: SeparableField + ?Sized> SeparableField for &F {
    fn grad_v(&self, q: [f64; 2], params: &PotentialParams) -> [f64; 2] {
        (**self).grad_v(q, params)
    }

    fn grad_k(&self, p: [f64; 2]) -> [f64; 2] {
        (**self).grad_k(p)
    }
}

fn check_state(state: &PhaseState, step: usize) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::IntegrationDiverged {
            step,
            reason: "non-finite state".into(),
        });
    }
    if state.q_sup_norm() > ESCAPE_RADIUS {
        return Err(Error::IntegrationDiverged {
            step,
            reason: format!("|q| exceeded escape radius {ESCAPE_RADIUS}"),
        });
    }
    Ok(())
}

/// One kick-drift-kick step given the force at the starting position.
/// Returns the new state and the force at the new position.
#[inline]
fn kick_drift_kick<F: SeparableField + ?Sized>(
    state: &PhaseState,
    grad_v_start: [f64; 2],
    dt: f64,
    field: &F,
    params: &PotentialParams,
) -> (PhaseState, [f64; 2]) {
    let h = 0.5 * dt;
    let p_half = [
        state.p[0] - h * grad_v_start[0],
        state.p[1] - h * grad_v_start[1],
    ];
    let k = field.grad_k(p_half);
    let q = [state.q[0] + dt * k[0], state.q[1] + dt * k[1]];
    let g = field.grad_v(q, params);
    let p = [p_half[0] - h * g[0], p_half[1] - h * g[1]];
    (PhaseState::new(q, p), g)
}

/// The leapfrog map without divergence checks. A negative `dt` runs the map
/// backward in time.
pub fn leapfrog_map<F: SeparableField + ?Sized>(
    state: &PhaseState,
    dt: f64,
    field: &F,
    params: &PotentialParams,
) -> PhaseState {
    kick_drift_kick(state, field.grad_v(state.q, params), dt, field, params).0
}

/// One leapfrog step, failing if the result is non-finite or escapes.
pub fn leapfrog_step<F: SeparableField + ?Sized>(
    state: &PhaseState,
    dt: f64,
    field: &F,
    params: &PotentialParams,
) -> Result<PhaseState> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be finite and non-zero, got {dt}")));
    }
    let next = leapfrog_map(state, dt, field, params);
    check_state(&next, 1)?;
    Ok(next)
}

/// Advance `n_steps` leapfrog steps without storing intermediate states.
pub fn propagate<F: SeparableField + ?Sized>(
    state0: &PhaseState,
    dt: f64,
    n_steps: usize,
    field: &F,
    params: &PotentialParams,
) -> Result<PhaseState> {
    let mut state = *state0;
    let mut g = field.grad_v(state.q, params);
    for step in 1..=n_steps {
        let (next, g_next) = kick_drift_kick(&state, g, dt, field, params);
        check_state(&next, step)?;
        state = next;
        g = g_next;
    }
    Ok(state)
}

/// Integrate `n_steps` leapfrog steps, returning all `n_steps + 1` states.
pub fn integrate<F: SeparableField + ?Sized>(
    state0: &PhaseState,
    dt: f64,
    n_steps: usize,
    field: &F,
    params: &PotentialParams,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be >= 1".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    check_state(state0, 0)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(*state0);
    let mut state = *state0;
    let mut g = field.grad_v(state.q, params);
    for step in 1..=n_steps {
        let (next, g_next) = kick_drift_kick(&state, g, dt, field, params);
        check_state(&next, step)?;
        states.push(next);
        state = next;
        g = g_next;
    }
    Trajectory::new(dt, states, *params)
}

/// Time series of phase states at a fixed step. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    states: Vec<PhaseState>,
    params: PotentialParams,
    energy0: f64,
}

impl Trajectory {
    pub fn new(dt: f64, states: Vec<PhaseState>, params: PotentialParams) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidConfig("trajectory needs at least one state".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        let energy0 = hh_energy(&states[0], &params);
        Ok(Self {
            dt,
            states,
            params,
            energy0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[PhaseState] {
        &self.states
    }

    pub fn params(&self) -> PotentialParams {
        self.params
    }

    pub fn energy0(&self) -> f64 {
        self.energy0
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &PhaseState {
        &self.states[0]
    }

    pub fn last(&self) -> &PhaseState {
        &self.states[self.states.len() - 1]
    }

    /// True energy of every stored state under the generating parameters.
    pub fn energies(&self) -> Vec<f64> {
        self.energies_with(&self.params)
    }

    pub fn energies_with(&self, params: &PotentialParams) -> Vec<f64> {
        self.states.iter().map(|s| hh_energy(s, params)).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| i as f64 * self.dt).collect()
    }

    /// Sub-trajectory `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.states.len() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{end} of trajectory with {} states",
                self.states.len()
            )));
        }
        Self::new(self.dt, self.states[start..end].to_vec(), self.params)
    }
}

/// Keep every `factor`-th state; the new time step is `dt * factor`.
pub fn coarse_grain(traj: &Trajectory, factor: usize) -> Result<Trajectory> {
    if factor < 1 {
        return Err(Error::BadFactor(factor));
    }
    let states = traj.states.iter().step_by(factor).copied().collect();
    Trajectory::new(traj.dt * factor as f64, states, traj.params)
}
