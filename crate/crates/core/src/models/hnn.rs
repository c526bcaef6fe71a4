//! Hamiltonian neural network: a scalar `H(q, p [, alpha, beta])` whose input
//! gradient supplies Hamilton's equations `qdot = dH/dp`, `pdot = -dH/dq`.

use serde::{Deserialize, Serialize};

use super::{DerivativeSample, LearnedHamiltonian, ParamChannels, VectorField};
use crate::dynamics::{PhaseState, PotentialParams};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, DenseNetSpec, Graph, NetVars, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnnModel {
    pub net: DenseNet,
    pub channels: ParamChannels,
}

impl HnnModel {
    pub fn new(hidden: &[usize], channels: ParamChannels, seed: u64) -> Result<Self> {
        let spec = DenseNetSpec::mlp(4 + channels.count(), hidden, 1)?;
        Ok(Self {
            net: DenseNet::init(spec, seed),
            channels,
        })
    }

    pub fn from_net(net: DenseNet, channels: ParamChannels) -> Result<Self> {
        let want = 4 + channels.count();
        if net.spec.input_size() != want || net.spec.output_size() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "HNN needs a {want} -> 1 network, got {} -> {}",
                net.spec.input_size(),
                net.spec.output_size()
            )));
        }
        Ok(Self { net, channels })
    }

    pub fn is_adaptable(&self) -> bool {
        self.channels.is_adaptable()
    }

    fn input(&self, state: &PhaseState, params: &PotentialParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(4 + self.channels.count());
        x.extend_from_slice(&state.to_array());
        self.channels.push_features(params, &mut x);
        x
    }

    /// Record the squared derivative residual of one sample.
    pub fn record_sample_loss(&self, graph: &mut Graph, net: &NetVars, sample: &DerivativeSample) -> Result<Var> {
        let x = graph.leaf(&self.input(&sample.state, &sample.params));
        let grad = net.input_gradient(graph, x)?;
        let dh_dq = graph.slice(grad, 0, 2);
        let dh_dp = graph.slice(grad, 2, 2);
        let qdot = graph.leaf(&sample.qdot);
        let pdot = graph.leaf(&sample.pdot);
        let r_q = graph.sub(dh_dp, qdot);
        let r_p = graph.add(dh_dq, pdot);
        let a = graph.sq_norm(r_q);
        let b = graph.sq_norm(r_p);
        Ok(graph.add(a, b))
    }
}

impl VectorField for HnnModel {
    fn derivatives(&self, state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]) {
        let g = self.net.eval_input_grad(&self.input(state, params));
        ([g[2], g[3]], [-g[0], -g[1]])
    }
}

impl LearnedHamiltonian for HnnModel {
    fn hamiltonian(&self, state: &PhaseState, params: &PotentialParams) -> f64 {
        self.net.eval_scalar(&self.input(state, params))
    }
}

/// `(qdot, pdot)` of an HNN at one state.
pub fn hnn_derivatives(model: &HnnModel, state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]) {
    model.derivatives(state, params)
}

/// Mean over the batch of `|dH/dp - qdot|^2 + |dH/dq + pdot|^2`.
pub fn hnn_loss<M: VectorField + ?Sized>(model: &M, batch: &[DerivativeSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = batch
        .iter()
        .map(|s| {
            // derivatives() returns (dH/dp, -dH/dq)
            let (qdot, pdot) = model.derivatives(&s.state, &s.params);
            (0..2)
                .map(|i| (qdot[i] - s.qdot[i]).powi(2) + (pdot[i] - s.pdot[i]).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / batch.len() as f64)
}
