//! Derivative-regression baseline: a network mapping `(q, p [, alpha, beta])`
//! directly to `(qdot, pdot)`, trained with mean-squared error.

use serde::{Deserialize, Serialize};

use super::{DerivativeSample, ParamChannels, VectorField};
use crate::dynamics::{PhaseState, PotentialParams};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, DenseNetSpec, Graph, NetVars, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub net: DenseNet,
    pub channels: ParamChannels,
}

impl BaselineModel {
    pub fn new(hidden: &[usize], channels: ParamChannels, seed: u64) -> Result<Self> {
        let spec = DenseNetSpec::mlp(4 + channels.count(), hidden, 4)?;
        Ok(Self {
            net: DenseNet::init(spec, seed),
            channels,
        })
    }

    pub fn from_net(net: DenseNet, channels: ParamChannels) -> Result<Self> {
        let want = 4 + channels.count();
        if net.spec.input_size() != want || net.spec.output_size() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "baseline needs a {want} -> 4 network, got {} -> {}",
                net.spec.input_size(),
                net.spec.output_size()
            )));
        }
        Ok(Self { net, channels })
    }

    fn input(&self, state: &PhaseState, params: &PotentialParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(4 + self.channels.count());
        x.extend_from_slice(&state.to_array());
        self.channels.push_features(params, &mut x);
        x
    }

    /// Record the per-sample mean squared error over the 4 outputs.
    pub fn record_sample_loss(&self, graph: &mut Graph, net: &NetVars, sample: &DerivativeSample) -> Var {
        let x = graph.leaf(&self.input(&sample.state, &sample.params));
        let y = net.forward(graph, x);
        let target = graph.leaf(&[sample.qdot[0], sample.qdot[1], sample.pdot[0], sample.pdot[1]]);
        let r = graph.sub(y, target);
        let s = graph.sq_norm(r);
        graph.scale(s, 0.25)
    }
}

impl VectorField for BaselineModel {
    fn derivatives(&self, state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]) {
        let y = self.net.eval_unchecked(&self.input(state, params));
        ([y[0], y[1]], [y[2], y[3]])
    }
}

/// `(qdot, pdot)` read directly off the network output.
pub fn baseline_derivatives(model: &BaselineModel, state: &PhaseState, params: &PotentialParams) -> ([f64; 2], [f64; 2]) {
    model.derivatives(state, params)
}

/// Mean over batch and the 4 output components of the squared error.
pub fn baseline_loss(model: &BaselineModel, batch: &[DerivativeSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = batch
        .iter()
        .map(|s| {
            let (qd, pd) = model.derivatives(&s.state, &s.params);
            (0..2)
                .map(|i| (qd[i] - s.qdot[i]).powi(2) + (pd[i] - s.pdot[i]).powi(2))
                .sum::<f64>()
                / 4.0
        })
        .sum();
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_net_outputs_zero_and_hand_loss() {
        let spec = DenseNetSpec::mlp(4, &[5], 4).unwrap();
        let m = BaselineModel::from_net(DenseNet::zeros(spec), ParamChannels::None).unwrap();
        let s = PhaseState::new([1.0, 0.0], [0.0, 0.0]);
        assert_eq!(baseline_derivatives(&m, &s, &PotentialParams::harmonic()), ([0.0; 2], [0.0; 2]));
        let batch = [DerivativeSample::analytic(s, PotentialParams::harmonic())];
        assert_eq!(baseline_loss(&m, &batch).unwrap(), 0.25);
    }

    #[test]
    fn graph_loss_matches_numeric() {
        let m = BaselineModel::new(&[6], ParamChannels::Alpha, 8).unwrap();
        let sample = DerivativeSample::analytic(PhaseState::new([0.2, 0.1], [-0.3, 0.05]), PotentialParams::single(0.3));
        let mut g = Graph::new();
        let vars = m.net.bind(&mut g);
        let l = m.record_sample_loss(&mut g, &vars, &sample);
        assert_abs_diff_eq!(g.scalar_value(l), baseline_loss(&m, &[sample]).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn shape_checked() {
        let spec = DenseNetSpec::mlp(4, &[5], 1).unwrap();
        assert!(BaselineModel::from_net(DenseNet::zeros(spec), ParamChannels::None).is_err());
    }
}
