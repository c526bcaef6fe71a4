//! LSTM delay-embedding encoder.
//!
//! A single LSTM cell reads a window of partial observations `(q_x, p_x)`;
//! an affine head maps its final hidden state to the hidden coordinates
//! `(q_y, p_y)` at the last step and the potential parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PhaseState, PotentialParams, SeparableField, Trajectory};
use crate::error::{Error, Result};
use crate::models::{asrnn_rollout, ParamChannels};
use crate::nn::graph::sigmoid;
use crate::nn::{Graph, Var};

pub const DEFAULT_HIDDEN: usize = 9;
pub const DEFAULT_WINDOW: usize = 30;
/// Observed coordinates per step: `(q_x, p_x)`.
pub const OBS_DIM: usize = 2;

/// Input matrix, recurrent matrix and bias of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `hidden x input`, row-major.
    pub u: Vec<f64>,
    /// `hidden x hidden`, row-major.
    pub v: Vec<f64>,
    pub b: Vec<f64>,
}

impl GateParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            u: vec![0.0; hidden * input],
            v: vec![0.0; hidden * hidden],
            b: vec![0.0; hidden],
        }
    }

    fn pre_activation(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        let (ni, nh) = (x.len(), h.len());
        for (r, o) in out.iter_mut().enumerate() {
            let ux: f64 = self.u[r * ni..(r + 1) * ni].iter().zip(x).map(|(a, b)| a * b).sum();
            let vh: f64 = self.v[r * nh..(r + 1) * nh].iter().zip(h).map(|(a, b)| a * b).sum();
            *o = ux + vh + self.b[r];
        }
    }
}

/// Gates in the order forget, input, output, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

impl LstmCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = GateParams::zeros(input_size, hidden_size);
        Self {
            input_size,
            hidden_size,
            forget: g.clone(),
            input: g.clone(),
            output: g.clone(),
            candidate: g,
        }
    }

    pub fn gates(&self) -> [&GateParams; 4] {
        [&self.forget, &self.input, &self.output, &self.candidate]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [&mut self.forget, &mut self.input, &mut self.output, &mut self.candidate]
    }

    pub fn num_params(&self) -> usize {
        4 * self.hidden_size * (self.input_size + self.hidden_size + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let (ni, nh) = (self.input_size, self.hidden_size);
        if nh == 0 || ni == 0 {
            return Err(Error::ShapeMismatch("LSTM sizes must be positive".into()));
        }
        for g in self.gates() {
            if g.u.len() != nh * ni || g.v.len() != nh * nh || g.b.len() != nh {
                return Err(Error::ShapeMismatch("inconsistent LSTM gate shapes".into()));
            }
        }
        Ok(())
    }
}

/// One LSTM step: returns `(h', c')`.
pub fn lstm_step(cell: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    cell.validate()?;
    let nh = cell.hidden_size;
    if x.len() != cell.input_size || h.len() != nh || c.len() != nh {
        return Err(Error::ShapeMismatch(format!(
            "lstm_step expects x:{} h:{nh} c:{nh}, got x:{} h:{} c:{}",
            cell.input_size,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let mut h2 = vec![0.0; nh];
    let mut c2 = vec![0.0; nh];
    step_unchecked(cell, x, h, c, &mut h2, &mut c2);
    Ok((h2, c2))
}

fn step_unchecked(cell: &LstmCellParams, x: &[f64], h: &[f64], c: &[f64], h2: &mut [f64], c2: &mut [f64]) {
    let nh = cell.hidden_size;
    let mut f = vec![0.0; nh];
    let mut i = vec![0.0; nh];
    let mut o = vec![0.0; nh];
    let mut g = vec![0.0; nh];
    cell.forget.pre_activation(x, h, &mut f);
    cell.input.pre_activation(x, h, &mut i);
    cell.output.pre_activation(x, h, &mut o);
    cell.candidate.pre_activation(x, h, &mut g);
    for k in 0..nh {
        c2[k] = sigmoid(f[k]) * c[k] + sigmoid(i[k]) * g[k].tanh();
        h2[k] = sigmoid(o[k]) * c2[k].tanh();
    }
}

/// What an encoder reads off one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedWindow {
    pub q_y: f64,
    pub p_y: f64,
    /// `alpha` or `(alpha, beta)`.
    pub params: Vec<f64>,
}

/// Anything that reconstructs hidden coordinates and parameters from a
/// fixed-length window of `(q_x, p_x)` observations.
pub trait WindowEncoder: Sync {
    fn window_len(&self) -> usize;
    fn encode(&self, window: &[[f64; 2]]) -> Result<EncodedWindow>;
}

/// One supervised encoder example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSample {
    pub window: Vec<[f64; 2]>,
    pub q_y: f64,
    pub p_y: f64,
    pub params: PotentialParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub cell: LstmCellParams,
    /// `outputs x hidden`, row-major.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub window_len: usize,
    pub channels: ParamChannels,
}

impl EncoderModel {
    /// Scaled-uniform weights, zero biases.
    pub fn new(hidden: usize, window_len: usize, channels: ParamChannels, seed: u64) -> Result<Self> {
        let mut enc = Self::zeros(hidden, window_len, channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w {
                *x = rng.gen_range(-a..=a);
            }
        };
        for g in enc.cell.gates_mut() {
            fill(&mut g.u, OBS_DIM, hidden);
            fill(&mut g.v, hidden, hidden);
        }
        let out = enc.output_size();
        fill(&mut enc.head_w, hidden, out);
        Ok(enc)
    }

    pub fn zeros(hidden: usize, window_len: usize, channels: ParamChannels) -> Result<Self> {
        if window_len == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("encoder window and hidden size must be >= 1".into()));
        }
        if !channels.is_adaptable() {
            return Err(Error::InvalidConfig("an encoder must predict at least one parameter".into()));
        }
        let out = 2 + channels.count();
        Ok(Self {
            cell: LstmCellParams::zeros(OBS_DIM, hidden),
            head_w: vec![0.0; out * hidden],
            head_b: vec![0.0; out],
            window_len,
            channels,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size
    }

    pub fn output_size(&self) -> usize {
        2 + self.channels.count()
    }

    pub fn num_params(&self) -> usize {
        self.cell.num_params() + self.head_w.len() + self.head_b.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if self.cell.input_size != OBS_DIM {
            return Err(Error::ShapeMismatch("encoder input must be (q_x, p_x)".into()));
        }
        let out = self.output_size();
        if self.head_w.len() != out * self.hidden_size() || self.head_b.len() != out {
            return Err(Error::ShapeMismatch("encoder head does not match hidden size".into()));
        }
        if self.window_len == 0 {
            return Err(Error::InvalidConfig("window_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Gate order f, i, o, c with U, V, b each; then head weights and bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for g in self.cell.gates() {
            out.extend_from_slice(&g.u);
            out.extend_from_slice(&g.v);
            out.extend_from_slice(&g.b);
        }
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
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
        let mut take = |dst: &mut [f64]| {
            let (a, b) = rest.split_at(dst.len());
            dst.copy_from_slice(a);
            rest = b;
        };
        for g in self.cell.gates_mut() {
            take(&mut g.u);
            take(&mut g.v);
            take(&mut g.b);
        }
        take(&mut self.head_w);
        take(&mut self.head_b);
        Ok(())
    }

    fn check_window(&self, window: &[[f64; 2]]) -> Result<()> {
        if window.len() != self.window_len {
            return Err(Error::WindowLengthMismatch {
                expected: self.window_len,
                got: window.len(),
            });
        }
        Ok(())
    }

    /// Raw head output `(q_y, p_y, alpha [, beta])`.
    pub fn encode_raw(&self, window: &[[f64; 2]]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let nh = self.hidden_size();
        let mut h = vec![0.0; nh];
        let mut c = vec![0.0; nh];
        let mut h2 = vec![0.0; nh];
        let mut c2 = vec![0.0; nh];
        for x in window {
            step_unchecked(&self.cell, x, &h, &c, &mut h2, &mut c2);
            std::mem::swap(&mut h, &mut h2);
            std::mem::swap(&mut c, &mut c2);
        }
        Ok((0..self.output_size())
            .map(|r| {
                let z: f64 = self.head_w[r * nh..(r + 1) * nh].iter().zip(&h).map(|(a, b)| a * b).sum();
                z + self.head_b[r]
            })
            .collect())
    }

    fn target(&self, sample: &EncoderSample) -> Vec<f64> {
        let mut t = vec![sample.q_y, sample.p_y];
        self.channels.push_features(&sample.params, &mut t);
        t
    }

    /// Bind parameters on `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundEncoder<'_> {
        let gates = self.cell.gates().map(|g| (graph.leaf(&g.u), graph.leaf(&g.v), graph.leaf(&g.b)));
        BoundEncoder {
            enc: self,
            gates,
            head_w: graph.leaf(&self.head_w),
            head_b: graph.leaf(&self.head_b),
        }
    }
}

impl WindowEncoder for EncoderModel {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn encode(&self, window: &[[f64; 2]]) -> Result<EncodedWindow> {
        let y = self.encode_raw(window)?;
        Ok(EncodedWindow {
            q_y: y[0],
            p_y: y[1],
            params: y[2..].to_vec(),
        })
    }
}

/// Encoder parameters living on a [`Graph`].
#[derive(Debug)]
pub struct BoundEncoder<'a> {
    enc: &'a EncoderModel,
    gates: [(Var, Var, Var); 4],
    head_w: Var,
    head_b: Var,
}

impl BoundEncoder<'_> {
    /// Parameter leaves in [`EncoderModel::flat_params`] order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.gates.iter().flat_map(|&(u, w, b)| [u, w, b]).collect();
        v.push(self.head_w);
        v.push(self.head_b);
        v
    }

    fn gate(&self, graph: &mut Graph, k: usize, x: Var, h: Var) -> Var {
        let (u, v, b) = self.gates[k];
        let nh = self.enc.hidden_size();
        let ux = graph.matvec(u, x, nh, OBS_DIM);
        let vh = graph.matvec(v, h, nh, nh);
        let s = graph.add(ux, vh);
        graph.add(s, b)
    }

    /// Record one LSTM step.
    pub fn record_step(&self, graph: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let zf = self.gate(graph, 0, x, h);
        let zi = self.gate(graph, 1, x, h);
        let zo = self.gate(graph, 2, x, h);
        let zc = self.gate(graph, 3, x, h);
        let f = graph.sigmoid(zf);
        let i = graph.sigmoid(zi);
        let o = graph.sigmoid(zo);
        let g = graph.tanh(zc);
        let fc = graph.mul(f, c);
        let ig = graph.mul(i, g);
        let c2 = graph.add(fc, ig);
        let tc = graph.tanh(c2);
        (graph.mul(o, tc), c2)
    }

    /// Record the head output for a window.
    pub fn record_window(&self, graph: &mut Graph, window: &[[f64; 2]]) -> Result<Var> {
        self.enc.check_window(window)?;
        let nh = self.enc.hidden_size();
        let mut h = graph.zeros(nh);
        let mut c = graph.zeros(nh);
        for x in window {
            let xv = graph.leaf(x);
            (h, c) = self.record_step(graph, xv, h, c);
        }
        let y = graph.matvec(self.head_w, h, self.enc.output_size(), nh);
        Ok(graph.add(y, self.head_b))
    }

    /// Squared error of one sample.
    pub fn record_sample_loss(&self, graph: &mut Graph, sample: &EncoderSample) -> Result<Var> {
        let y = self.record_window(graph, &sample.window)?;
        let t = graph.leaf(&self.enc.target(sample));
        let r = graph.sub(y, t);
        Ok(graph.sq_norm(r))
    }

    pub fn grad_params(&self, graph: &mut Graph, loss: Var) -> Result<Vec<f64>> {
        let grads = graph.grad(loss, &self.leaves())?;
        let mut out = Vec::with_capacity(self.enc.num_params());
        for g in grads {
            out.extend_from_slice(graph.value(g));
        }
        Ok(out)
    }
}

/// Mean over the batch of the squared error on `(q_y, p_y, alpha [, beta])`.
pub fn encoder_loss(enc: &EncoderModel, batch: &[EncoderSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut losses = batch
        .iter()
        .map(|s| {
            let y = enc.encode_raw(&s.window)?;
            Ok(y.iter().zip(enc.target(s)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    // Summing in sorted order makes the mean independent of batch order.
    losses.sort_by(f64::total_cmp);
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Loss of one sample and its gradient with respect to
/// [`EncoderModel::flat_params`]. `graph` is cleared first.
pub fn encoder_loss_and_grad(enc: &EncoderModel, sample: &EncoderSample, graph: &mut Graph) -> Result<(f64, Vec<f64>)> {
    graph.clear();
    let bound = enc.bind(graph);
    let loss = bound.record_sample_loss(graph, sample)?;
    let value = graph.scalar_value(loss);
    Ok((value, bound.grad_params(graph, loss)?))
}

/// Spread of one inferred parameter over an ensemble of windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub samples: Vec<f64>,
}

impl ParamEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        // Shifting by the first sample keeps a constant ensemble exact.
        let shift = samples[0];
        let mean = shift + samples.iter().map(|x| x - shift).sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            stddev: var.sqrt(),
            samples,
        }
    }
}

/// Number of windows of `window` points sliding by `stride` over `len` points.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window || stride == 0 {
        0
    } else {
        (len - window) / stride + 1
    }
}

/// Encode every window along `series` and summarize each parameter output.
/// The result has one entry per inferred parameter.
pub fn infer_param_ensemble<E: WindowEncoder + ?Sized>(
    enc: &E,
    series: &[[f64; 2]],
    stride: usize,
) -> Result<Vec<ParamEstimate>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    let w = enc.window_len();
    let n = window_count(series.len(), w, stride);
    if n == 0 {
        return Err(Error::TooShort {
            len: series.len(),
            window: w,
        });
    }
    let encoded: Vec<EncodedWindow> = (0..n)
        .into_par_iter()
        .map(|k| enc.encode(&series[k * stride..k * stride + w]))
        .collect::<Result<_>>()?;
    let np = encoded[0].params.len();
    Ok((0..np)
        .map(|j| ParamEstimate::from_samples(encoded.iter().map(|e| e.params[j]).collect()))
        .collect())
}

/// Infer the parameters from the whole observed series, reconstruct the
/// hidden coordinates at the last observation and roll the learned model
/// forward from the assembled state.
pub fn predict_from_partial<E: WindowEncoder + ?Sized, F: SeparableField + ?Sized>(
    enc: &E,
    model: &F,
    observed: &[[f64; 2]],
    stride: usize,
    horizon: usize,
    dt: f64,
) -> Result<Trajectory> {
    let estimates = infer_param_ensemble(enc, observed, stride)?;
    let alpha = estimates[0].mean;
    let params = match estimates.get(1) {
        Some(beta) => PotentialParams::new(alpha, beta.mean),
        None => PotentialParams::single(alpha),
    };
    let w = enc.window_len();
    let last = enc.encode(&observed[observed.len() - w..])?;
    let [q_x, p_x] = observed[observed.len() - 1];
    let state0 = PhaseState::new([q_x, last.q_y], [p_x, last.p_y]);
    asrnn_rollout(model, &state0, &params, dt, horizon)
}

/// `(q_x, p_x)` observations of a trajectory.
pub fn observe_partial(traj: &Trajectory) -> Vec<[f64; 2]> {
    traj.states().iter().map(|s| [s.q[0], s.p[0]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, HenonHeiles};
    use crate::nn::finite_diff_check;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ramp_window(n: usize) -> Vec<[f64; 2]> {
        (0..n).map(|k| [0.1 * (k as f64 * 0.3).sin(), 0.2 * (k as f64 * 0.2).cos()]).collect()
    }

    #[test]
    fn zero_cell_step() {
        let cell = LstmCellParams::zeros(2, 9);
        let (h, c) = lstm_step(&cell, &[0.3, -0.2], &[0.0; 9], &[0.0; 9]).unwrap();
        assert!(h.iter().chain(&c).all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_biases() {
        let mut cell = LstmCellParams::zeros(2, 3);
        for g in cell.gates_mut() {
            g.b.iter_mut().for_each(|b| *b = 20.0);
        }
        let (h, c) = lstm_step(&cell, &[0.0, 0.0], &[0.0; 3], &[0.0; 3]).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(c[k], 1.0, epsilon = 1e-8);
            assert_abs_diff_eq!(h[k], 1f64.tanh(), epsilon = 1e-8);
        }
        assert_abs_diff_eq!(1f64.tanh(), 0.761594, epsilon = 1e-6);
    }

    #[test]
    fn step_shapes_checked() {
        let cell = LstmCellParams::zeros(2, 3);
        assert!(lstm_step(&cell, &[0.0], &[0.0; 3], &[0.0; 3]).is_err());
        assert!(lstm_step(&cell, &[0.0; 2], &[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let enc = EncoderModel::new(4, 1, ParamChannels::Alpha, 7).unwrap();
        let h0 = [0.1, -0.2, 0.3, 0.05];
        let c0 = [0.2, 0.1, -0.4, 0.3];
        let x = [0.4, -0.3];
        let mut g = Graph::new();
        let bound = enc.bind(&mut g);
        let (xv, hv, cv) = (g.leaf(&x), g.leaf(&h0), g.leaf(&c0));
        let (h, _) = bound.record_step(&mut g, xv, hv, cv);
        let l = g.sq_norm(h);
        let grad = bound.grad_params(&mut g, l).unwrap();
        let ncell = enc.cell.num_params();
        let f = |flat: &[f64]| {
            let mut e = enc.clone();
            let mut full = flat.to_vec();
            full.extend_from_slice(&enc.flat_params()[ncell..]);
            e.set_flat_params(&full).unwrap();
            let (h, _) = lstm_step(&e.cell, &x, &h0, &c0).unwrap();
            h.iter().map(|v| v * v).sum()
        };
        let err = finite_diff_check(f, &grad[..ncell], &enc.flat_params()[..ncell], 1e-6);
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn window_gradient_matches_finite_differences() {
        let enc = EncoderModel::new(9, 30, ParamChannels::Alpha, 11).unwrap();
        let sample = EncoderSample {
            window: ramp_window(30),
            q_y: 0.1,
            p_y: -0.2,
            params: PotentialParams::single(0.5),
        };
        let (l, grad) = encoder_loss_and_grad(&enc, &sample, &mut Graph::new()).unwrap();
        assert_abs_diff_eq!(l, encoder_loss(&enc, std::slice::from_ref(&sample)).unwrap(), epsilon = 1e-14);
        let f = |flat: &[f64]| {
            let mut e = enc.clone();
            e.set_flat_params(flat).unwrap();
            encoder_loss(&e, std::slice::from_ref(&sample)).unwrap()
        };
        let err = finite_diff_check(f, &grad, &enc.flat_params(), 1e-5);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn zero_encoder_outputs_head_bias() {
        let mut enc = EncoderModel::zeros(9, 5, ParamChannels::Alpha).unwrap();
        enc.head_b = vec![0.1, 0.2, 0.3];
        let a = enc.encode(&ramp_window(5)).unwrap();
        let b = enc.encode(&[[1.0, -1.0]; 5]).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.q_y, a.p_y, a.params.clone()), (0.1, 0.2, vec![0.3]));
        assert!(matches!(
            enc.encode(&ramp_window(4)),
            Err(Error::WindowLengthMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn loss_hand_values() {
        let enc = EncoderModel::zeros(9, 3, ParamChannels::Alpha).unwrap();
        let s = EncoderSample {
            window: ramp_window(3),
            q_y: 0.0,
            p_y: 0.0,
            params: PotentialParams::single(0.5),
        };
        assert_eq!(encoder_loss(&enc, std::slice::from_ref(&s)).unwrap(), 0.25);
        assert!(matches!(encoder_loss(&enc, &[]), Err(Error::EmptyBatch)));

        let trained = EncoderModel::new(9, 3, ParamChannels::Alpha, 1).unwrap();
        let y = trained.encode(&s.window).unwrap();
        let own = EncoderSample {
            q_y: y.q_y,
            p_y: y.p_y,
            params: PotentialParams::single(y.params[0]),
            ..s
        };
        assert_eq!(encoder_loss(&trained, &[own]).unwrap(), 0.0);
    }

    #[test]
    fn single_parameter_head_has_three_outputs() {
        let a = EncoderModel::new(9, 30, ParamChannels::Alpha, 0).unwrap();
        let b = EncoderModel::new(9, 30, ParamChannels::AlphaBeta, 0).unwrap();
        assert_eq!(a.output_size(), 3);
        assert_eq!(b.output_size(), 4);
        assert!(EncoderModel::new(9, 30, ParamChannels::None, 0).is_err());
    }

    #[test]
    fn ensemble_counts_and_constant_encoder() {
        let enc = EncoderModel::zeros(9, 30, ParamChannels::Alpha).unwrap();
        let series = ramp_window(100);
        let est = infer_param_ensemble(&enc, &series, 30).unwrap();
        assert_eq!(est[0].samples.len(), (100 - 30) / 30 + 1);
        assert_eq!(est[0].stddev, 0.0);
        assert_eq!(infer_param_ensemble(&enc, &series, 1).unwrap()[0].samples.len(), 71);
        assert!(matches!(
            infer_param_ensemble(&enc, &series[..29], 1),
            Err(Error::TooShort { len: 29, window: 30 })
        ));
    }

    /// Reads the truth off a lookup of the generating trajectory.
    struct Oracle {
        traj: Trajectory,
    }

    impl WindowEncoder for Oracle {
        fn window_len(&self) -> usize {
            4
        }
        fn encode(&self, window: &[[f64; 2]]) -> Result<EncodedWindow> {
            let last = window[window.len() - 1];
            let s = self
                .traj
                .states()
                .iter()
                .find(|s| s.q[0] == last[0] && s.p[0] == last[1])
                .expect("window taken from the trajectory");
            Ok(EncodedWindow {
                q_y: s.q[1],
                p_y: s.p[1],
                params: vec![self.traj.params().alpha],
            })
        }
    }

    #[test]
    fn oracle_pipeline_reproduces_ground_truth() {
        let params = PotentialParams::single(0.3);
        let s0 = PhaseState::new([0.1, 0.05], [0.2, -0.15]);
        let full = integrate(&s0, 0.1, 60, &HenonHeiles, &params).unwrap();
        let observed = observe_partial(&full.slice(0, 21).unwrap());
        let oracle = Oracle { traj: full.clone() };
        let pred = predict_from_partial(&oracle, &HenonHeiles, &observed, 1, 40, 0.1).unwrap();
        let truth = integrate(&full.states()[20], 0.1, 40, &HenonHeiles, &params).unwrap();
        assert_eq!(pred, truth);
    }

    proptest! {
        #[test]
        fn gates_bounded_and_cell_growth_limited(
            seed in 0u64..1000,
            x in proptest::array::uniform2(-3.0f64..3.0),
            c0 in proptest::collection::vec(-2.0f64..2.0, 5),
        ) {
            let enc = EncoderModel::new(5, 1, ParamChannels::Alpha, seed).unwrap();
            let h0 = vec![0.1; 5];
            let (h, c) = lstm_step(&enc.cell, &x, &h0, &c0).unwrap();
            for k in 0..5 {
                prop_assert!(c[k].abs() <= c0[k].abs() + 1.0);
                prop_assert!(h[k].abs() < 1.0);
            }
        }

        #[test]
        fn loss_is_permutation_invariant(seed in 0u64..100, rot in 0usize..4) {
            let enc = EncoderModel::new(4, 6, ParamChannels::Alpha, seed).unwrap();
            let mut batch: Vec<EncoderSample> = (0..4)
                .map(|k| EncoderSample {
                    window: ramp_window(6 + k)[k..].to_vec(),
                    q_y: 0.1 * k as f64,
                    p_y: -0.05,
                    params: PotentialParams::single(0.2 * k as f64),
                })
                .collect();
            let a = encoder_loss(&enc, &batch).unwrap();
            batch.rotate_left(rot);
            let b = encoder_loss(&enc, &batch).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
