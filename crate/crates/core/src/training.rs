//! Optimizers, dataset splitting and the minibatch training loop.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{derivative_pairs, encoder_windows, srnn_windows, Dataset, SrnnWindow};
use crate::error::{Error, Result};
use crate::lstm::{encoder_loss, encoder_loss_and_grad, EncoderModel, EncoderSample};
use crate::models::{
    baseline_loss, hnn_loss, srnn_loss, srnn_loss_and_grad, BaselineModel, Checkpoint, DerivativeSample, HnnModel, Model,
    ModelKind, ParamChannels, SeparableModel,
};
use crate::nn::{grad_params_through, Graph, NetParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// `params - lr * grads`.
pub fn sgd_step(params: &[f64], grads: &[f64], lr: f64) -> Result<Vec<f64>> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!("sgd: {} params, {} grads", params.len(), grads.len())));
    }
    Ok(params.iter().zip(grads).map(|(p, g)| p - lr * g).collect())
}

/// Shuffle deterministically and split off a `fraction` for validation.
/// Both parts are non-empty whenever there are at least two items.
pub fn split_dataset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let n = items.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let val = idx[..n_val].iter().map(|&i| items[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_decay() -> f64 {
    1.0
}
fn default_val() -> f64 {
    0.2
}
fn default_clip() -> f64 {
    10.0
}
fn default_hidden() -> Vec<usize> {
    vec![256]
}
fn default_channels() -> ParamChannels {
    ParamChannels::Alpha
}
fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// States per recurrent window (2 trains on single steps) or
    /// observations per encoder window. Defaults to 11 and 30.
    #[serde(default)]
    pub window_len: Option<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val")]
    pub validation_fraction: f64,
    /// Hidden layer widths, or the LSTM hidden size for encoders.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub fixed_kinetic: bool,
    /// Parameter channels for adaptable kinds; plain `hnn` ignores it.
    #[serde(default = "default_channels")]
    pub channels: ParamChannels,
    /// Offset between consecutive encoder windows.
    #[serde(default = "default_stride")]
    pub encoder_stride: usize,
}

impl TrainConfig {
    pub fn new(model_kind: ModelKind) -> Self {
        let mut cfg: Self = toml::from_str(&format!("model_kind = \"{model_kind}\"")).expect("defaults parse");
        if model_kind == ModelKind::Encoder {
            cfg.hidden = vec![crate::lstm::DEFAULT_HIDDEN];
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn window(&self) -> usize {
        self.window_len.unwrap_or(match self.model_kind {
            ModelKind::Encoder => crate::lstm::DEFAULT_WINDOW,
            _ => 11,
        })
    }

    pub fn channels_for_kind(&self) -> ParamChannels {
        match self.model_kind {
            ModelKind::Hnn => ParamChannels::None,
            _ => self.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must be in (0, 1), got {}", self.validation_fraction));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.grad_clip > 0.0) {
            return bad("lr, lr_decay and grad_clip must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be non-empty and positive".into());
        }
        if self.model_kind == ModelKind::Asrnn && self.window() < 2 {
            return bad("recurrent windows need at least 2 states".into());
        }
        if self.encoder_stride == 0 {
            return bad("encoder_stride must be >= 1".into());
        }
        Ok(())
    }

    /// Freshly initialized model of the configured kind.
    pub fn init_model(&self) -> Result<Model> {
        let ch = self.channels_for_kind();
        Ok(match self.model_kind {
            ModelKind::Baseline => Model::Baseline(BaselineModel::new(&self.hidden, ch, self.seed)?),
            ModelKind::Hnn | ModelKind::Ahnn => Model::Hnn(HnnModel::new(&self.hidden, ch, self.seed)?),
            ModelKind::Asrnn => Model::Separable(SeparableModel::new(&self.hidden, ch, self.seed, self.fixed_kinetic)?),
            ModelKind::Encoder => Model::Encoder(EncoderModel::new(self.hidden[0], self.window(), ch, self.seed)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "train_loss", "val_loss"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A model trainable on samples of type `S`.
pub trait Objective<S>: Sync {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]) -> Result<()>;
    /// Loss of one sample and its parameter gradient; `graph` is scratch.
    fn loss_and_grad(&self, sample: &S, graph: &mut Graph) -> Result<(f64, Vec<f64>)>;
    /// Loss of one sample.
    fn loss(&self, sample: &S) -> Result<f64>;
}

impl Objective<DerivativeSample> for HnnModel {
    fn params(&self) -> Vec<f64> {
        self.net.params.as_slice().to_vec()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.net = crate::nn::DenseNet::new(self.net.spec.clone(), NetParams::new(flat.to_vec()))?;
        Ok(())
    }
    fn loss_and_grad(&self, sample: &DerivativeSample, graph: &mut Graph) -> Result<(f64, Vec<f64>)> {
        graph.clear();
        let vars = self.net.bind(graph);
        let l = self.record_sample_loss(graph, &vars, sample)?;
        let v = graph.scalar_value(l);
        Ok((v, grad_params_through(graph, l, &[&vars])?))
    }
    fn loss(&self, sample: &DerivativeSample) -> Result<f64> {
        hnn_loss(self, std::slice::from_ref(sample))
    }
}

impl Objective<DerivativeSample> for BaselineModel {
    fn params(&self) -> Vec<f64> {
        self.net.params.as_slice().to_vec()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.net = crate::nn::DenseNet::new(self.net.spec.clone(), NetParams::new(flat.to_vec()))?;
        Ok(())
    }
    fn loss_and_grad(&self, sample: &DerivativeSample, graph: &mut Graph) -> Result<(f64, Vec<f64>)> {
        graph.clear();
        let vars = self.net.bind(graph);
        let l = self.record_sample_loss(graph, &vars, sample);
        let v = graph.scalar_value(l);
        Ok((v, grad_params_through(graph, l, &[&vars])?))
    }
    fn loss(&self, sample: &DerivativeSample) -> Result<f64> {
        baseline_loss(self, std::slice::from_ref(sample))
    }
}

impl Objective<SrnnWindow> for SeparableModel {
    fn params(&self) -> Vec<f64> {
        self.flat_params()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.set_flat_params(flat)
    }
    fn loss_and_grad(&self, w: &SrnnWindow, graph: &mut Graph) -> Result<(f64, Vec<f64>)> {
        srnn_loss_and_grad(self, &w.states, &w.params, w.dt, graph)
    }
    fn loss(&self, w: &SrnnWindow) -> Result<f64> {
        srnn_loss(self, &w.states, &w.params, w.dt)
    }
}

impl Objective<EncoderSample> for EncoderModel {
    fn params(&self) -> Vec<f64> {
        self.flat_params()
    }
    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.set_flat_params(flat)
    }
    fn loss_and_grad(&self, s: &EncoderSample, graph: &mut Graph) -> Result<(f64, Vec<f64>)> {
        encoder_loss_and_grad(self, s, graph)
    }
    fn loss(&self, s: &EncoderSample) -> Result<f64> {
        encoder_loss(self, std::slice::from_ref(s))
    }
}

/// Mean loss over `samples`, summed in sample order.
pub fn mean_loss<S: Sync, M: Objective<S>>(model: &M, samples: &[S]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let losses: Vec<f64> = samples.par_iter().map(|s| model.loss(s)).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean loss and mean gradient of a minibatch. Per-sample results are
/// reduced in batch order, so the outcome does not depend on the number of
/// worker threads.
pub fn batch_gradient<S: Sync, M: Objective<S>>(model: &M, batch: &[&S]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map_init(Graph::new, |g, s| model.loss_and_grad(s, g))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; per[0].1.len()];
    let mut loss = 0.0;
    for (l, g) in &per {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|v| *v /= n);
    Ok((loss / n, grad))
}

/// Scale `grad` down to global norm `max_norm` if it is longer.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Adam over shuffled minibatches of `train`, recording the mean training
/// loss seen during each epoch and the validation loss after it.
pub fn train_model<S: Sync, M: Objective<S>>(
    model: &mut M,
    train: &[S],
    val: &[S],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut seen = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&S> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grad) = batch_gradient(model, &batch)?;
            seen += loss * chunk.len() as f64;
            clip_global_norm(&mut grad, config.grad_clip);
            adam_step(&mut adam, &mut params, &grad)?;
            model.set_params(&params)?;
        }
        let val_loss = mean_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::DivergedTraining { epoch, loss: val_loss });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: seen / train.len() as f64,
            val_loss,
        };
        log::info!("epoch {epoch}: train {:.6e} val {:.6e}", rec.train_loss, rec.val_loss);
        epochs.push(rec);
        adam.lr *= config.lr_decay;
    }
    Ok(TrainReport {
        epochs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint: None,
    })
}

fn split_and_train<S: Clone + Sync, M: Objective<S>>(model: &mut M, items: Vec<S>, config: &TrainConfig) -> Result<TrainReport> {
    let (train, val) = split_dataset(&items, config.validation_fraction, config.seed)?;
    train_model(model, &train, &val, config)
}

/// Build, window, split and train a model of `config.model_kind` on `ds`.
pub fn train(config: &TrainConfig, ds: &Dataset) -> Result<(Model, TrainReport)> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = config.init_model()?;
    let report = match &mut model {
        Model::Baseline(m) => split_and_train(m, derivative_pairs(ds).items, config)?,
        Model::Hnn(m) => split_and_train(m, derivative_pairs(ds).items, config)?,
        Model::Separable(m) => split_and_train(m, srnn_windows(ds, config.window())?.items, config)?,
        Model::Encoder(m) => split_and_train(m, encoder_windows(ds, config.window(), config.encoder_stride)?.items, config)?,
    };
    Ok((model, report))
}

/// Checkpoint carrying the configuration and final losses.
pub fn make_checkpoint(model: &Model, config: &TrainConfig, report: &TrainReport) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(model, config.seed).with_training_config(config)?;
    ck.model_kind = config.model_kind;
    if let Some(last) = report.epochs.last() {
        ck.metrics.insert("train_loss".into(), last.train_loss);
        ck.metrics.insert("val_loss".into(), last.val_loss);
    }
    if let Some(first) = report.epochs.first() {
        ck.metrics.insert("initial_val_loss".into(), first.val_loss);
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{PhaseState, PotentialParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut s = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam_step(&mut s, &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
        assert!(adam_step(&mut s, &mut p, &[0.0; 2]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = AdamState::new(3, 1e-3);
        let mut p = vec![0.0; 3];
        let g = [0.5, -2.0, 1e-3];
        adam_step(&mut s, &mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let want = -1e-3 * gi.abs() / (gi.abs() + 1e-8) * gi.signum();
            assert_abs_diff_eq!(*pi, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn sgd_values() {
        assert_eq!(sgd_step(&[1.0], &[2.0], 0.1).unwrap(), vec![0.8]);
        assert_eq!(sgd_step(&[1.0, 2.0], &[5.0, 5.0], 0.0).unwrap(), vec![1.0, 2.0]);
        assert!(sgd_step(&[1.0], &[], 0.1).is_err());
    }

    #[test]
    fn split_properties() {
        let items: Vec<u32> = (0..10).collect();
        let (a, b) = split_dataset(&items, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        assert_eq!(split_dataset(&items, 0.5, 3).unwrap(), (a.clone(), b.clone()));
        let mut all: Vec<u32> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, items);
        assert!(matches!(split_dataset::<u32>(&[], 0.5, 0), Err(Error::EmptyDataset)));
        assert!(split_dataset(&items, 1.0, 0).is_err());
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = TrainConfig::from_toml("model_kind = \"asrnn\"\nepochs = 3").unwrap();
        assert_eq!((c.epochs, c.batch_size, c.window(), c.lr, c.validation_fraction), (3, 128, 11, 1e-3, 0.2));
        assert_eq!(c.grad_clip, 10.0);
        assert_eq!(TrainConfig::new(ModelKind::Encoder).window(), 30);
        assert_eq!(TrainConfig::new(ModelKind::Encoder).hidden, vec![9]);
        assert!(TrainConfig::from_toml("model_kind = \"asrnn\"\nlearning_rate = 1").is_err());
        let enc = TrainConfig::from_toml("model_kind = \"encoder\"").unwrap();
        assert_eq!(enc.model_kind, ModelKind::Encoder);
    }

    #[test]
    fn clipping() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-12);
        let mut h = vec![1.0];
        clip_global_norm(&mut h, 10.0);
        assert_eq!(h, vec![1.0]);
    }

    fn hnn_samples(n: usize) -> Vec<DerivativeSample> {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.37;
                DerivativeSample::analytic(
                    PhaseState::new([0.3 * t.sin(), 0.2 * t.cos()], [0.1 * (2.0 * t).cos(), -0.2 * t.sin()]),
                    PotentialParams::single(0.5),
                )
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let mut cfg = TrainConfig::new(ModelKind::Hnn);
        cfg.hidden = vec![16];
        cfg.epochs = 30;
        cfg.batch_size = 16;
        cfg.lr = 1e-2;
        let data = hnn_samples(200);
        let (train, val) = split_dataset(&data, 0.2, 0).unwrap();
        let run = || {
            let mut m = HnnModel::new(&cfg.hidden, ParamChannels::None, 1).unwrap();
            let r = train_model(&mut m, &train, &val, &cfg).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1.epochs, r2.epochs);
        assert_eq!(m1, m2);
        assert_eq!(r1.epochs.len(), 30);
        assert!(r1.val_losses()[29] < 0.1 * r1.val_losses()[0], "{:?}", r1.val_losses());
    }

    #[test]
    fn converged_model_stays_put() {
        // A zero network fits targets that are identically zero.
        let mut m = HnnModel::from_net(
            crate::nn::DenseNet::zeros(crate::nn::DenseNetSpec::mlp(4, &[4], 1).unwrap()),
            ParamChannels::None,
        )
        .unwrap();
        let data: Vec<DerivativeSample> = hnn_samples(20)
            .into_iter()
            .map(|s| DerivativeSample {
                qdot: [0.0; 2],
                pdot: [0.0; 2],
                ..s
            })
            .collect();
        let mut cfg = TrainConfig::new(ModelKind::Hnn);
        cfg.epochs = 1;
        let r = train_model(&mut m, &data[..15], &data[15..], &cfg).unwrap();
        assert_eq!(r.epochs[0].val_loss, 0.0);
    }

    #[test]
    fn report_csv() {
        let r = TrainReport {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
            }],
            wall_time_secs: 1.0,
            checkpoint: None,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n1,0.5,0.25\n");
    }

    #[test]
    fn batch_gradient_independent_of_thread_count() {
        let m = HnnModel::new(&[8], ParamChannels::None, 4).unwrap();
        let data = hnn_samples(40);
        let refs: Vec<&DerivativeSample> = data.iter().collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| batch_gradient(&m, &refs).unwrap());
        let b = three.install(|| batch_gradient(&m, &refs).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn adam_moments_and_step_bounds(
            grads in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 4), 1..20),
        ) {
            let mut s = AdamState::new(4, 1e-3);
            let mut p = vec![0.0; 4];
            for g in &grads {
                let before = p.clone();
                adam_step(&mut s, &mut p, g).unwrap();
                prop_assert!(s.v.iter().all(|v| *v >= 0.0));
                for (a, b) in p.iter().zip(&before) {
                    // |m_hat| <= sqrt(v_hat) up to bias-correction slack.
                    prop_assert!((a - b).abs() <= 1e-3 * 3.2);
                }
            }
        }

        #[test]
        fn split_partitions(n in 2usize..200, frac in 0.05f64..0.95, seed in 0u64..50) {
            let items: Vec<usize> = (0..n).collect();
            let (a, b) = split_dataset(&items, frac, seed).unwrap();
            prop_assert!(!a.is_empty() && !b.is_empty());
            let mut all: Vec<usize> = a.into_iter().chain(b).collect();
            all.sort();
            prop_assert_eq!(all, items);
        }
    }
}
