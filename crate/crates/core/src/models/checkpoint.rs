//! Versioned JSON checkpoints for every trainable model kind.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{asrnn_rollout, rk4_rollout, BaselineModel, HnnModel, ParamChannels, SeparableModel};
use crate::dynamics::{PhaseState, PotentialParams, Trajectory};
use crate::error::{Error, Result};
use crate::lstm::EncoderModel;
use crate::nn::{Activation, DenseNet, DenseNetSpec, NetParams};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const INIT_SCHEME: &str = "scaled-uniform";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Baseline,
    Hnn,
    /// HNN with parameter channels.
    Ahnn,
    Asrnn,
    #[serde(rename = "lstm-encoder", alias = "encoder")]
    Encoder,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Hnn => "hnn",
            ModelKind::Ahnn => "ahnn",
            ModelKind::Asrnn => "asrnn",
            ModelKind::Encoder => "lstm-encoder",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "hnn" => Ok(ModelKind::Hnn),
            "ahnn" => Ok(ModelKind::Ahnn),
            "asrnn" => Ok(ModelKind::Asrnn),
            "encoder" | "lstm-encoder" => Ok(ModelKind::Encoder),
            other => Err(Error::InvalidConfig(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Shape of a model without its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Architecture {
    Baseline {
        net: DenseNetSpec,
        channels: ParamChannels,
    },
    Hnn {
        net: DenseNetSpec,
        channels: ParamChannels,
    },
    Separable {
        kinetic: Option<DenseNetSpec>,
        potential: DenseNetSpec,
        channels: ParamChannels,
    },
    Encoder {
        hidden: usize,
        window_len: usize,
        channels: ParamChannels,
    },
}

/// A model of any kind, with parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Baseline(BaselineModel),
    Hnn(HnnModel),
    Separable(SeparableModel),
    Encoder(EncoderModel),
}

impl Model {
    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Baseline(m) => Architecture::Baseline {
                net: m.net.spec.clone(),
                channels: m.channels,
            },
            Model::Hnn(m) => Architecture::Hnn {
                net: m.net.spec.clone(),
                channels: m.channels,
            },
            Model::Separable(m) => Architecture::Separable {
                kinetic: m.kinetic.as_ref().map(|k| k.spec.clone()),
                potential: m.potential.spec.clone(),
                channels: m.channels,
            },
            Model::Encoder(m) => Architecture::Encoder {
                hidden: m.hidden_size(),
                window_len: m.window_len,
                channels: m.channels,
            },
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Model::Baseline(m) => m.net.params.as_slice().to_vec(),
            Model::Hnn(m) => m.net.params.as_slice().to_vec(),
            Model::Separable(m) => m.flat_params(),
            Model::Encoder(m) => m.flat_params(),
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Model::Baseline(m) => m.net.spec.activation,
            Model::Hnn(m) => m.net.spec.activation,
            Model::Separable(m) => m.potential.spec.activation,
            Model::Encoder(_) => Activation::Tanh,
        }
    }

    /// Roll the model forward: leapfrog for separable models, RK4 for the
    /// derivative models. Encoders have no dynamics.
    pub fn rollout(&self, state0: &PhaseState, params: &PotentialParams, dt: f64, n_steps: usize) -> Result<Trajectory> {
        match self {
            Model::Baseline(m) => rk4_rollout(m, state0, params, dt, n_steps),
            Model::Hnn(m) => rk4_rollout(m, state0, params, dt, n_steps),
            Model::Separable(m) => asrnn_rollout(m, state0, params, dt, n_steps),
            Model::Encoder(_) => Err(Error::InvalidConfig("an encoder checkpoint cannot be rolled out".into())),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        self.default_kind().as_str()
    }

    fn default_kind(&self) -> ModelKind {
        match self {
            Model::Baseline(_) => ModelKind::Baseline,
            Model::Hnn(m) if m.is_adaptable() => ModelKind::Ahnn,
            Model::Hnn(_) => ModelKind::Hnn,
            Model::Separable(_) => ModelKind::Asrnn,
            Model::Encoder(_) => ModelKind::Encoder,
        }
    }

    /// Rebuild a model from its architecture and flat parameters.
    pub fn from_parts(arch: &Architecture, params: &[f64]) -> Result<Self> {
        let net = |spec: &DenseNetSpec, values: &[f64]| DenseNet::new(spec.clone(), NetParams::new(values.to_vec()));
        match arch {
            Architecture::Baseline { net: spec, channels } => {
                Ok(Model::Baseline(BaselineModel::from_net(net(spec, params)?, *channels)?))
            }
            Architecture::Hnn { net: spec, channels } => Ok(Model::Hnn(HnnModel::from_net(net(spec, params)?, *channels)?)),
            Architecture::Separable {
                kinetic,
                potential,
                channels,
            } => {
                let nk = kinetic.as_ref().map_or(0, |k| k.num_params());
                if params.len() != nk + potential.num_params() {
                    return Err(Error::ShapeMismatch(format!(
                        "separable model expects {} parameters, got {}",
                        nk + potential.num_params(),
                        params.len()
                    )));
                }
                let k = kinetic.as_ref().map(|k| net(k, &params[..nk])).transpose()?;
                let v = net(potential, &params[nk..])?;
                Ok(Model::Separable(SeparableModel::from_nets(k, v, *channels)?))
            }
            Architecture::Encoder {
                hidden,
                window_len,
                channels,
            } => {
                let mut enc = EncoderModel::zeros(*hidden, *window_len, *channels)?;
                enc.set_flat_params(params)?;
                Ok(Model::Encoder(enc))
            }
        }
    }
}

/// Everything needed to reload and reproduce a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub spec: Architecture,
    pub activation: Activation,
    pub init_scheme: String,
    pub seed: u64,
    pub params: Vec<f64>,
    #[serde(default)]
    pub training_config: serde_json::Value,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl Checkpoint {
    pub fn new(model: &Model, seed: u64) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_kind: model.default_kind(),
            spec: model.architecture(),
            activation: model.activation(),
            init_scheme: INIT_SCHEME.to_string(),
            seed,
            params: model.flat_params(),
            training_config: serde_json::Value::Null,
            metrics: BTreeMap::new(),
        }
    }

    pub fn with_training_config<T: Serialize>(mut self, config: &T) -> Result<Self> {
        self.training_config = serde_json::to_value(config)?;
        Ok(self)
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(&self.spec, &self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptRecord("checkpoint has no format_version".into()))?;
        if found != u64::from(CHECKPOINT_FORMAT_VERSION) {
            return Err(Error::FormatVersionMismatch {
                expected: CHECKPOINT_FORMAT_VERSION,
                found: found as u32,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_models() -> Vec<Model> {
        vec![
            Model::Baseline(BaselineModel::new(&[5], ParamChannels::Alpha, 1).unwrap()),
            Model::Hnn(HnnModel::new(&[5, 4], ParamChannels::None, 2).unwrap()),
            Model::Hnn(HnnModel::new(&[5], ParamChannels::AlphaBeta, 2).unwrap()),
            Model::Separable(SeparableModel::new(&[6], ParamChannels::Alpha, 3, false).unwrap()),
            Model::Separable(SeparableModel::new(&[6], ParamChannels::Alpha, 3, true).unwrap()),
            Model::Encoder(EncoderModel::new(9, 30, ParamChannels::Alpha, 4).unwrap()),
        ]
    }

    #[test]
    fn round_trip_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        for (i, m) in all_models().into_iter().enumerate() {
            let mut ck = Checkpoint::new(&m, 42);
            ck.metrics.insert("val_loss".into(), 0.1 + 0.2);
            let path = dir.path().join(format!("m{i}.json"));
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.model().unwrap(), m);
        }
    }

    #[test]
    fn rollout_dispatch() {
        let s0 = PhaseState::new([0.1, 0.0], [0.0, 0.1]);
        let p = PotentialParams::single(0.5);
        for m in all_models() {
            let r = m.rollout(&s0, &p, 0.1, 5);
            match m {
                Model::Encoder(_) => assert!(r.is_err()),
                _ => assert_eq!(r.unwrap().len(), 6),
            }
        }
    }

    #[test]
    fn kinds() {
        let kinds: Vec<ModelKind> = all_models().iter().map(|m| Checkpoint::new(m, 0).model_kind).collect();
        use ModelKind::*;
        assert_eq!(kinds, vec![Baseline, Hnn, Ahnn, Asrnn, Asrnn, Encoder]);
        let k: ModelKind = serde_json::from_str("\"encoder\"").unwrap();
        assert_eq!(k, Encoder);
        assert_eq!(serde_json::to_string(&Encoder).unwrap(), "\"lstm-encoder\"");
        assert_eq!("encoder".parse::<ModelKind>().unwrap(), Encoder);
        assert!("gru".parse::<ModelKind>().is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let ck = Checkpoint::new(&all_models()[0], 0);
        let text = ck.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::FormatVersionMismatch { expected: 1, found: 99 })
        ));
    }

    #[test]
    fn wrong_parameter_count_is_rejected() {
        let mut ck = Checkpoint::new(&all_models()[3], 0);
        ck.params.pop();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn params_round_trip_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 31)) {
            let spec = DenseNetSpec::mlp(4, &[5], 1).unwrap();
            let m = Model::Hnn(HnnModel::from_net(DenseNet::new(spec, NetParams::new(values.clone())).unwrap(), ParamChannels::None).unwrap());
            let back = Checkpoint::from_json(&Checkpoint::new(&m, 7).to_json().unwrap()).unwrap();
            let bits: Vec<u64> = back.params.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, want);
        }
    }
}
