//! Dataset generation, windowing and the on-disk dataset format.
//!
//! # File format
//!
//! ```text
//! SYMPLECTIC-ML-DATASET\n
//! <manifest as one line of JSON>\n
//! <payload: little-endian f64, four per state in (q_x, q_y, p_x, p_y) order>
//! ```
//!
//! The manifest records the payload length in bytes and its SHA-256 digest.
//! Trajectory records address the payload by state offset.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{hh_potential, propagate, HenonHeiles, PhaseState, PotentialParams, Trajectory};
use crate::error::{Error, Result};
use crate::lstm::EncoderSample;
use crate::models::DerivativeSample;

pub const DATASET_MAGIC: &str = "SYMPLECTIC-ML-DATASET";
pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MAX_REJECTION_TRIES: usize = 100_000;

/// Parse `"1/12"`, `"0.5"` or `"-3e-2"`.
pub fn parse_fraction(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::InvalidConfig(format!("cannot parse '{s}' as a number or fraction"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// A number written either as a float or as a string such as `"1/12"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Float(f64),
    Text(String),
}

impl Number {
    pub fn value(&self) -> Result<f64> {
        match self {
            Number::Float(v) => Ok(*v),
            Number::Text(s) => parse_fraction(s),
        }
    }
}

impl From<f64> for Number {
    fn from(v: f64) -> Self {
        Number::Float(v)
    }
}

/// `alpha` alone (with `beta = alpha`) or an explicit `[alpha, beta]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSpec {
    Single(f64),
    Pair([f64; 2]),
}

impl ParamSpec {
    pub fn params(self) -> PotentialParams {
        match self {
            ParamSpec::Single(a) => PotentialParams::single(a),
            ParamSpec::Pair([a, b]) => PotentialParams::new(a, b),
        }
    }
}

fn default_fine_dt() -> f64 {
    0.001
}
fn default_coarse_factor() -> usize {
    100
}
fn default_series_length() -> usize {
    3000
}
fn default_transient() -> usize {
    500
}
fn default_max_retries() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub params: Vec<ParamSpec>,
    pub energies: Vec<Number>,
    pub trajectories_per_combination: usize,
    #[serde(default = "default_fine_dt")]
    pub fine_dt: f64,
    #[serde(default = "default_coarse_factor")]
    pub coarse_factor: usize,
    /// Coarse states per trajectory, transient included.
    #[serde(default = "default_series_length")]
    pub series_length: usize,
    /// Leading coarse states dropped.
    #[serde(default = "default_transient")]
    pub transient: usize,
    #[serde(default)]
    pub seed: u64,
    /// Resampling attempts per trajectory after an escape.
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
}

impl GenerationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn energy_values(&self) -> Result<Vec<f64>> {
        self.energies.iter().map(Number::value).collect()
    }

    pub fn coarse_dt(&self) -> f64 {
        self.fine_dt * self.coarse_factor as f64
    }

    pub fn stored_length(&self) -> usize {
        self.series_length - self.transient
    }

    pub fn num_trajectories(&self) -> usize {
        self.params.len() * self.energies.len() * self.trajectories_per_combination
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.params.is_empty() || self.energies.is_empty() {
            return bad("params and energies must be non-empty");
        }
        if self.trajectories_per_combination == 0 || self.coarse_factor == 0 || self.series_length == 0 {
            return bad("counts must be >= 1");
        }
        if self.transient >= self.series_length {
            return bad("transient must be shorter than the series");
        }
        if !(self.fine_dt > 0.0 && self.fine_dt.is_finite()) {
            return bad("fine_dt must be positive");
        }
        for e in self.energy_values()? {
            if !(e > 0.0) {
                return bad("energies must be positive");
            }
        }
        if self.params.iter().any(|p| !p.params().is_finite()) {
            return bad("parameters must be finite");
        }
        Ok(())
    }
}

/// Place of one trajectory in the payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Index of the first state in the payload.
    pub offset: usize,
    pub len: usize,
    pub params: PotentialParams,
    /// Energy requested for the initial condition.
    pub energy: f64,
    /// Resampling attempts consumed after escapes.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: Option<GenerationConfig>,
    /// Time between stored states.
    pub dt: f64,
    pub records: Vec<TrajectoryRecord>,
    pub total_states: usize,
}

/// Manifest plus the state payload it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub states: Vec<PhaseState>,
}

impl Dataset {
    /// Assemble from whole trajectories sharing one time step.
    pub fn from_trajectories(dt: f64, trajs: &[Trajectory], energies: &[f64]) -> Result<Self> {
        let mut records = Vec::with_capacity(trajs.len());
        let mut states = Vec::new();
        for (t, e) in trajs.iter().zip(energies) {
            records.push(TrajectoryRecord {
                offset: states.len(),
                len: t.len(),
                params: t.params(),
                energy: *e,
                retries: 0,
            });
            states.extend_from_slice(t.states());
        }
        let ds = Self {
            manifest: DatasetManifest {
                format_version: DATASET_FORMAT_VERSION,
                config: None,
                dt,
                total_states: states.len(),
                records,
            },
            states,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn states_of(&self, index: usize) -> &[PhaseState] {
        let r = &self.manifest.records[index];
        &self.states[r.offset..r.offset + r.len]
    }

    pub fn trajectory(&self, index: usize) -> Result<Trajectory> {
        let r = &self.manifest.records[index];
        Trajectory::new(self.manifest.dt, self.states_of(index).to_vec(), r.params)
    }

    pub fn trajectories(&self) -> Result<Vec<Trajectory>> {
        (0..self.len()).map(|i| self.trajectory(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let mut expected = 0;
        for (i, r) in m.records.iter().enumerate() {
            if r.offset != expected || r.len == 0 {
                return Err(Error::CorruptRecord(format!("record {i} is not contiguous")));
            }
            expected += r.len;
        }
        if expected != m.total_states || m.total_states != self.states.len() {
            return Err(Error::CorruptRecord(format!(
                "manifest totals {} disagree with records {expected} and payload {}",
                m.total_states,
                self.states.len()
            )));
        }
        if !m.records.is_empty() && !(m.dt > 0.0) {
            return Err(Error::CorruptRecord("non-positive dt".into()));
        }
        Ok(())
    }
}

/// A state with energy `energy` at position `(q_x, q_y)` and momentum
/// `p_x`, choosing `p_y >= 0`.
pub fn state_on_shell(q_x: f64, q_y: f64, p_x: f64, energy: f64, params: &PotentialParams) -> Result<PhaseState> {
    let rest = 2.0 * (energy - hh_potential([q_x, q_y], params)) - p_x * p_x;
    if rest < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "no state with energy {energy} at q=({q_x}, {q_y}), p_x={p_x}"
        )));
    }
    Ok(PhaseState::new([q_x, q_y], [p_x, rest.sqrt()]))
}

/// Rejection-sample `q` uniformly over `[-1, 1]^2` until `V(q) <= E`, then
/// draw a momentum of magnitude `sqrt(2 (E - V))` in a uniform direction.
pub fn sample_initial_condition<R: Rng + ?Sized>(energy: f64, params: &PotentialParams, rng: &mut R) -> Result<PhaseState> {
    if energy == 0.0 {
        return Ok(PhaseState::new([0.0; 2], [0.0; 2]));
    }
    if !(energy > 0.0) {
        return Err(Error::InvalidConfig(format!("energy must be positive, got {energy}")));
    }
    for _ in 0..MAX_REJECTION_TRIES {
        let q = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let v = hh_potential(q, params);
        if v <= energy {
            let r = (2.0 * (energy - v)).sqrt();
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            return Ok(PhaseState::new(q, [r * theta.cos(), r * theta.sin()]));
        }
    }
    Err(Error::RejectionExhausted {
        tries: MAX_REJECTION_TRIES,
        energy,
    })
}

/// Fine-step integration sampled every `factor` steps; `None` if the orbit
/// escapes.
fn coarse_series(
    state0: &PhaseState,
    fine_dt: f64,
    factor: usize,
    length: usize,
    params: &PotentialParams,
) -> Option<Vec<PhaseState>> {
    let mut out = Vec::with_capacity(length);
    let mut s = *state0;
    out.push(s);
    for _ in 1..length {
        s = propagate(&s, fine_dt, factor, &HenonHeiles, params).ok()?;
        out.push(s);
    }
    Some(out)
}

/// Reference orbit of `n_steps` coarse steps of `fine_dt * factor`, each
/// made of `factor` fine leapfrog steps.
pub fn ground_truth(
    state0: &PhaseState,
    params: &PotentialParams,
    fine_dt: f64,
    factor: usize,
    n_steps: usize,
) -> Result<Trajectory> {
    if factor == 0 || n_steps == 0 {
        return Err(Error::InvalidConfig("factor and n_steps must be >= 1".into()));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut s = *state0;
    states.push(s);
    for _ in 0..n_steps {
        s = propagate(&s, fine_dt, factor, &HenonHeiles, params)?;
        states.push(s);
    }
    Trajectory::new(fine_dt * factor as f64, states, *params)
}

/// Generate every trajectory of `config`. Trajectory `k` draws from its own
/// random stream, so the result does not depend on scheduling.
pub fn generate_dataset(config: &GenerationConfig) -> Result<Dataset> {
    config.validate()?;
    let energies = config.energy_values()?;
    let per = config.trajectories_per_combination;
    let jobs: Vec<(PotentialParams, f64)> = config
        .params
        .iter()
        .flat_map(|p| energies.iter().flat_map(move |&e| std::iter::repeat_n((p.params(), e), per)))
        .collect();
    let results: Vec<(Vec<PhaseState>, usize)> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(params, energy))| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            for attempt in 0..=config.max_retries {
                let s0 = sample_initial_condition(energy, &params, &mut rng)?;
                if let Some(series) = coarse_series(&s0, config.fine_dt, config.coarse_factor, config.series_length, &params) {
                    return Ok((series[config.transient..].to_vec(), attempt));
                }
                log::debug!("trajectory {k} escaped, resampling");
            }
            Err(Error::IntegrationDiverged {
                step: 0,
                reason: format!("trajectory {k} escaped after {} retries", config.max_retries),
            })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(jobs.len());
    let mut states = Vec::with_capacity(jobs.len() * config.stored_length());
    for ((params, energy), (series, retries)) in jobs.into_iter().zip(results) {
        records.push(TrajectoryRecord {
            offset: states.len(),
            len: series.len(),
            params,
            energy,
            retries,
        });
        states.extend(series);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            config: Some(config.clone()),
            dt: config.coarse_dt(),
            total_states: states.len(),
            records,
        },
        states,
    })
}

/// Recurrent training window: `states[0]` seeds the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrnnWindow {
    pub states: Vec<PhaseState>,
    pub params: PotentialParams,
    pub dt: f64,
}

/// Windows cut from a dataset, with the number of trajectories too short to
/// contribute any.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows<T> {
    pub items: Vec<T>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WindowKind {
    DerivativePairs,
    SrnnWindows { len: usize },
    EncoderWindows { len: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowSet {
    DerivativePairs(Windows<DerivativeSample>),
    SrnnWindows(Windows<SrnnWindow>),
    EncoderWindows(Windows<EncoderSample>),
}

pub fn window_dataset(ds: &Dataset, kind: WindowKind) -> Result<WindowSet> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(match kind {
        WindowKind::DerivativePairs => WindowSet::DerivativePairs(derivative_pairs(ds)),
        WindowKind::SrnnWindows { len } => WindowSet::SrnnWindows(srnn_windows(ds, len)?),
        WindowKind::EncoderWindows { len, stride } => WindowSet::EncoderWindows(encoder_windows(ds, len, stride)?),
    })
}

/// Every stored state paired with its analytic time derivatives.
pub fn derivative_pairs(ds: &Dataset) -> Windows<DerivativeSample> {
    let items = (0..ds.len())
        .flat_map(|i| {
            let params = ds.manifest.records[i].params;
            ds.states_of(i).iter().map(move |s| DerivativeSample::analytic(*s, params))
        })
        .collect();
    Windows { items, skipped: 0 }
}

/// Non-overlapping windows of `len` states.
pub fn srnn_windows(ds: &Dataset, len: usize) -> Result<Windows<SrnnWindow>> {
    if len < 2 {
        return Err(Error::InvalidConfig("recurrent windows need at least 2 states".into()));
    }
    let mut out = Windows {
        items: Vec::new(),
        skipped: 0,
    };
    for i in 0..ds.len() {
        let states = ds.states_of(i);
        if states.len() < len {
            out.skipped += 1;
            continue;
        }
        let params = ds.manifest.records[i].params;
        out.items.extend(states.chunks_exact(len).map(|c| SrnnWindow {
            states: c.to_vec(),
            params,
            dt: ds.manifest.dt,
        }));
    }
    if out.skipped > 0 {
        log::warn!("{} trajectories shorter than {len} states were skipped", out.skipped);
    }
    Ok(out)
}

/// Sliding `(q_x, p_x)` windows with targets at their last step.
pub fn encoder_windows(ds: &Dataset, len: usize, stride: usize) -> Result<Windows<EncoderSample>> {
    if len == 0 || stride == 0 {
        return Err(Error::InvalidConfig("encoder window length and stride must be >= 1".into()));
    }
    let mut out = Windows {
        items: Vec::new(),
        skipped: 0,
    };
    for i in 0..ds.len() {
        let states = ds.states_of(i);
        if states.len() < len {
            out.skipped += 1;
            continue;
        }
        let params = ds.manifest.records[i].params;
        let mut start = 0;
        while start + len <= states.len() {
            let w = &states[start..start + len];
            let last = w[len - 1];
            out.items.push(EncoderSample {
                window: w.iter().map(|s| [s.q[0], s.p[0]]).collect(),
                q_y: last.q[1],
                p_y: last.p[1],
                params,
            });
            start += stride;
        }
    }
    if out.skipped > 0 {
        log::warn!("{} trajectories shorter than {len} states were skipped", out.skipped);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    manifest: DatasetManifest,
    payload_bytes: usize,
    payload_sha256: String,
}

fn encode_payload(states: &[PhaseState]) -> Vec<u8> {
    let mut out = Vec::with_capacity(states.len() * 32);
    for s in states {
        for v in s.to_array() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let payload = encode_payload(&ds.states);
    let header = FileHeader {
        manifest: ds.manifest.clone(),
        payload_bytes: payload.len(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let mut out = format!("{DATASET_MAGIC}\n{}\n", serde_json::to_string(&header)?).into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let corrupt = |m: &str| Error::CorruptRecord(m.to_string());
    let mut lines = bytes.splitn(3, |b| *b == b'\n');
    let magic = lines.next().ok_or_else(|| corrupt("empty file"))?;
    if magic != DATASET_MAGIC.as_bytes() {
        return Err(corrupt("not a dataset file"));
    }
    let header_line = lines.next().ok_or_else(|| corrupt("missing manifest"))?;
    let payload = lines.next().ok_or_else(|| corrupt("missing payload"))?;
    let value: serde_json::Value = serde_json::from_slice(header_line).map_err(|e| corrupt(&e.to_string()))?;
    let version = value
        .pointer("/manifest/format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("manifest has no format_version"))?;
    if version != u64::from(DATASET_FORMAT_VERSION) {
        return Err(Error::FormatVersionMismatch {
            expected: DATASET_FORMAT_VERSION,
            found: version as u32,
        });
    }
    let header: FileHeader = serde_json::from_value(value).map_err(|e| corrupt(&e.to_string()))?;
    if payload.len() != header.payload_bytes || payload.len() % 32 != 0 {
        return Err(corrupt(&format!(
            "payload is {} bytes, manifest says {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let states = payload
        .chunks_exact(32)
        .map(|c| PhaseState::from_array(std::array::from_fn(|k| f64::from_le_bytes(c[8 * k..8 * k + 8].try_into().unwrap()))))
        .collect();
    let ds = Dataset {
        manifest: header.manifest,
        states,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{hh_derivatives, hh_energy, hh_grad_v};
    use proptest::prelude::*;

    fn small_config() -> GenerationConfig {
        GenerationConfig {
            params: vec![ParamSpec::Single(1.0), ParamSpec::Pair([0.5, 0.3])],
            energies: vec![Number::Text("1/24".into()), Number::Float(0.1)],
            trajectories_per_combination: 2,
            fine_dt: 0.001,
            coarse_factor: 100,
            series_length: 40,
            transient: 5,
            seed: 9,
            max_retries: 100,
        }
    }

    #[test]
    fn ground_truth_matches_coarse_grained_integration() {
        let params = PotentialParams::standard();
        let s0 = state_on_shell(0.0, 0.1, 0.2, 1.0 / 12.0, &params).unwrap();
        let gt = ground_truth(&s0, &params, 0.001, 100, 20).unwrap();
        let fine = crate::dynamics::integrate(&s0, 0.001, 2000, &HenonHeiles, &params).unwrap();
        let coarse = crate::dynamics::coarse_grain(&fine, 100).unwrap();
        assert_eq!(gt.len(), 21);
        assert_eq!(gt.dt(), 0.1);
        assert_eq!(gt.states(), coarse.states());
    }

    #[test]
    fn fractions() {
        assert_eq!(parse_fraction("1/12").unwrap(), 1.0 / 12.0);
        assert_eq!(parse_fraction(" 0.25 ").unwrap(), 0.25);
        assert!(parse_fraction("1/0").is_err());
        assert!(parse_fraction("x").is_err());
    }

    #[test]
    fn config_from_toml() {
        let cfg = GenerationConfig::from_toml(
            r#"
            params = [0.2, [0.5, 0.3]]
            energies = ["1/24", 0.1]
            trajectories_per_combination = 3
            seed = 4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.params, vec![ParamSpec::Single(0.2), ParamSpec::Pair([0.5, 0.3])]);
        assert_eq!(cfg.energy_values().unwrap(), vec![1.0 / 24.0, 0.1]);
        assert_eq!((cfg.series_length, cfg.transient, cfg.coarse_factor), (3000, 500, 100));
        assert_eq!(cfg.num_trajectories(), 12);
        assert!(GenerationConfig::from_toml("params = [1.0]\nenergies = [0.1]\ntrajectories_per_combination = 1\nbogus = 1").is_err());
    }

    #[test]
    fn full_scale_counts() {
        let full = GenerationConfig {
            params: (1..=4).map(|k| ParamSpec::Single(k as f64 * 0.2)).collect(),
            energies: ["1/24", "1/12", "1/8", "1/6"].iter().map(|e| Number::Text(e.to_string())).collect(),
            trajectories_per_combination: 50,
            series_length: 3000,
            transient: 500,
            ..small_config()
        };
        assert_eq!(full.num_trajectories(), 800);
        assert_eq!(full.stored_length(), 2500);
        // 200 series of 2500 points.
        let two_hundred = GenerationConfig {
            energies: vec![Number::Float(0.1)],
            ..full
        };
        assert_eq!(two_hundred.num_trajectories() * two_hundred.stored_length(), 500_000);
    }

    #[test]
    fn sampled_states_lie_on_the_shell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (e, params) in [(1.0 / 24.0, PotentialParams::standard()), (1.0 / 6.0, PotentialParams::single(0.3))] {
            for _ in 0..200 {
                let s = sample_initial_condition(e, &params, &mut rng).unwrap();
                assert!((hh_energy(&s, &params) - e).abs() <= 1e-12);
                assert!(hh_potential(s.q, &params) <= e);
                assert!(s.q_sup_norm() < 1.0 || e > 1.0 / 24.0);
            }
        }
        let origin = sample_initial_condition(0.0, &PotentialParams::standard(), &mut rng).unwrap();
        assert_eq!(origin, PhaseState::new([0.0; 2], [0.0; 2]));
        assert!(matches!(
            sample_initial_condition(-1.0, &PotentialParams::standard(), &mut rng),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn unreachable_energy_exhausts_rejection() {
        // The admissible disc around the origin has area of order 1e-12.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            sample_initial_condition(1e-12, &PotentialParams::standard(), &mut rng),
            Err(Error::RejectionExhausted { .. })
        ));
    }

    #[test]
    fn generation_counts_and_determinism() {
        let cfg = small_config();
        let a = generate_dataset(&cfg).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.manifest.total_states, 8 * 35);
        assert!(a.manifest.records.iter().all(|r| r.len == 35));
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(dataset_to_bytes(&a).unwrap(), dataset_to_bytes(&b).unwrap());

        let tiny = GenerationConfig {
            params: vec![ParamSpec::Single(1.0)],
            energies: vec![Number::Float(0.1)],
            trajectories_per_combination: 1,
            series_length: 10,
            transient: 2,
            ..cfg
        };
        assert_eq!(generate_dataset(&tiny).unwrap().states.len(), 8);
    }

    #[test]
    fn generated_energy_is_conserved() {
        let ds = generate_dataset(&small_config()).unwrap();
        for t in ds.trajectories().unwrap() {
            let e0 = t.energy0();
            for e in t.energies() {
                assert!(((e - e0) / e0).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn window_counts() {
        let params = PotentialParams::standard();
        let s0 = state_on_shell(0.0, 0.1, 0.05, 1.0 / 12.0, &params).unwrap();
        let t = crate::dynamics::integrate(&s0, 0.1, 2499, &HenonHeiles, &params).unwrap();
        let ds = Dataset::from_trajectories(0.1, std::slice::from_ref(&t), &[1.0 / 12.0]).unwrap();
        assert_eq!(srnn_windows(&ds, 11).unwrap().items.len(), 227);
        let short = Dataset::from_trajectories(0.1, &[t.slice(0, 31).unwrap()], &[1.0 / 12.0]).unwrap();
        let enc = encoder_windows(&short, 30, 1).unwrap();
        assert_eq!(enc.items.len(), 2);
        let exact = Dataset::from_trajectories(0.1, &[t.slice(0, 30).unwrap()], &[1.0 / 12.0]).unwrap();
        let enc = encoder_windows(&exact, 30, 1).unwrap();
        assert_eq!(enc.items.len(), 1);
        assert_eq!(enc.items[0].q_y, t.states()[29].q[1]);
        assert_eq!(enc.items[0].window[29], [t.states()[29].q[0], t.states()[29].p[0]]);
        let tiny = Dataset::from_trajectories(0.1, &[t.slice(0, 5).unwrap()], &[1.0 / 12.0]).unwrap();
        assert_eq!(srnn_windows(&tiny, 11).unwrap().skipped, 1);

        let pairs = derivative_pairs(&ds);
        assert_eq!(pairs.items.len(), 2500);
        for p in pairs.items.iter().take(50) {
            let g = hh_grad_v(p.state.q, &params);
            assert_eq!(p.pdot, [-g[0], -g[1]]);
            assert_eq!(p.qdot, p.state.p);
            assert_eq!((p.qdot, p.pdot), hh_derivatives(&p.state, &params));
        }
    }

    #[test]
    fn windows_never_mix_trajectories() {
        let ds = generate_dataset(&small_config()).unwrap();
        let w = srnn_windows(&ds, 11).unwrap();
        assert_eq!(w.items.len(), 8 * 3);
        for win in &w.items {
            let found = (0..ds.len()).any(|i| {
                ds.manifest.records[i].params == win.params && ds.states_of(i).windows(11).any(|s| s == win.states.as_slice())
            });
            assert!(found);
        }
        assert!(matches!(
            window_dataset(&Dataset::from_trajectories(0.1, &[], &[]).unwrap(), WindowKind::DerivativePairs),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_config()).unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);

        let bytes = fs::read(&path).unwrap();
        assert!(matches!(dataset_from_bytes(&bytes[..bytes.len() - 8]), Err(Error::CorruptRecord(_))));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 3] ^= 1;
        assert!(matches!(dataset_from_bytes(&flipped), Err(Error::CorruptRecord(_))));
        let text = String::from_utf8_lossy(&bytes[..200]).to_string();
        assert!(text.contains("\"format_version\":1"));
        let bumped: Vec<u8> = {
            let s = bytes.clone();
            let pos = s.windows(18).position(|w| w == b"\"format_version\":1").unwrap();
            let mut s = s;
            s[pos + 17] = b'7';
            s
        };
        assert!(matches!(
            dataset_from_bytes(&bumped),
            Err(Error::FormatVersionMismatch { expected: 1, found: 7 })
        ));

        let empty = Dataset::from_trajectories(0.1, &[], &[]).unwrap();
        assert_eq!(dataset_from_bytes(&dataset_to_bytes(&empty).unwrap()).unwrap(), empty);
    }

    proptest! {
        #[test]
        fn shell_sampling_is_exact(e in 0.001f64..0.16, alpha in 0.05f64..1.0, seed in 0u64..1000) {
            let params = PotentialParams::single(alpha);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_initial_condition(e, &params, &mut rng).unwrap();
            prop_assert!((hh_energy(&s, &params) - e).abs() <= 1e-12);
        }

        #[test]
        fn payload_round_trips_bit_exact(values in proptest::collection::vec(proptest::array::uniform4(-1e3f64..1e3), 1..20)) {
            let states: Vec<PhaseState> = values.into_iter().map(PhaseState::from_array).collect();
            let t = Trajectory::new(0.1, states, PotentialParams::standard()).unwrap();
            let ds = Dataset::from_trajectories(0.1, &[t], &[0.1]).unwrap();
            prop_assert_eq!(dataset_from_bytes(&dataset_to_bytes(&ds).unwrap()).unwrap(), ds);
        }
    }
}
