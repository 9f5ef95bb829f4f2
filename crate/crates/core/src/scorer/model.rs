//! Hashed n-gram logistic pairwise classifier: training and the model file format.
//!
//! Model file layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "CRMPAIR\0"
//! format_version   u32
//! assembly mode    u8       0 = PAIR_ONLY, 1 = PAIR_PLUS_EXPLANATIONS, 2 = EXPLANATIONS_ONLY
//! feature_dim      u32
//! word orders      u32 count, then u32 each
//! char orders      u32 count, then u32 each
//! weights          f64 × feature_dim
//! bias             f64
//! ```
//!
//! A JSON manifest sidecar (`<model>.manifest.json`) echoes the full training
//! configuration and the SHA-256 of the model file.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assemble::{assemble_input, AssembledInput, AssemblyMode};
use super::features::{dot, featurize, SparseVector};
use super::{PairScorer, ScoredComparison, ScorerError};
use crate::generator::Explanation;
use crate::pairing::LabeledPair;

pub const MODEL_MAGIC: &[u8; 8] = b"CRMPAIR\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Transformer fine-tuning uses 2e-5; a linear model over hashed features needs a larger step.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub feature_dim: usize,
    /// Word n-gram orders.
    pub ngram_orders: Vec<usize>,
    pub char_ngram_orders: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 0.01,
            seed: 0,
            feature_dim: 1 << 16,
            ngram_orders: vec![1, 2],
            char_ngram_orders: vec![3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        let bad = |m: &str| Err(ScorerError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !self.feature_dim.is_power_of_two() || self.feature_dim > u32::MAX as usize {
            return bad("feature_dim must be a power of two that fits in 32 bits");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("learning_rate must be > 0 and weight_decay >= 0");
        }
        Ok(())
    }
}

/// One training instance, already resolved to texts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub t1: String,
    pub t2: String,
    pub e1: Option<String>,
    pub e2: Option<String>,
    pub label: bool,
}

impl TrainingExample {
    pub fn assemble(&self, mode: AssemblyMode) -> Result<AssembledInput, ScorerError> {
        assemble_input(&self.t1, &self.t2, self.e1.as_deref(), self.e2.as_deref(), mode)
    }
}

/// Resolves pairs against an explanation map keyed by tweet id. Missing
/// explanations are only an error when `mode` needs them.
pub fn examples_from_pairs(
    pairs: &[LabeledPair],
    explanations: &HashMap<String, Explanation>,
    mode: AssemblyMode,
) -> Result<Vec<TrainingExample>, ScorerError> {
    pairs
        .iter()
        .map(|p| {
            let e1 = explanations.get(&p.t1.id).map(|e| e.text.clone());
            let e2 = explanations.get(&p.t2.id).map(|e| e.text.clone());
            if mode.needs_explanations() && (e1.is_none() || e2.is_none()) {
                return Err(ScorerError::MissingExplanation);
            }
            Ok(TrainingExample { t1: p.t1.text.clone(), t2: p.t2.text.clone(), e1, e2, label: p.label })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss of the untrained (all-zero) model, i.e. ln 2.
    pub initial_loss: f64,
    /// Mean training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
    pub mode: AssemblyMode,
    pub version: u32,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `z` against `y`, computed stably.
fn log_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    m_bias: f64,
    v_bias: f64,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl AdamW {
    fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], m_bias: 0.0, v_bias: 0.0, step: 0 }
    }

    fn update(&mut self, weights: &mut [f64], bias: &mut f64, grad: &[f64], grad_bias: f64, lr: f64, wd: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for ((w, g), (m, v)) in weights.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            // decoupled decay, applied to the weight directly
            *w -= lr * ((*m / c1) / ((*v / c2).sqrt() + EPS) + wd * *w);
        }
        self.m_bias = BETA1 * self.m_bias + (1.0 - BETA1) * grad_bias;
        self.v_bias = BETA2 * self.v_bias + (1.0 - BETA2) * grad_bias * grad_bias;
        *bias -= lr * (self.m_bias / c1) / ((self.v_bias / c2).sqrt() + EPS);
    }
}

/// Trains on resolved examples with mini-batch AdamW, seeded shuffling and
/// decoupled weight decay. Single-threaded so results are bit-reproducible.
pub fn train_examples(
    examples: &[TrainingExample],
    config: &TrainConfig,
    mode: AssemblyMode,
) -> Result<(PairwiseModel, TrainLog), ScorerError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ScorerError::EmptyTrainingSet);
    }
    let data: Vec<(SparseVector, f64)> = examples
        .iter()
        .map(|ex| Ok((featurize(&ex.assemble(mode)?.text, config), if ex.label { 1.0 } else { 0.0 })))
        .collect::<Result<_, ScorerError>>()?;

    let dim = config.feature_dim;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut opt = AdamW::new(dim);
    let mut grad = vec![0.0; dim];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog { initial_loss: std::f64::consts::LN_2, epoch_losses: Vec::with_capacity(config.epochs) };

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_bias = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &data[i];
                let err = (sigmoid(dot(&weights, x) + bias) - y) * scale;
                for &(j, v) in x {
                    grad[j as usize] += err * v;
                }
                grad_bias += err;
            }
            opt.update(&mut weights, &mut bias, &grad, grad_bias, config.learning_rate, config.weight_decay);
        }
        let loss = data.iter().map(|(x, y)| log_loss(dot(&weights, x) + bias, *y)).sum::<f64>() / data.len() as f64;
        log.epoch_losses.push(loss);
    }

    if !weights.iter().all(|w| w.is_finite()) || !bias.is_finite() {
        return Err(ScorerError::NonFinite);
    }
    let model = PairwiseModel { weights, bias, config: config.clone(), mode, version: MODEL_FORMAT_VERSION };
    Ok((model, log))
}

pub fn train(
    pairs: &[LabeledPair],
    explanations: &HashMap<String, Explanation>,
    config: &TrainConfig,
    mode: AssemblyMode,
) -> Result<(PairwiseModel, TrainLog), ScorerError> {
    if pairs.is_empty() {
        return Err(ScorerError::EmptyTrainingSet);
    }
    let examples = examples_from_pairs(pairs, explanations, mode)?;
    train_examples(&examples, config, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub mode: AssemblyMode,
    pub config: TrainConfig,
    pub model_sha256: String,
}

impl PairwiseModel {
    /// All-zero model; predicts exactly 0.5 for every input.
    pub fn zeros(config: TrainConfig, mode: AssemblyMode) -> Self {
        Self { weights: vec![0.0; config.feature_dim], bias: 0.0, config, mode, version: MODEL_FORMAT_VERSION }
    }

    pub fn logit(&self, assembled: &AssembledInput) -> f64 {
        dot(&self.weights, &featurize(&assembled.text, &self.config)) + self.bias
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.weights.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.mode.code());
        out.extend_from_slice(&(self.config.feature_dim as u32).to_le_bytes());
        for orders in [&self.config.ngram_orders, &self.config.char_ngram_orders] {
            out.extend_from_slice(&(orders.len() as u32).to_le_bytes());
            for &o in orders.iter() {
                out.extend_from_slice(&(o as u32).to_le_bytes());
            }
        }
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.bias.to_le_bytes());
        out
    }

    /// Parses a model file. Hyperparameters not stored in the binary header
    /// take their defaults; [`PairwiseModel::load`] restores them from the manifest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ScorerError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(ScorerError::BadModelFile("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(ScorerError::BadModelFile(format!("unsupported format version {version}")));
        }
        let mode = AssemblyMode::from_code(r.take(1)?[0]).ok_or_else(|| ScorerError::BadModelFile("bad mode".into()))?;
        let feature_dim = r.u32()? as usize;
        if !feature_dim.is_power_of_two() {
            return Err(ScorerError::BadModelFile("feature_dim is not a power of two".into()));
        }
        let mut orders = [Vec::new(), Vec::new()];
        for slot in orders.iter_mut() {
            let n = r.u32()? as usize;
            for _ in 0..n {
                slot.push(r.u32()? as usize);
            }
        }
        let mut weights = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            weights.push(r.f64()?);
        }
        let bias = r.f64()?;
        if r.pos != bytes.len() {
            return Err(ScorerError::BadModelFile("trailing bytes".into()));
        }
        if !weights.iter().all(|w| w.is_finite()) || !bias.is_finite() {
            return Err(ScorerError::NonFinite);
        }
        let [ngram_orders, char_ngram_orders] = orders;
        let config = TrainConfig { feature_dim, ngram_orders, char_ngram_orders, ..TrainConfig::default() };
        Ok(Self { weights, bias, config, mode, version })
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        path.with_file_name(name)
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            format_version: self.version,
            mode: self.mode,
            config: self.config.clone(),
            model_sha256: crate::digest::sha256_hex(&self.to_bytes()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        crate::jsonl::write_atomic(path, &self.to_bytes())?;
        let manifest = serde_json::to_vec_pretty(&self.manifest()).expect("manifest serializes");
        crate::jsonl::write_atomic(&Self::manifest_path(path), &manifest)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let bytes = std::fs::read(path)?;
        let mut model = Self::from_bytes(&bytes)?;
        if let Ok(raw) = std::fs::read(Self::manifest_path(path)) {
            let manifest: ModelManifest =
                serde_json::from_slice(&raw).map_err(|e| ScorerError::BadModelFile(format!("manifest: {e}")))?;
            if manifest.model_sha256 != crate::digest::sha256_hex(&bytes) {
                return Err(ScorerError::BadModelFile("manifest digest does not match model file".into()));
            }
            model.config = manifest.config;
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ScorerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ScorerError::BadModelFile("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ScorerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ScorerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl PairScorer for PairwiseModel {
    fn predict(
        &self,
        t1: &str,
        t2: &str,
        e1: Option<&str>,
        e2: Option<&str>,
        mode: AssemblyMode,
    ) -> Result<ScoredComparison, ScorerError> {
        let assembled = assemble_input(t1, t2, e1, e2, mode)?;
        let p_t1 = sigmoid(self.logit(&assembled));
        Ok(ScoredComparison::new(p_t1, assembled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig { feature_dim: 1 << 10, epochs: 3, ..TrainConfig::default() }
    }

    fn example(t1: &str, t2: &str, label: bool) -> TrainingExample {
        TrainingExample { t1: t1.into(), t2: t2.into(), e1: None, e2: None, label }
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let m = PairwiseModel::zeros(small(), AssemblyMode::PairOnly);
        let s = m.predict("a", "b", None, None, AssemblyMode::PairOnly).unwrap();
        assert_eq!(s.p_t1, 0.5);
        assert!(!s.verdict);
    }

    #[test]
    fn empty_training_set() {
        assert!(matches!(train_examples(&[], &small(), AssemblyMode::PairOnly), Err(ScorerError::EmptyTrainingSet)));
        assert!(matches!(
            train(&[], &HashMap::new(), &small(), AssemblyMode::PairOnly),
            Err(ScorerError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn missing_explanations_when_mode_needs_them() {
        let ex = vec![example("a", "b", true)];
        assert!(matches!(
            train_examples(&ex, &small(), AssemblyMode::PairPlusExplanations),
            Err(ScorerError::MissingExplanation)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { feature_dim: 1000, ..small() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..small() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let ex = vec![example("good news", "bad", true), example("x", "long text here", false)];
        let (m, _) = train_examples(&ex, &small(), AssemblyMode::PairOnly).unwrap();
        let bytes = m.to_bytes();
        let back = PairwiseModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.bias.to_bits(), m.bias.to_bits());
        assert!(matches!(PairwiseModel::from_bytes(&bytes[..bytes.len() - 1]), Err(ScorerError::BadModelFile(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(PairwiseModel::from_bytes(&bad), Err(ScorerError::BadModelFile(_))));
        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        assert!(matches!(PairwiseModel::from_bytes(&wrong_version), Err(ScorerError::BadModelFile(_))));
    }

    #[test]
    fn save_load_restores_config_from_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let cfg = TrainConfig { seed: 42, epochs: 2, ..small() };
        let (m, _) = train_examples(&[example("a b", "c", true)], &cfg, AssemblyMode::PairOnly).unwrap();
        m.save(&path).unwrap();
        let back = PairwiseModel::load(&path).unwrap();
        assert_eq!(back, m);

        std::fs::write(PairwiseModel::manifest_path(&path), br#"{"format_version":1,"mode":"PAIR_ONLY","config":{},"model_sha256":"00"}"#).unwrap();
        assert!(matches!(PairwiseModel::load(&path), Err(ScorerError::BadModelFile(_))));
    }

    #[test]
    fn stable_sigmoid_and_loss() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((log_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(1000.0, 0.0).is_finite());
    }
}
