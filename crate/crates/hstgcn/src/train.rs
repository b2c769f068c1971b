//! Training loop: mini-batch L1 regression with Adam, per-epoch
//! learning-rate decay, gradient clipping by global norm, volume-noise
//! augmentation, early stopping on a held-out validation week, and
//! best-validation parameter selection. Also the checkpoint format: a
//! little-endian f64 blob plus a JSON manifest.

use crate::error::{Error, Result};
use crate::features::{inject_noise, FeatureSource, Normalizer};
use crate::grid::TimeGrid;
use crate::io::{read_f64_blob, sha256_hex, write_f64_blob};
use crate::model::{ArchitectureConfig, Model};
use crate::optim::{effective_lr, Adam, AdamConfig};
use crate::seed;
use crate::spectral::SpectralOperator;
use crate::tensor::Tensor;
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Base learning rate.
    pub lr: f64,
    /// Per-epoch multiplicative decay of the learning rate.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global-norm gradient clip threshold.
    pub grad_clip: f64,
    /// Volume entries below this threshold receive training noise.
    pub noise_threshold: f64,
    /// Standard deviation of the volume noise; 0 disables augmentation.
    pub noise_std: f64,
    /// Cap on anchors visited per epoch after shuffling; 0 means all.
    /// The validation sweep is capped to the same budget through a fixed
    /// stride subsample, so per-epoch cost stays bounded on big grids.
    pub anchors_per_epoch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            lr_decay: 0.98,
            batch_size: 8,
            max_epochs: 100,
            patience: 10,
            grad_clip: 5.0,
            noise_threshold: 3.0,
            noise_std: 0.3,
            anchors_per_epoch: 0,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "learning-rate decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config(
                "batch size, epoch cap and patience must all be positive".into(),
            ));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!(
                "gradient clip must be positive, got {}",
                self.grad_clip
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config(format!(
                "noise std must be non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// One epoch of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Effective (decayed) learning rate this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Batches whose gradient exceeded the clip threshold.
    pub clipped_steps: usize,
    /// Largest pre-clip global gradient norm seen this epoch.
    pub max_grad_norm: f64,
}

/// Full record of one training run. Identical seeds and data reproduce
/// this bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Split anchors into train / validation / test: validation is the last
/// training week, the test span follows the training span.
pub fn split_anchors(
    grid: &TimeGrid,
    p: usize,
    f_horizon: usize,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    use crate::features::{window_sampler, SamplerMode};
    let all_train = window_sampler(grid, p, f_horizon, SamplerMode::Test, 0);
    // SamplerMode::Test enumerates the *test* span; for the train span we
    // enumerate in slot order ourselves to keep this split deterministic.
    let spd = grid.slots_per_day;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let val_first_day = (grid.weeks_train.max(1) - 1) * 7;
    if p + f_horizon <= spd {
        for day in 0..grid.weeks_train * 7 {
            let day_start = day * spd;
            for t0 in (day_start + p - 1)..=(day_start + spd - 1 - f_horizon) {
                if day >= val_first_day && grid.weeks_train > 1 {
                    val.push(t0);
                } else {
                    train.push(t0);
                }
            }
        }
    }
    (train, val, all_train)
}

fn grad_global_norm(grads: &IndexMap<String, Tensor>) -> f64 {
    grads
        .values()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Deterministic stride subsample: every ⌈len/cap⌉-th anchor. The subset
/// is fixed across epochs so validation losses stay comparable; 0 means
/// no cap.
fn stride_subsample(anchors: &[usize], cap: usize) -> Vec<usize> {
    if cap == 0 || anchors.len() <= cap {
        return anchors.to_vec();
    }
    let stride = anchors.len().div_ceil(cap);
    anchors.iter().copied().step_by(stride).collect()
}

/// Train `model` in place. Returns the trace and the fitted travel-time
/// normalizer; on return the model holds the parameters of the best
/// validation epoch.
pub fn fit(
    model: &mut Model,
    source: &FeatureSource,
    train_anchors: &[usize],
    val_anchors: &[usize],
    config: &TrainConfig,
) -> Result<(TrainTrace, Normalizer)> {
    config.validate()?;
    if train_anchors.is_empty() {
        return Err(Error::Data("no training anchors".into()));
    }
    let p = model.config().p;
    let f_horizon = model.config().f_horizon;
    let normalizer = source.fit_normalizer(train_anchors, p, f_horizon)?;
    let mut shuffle_rng = seed::rng(config.seed, "epoch-shuffle");
    let mut noise_rng = seed::rng(config.seed, "volume-noise");
    let mut adam = Adam::new(config.adam.clone());
    let mut trace = TrainTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params: IndexMap<String, Tensor> = model.graph().param_values().clone();
    let mut bad_epochs = 0usize;
    let val_eval = stride_subsample(val_anchors, config.anchors_per_epoch);
    let diverged = |epoch: usize, err: Error| {
        Error::Diverged(format!("training diverged at epoch {epoch}: {err}"))
    };

    for epoch in 0..config.max_epochs {
        let lr = effective_lr(config.lr, config.lr_decay, epoch);
        let mut anchors = train_anchors.to_vec();
        anchors.shuffle(&mut shuffle_rng);
        if config.anchors_per_epoch > 0 && config.anchors_per_epoch < anchors.len() {
            anchors.truncate(config.anchors_per_epoch);
        }
        let mut loss_sum = 0.0;
        let mut clipped_steps = 0usize;
        let mut max_grad_norm = 0.0f64;
        for batch in anchors.chunks(config.batch_size) {
            let mut acc: Option<IndexMap<String, Tensor>> = None;
            for &t0 in batch {
                let window = source.window(t0, p, f_horizon)?;
                let v = if config.noise_std > 0.0 {
                    inject_noise(
                        &window.v,
                        config.noise_threshold,
                        config.noise_std,
                        &mut noise_rng,
                    )?
                } else {
                    window.v
                };
                let t = normalizer.apply(&window.t)?;
                let (loss, grads) = model
                    .loss_and_grads(&v, &t, &window.label)
                    .map_err(|e| diverged(epoch, e))?;
                loss_sum += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(acc) => {
                        for (name, g) in grads {
                            let slot = acc.get_mut(&name).expect("same parameter set");
                            for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                for x in g.data_mut() {
                    *x *= scale;
                }
            }
            let norm = grad_global_norm(&grads);
            max_grad_norm = max_grad_norm.max(norm);
            if norm > config.grad_clip {
                clipped_steps += 1;
                let shrink = config.grad_clip / norm;
                for g in grads.values_mut() {
                    for x in g.data_mut() {
                        *x *= shrink;
                    }
                }
            }
            adam.step(model.graph_mut(), &grads, lr).map_err(|e| diverged(epoch, e))?;
        }
        let train_loss = loss_sum / anchors.len() as f64;

        let val_loss = if val_eval.is_empty() {
            train_loss
        } else {
            let mut sum = 0.0;
            for &t0 in &val_eval {
                let window = source.window(t0, p, f_horizon)?;
                let t = normalizer.apply(&window.t)?;
                let (loss, _) = model
                    .forward(&window.v, &t, &window.label)
                    .map_err(|e| diverged(epoch, e))?;
                sum += loss;
            }
            sum / val_eval.len() as f64
        };

        trace.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            clipped_steps,
            max_grad_norm,
        });
        if val_loss < trace.best_val_loss {
            trace.best_val_loss = val_loss;
            trace.best_epoch = epoch;
            best_params = model.graph().param_values().clone();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                trace.stopped_early = true;
                break;
            }
        }
    }
    for (name, value) in best_params {
        model.graph_mut().set_param(&name, value)?;
    }
    Ok((trace, normalizer))
}

// ---- checkpoints ------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
const CHECKPOINT_BLOB: &str = "params.bin";

/// Content fingerprint of an adjacency matrix: hash of its shape and
/// little-endian element bytes. Stored in checkpoints so evaluation can
/// detect a graph that differs from the one trained on.
pub fn adjacency_fingerprint(w: &Tensor) -> String {
    let mut bytes = Vec::with_capacity(8 * (w.numel() + w.shape().len() + 1));
    bytes.extend_from_slice(&(w.shape().len() as u64).to_le_bytes());
    for &d in w.shape() {
        bytes.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in w.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    architecture: ArchitectureConfig,
    normalizer: Normalizer,
    adjacency_sha256: String,
    tensors: Vec<TensorEntry>,
    blob: String,
}

/// A loaded checkpoint, not yet bound to a spectral operator.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub architecture: ArchitectureConfig,
    pub params: IndexMap<String, Tensor>,
    pub normalizer: Normalizer,
    pub adjacency_sha256: String,
}

impl Checkpoint {
    /// Rebuild the model around a spectral operator. The operator must
    /// match the checkpoint's segment dimension.
    pub fn into_model(self, spec: &SpectralOperator) -> Result<Model> {
        if spec.n() != self.architecture.n {
            return Err(Error::Checkpoint(format!(
                "segment dimension mismatch: checkpoint trained with n = {} segments, \
                 the supplied adjacency has n = {}",
                self.architecture.n,
                spec.n()
            )));
        }
        let mut model = Model::build(&self.architecture, spec, 0)?;
        for (name, value) in self.params {
            model.graph_mut().set_param(&name, value)?;
        }
        Ok(model)
    }
}

/// Write `checkpoint.json` and `params.bin` into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    model: &Model,
    normalizer: &Normalizer,
    adjacency_sha256: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut blob: Vec<f64> = Vec::new();
    for (name, value) in model.graph().param_values() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: value.shape().to_vec(),
            offset: blob.len(),
            len: value.numel(),
        });
        blob.extend_from_slice(value.data());
    }
    write_f64_blob(&dir.join(CHECKPOINT_BLOB), &blob)?;
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        architecture: model.config().clone(),
        normalizer: normalizer.clone(),
        adjacency_sha256: adjacency_sha256.to_string(),
        tensors,
        blob: CHECKPOINT_BLOB.to_string(),
    };
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    fs::write(dir.join(CHECKPOINT_MANIFEST), body + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let body = fs::read_to_string(&manifest_path)?;
    let manifest: CheckpointManifest = serde_json::from_str(&body)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let blob = read_f64_blob(&dir.join(&manifest.blob))?;
    let mut params = IndexMap::new();
    for entry in &manifest.tensors {
        let end = entry.offset.checked_add(entry.len).filter(|&e| e <= blob.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} spans {}..{} outside the {}-element blob",
                entry.name,
                entry.offset,
                entry.offset + entry.len,
                blob.len()
            )));
        };
        let tensor = Tensor::new(entry.shape.clone(), blob[entry.offset..end].to_vec())?;
        params.insert(entry.name.clone(), tensor);
    }
    Ok(Checkpoint {
        architecture: manifest.architecture,
        params,
        normalizer: manifest.normalizer,
        adjacency_sha256: manifest.adjacency_sha256,
    })
}
