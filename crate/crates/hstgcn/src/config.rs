//! Run configuration: one plain-text document of `key = value` sections
//! (TOML) covering the whole pipeline — scenario generation, feature
//! windows, model variant, training, and evaluation slicing. Unknown
//! sections or keys are rejected by name so typos fail loudly, and a
//! single master seed drives every stage through labeled substreams.

use crate::error::{Error, Result};
use crate::eval::SliceSpec;
use crate::features::HaDivisor;
use crate::grid::TimeGrid;
use crate::model::{ArchitectureConfig, Variant};
use crate::optim::AdamConfig;
use crate::sim::{FundamentalDiagram, NetworkKind};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// `[scenario]`: synthetic network, demand, and traffic generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Network family to generate.
    pub network: NetworkKind,
    /// Target directed-segment count.
    pub segments: usize,
    pub weeks_train: usize,
    pub weeks_test: usize,
    /// Relative multiplier on the calibrated demand level.
    pub demand_scale: f64,
    /// Fraction of vehicles whose planned routes enter the navigation log.
    pub p_nav: f64,
    /// Flow–density constants per road class.
    pub fd: FundamentalDiagram,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            network: NetworkKind::Grid,
            segments: 48,
            weeks_train: 8,
            weeks_test: 2,
            demand_scale: 1.0,
            p_nav: 0.7,
            fd: FundamentalDiagram::default(),
        }
    }
}

impl ScenarioConfig {
    /// The time grid implied by this scenario (canonical 5-minute slots).
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(5, self.weeks_train, self.weeks_test)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Config("scenario.segments must be positive".into()));
        }
        if !(self.demand_scale >= 0.0 && self.demand_scale.is_finite()) {
            return Err(Error::Config(format!(
                "scenario.demand_scale must be finite and non-negative, got {}",
                self.demand_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.p_nav) {
            return Err(Error::Config(format!(
                "scenario.p_nav must lie in [0, 1], got {}",
                self.p_nav
            )));
        }
        self.fd.validate()?;
        self.grid().map(|_| ())
    }
}

/// `[features]`: input-window geometry and the historical-average
/// convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Input window length P, in slots.
    pub past_slots: usize,
    /// Forecast horizons F, in slots.
    pub horizon_slots: usize,
    /// Divisor convention of the weekly historical average.
    pub ha_divisor: HaDivisor,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { past_slots: 6, horizon_slots: 12, ha_divisor: HaDivisor::TermCount }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.past_slots == 0 || self.horizon_slots == 0 {
            return Err(Error::Config(
                "features.past_slots and features.horizon_slots must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `[model]`: variant selection and the adjacency-construction knobs.
/// Channel widths and kernel sizes follow the published plan and are not
/// configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Chebyshev order K of the graph convolution.
    pub chebyshev_order: usize,
    /// Gaussian decay σ² (km²) of the distance adjacency.
    pub sigma2: f64,
    /// Sparsification threshold ε of the distance adjacency.
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { variant: Variant::Hstgcn, chebyshev_order: 3, sigma2: 3.0, epsilon: 0.0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chebyshev_order == 0 {
            return Err(Error::Config("model.chebyshev_order must be at least 1".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config(format!(
                "model.sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "model.epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `[train]`: optimization hyperparameters. The master seed is injected
/// by the pipeline, so the document carries exactly one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub noise_threshold: f64,
    pub noise_std: f64,
    /// Cap on anchors visited per epoch after shuffling; 0 means all.
    /// The pipeline default of 128 keeps a full ablation run within a
    /// laptop-scale time budget on the default 10-week grid.
    pub anchors_per_epoch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            grad_clip: t.grad_clip,
            noise_threshold: t.noise_threshold,
            noise_std: t.noise_std,
            anchors_per_epoch: 128,
        }
    }
}

impl TrainSection {
    /// Bind the section to a stage seed.
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            grad_clip: self.grad_clip,
            noise_threshold: self.noise_threshold,
            noise_std: self.noise_std,
            anchors_per_epoch: self.anchors_per_epoch,
            seed,
            adam: AdamConfig::default(),
        }
    }
}

/// The whole run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    /// `[eval]`: metric slicing rules.
    pub eval: SliceSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: ScenarioConfig::default(),
            features: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            eval: SliceSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parse and validate a config document. Unknown keys surface in the
    /// error together with the offending name and position.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serialize to the canonical document form (stable key order), the
    /// form hashed into stage manifests.
    pub fn to_document(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.features.validate()?;
        self.model.validate()?;
        self.train.to_train_config(0).validate()?;
        self.eval.validate()?;
        let grid = self.scenario.grid()?;
        if self.features.past_slots + self.features.horizon_slots > grid.slots_per_day {
            return Err(Error::Config(format!(
                "feature window of {} + {} slots does not fit a {}-slot day",
                self.features.past_slots, self.features.horizon_slots, grid.slots_per_day
            )));
        }
        Ok(())
    }

    /// Architecture for `variant` on an `n`-segment network, with the
    /// window geometry and Chebyshev order taken from this config.
    pub fn architecture(&self, variant: Variant, n: usize) -> ArchitectureConfig {
        let mut arch = ArchitectureConfig::standard(variant, n);
        arch.p = self.features.past_slots;
        arch.f_horizon = self.features.horizon_slots;
        arch.chebyshev_order = self.model.chebyshev_order;
        arch
    }
}
