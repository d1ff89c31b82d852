use serde::{Deserialize, Serialize};

use crate::capsules::{RoutingConfig, RoutingKind};
use crate::encoder::FeatureMode;
use crate::error::{Error, Result};
use crate::heads::MarginLossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Classify,
    Name,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "name" => Ok(Task::Name),
            other => Err(Error::InvalidArgument(format!(
                "unknown task `{other}` (expected classify or name)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Radam,
    /// Plain Adam, kept for debugging optimizer issues.
    Adam,
}

/// Every knob of a model and its training run. Defaults follow the
/// published experimental settings where those exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub type_dim: usize,
    pub token_dim: usize,
    pub feature_mode: FeatureMode,
    pub routing: RoutingKind,
    pub iterations: usize,
    pub num_secondary: usize,
    pub secondary_dim: usize,
    /// Code capsule count; forced to the class count or to 1 for naming
    /// when a model is built from data.
    pub num_code: usize,
    pub code_dim: usize,
    pub task: Task,
    pub margin: MarginLossConfig,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub min_count: usize,
    /// Hide function-name tokens from the classifier so labels cannot be
    /// read off the header.
    pub mask_function_name: bool,
    /// When set, DRSW only routes PVC capsules whose norm reaches this value.
    pub drsw_norm_threshold: Option<f64>,
    /// Wall-clock cap for a training run, checked between batches.
    pub time_budget_secs: Option<f64>,
    /// Stop once the validation metric reaches this value.
    pub target_metric: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 8,
            type_dim: 30,
            token_dim: 50,
            feature_mode: FeatureMode::Combine,
            routing: RoutingKind::Vts,
            iterations: 3,
            num_secondary: 100,
            secondary_dim: 16,
            num_code: 2,
            code_dim: 16,
            task: Task::Classify,
            margin: MarginLossConfig::default(),
            lr: 0.001,
            lr_decay: 0.5,
            decay_every: 20,
            optimizer: OptimizerKind::Radam,
            batch_size: 32,
            epochs: 50,
            patience: 10,
            seed: 0,
            min_count: 2,
            mask_function_name: true,
            drsw_norm_threshold: None,
            time_budget_secs: None,
            target_metric: None,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for finite-difference checks.
    pub fn tiny(task: Task, routing: RoutingKind) -> Self {
        ModelConfig {
            num_layers: 2,
            type_dim: 3,
            token_dim: 3,
            routing,
            num_secondary: 3,
            secondary_dim: 4,
            num_code: if task == Task::Classify { 2 } else { 1 },
            code_dim: 4,
            task,
            min_count: 1,
            ..ModelConfig::default()
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_mode.width(self.type_dim, self.token_dim)
    }

    pub fn routing_config(&self) -> RoutingConfig {
        RoutingConfig {
            iterations: self.iterations,
            num_secondary: self.num_secondary,
            secondary_dim: self.secondary_dim,
            num_code: self.num_code,
            code_dim: self.code_dim,
            kind: self.routing,
        }
    }

    /// SC capsule dimension: VTS keeps the PVC dimension (the layer count).
    pub fn sc_dim(&self) -> usize {
        self.routing_config().effective_secondary_dim(self.num_layers)
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.decay_every == 0 {
            return self.lr;
        }
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("iterations", self.iterations),
            ("num_secondary", self.num_secondary),
            ("secondary_dim", self.secondary_dim),
            ("num_code", self.num_code),
            ("code_dim", self.code_dim),
            ("batch_size", self.batch_size),
            ("feature width", self.feature_width()),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.task == Task::Name && self.num_code != 1 {
            return Err(Error::InvalidArgument("name prediction uses exactly one code capsule".into()));
        }
        if self.task == Task::Classify && self.num_code < 2 {
            return Err(Error::InvalidArgument("classification needs at least 2 classes".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid learning rate {}", self.lr)));
        }
        self.margin.validate()
    }
}
