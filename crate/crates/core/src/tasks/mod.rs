//! Synthetic geospatial retrieval tasks, training and evaluation.
//!
//! Each instance holds geotokens whose features are independent of their
//! positions. The model is trained so the anchor token's attention row
//! matches a distance-based target, which is only learnable when the
//! position encoder exposes where tokens are.

mod eval;
mod generate;
mod train;

pub use eval::{binomial_band, evaluate, median, score_rows, spearman, AnchorRow, EvalReport};
pub use generate::{
    gen_nearest_neighbor_task, gen_proximity_task, nearest_neighbor, nearest_neighbor_instance,
    proximity_target, TaskInstance, TokenShape,
};
pub use train::{batch_loss_and_grad, train, Optimizer, OptimizerKind, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::attention::{Model, ModelConfig};
use crate::error::Result;

/// Offset between the training and evaluation data seeds.
pub const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    NearestNeighbor,
    /// Soft targets with temperature `tau` in meters.
    Proximity { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub shape: TokenShape,
    pub train_instances: usize,
    pub eval_instances: usize,
    pub seed: u64,
}

impl TaskConfig {
    fn generate(&self, n: usize, seed: u64) -> Result<Vec<TaskInstance>> {
        match self.kind {
            TaskKind::NearestNeighbor => gen_nearest_neighbor_task(&self.shape, n, seed),
            TaskKind::Proximity { tau } => gen_proximity_task(&self.shape, n, seed, tau),
        }
    }

    pub fn train_data(&self) -> Result<Vec<TaskInstance>> {
        self.generate(self.train_instances, self.seed)
    }

    pub fn eval_data(&self) -> Result<Vec<TaskInstance>> {
        self.generate(self.eval_instances, self.seed.wrapping_add(EVAL_SEED_OFFSET))
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub loss_curve: Vec<f64>,
    pub report: EvalReport,
}

/// Generates data, trains a fresh model and evaluates it on held-out instances.
pub fn run(model: &ModelConfig, task: &TaskConfig, train_cfg: &TrainConfig) -> Result<RunResult> {
    let mut m = Model::new(*model)?;
    let train_data = task.train_data()?;
    let loss_curve = train(&mut m, &train_data, train_cfg)?;
    let report = evaluate(&m, &task.eval_data()?)?;
    Ok(RunResult {
        model: m,
        loss_curve,
        report,
    })
}
