use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::TaskInstance;
use crate::attention::{Model, Objective};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..g.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            steps: 400,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerKind::adam(),
        }
    }
}

/// Mean anchor cross-entropy and summed gradients over a batch, reduced in
/// batch order.
pub fn batch_loss_and_grad(model: &Model, batch: &[&TaskInstance]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total = 0.0;
    let mut acc: Option<Vec<Vec<f64>>> = None;
    let scale = 1.0 / batch.len() as f64;
    for inst in batch {
        let pass = model.forward(&inst.tokens, Some(inst.anchor))?;
        let objective = Objective::AnchorCrossEntropy {
            anchor: inst.anchor,
            target: &inst.target,
        };
        let (loss, grads) = model.backward(&pass, &objective)?;
        total += loss;
        match &mut acc {
            None => {
                acc = Some(
                    grads
                        .into_iter()
                        .map(|g| g.into_iter().map(|x| x * scale).collect())
                        .collect(),
                )
            }
            Some(a) => {
                for (x, g) in a.iter_mut().zip(grads) {
                    for (p, q) in x.iter_mut().zip(g) {
                        *p += q * scale;
                    }
                }
            }
        }
    }
    Ok((total * scale, acc.unwrap_or_default()))
}

/// Trains `model` in place on the anchor cross-entropy objective.
/// Returns the batch loss recorded before each update.
pub fn train(model: &mut Model, data: &[TaskInstance], config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let dim = model.config().dim;
    if let Some(bad) = data.iter().flat_map(|i| &i.tokens).find(|t| t.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<&TaskInstance> = (0..config.batch_size)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        let (loss, grads) = batch_loss_and_grad(model, &batch)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        curve.push(loss);
        opt.step(&mut model.tensors_mut(), &grads);
    }
    Ok(curve)
}
