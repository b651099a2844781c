use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{great_circle_distance, sample_uniform_sphere_with, GeoPosition, Geotoken, SphereModel};

/// One retrieval problem: a set of geotokens, an anchor, and a target
/// distribution over the other tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub tokens: Vec<Geotoken>,
    pub anchor: usize,
    /// Sums to 1; zero on the anchor.
    pub target: Vec<f64>,
    /// Great-circle distance from the anchor to every token.
    pub distances: Vec<f64>,
}

impl TaskInstance {
    /// Index of the largest target entry, lowest index on ties.
    pub fn target_argmax(&self) -> usize {
        argmax(&self.target)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Shape of the synthetic geotokens.
///
/// Features are drawn independently of position: every entry is
/// `feature_mean + feature_noise·N(0, 1)`. The shared mean gives the
/// projections a stable direction to rotate, while the noise carries no
/// location signal, so any distance awareness must come from the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenShape {
    pub n_tokens: usize,
    pub dim: usize,
    pub feature_mean: f64,
    pub feature_noise: f64,
    pub sphere: SphereModel,
}

impl TokenShape {
    pub fn new(n_tokens: usize, dim: usize) -> Self {
        Self {
            n_tokens,
            dim,
            feature_mean: 1.0,
            feature_noise: 0.5,
            sphere: SphereModel::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_tokens < 2 {
            return Err(Error::Config(format!(
                "tasks need at least 2 tokens, got {}",
                self.n_tokens
            )));
        }
        if self.dim == 0 {
            return Err(Error::Config("token dimension must be positive".into()));
        }
        if !self.feature_mean.is_finite() || !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature mean/noise must be finite, noise >= 0".into()));
        }
        Ok(())
    }
}

fn sample_tokens(shape: &TokenShape, rng: &mut ChaCha8Rng, instance: usize) -> Result<(Vec<Geotoken>, usize)> {
    let positions = sample_uniform_sphere_with(shape.n_tokens, rng);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut tokens = Vec::with_capacity(shape.n_tokens);
    for (i, p) in positions.into_iter().enumerate() {
        let features = (0..shape.dim)
            .map(|_| shape.feature_mean + shape.feature_noise * noise.sample(rng))
            .collect();
        tokens.push(Geotoken::new(format!("i{instance}t{i}"), p, features)?);
    }
    let anchor = rng.random_range(0..shape.n_tokens);
    Ok((tokens, anchor))
}

fn distances_from(positions: &[GeoPosition], anchor: usize, sphere: &SphereModel) -> Vec<f64> {
    positions
        .iter()
        .map(|p| great_circle_distance(&positions[anchor], p, sphere))
        .collect()
}

/// Target `∝ exp(−distance/τ)` over every token except the anchor.
pub fn proximity_target(distances: &[f64], anchor: usize, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let min = distances
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != anchor)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut target: Vec<f64> = distances
        .iter()
        .enumerate()
        .map(|(j, d)| if j == anchor { 0.0 } else { (-(d - min) / tau).exp() })
        .collect();
    let total: f64 = target.iter().sum();
    for t in &mut target {
        *t /= total;
    }
    Ok(target)
}

/// Index of the token closest to the anchor, excluding the anchor itself.
/// Ties go to the lowest index.
pub fn nearest_neighbor(positions: &[GeoPosition], anchor: usize, sphere: &SphereModel) -> usize {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (j, p) in positions.iter().enumerate() {
        if j == anchor {
            continue;
        }
        let d = great_circle_distance(&positions[anchor], p, sphere);
        if d < best_d {
            best_d = d;
            best = Some(j);
        }
    }
    best.expect("at least two tokens")
}

/// Builds an instance from explicit tokens with a one-hot nearest-neighbor target.
pub fn nearest_neighbor_instance(tokens: Vec<Geotoken>, anchor: usize, sphere: &SphereModel) -> Result<TaskInstance> {
    if tokens.len() < 2 || anchor >= tokens.len() {
        return Err(Error::Config("need >= 2 tokens and an in-range anchor".into()));
    }
    let positions: Vec<GeoPosition> = tokens.iter().map(|t| *t.position()).collect();
    let nn = nearest_neighbor(&positions, anchor, sphere);
    let mut target = vec![0.0; tokens.len()];
    target[nn] = 1.0;
    Ok(TaskInstance {
        distances: distances_from(&positions, anchor, sphere),
        tokens,
        anchor,
        target,
    })
}

pub fn gen_proximity_task(shape: &TokenShape, n_instances: usize, seed: u64, tau: f64) -> Result<Vec<TaskInstance>> {
    shape.validate()?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_instances)
        .map(|k| {
            let (tokens, anchor) = sample_tokens(shape, &mut rng, k)?;
            let positions: Vec<GeoPosition> = tokens.iter().map(|t| *t.position()).collect();
            let distances = distances_from(&positions, anchor, &shape.sphere);
            let target = proximity_target(&distances, anchor, tau)?;
            Ok(TaskInstance {
                tokens,
                anchor,
                target,
                distances,
            })
        })
        .collect()
}

pub fn gen_nearest_neighbor_task(shape: &TokenShape, n_instances: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_instances)
        .map(|k| {
            let (tokens, anchor) = sample_tokens(shape, &mut rng, k)?;
            nearest_neighbor_instance(tokens, anchor, &shape.sphere)
        })
        .collect()
}
