//! A small stack of attention blocks with exact backpropagation.
//!
//! Each block is `h = x + Attention(x)` followed by an optional feed-forward
//! residual `y = h + W2·tanh(W1·h + b1) + b2`. The position encoder is fixed
//! and carries no trainable parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::layer::{AttentionGrads, AttentionLayer, LayerForward};
use crate::error::{Error, Result};
use crate::geo::{GeoPosition, Geotoken};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Hidden width of the feed-forward sublayer; 0 disables it.
    pub ff_width: usize,
    pub seed: u64,
    pub encoder: Encoder,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide dim ({})",
                self.heads, self.dim
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        self.encoder.validate(self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub(crate) w1: Matrix,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Matrix,
    pub(crate) b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub(crate) attention: AttentionLayer,
    pub(crate) ff: Option<FeedForward>,
}

impl Block {
    /// A block without the feed-forward sublayer.
    pub fn attention_only(attention: AttentionLayer) -> Self {
        Self { attention, ff: None }
    }

    pub fn attention(&self) -> &AttentionLayer {
        &self.attention
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    blocks: Vec<Block>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

impl Model {
    /// Seeded initialization: weights uniform in `±1/√fan_in`, biases zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let w_q = uniform_matrix(&mut rng, d, d);
            let w_k = uniform_matrix(&mut rng, d, d);
            let w_v = uniform_matrix(&mut rng, d, d);
            let attention = AttentionLayer::new(w_q, w_k, w_v, config.heads, config.encoder)?;
            let ff = (config.ff_width > 0).then(|| FeedForward {
                w1: uniform_matrix(&mut rng, config.ff_width, d),
                b1: vec![0.0; config.ff_width],
                w2: uniform_matrix(&mut rng, d, config.ff_width),
                b2: vec![0.0; d],
            });
            blocks.push(Block { attention, ff });
        }
        Ok(Self { config, blocks })
    }

    /// Rebuilds a model from stored parts, validating shapes.
    pub fn from_parts(config: ModelConfig, blocks: Vec<Block>) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.layers {
            return Err(Error::Format(format!(
                "expected {} blocks, found {}",
                config.layers,
                blocks.len()
            )));
        }
        let mut model = Self { config, blocks };
        for block in &mut model.blocks {
            let a = &block.attention;
            if a.dim() != config.dim {
                return Err(Error::DimensionMismatch {
                    expected: config.dim,
                    actual: a.dim(),
                });
            }
            block.attention = AttentionLayer::new(
                a.w_q.clone(),
                a.w_k.clone(),
                a.w_v.clone(),
                config.heads,
                config.encoder,
            )?;
            match (&block.ff, config.ff_width) {
                (None, 0) => {}
                (Some(ff), w)
                    if w > 0
                        && ff.w1.rows() == w
                        && ff.w1.cols() == config.dim
                        && ff.b1.len() == w
                        && ff.w2.rows() == config.dim
                        && ff.w2.cols() == w
                        && ff.b2.len() == config.dim => {}
                _ => return Err(Error::Format("feed-forward shape mismatch".into())),
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{l}.w_q"), b.attention.w_q.as_slice()));
            out.push((format!("block{l}.w_k"), b.attention.w_k.as_slice()));
            out.push((format!("block{l}.w_v"), b.attention.w_v.as_slice()));
            if let Some(ff) = &b.ff {
                out.push((format!("block{l}.ff.w1"), ff.w1.as_slice()));
                out.push((format!("block{l}.ff.b1"), &ff.b1));
                out.push((format!("block{l}.ff.w2"), ff.w2.as_slice()));
                out.push((format!("block{l}.ff.b2"), &ff.b2));
            }
        }
        out
    }

    /// Mutable views in the same order as [`Model::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.attention.w_q.as_mut_slice());
            out.push(b.attention.w_k.as_mut_slice());
            out.push(b.attention.w_v.as_mut_slice());
            if let Some(ff) = &mut b.ff {
                out.push(ff.w1.as_mut_slice());
                out.push(&mut ff.b1);
                out.push(ff.w2.as_mut_slice());
                out.push(&mut ff.b2);
            }
        }
        out
    }

    /// Forward pass over one set of geotokens. `masked_self` keeps that
    /// token from attending to itself in every block.
    pub fn forward(&self, tokens: &[Geotoken], masked_self: Option<usize>) -> Result<ForwardPass> {
        if tokens.is_empty() {
            return Err(Error::Empty("model needs at least one token"));
        }
        let d = self.config.dim;
        let positions: Vec<GeoPosition> = tokens.iter().map(|t| *t.position()).collect();
        let mut x = Vec::with_capacity(tokens.len());
        for t in tokens {
            if t.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: t.dim(),
                });
            }
            let mut f = t.features().to_vec();
            if let Some(off) = self.config.encoder.input_offset(t.position(), d)? {
                for (a, b) in f.iter_mut().zip(off) {
                    *a += b;
                }
            }
            x.push(f);
        }

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let attn = block.attention.forward(&x, &positions, masked_self)?;
            let h: Vec<Vec<f64>> = x
                .iter()
                .zip(&attn.output)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
                .collect();
            let (ff_act, y) = match &block.ff {
                None => (Vec::new(), h.clone()),
                Some(ff) => {
                    let mut acts = Vec::with_capacity(h.len());
                    let mut ys = Vec::with_capacity(h.len());
                    for hi in &h {
                        let act: Vec<f64> = ff
                            .w1
                            .matvec(hi)
                            .iter()
                            .zip(&ff.b1)
                            .map(|(z, b)| (z + b).tanh())
                            .collect();
                        let out: Vec<f64> = ff
                            .w2
                            .matvec(&act)
                            .iter()
                            .zip(&ff.b2)
                            .zip(hi)
                            .map(|((z, b), r)| r + z + b)
                            .collect();
                        acts.push(act);
                        ys.push(out);
                    }
                    (acts, ys)
                }
            };
            blocks.push(BlockForward {
                input: std::mem::replace(&mut x, y),
                attention: attn,
                residual: h,
                ff_act,
            });
        }
        Ok(ForwardPass { blocks, output: x })
    }

    /// Loss and exact gradients for a forward pass, in [`Model::tensors`] order.
    pub fn backward(&self, pass: &ForwardPass, objective: &Objective) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = pass.output.len();
        let d = self.config.dim;
        let last = pass.blocks.len() - 1;
        let (loss, mut dy, d_weights_last) = match objective {
            Objective::Mse { targets } => {
                if targets.len() != n || targets.iter().any(|t| t.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: targets.len(),
                    });
                }
                let scale = 1.0 / (n * d) as f64;
                let mut loss = 0.0;
                let dy: Vec<Vec<f64>> = pass
                    .output
                    .iter()
                    .zip(*targets)
                    .map(|(y, t)| {
                        y.iter()
                            .zip(t)
                            .map(|(a, b)| {
                                let e = a - b;
                                loss += e * e;
                                2.0 * e * scale
                            })
                            .collect()
                    })
                    .collect();
                (loss * scale, dy, None)
            }
            Objective::AnchorCrossEntropy { anchor, target } => {
                let (loss, dw) = anchor_cross_entropy(&pass.blocks[last].attention, *anchor, target)?;
                (loss, vec![vec![0.0; d]; n], Some(dw))
            }
        };

        let mut grads: Vec<BlockGrads> = Vec::with_capacity(self.blocks.len());
        for (l, (block, fwd)) in self.blocks.iter().zip(&pass.blocks).enumerate().rev() {
            let mut g = BlockGrads {
                attention: AttentionGrads::zeros(d),
                ff: None,
            };
            // feed-forward residual
            let mut dh = dy.clone();
            if let Some(ff) = &block.ff {
                let mut fg = FeedForward {
                    w1: Matrix::zeros(ff.w1.rows(), d),
                    b1: vec![0.0; ff.b1.len()],
                    w2: Matrix::zeros(d, ff.w2.cols()),
                    b2: vec![0.0; d],
                };
                for i in 0..n {
                    fg.w2.add_outer(&dy[i], &fwd.ff_act[i]);
                    for (b, g) in fg.b2.iter_mut().zip(&dy[i]) {
                        *b += g;
                    }
                    let dact = ff.w2.matvec_t(&dy[i]);
                    let dpre: Vec<f64> = dact
                        .iter()
                        .zip(&fwd.ff_act[i])
                        .map(|(g, a)| g * (1.0 - a * a))
                        .collect();
                    fg.w1.add_outer(&dpre, &fwd.residual[i]);
                    for (b, g) in fg.b1.iter_mut().zip(&dpre) {
                        *b += g;
                    }
                    for (x, y) in dh[i].iter_mut().zip(ff.w1.matvec_t(&dpre)) {
                        *x += y;
                    }
                }
                g.ff = Some(fg);
            }
            let extra = if l == last { d_weights_last.as_deref() } else { None };
            let dx_attn =
                block
                    .attention
                    .backward(&fwd.attention, &fwd.input, &dh, extra, &mut g.attention);
            // attention residual
            dy = dh
                .iter()
                .zip(&dx_attn)
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
                .collect();
            grads.push(g);
        }
        grads.reverse();

        let mut flat = Vec::new();
        for g in grads {
            flat.push(g.attention.w_q.as_slice().to_vec());
            flat.push(g.attention.w_k.as_slice().to_vec());
            flat.push(g.attention.w_v.as_slice().to_vec());
            if let Some(ff) = g.ff {
                flat.push(ff.w1.as_slice().to_vec());
                flat.push(ff.b1);
                flat.push(ff.w2.as_slice().to_vec());
                flat.push(ff.b2);
            }
        }
        Ok((loss, flat))
    }

    /// Loss only, used by the finite-difference checker.
    pub fn loss(&self, tokens: &[Geotoken], masked_self: Option<usize>, objective: &Objective) -> Result<f64> {
        let pass = self.forward(tokens, masked_self)?;
        match objective {
            Objective::Mse { targets } => {
                let n = pass.output.len();
                let d = self.config.dim;
                let total: f64 = pass
                    .output
                    .iter()
                    .zip(*targets)
                    .flat_map(|(y, t)| y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
                    .sum();
                Ok(total / (n * d) as f64)
            }
            Objective::AnchorCrossEntropy { anchor, target } => {
                let last = &pass.blocks[pass.blocks.len() - 1].attention;
                anchor_cross_entropy(last, *anchor, target).map(|(l, _)| l)
            }
        }
    }
}

/// `−Σⱼ tⱼ·ln āⱼ` where `ā` is the head-averaged attention row of `anchor`.
/// Returns the loss and its gradient w.r.t. each head's weight matrix.
fn anchor_cross_entropy(fwd: &LayerForward, anchor: usize, target: &[f64]) -> Result<(f64, Vec<Matrix>)> {
    let n = fwd.weights[0].rows();
    if anchor >= n {
        return Err(Error::Config(format!("anchor {anchor} out of range for {n} tokens")));
    }
    if target.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: target.len(),
        });
    }
    let heads = fwd.weights.len();
    let mean = fwd.mean_weights_row(anchor);
    let mut loss = 0.0;
    let mut grad_row = vec![0.0; n];
    for j in 0..n {
        if target[j] == 0.0 {
            continue;
        }
        if mean[j] <= 0.0 {
            return Err(Error::Config(format!(
                "target puts mass on token {j}, which the anchor cannot attend to"
            )));
        }
        loss -= target[j] * mean[j].ln();
        grad_row[j] = -target[j] / (heads as f64 * mean[j]);
    }
    let dw = (0..heads)
        .map(|_| {
            let mut m = Matrix::zeros(n, n);
            for (j, g) in grad_row.iter().enumerate() {
                m[(anchor, j)] = *g;
            }
            m
        })
        .collect();
    Ok((loss, dw))
}

/// Training/diagnostic objectives.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean squared error of the final outputs against `targets`.
    Mse { targets: &'a [Vec<f64>] },
    /// Cross-entropy between the anchor's head-averaged attention row in the
    /// last block and a target distribution over tokens.
    AnchorCrossEntropy { anchor: usize, target: &'a [f64] },
}

#[derive(Debug, Clone)]
struct BlockGrads {
    attention: AttentionGrads,
    ff: Option<FeedForward>,
}

#[derive(Debug, Clone)]
pub struct BlockForward {
    pub input: Vec<Vec<f64>>,
    pub attention: LayerForward,
    /// `input + attention output`
    pub residual: Vec<Vec<f64>>,
    pub ff_act: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub blocks: Vec<BlockForward>,
    pub output: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn last_attention(&self) -> &LayerForward {
        &self.blocks[self.blocks.len() - 1].attention
    }
}
