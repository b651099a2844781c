//! Multi-head scaled dot-product attention with position-rotated queries and keys.

use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, TokenRotation};
use crate::error::{Error, Result};
use crate::geo::{GeoPosition, Geotoken};
use crate::linalg::{dot, Matrix};

/// Query/key/value projections plus the encoder that positions them.
///
/// Rotations are applied to the full `d`-dimensional projections before the
/// per-head split, so every head sees rotated coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub(crate) w_q: Matrix,
    pub(crate) w_k: Matrix,
    pub(crate) w_v: Matrix,
    heads: usize,
    encoder: Encoder,
}

impl AttentionLayer {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, heads: usize, encoder: Encoder) -> Result<Self> {
        let d = w_q.rows();
        for w in [&w_q, &w_k, &w_v] {
            if w.rows() != d || w.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: if w.rows() != d { w.rows() } else { w.cols() },
                });
            }
            if !w.is_finite() {
                return Err(Error::Config("attention weights must be finite".into()));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("heads ({heads}) must divide dim ({d})")));
        }
        encoder.validate(d)?;
        Ok(Self {
            w_q,
            w_k,
            w_v,
            heads,
            encoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn w_q(&self) -> &Matrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &Matrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &Matrix {
        &self.w_v
    }

    /// `(W_q·x, W_k·x, W_v·x)`; no position information is injected here.
    pub fn project_qkv(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok((self.w_q.matvec(x), self.w_k.matvec(x), self.w_v.matvec(x)))
    }

    /// Runs attention over `inputs` located at `positions`. With
    /// `masked_self = Some(a)`, token `a` may not attend to itself.
    pub fn forward(
        &self,
        inputs: &[Vec<f64>],
        positions: &[GeoPosition],
        masked_self: Option<usize>,
    ) -> Result<LayerForward> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Empty("attention needs at least one token"));
        }
        if positions.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: positions.len(),
            });
        }
        if let Some(a) = masked_self {
            if a >= n || n < 2 {
                return Err(Error::Config(format!(
                    "cannot mask token {a} in a set of {n} tokens"
                )));
            }
        }
        let d = self.dim();
        let rotations = positions
            .iter()
            .map(|p| self.encoder.rotation(p, d))
            .collect::<Result<Vec<_>>>()?;

        let mut q = Vec::with_capacity(n);
        let mut k = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for x in inputs {
            let (qi, ki, vi) = self.project_qkv(x)?;
            q.push(qi);
            k.push(ki);
            v.push(vi);
        }
        let qr: Vec<Vec<f64>> = q.iter().zip(&rotations).map(|(x, r)| r.apply(x)).collect();
        let kr: Vec<Vec<f64>> = k.iter().zip(&rotations).map(|(x, r)| r.apply(x)).collect();

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut logits = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        let mut output = vec![vec![0.0; d]; n];
        for h in 0..self.heads {
            let span = h * dh..(h + 1) * dh;
            let s = Matrix::from_fn(n, n, |i, j| {
                scale * dot(&qr[i][span.clone()], &kr[j][span.clone()])
            });
            let a = softmax_rows(&s, masked_self);
            for (i, out) in output.iter_mut().enumerate() {
                for (j, vj) in v.iter().enumerate() {
                    let w = a[(i, j)];
                    for (o, x) in out[span.clone()].iter_mut().zip(&vj[span.clone()]) {
                        *o += w * x;
                    }
                }
            }
            logits.push(s);
            weights.push(a);
        }
        Ok(LayerForward {
            rotations,
            q,
            k,
            v,
            qr,
            kr,
            logits,
            weights,
            output,
            masked_self,
        })
    }

    /// Backpropagates `d_output` (and optionally a direct gradient on the
    /// attention weights of each head) through the layer. Accumulates weight
    /// gradients into `grads` and returns the gradient w.r.t. the inputs.
    pub(crate) fn backward(
        &self,
        fwd: &LayerForward,
        inputs: &[Vec<f64>],
        d_output: &[Vec<f64>],
        d_weights: Option<&[Matrix]>,
        grads: &mut AttentionGrads,
    ) -> Vec<Vec<f64>> {
        let n = inputs.len();
        let d = self.dim();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dqr = vec![vec![0.0; d]; n];
        let mut dkr = vec![vec![0.0; d]; n];
        let mut dv = vec![vec![0.0; d]; n];

        for h in 0..self.heads {
            let span = h * dh..(h + 1) * dh;
            let a = &fwd.weights[h];
            // dA[i][j] = dO_i · v_j (+ any direct gradient on A)
            let mut da = Matrix::from_fn(n, n, |i, j| {
                dot(&d_output[i][span.clone()], &fwd.v[j][span.clone()])
            });
            if let Some(extra) = d_weights {
                for (x, e) in da.as_mut_slice().iter_mut().zip(extra[h].as_slice()) {
                    *x += e;
                }
            }
            for j in 0..n {
                for i in 0..n {
                    let w = a[(i, j)];
                    for (g, o) in dv[j][span.clone()].iter_mut().zip(&d_output[i][span.clone()]) {
                        *g += w * o;
                    }
                }
            }
            // softmax backward, row by row
            for i in 0..n {
                let row_dot: f64 = (0..n).map(|j| a[(i, j)] * da[(i, j)]).sum();
                for j in 0..n {
                    let ds = a[(i, j)] * (da[(i, j)] - row_dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in span.clone() {
                        dqr[i][t] += ds * fwd.kr[j][t];
                        dkr[j][t] += ds * fwd.qr[i][t];
                    }
                }
            }
        }

        let mut dx = vec![vec![0.0; d]; n];
        for i in 0..n {
            let dq = fwd.rotations[i].apply_transpose(&dqr[i]);
            let dk = fwd.rotations[i].apply_transpose(&dkr[i]);
            grads.w_q.add_outer(&dq, &inputs[i]);
            grads.w_k.add_outer(&dk, &inputs[i]);
            grads.w_v.add_outer(&dv[i], &inputs[i]);
            for (w, g) in [(&self.w_q, &dq), (&self.w_k, &dk), (&self.w_v, &dv[i])] {
                for (x, y) in dx[i].iter_mut().zip(w.matvec_t(g)) {
                    *x += y;
                }
            }
        }
        dx
    }
}

fn softmax_rows(s: &Matrix, masked_self: Option<usize>) -> Matrix {
    let n = s.rows();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let masked = |j: usize| masked_self == Some(i) && j == i;
        let max = (0..n)
            .filter(|&j| !masked(j))
            .map(|j| s[(i, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            if !masked(j) {
                let e = (s[(i, j)] - max).exp();
                a[(i, j)] = e;
                total += e;
            }
        }
        for j in 0..n {
            a[(i, j)] /= total;
        }
    }
    a
}

/// Values retained by [`AttentionLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerForward {
    pub rotations: Vec<TokenRotation>,
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Rotated queries.
    pub qr: Vec<Vec<f64>>,
    /// Rotated keys.
    pub kr: Vec<Vec<f64>>,
    /// Scaled scores per head, `n×n`.
    pub logits: Vec<Matrix>,
    /// Row-stochastic attention weights per head, `n×n`.
    pub weights: Vec<Matrix>,
    pub output: Vec<Vec<f64>>,
    pub masked_self: Option<usize>,
}

impl LayerForward {
    /// Head-averaged attention row of token `i`.
    pub fn mean_weights_row(&self, i: usize) -> Vec<f64> {
        mean_row(&self.weights, i)
    }

    /// Head-averaged scaled scores of token `i`.
    pub fn mean_logits_row(&self, i: usize) -> Vec<f64> {
        mean_row(&self.logits, i)
    }
}

fn mean_row(per_head: &[Matrix], i: usize) -> Vec<f64> {
    let h = per_head.len() as f64;
    let n = per_head[0].cols();
    (0..n)
        .map(|j| per_head.iter().map(|m| m[(i, j)]).sum::<f64>() / h)
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttentionGrads {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
        }
    }
}

/// Single-layer attention over geotokens, adding the encoder's input offset
/// (sinusoidal only) before projecting.
pub fn attention_forward(layer: &AttentionLayer, tokens: &[Geotoken]) -> Result<LayerForward> {
    if tokens.is_empty() {
        return Err(Error::Empty("attention needs at least one token"));
    }
    let d = layer.dim();
    let mut inputs = Vec::with_capacity(tokens.len());
    let mut positions = Vec::with_capacity(tokens.len());
    for t in tokens {
        if t.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: t.dim(),
            });
        }
        let mut x = t.features().to_vec();
        if let Some(off) = layer.encoder.input_offset(t.position(), d)? {
            for (a, b) in x.iter_mut().zip(off) {
                *a += b;
            }
        }
        inputs.push(x);
        positions.push(*t.position());
    }
    layer.forward(&inputs, &positions, None)
}
