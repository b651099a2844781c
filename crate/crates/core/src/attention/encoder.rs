//! Position encoders the attention layer can consume.
//!
//! The spherical encoder rotates queries and keys by the token's
//! [`SphericalEncoding`]. The two baselines are adapted to geographic
//! coordinates axially: coordinate pair `t` carries longitude when `t` is
//! even and latitude when `t` is odd, with positions expressed as
//! non-negative degree offsets (`lon + 180`, `lat + 90`).

use serde::{Deserialize, Serialize};

use crate::baseline::{rope_theta_with, rotate_pairs, sinusoidal_wavelength, RopeExponent};
use crate::error::{Error, Result};
use crate::geo::GeoPosition;
use crate::spherical::{
    apply_blockwise, apply_blockwise_transpose, build_encoding, EncodingConfig, EncodingMode,
    PadPolicy, SphericalEncoding,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    None,
    /// Additive sinusoidal offsets on the input features.
    Sinusoidal,
    /// 2D rotary pairs applied to queries and keys.
    Rope { exponent: RopeExponent },
    /// 3D spherical blocks applied to queries and keys.
    Spherical { mode: EncodingMode, pad: PadPolicy },
}

impl Encoder {
    pub fn spherical_uniform() -> Self {
        Encoder::Spherical {
            mode: EncodingMode::UniformAngle,
            pad: PadPolicy::RejectNonMultipleOf3,
        }
    }

    pub fn rope() -> Self {
        Encoder::Rope {
            exponent: RopeExponent::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Encoder::None => "none",
            Encoder::Sinusoidal => "sinusoidal",
            Encoder::Rope { .. } => "rope",
            Encoder::Spherical { .. } => "spherical",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            Encoder::None => Ok(()),
            Encoder::Sinusoidal => even(dim, "sinusoidal encoder"),
            Encoder::Rope { .. } => even(dim, "RoPE encoder"),
            Encoder::Spherical { mode, pad } => EncodingConfig::new(dim, mode, pad).map(|_| ()),
        }
    }

    /// Additive offset for the input features, if this encoder has one.
    pub fn input_offset(&self, pos: &GeoPosition, dim: usize) -> Result<Option<Vec<f64>>> {
        if *self != Encoder::Sinusoidal {
            return Ok(None);
        }
        even(dim, "sinusoidal encoder")?;
        let mut out = Vec::with_capacity(dim);
        for t in 0..dim / 2 {
            let (s, c) = (axial_index(pos, t) / sinusoidal_wavelength(t, dim)).sin_cos();
            out.push(s);
            out.push(c);
        }
        Ok(Some(out))
    }

    /// The linear map applied to a token's query and key.
    pub fn rotation(&self, pos: &GeoPosition, dim: usize) -> Result<TokenRotation> {
        match *self {
            Encoder::None | Encoder::Sinusoidal => Ok(TokenRotation::Identity),
            Encoder::Rope { exponent } => {
                even(dim, "RoPE encoder")?;
                let angles = (0..dim / 2)
                    .map(|t| Ok(axial_index(pos, t) * rope_theta_with(t + 1, dim, exponent)?))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TokenRotation::Pairs(angles))
            }
            Encoder::Spherical { mode, pad } => {
                let cfg = EncodingConfig::new(dim, mode, pad)?;
                Ok(TokenRotation::Spherical(build_encoding(pos, &cfg)?))
            }
        }
    }
}

fn even(dim: usize, what: &'static str) -> Result<()> {
    if dim == 0 || dim % 2 != 0 {
        Err(Error::OddDimension { dim, what })
    } else {
        Ok(())
    }
}

fn axial_index(pos: &GeoPosition, pair: usize) -> f64 {
    if pair % 2 == 0 {
        pos.lon_deg() + 180.0
    } else {
        pos.lat_deg() + 90.0
    }
}

/// Per-token query/key transform produced by an [`Encoder`].
#[derive(Debug, Clone, PartialEq)]
pub enum TokenRotation {
    Identity,
    /// Rotation angle for each coordinate pair.
    Pairs(Vec<f64>),
    Spherical(SphericalEncoding),
}

impl TokenRotation {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            TokenRotation::Identity => v.to_vec(),
            TokenRotation::Pairs(angles) => rotate_pairs(v, angles),
            TokenRotation::Spherical(enc) => {
                apply_blockwise(enc, v).expect("rotation built for this dimension")
            }
        }
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        match self {
            TokenRotation::Identity => v.to_vec(),
            TokenRotation::Pairs(angles) => {
                let neg: Vec<f64> = angles.iter().map(|a| -a).collect();
                rotate_pairs(v, &neg)
            }
            TokenRotation::Spherical(enc) => {
                apply_blockwise_transpose(enc, v).expect("rotation built for this dimension")
            }
        }
    }
}

/// Rotates a projected query and key by their tokens' positions. Values are
/// never rotated.
pub fn encode_qk(
    q: &[f64],
    k: &[f64],
    pos_q: &GeoPosition,
    pos_k: &GeoPosition,
    encoder: &Encoder,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            actual: k.len(),
        });
    }
    let dim = q.len();
    encoder.validate(dim)?;
    let rq = encoder.rotation(pos_q, dim)?;
    let rk = encoder.rotation(pos_k, dim)?;
    Ok((rq.apply(q), rk.apply(k)))
}
