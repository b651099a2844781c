//! Spherical rotary position encoding.
//!
//! A token at (latitude φ, longitude θ) is encoded by a block-diagonal
//! operator made of 3×3 rotations `Rz(θ)·Rx(φ)`, one per group of three
//! feature coordinates. Queries and keys rotated this way satisfy
//! `⟨R(a)q, R(b)k⟩ = ⟨q, R(a)ᵀR(b)k⟩`, so attention logits depend on the
//! relative rotation between the two positions.
//!
//! Two application paths are provided: [`apply_dense`] materializes the full
//! `d×d` matrix and serves as the reference, [`apply_blockwise`] walks the
//! blocks in O(d).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPosition;
use crate::linalg::Matrix;

/// A 3×3 block of the encoding operator, stored row-major.
///
/// Blocks produced by [`euler_rotation`] and [`spherical_block`] are proper
/// rotations. Blocks produced by [`as_printed_block`] are generally not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationBlock([[f64; 3]; 3]);

impl RotationBlock {
    pub const IDENTITY: RotationBlock =
        RotationBlock([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Self(rows)
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[r][c]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    /// Matrix product `self · rhs`.
    pub fn mul(&self, rhs: &RotationBlock) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.0[r][0] * rhs.0[0][c]
                    + self.0[r][1] * rhs.0[1][c]
                    + self.0[r][2] * rhs.0[2][c];
            }
        }
        Self(out)
    }

    #[inline]
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    #[inline]
    pub fn apply_transpose(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `‖BᵀB − I‖_max`
    pub fn orthogonality_defect(&self) -> f64 {
        let g = self.transpose().mul(self);
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g.0[r][c] - target).abs());
            }
        }
        worst
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &RotationBlock) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                worst = worst.max((self.0[r][c] - other.0[r][c]).abs());
            }
        }
        worst
    }
}

fn finite_angles(angles: &[f64]) -> Result<()> {
    match angles.iter().find(|a| !a.is_finite()) {
        Some(&value) => Err(Error::NonFinite {
            what: "angle",
            value,
        }),
        None => Ok(()),
    }
}

/// Rotation about the z axis.
pub fn rotation_z(theta: f64) -> RotationBlock {
    let (s, c) = theta.sin_cos();
    RotationBlock([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

/// Rotation about the x axis.
pub fn rotation_x(phi: f64) -> RotationBlock {
    let (s, c) = phi.sin_cos();
    RotationBlock([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

/// General Euler rotation `Rz(θ)·Ry(ψ)·Rx(φ)` with `phi`, `psi`, `theta`
/// the rotation angles about the x, y and z axes.
pub fn euler_rotation(phi: f64, psi: f64, theta: f64) -> Result<RotationBlock> {
    finite_angles(&[phi, psi, theta])?;
    let (sf, cf) = phi.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Ok(RotationBlock([
        [cp * ct, -cf * st + sf * sp * ct, sf * st + cf * sp * ct],
        [cp * st, cf * ct + sf * sp * st, -sf * ct + cf * sp * st],
        [-sp, sf * cp, cf * cp],
    ]))
}

/// Euler rotation with the y angle fixed at zero: `θ` about z, `φ` about x.
pub fn spherical_block(theta: f64, phi: f64) -> Result<RotationBlock> {
    finite_angles(&[theta, phi])?;
    Ok(spherical_block_unchecked(theta, phi))
}

fn spherical_block_unchecked(theta: f64, phi: f64) -> RotationBlock {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    RotationBlock([
        [ct, -cf * st, sf * st],
        [st, cf * ct, -sf * ct],
        [0.0, sf, cf],
    ])
}

/// The block with the row-2 sign pattern `[sinθ, −cosφ·cosθ, −sinφ·cosθ]`.
/// This operator is not a rotation; it exists so the fidelity report can
/// measure how far it departs from one.
pub fn as_printed_block(theta: f64, phi: f64) -> Result<RotationBlock> {
    finite_angles(&[theta, phi])?;
    Ok(as_printed_block_unchecked(theta, phi))
}

fn as_printed_block_unchecked(theta: f64, phi: f64) -> RotationBlock {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    RotationBlock([
        [ct, -cf * st, sf * st],
        [st, -cf * ct, -sf * ct],
        [0.0, sf, cf],
    ])
}

/// How per-block angles are derived from a position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingMode {
    /// Every block rotates by the token's raw (θ, φ).
    UniformAngle,
    /// Block `i` rotates by `λᵢ·(θ, φ)` with `λᵢ = base^(−3(i−1)/d)`.
    MultiFrequency { base: f64 },
    /// Uniform angles with [`as_printed_block`] blocks.
    AsPrinted,
}

impl EncodingMode {
    pub fn multi_frequency() -> Self {
        EncodingMode::MultiFrequency { base: 10_000.0 }
    }
}

/// What to do when the dimension is not a multiple of three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    RejectNonMultipleOf3,
    /// The 1 or 2 trailing coordinates pass through unchanged.
    ZeroPad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    dim: usize,
    mode: EncodingMode,
    pad: PadPolicy,
}

impl EncodingConfig {
    pub fn new(dim: usize, mode: EncodingMode, pad: PadPolicy) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("encoding dimension must be positive".into()));
        }
        if pad == PadPolicy::RejectNonMultipleOf3 && dim % 3 != 0 {
            return Err(Error::NotMultipleOfThree { dim });
        }
        if let EncodingMode::MultiFrequency { base } = mode {
            check_base(base)?;
        }
        Ok(Self { dim, mode, pad })
    }

    /// Uniform angles, rejecting dimensions that are not a multiple of three.
    pub fn uniform(dim: usize) -> Result<Self> {
        Self::new(dim, EncodingMode::UniformAngle, PadPolicy::RejectNonMultipleOf3)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> EncodingMode {
        self.mode
    }

    pub fn pad(&self) -> PadPolicy {
        self.pad
    }

    /// Blocks carrying three real coordinates.
    pub fn full_blocks(&self) -> usize {
        self.dim / 3
    }

    /// Blocks stored in an encoding, including a trailing pass-through block
    /// under zero padding.
    pub fn block_count(&self) -> usize {
        self.dim.div_ceil(3)
    }
}

fn check_base(base: f64) -> Result<()> {
    if base.is_finite() && base > 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "multi-frequency base must be > 1, got {base}"
        )))
    }
}

/// Per-block angle multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySchedule {
    lambdas: Vec<f64>,
}

impl FrequencySchedule {
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

pub fn frequency_schedule(config: &EncodingConfig) -> Result<FrequencySchedule> {
    let n = config.block_count();
    let lambdas = match config.mode {
        EncodingMode::UniformAngle | EncodingMode::AsPrinted => vec![1.0; n],
        EncodingMode::MultiFrequency { base } => {
            check_base(base)?;
            let d = config.dim as f64;
            (0..n)
                .map(|i| base.powf(-3.0 * i as f64 / d))
                .collect()
        }
    };
    Ok(FrequencySchedule { lambdas })
}

/// The block-diagonal operator for one position, kept as its list of blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalEncoding {
    blocks: Vec<RotationBlock>,
    config: EncodingConfig,
}

impl SphericalEncoding {
    pub fn identity(config: EncodingConfig) -> Self {
        Self {
            blocks: vec![RotationBlock::IDENTITY; config.block_count()],
            config,
        }
    }

    pub fn blocks(&self) -> &[RotationBlock] {
        &self.blocks
    }

    pub fn config(&self) -> &EncodingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Materializes the `d×d` block-diagonal matrix.
    pub fn to_dense(&self) -> Matrix {
        let d = self.config.dim;
        let mut m = Matrix::zeros(d, d);
        for (b, block) in self.blocks.iter().enumerate() {
            for r in 0..3 {
                for c in 0..3 {
                    let (i, j) = (3 * b + r, 3 * b + c);
                    if i < d && j < d {
                        m[(i, j)] = block.0[r][c];
                    }
                }
            }
        }
        m
    }
}

/// Builds the encoding for `pos`, using θ = longitude and φ = latitude.
pub fn build_encoding(pos: &GeoPosition, config: &EncodingConfig) -> Result<SphericalEncoding> {
    let config = EncodingConfig::new(config.dim, config.mode, config.pad)?;
    let schedule = frequency_schedule(&config)?;
    let (theta, phi) = (pos.lon(), pos.lat());
    let mut blocks: Vec<RotationBlock> = schedule.lambdas[..config.full_blocks()]
        .iter()
        .map(|&l| match config.mode {
            EncodingMode::AsPrinted => as_printed_block_unchecked(l * theta, l * phi),
            _ => spherical_block_unchecked(l * theta, l * phi),
        })
        .collect();
    if config.block_count() > config.full_blocks() {
        blocks.push(RotationBlock::IDENTITY);
    }
    Ok(SphericalEncoding { blocks, config })
}

fn check_len(enc: &SphericalEncoding, v: &[f64]) -> Result<()> {
    if v.len() != enc.config.dim {
        return Err(Error::DimensionMismatch {
            expected: enc.config.dim,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Reference path: builds the dense matrix and multiplies.
pub fn apply_dense(enc: &SphericalEncoding, v: &[f64]) -> Result<Vec<f64>> {
    check_len(enc, v)?;
    Ok(enc.to_dense().matvec(v))
}

/// O(d) path: 9 multiplies and 6 adds per block, padding coordinates copied.
pub fn apply_blockwise(enc: &SphericalEncoding, v: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    apply_blockwise_into(enc, v, &mut out)?;
    Ok(out)
}

/// [`apply_blockwise`] writing into a caller-provided buffer.
pub fn apply_blockwise_into(enc: &SphericalEncoding, v: &[f64], out: &mut [f64]) -> Result<()> {
    check_len(enc, v)?;
    if out.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            actual: out.len(),
        });
    }
    let full = enc.config.full_blocks();
    for ((block, src), dst) in enc.blocks[..full]
        .iter()
        .zip(v.chunks_exact(3))
        .zip(out.chunks_exact_mut(3))
    {
        dst.copy_from_slice(&block.apply([src[0], src[1], src[2]]));
    }
    out[3 * full..].copy_from_slice(&v[3 * full..]);
    Ok(())
}

/// Applies the transposed operator `Rᵀ·v` block by block.
pub fn apply_blockwise_transpose(enc: &SphericalEncoding, v: &[f64]) -> Result<Vec<f64>> {
    check_len(enc, v)?;
    let full = enc.config.full_blocks();
    let mut out = v.to_vec();
    for (block, dst) in enc.blocks[..full].iter().zip(out.chunks_exact_mut(3)) {
        let r = block.apply_transpose([dst[0], dst[1], dst[2]]);
        dst.copy_from_slice(&r);
    }
    Ok(out)
}

/// Per-block `aᵢᵀ·bᵢ`: the operator that carries `b`'s frame into `a`'s.
pub fn relative_rotation(a: &SphericalEncoding, b: &SphericalEncoding) -> Result<SphericalEncoding> {
    if a.config != b.config {
        return Err(Error::ConfigMismatch);
    }
    let blocks = a
        .blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| x.transpose().mul(y))
        .collect();
    Ok(SphericalEncoding {
        blocks,
        config: a.config,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    use super::*;
    use crate::geo::make_position;

    fn assert_block(b: &RotationBlock, expected: [[f64; 3]; 3], tol: f64) {
        let e = RotationBlock::from_rows(expected);
        assert!(b.max_abs_diff(&e) <= tol, "{b:?} != {e:?}");
    }

    #[test]
    fn euler_identity_and_reduction() {
        assert_block(&euler_rotation(0.0, 0.0, 0.0).unwrap(), *RotationBlock::IDENTITY.rows(), 0.0);
        let (phi, theta) = (0.37, -1.9);
        let e = euler_rotation(phi, 0.0, theta).unwrap();
        let s = spherical_block(theta, phi).unwrap();
        assert_eq!(e.max_abs_diff(&s), 0.0);
        assert!(euler_rotation(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn spherical_block_examples() {
        assert_block(&spherical_block(0.0, 0.0).unwrap(), *RotationBlock::IDENTITY.rows(), 0.0);
        assert_block(
            &spherical_block(FRAC_PI_2, 0.0).unwrap(),
            [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            1e-15,
        );
        assert_block(
            &spherical_block(FRAC_PI_2, FRAC_PI_2).unwrap(),
            [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            1e-15,
        );
        assert!(spherical_block(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn as_printed_examples() {
        let b = as_printed_block(0.0, 0.0).unwrap();
        assert_block(&b, [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]], 0.0);
        // Orthogonal up to cos(π/2) rounding at this point.
        assert!(as_printed_block(FRAC_PI_2, 0.0).unwrap().orthogonality_defect() < 1e-15);
        assert!(as_printed_block(0.0, FRAC_PI_4).unwrap().orthogonality_defect() > 0.5);
    }

    #[test]
    fn schedules() {
        let u = frequency_schedule(&EncodingConfig::uniform(9).unwrap()).unwrap();
        assert_eq!(u.lambdas(), &[1.0, 1.0, 1.0]);
        let cfg = EncodingConfig::new(6, EncodingMode::multi_frequency(), PadPolicy::RejectNonMultipleOf3)
            .unwrap();
        let m = frequency_schedule(&cfg).unwrap();
        assert_eq!(m.lambdas()[0], 1.0);
        assert!((m.lambdas()[1] - 0.01).abs() < 1e-15);
        assert!(EncodingConfig::new(
            6,
            EncodingMode::MultiFrequency { base: 1.0 },
            PadPolicy::RejectNonMultipleOf3
        )
        .is_err());
    }

    #[test]
    fn rejects_non_multiple_of_three() {
        let err = EncodingConfig::uniform(4).unwrap_err();
        assert!(matches!(err, Error::NotMultipleOfThree { dim: 4 }));
        assert!(err.to_string().contains('4'));
        let padded =
            EncodingConfig::new(4, EncodingMode::UniformAngle, PadPolicy::ZeroPad).unwrap();
        assert_eq!(padded.block_count(), 2);
        assert_eq!(padded.full_blocks(), 1);
    }

    #[test]
    fn build_examples() {
        let cfg = EncodingConfig::uniform(6).unwrap();
        let origin = build_encoding(&make_position(0.0, 0.0).unwrap(), &cfg).unwrap();
        assert!(origin.blocks().iter().all(|b| *b == RotationBlock::IDENTITY));

        let east = make_position(0.0, 90.0).unwrap();
        let enc = build_encoding(&east, &cfg).unwrap();
        let expected = spherical_block(FRAC_PI_2, 0.0).unwrap();
        assert_eq!(enc.blocks(), &[expected, expected]);

        let mf = EncodingConfig::new(6, EncodingMode::multi_frequency(), PadPolicy::RejectNonMultipleOf3)
            .unwrap();
        let enc = build_encoding(&east, &mf).unwrap();
        assert_eq!(enc.blocks()[0], spherical_block(FRAC_PI_2, 0.0).unwrap());
        let slow = spherical_block(0.01 * FRAC_PI_2, 0.0).unwrap();
        assert!(enc.blocks()[1].max_abs_diff(&slow) < 1e-15);
    }

    #[test]
    fn apply_examples() {
        let cfg = EncodingConfig::uniform(3).unwrap();
        let enc = build_encoding(&make_position(0.0, 90.0).unwrap(), &cfg).unwrap();
        let out = apply_dense(&enc, &[1.0, 0.0, 0.0]).unwrap();
        assert!((out[0]).abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15 && out[2] == 0.0);
        assert_eq!(apply_blockwise(&enc, &[1.0, 0.0, 0.0]).unwrap(), out);

        let id = SphericalEncoding::identity(EncodingConfig::uniform(6).unwrap());
        let v = [1.0, -2.0, 3.0, 0.5, 0.25, -7.0];
        assert_eq!(apply_dense(&id, &v).unwrap(), v);
        assert_eq!(apply_blockwise(&id, &v).unwrap(), v);
        assert!(matches!(
            apply_blockwise(&id, &v[..5]),
            Err(Error::DimensionMismatch { expected: 6, actual: 5 })
        ));
        assert!(apply_dense(&id, &v[..5]).is_err());
    }

    #[test]
    fn zero_pad_passes_trailing_coordinates() {
        let cfg = EncodingConfig::new(4, EncodingMode::UniformAngle, PadPolicy::ZeroPad).unwrap();
        let enc = build_encoding(&make_position(30.0, 60.0).unwrap(), &cfg).unwrap();
        let v = [0.3, -0.1, 0.8, 4.5];
        let out = apply_blockwise(&enc, &v).unwrap();
        assert_eq!(out[3], 4.5);
        let dense = apply_dense(&enc, &v).unwrap();
        for (a, b) in out.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-15);
        }
        let back = apply_blockwise_transpose(&enc, &out).unwrap();
        for (a, b) in back.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn relative_rotation_basics() {
        let cfg = EncodingConfig::uniform(6).unwrap();
        let a = build_encoding(&make_position(10.0, 20.0).unwrap(), &cfg).unwrap();
        let rel = relative_rotation(&a, &a).unwrap();
        for b in rel.blocks() {
            assert!(b.max_abs_diff(&RotationBlock::IDENTITY) < 1e-15);
        }
        let other = build_encoding(
            &make_position(10.0, 20.0).unwrap(),
            &EncodingConfig::new(6, EncodingMode::AsPrinted, PadPolicy::RejectNonMultipleOf3).unwrap(),
        )
        .unwrap();
        assert!(matches!(relative_rotation(&a, &other), Err(Error::ConfigMismatch)));
    }
}
