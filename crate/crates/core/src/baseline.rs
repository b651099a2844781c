//! Baseline encodings: absolute sinusoidal tables and 2D rotary (RoPE).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BASE: f64 = 10_000.0;

fn require_even(dim: usize, what: &'static str) -> Result<()> {
    if dim == 0 || dim % 2 != 0 {
        Err(Error::OddDimension { dim, what })
    } else {
        Ok(())
    }
}

/// Sinusoidal encoding of a (possibly fractional) non-negative position:
/// entry `2t` is `sin(m / 10000^(2t/dim))`, entry `2t+1` the matching cosine.
pub fn sinusoidal_encoding(m: f64, dim: usize) -> Result<Vec<f64>> {
    require_even(dim, "sinusoidal encoding")?;
    if !m.is_finite() || m < 0.0 {
        return Err(Error::Config(format!(
            "sinusoidal position must be finite and >= 0, got {m}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for t in 0..dim / 2 {
        let (s, c) = (m / sinusoidal_wavelength(t, dim)).sin_cos();
        out.push(s);
        out.push(c);
    }
    Ok(out)
}

/// `10000^(2t/dim)` for pair `t`.
pub fn sinusoidal_wavelength(t: usize, dim: usize) -> f64 {
    BASE.powf(2.0 * t as f64 / dim as f64)
}

/// Precomputed sinusoidal rows for integer positions `0..max_positions`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidalTable {
    dim: usize,
    max_positions: usize,
    values: Vec<f64>,
}

impl SinusoidalTable {
    pub fn new(dim: usize, max_positions: usize) -> Result<Self> {
        require_even(dim, "sinusoidal table")?;
        if max_positions == 0 {
            return Err(Error::Config("max_positions must be positive".into()));
        }
        let mut values = Vec::with_capacity(dim * max_positions);
        for m in 0..max_positions {
            values.extend(sinusoidal_encoding(m as f64, dim)?);
        }
        Ok(Self {
            dim,
            max_positions,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions
    }

    pub fn row(&self, m: usize) -> Option<&[f64]> {
        (m < self.max_positions).then(|| &self.values[m * self.dim..(m + 1) * self.dim])
    }
}

/// Which exponent the RoPE angle schedule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeExponent {
    /// `θᵢ = 10000^(−(2i−1)/d)`
    #[default]
    OddOffset,
    /// `θᵢ = 10000^(−2(i−1)/d)`, the form used by most RoPE implementations.
    Canonical,
}

/// Angle for 1-based pair index `i` using the [`RopeExponent::OddOffset`] form.
pub fn rope_theta(i: usize, dim: usize) -> Result<f64> {
    rope_theta_with(i, dim, RopeExponent::OddOffset)
}

pub fn rope_theta_with(i: usize, dim: usize, exponent: RopeExponent) -> Result<f64> {
    require_even(dim, "RoPE")?;
    let max = dim / 2;
    if i == 0 || i > max {
        return Err(Error::IndexOutOfRange { index: i, max });
    }
    let d = dim as f64;
    let e = match exponent {
        RopeExponent::OddOffset => -(2.0 * i as f64 - 1.0) / d,
        RopeExponent::Canonical => -2.0 * (i as f64 - 1.0) / d,
    };
    Ok(BASE.powf(e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RopeSchedule {
    dim: usize,
    thetas: Vec<f64>,
}

impl RopeSchedule {
    pub fn new(dim: usize, exponent: RopeExponent) -> Result<Self> {
        require_even(dim, "RoPE")?;
        let thetas = (1..=dim / 2)
            .map(|i| rope_theta_with(i, dim, exponent))
            .collect::<Result<_>>()?;
        Ok(Self { dim, thetas })
    }

    /// Explicit per-pair angles, e.g. for hand-built tests.
    pub fn from_thetas(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() || thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("RoPE thetas must be finite and non-empty".into()));
        }
        Ok(Self {
            dim: 2 * thetas.len(),
            thetas,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
}

/// Rotates each pair `(v[2i], v[2i+1])` by `m·θᵢ`.
pub fn rope_rotate(v: &[f64], m: f64, schedule: &RopeSchedule) -> Result<Vec<f64>> {
    if v.len() != schedule.dim {
        return Err(Error::DimensionMismatch {
            expected: schedule.dim,
            actual: v.len(),
        });
    }
    let angles: Vec<f64> = schedule.thetas.iter().map(|t| m * t).collect();
    Ok(rotate_pairs(v, &angles))
}

/// Rotates consecutive coordinate pairs by the given angles.
pub(crate) fn rotate_pairs(v: &[f64], angles: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for (pair, &a) in out.chunks_exact_mut(2).zip(angles) {
        let (s, c) = a.sin_cos();
        let (x, y) = (pair[0], pair[1]);
        pair[0] = c * x - s * y;
        pair[1] = s * x + c * y;
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    #[test]
    fn sinusoidal_at_zero() {
        let p = sinusoidal_encoding(0.0, 8).unwrap();
        for (i, v) in p.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn sinusoidal_dim_two() {
        assert_eq!(sinusoidal_encoding(1.0, 2).unwrap(), vec![1f64.sin(), 1f64.cos()]);
        assert!(sinusoidal_encoding(1.0, 3).is_err());
        assert!(sinusoidal_encoding(-1.0, 2).is_err());
    }

    #[test]
    fn sinusoidal_shift_is_rotation() {
        let dim = 16;
        for &(m, k) in &[(3.0, 5.0), (17.0, 250.0), (0.0, 1.0), (901.0, 33.0)] {
            let a = sinusoidal_encoding(m, dim).unwrap();
            let b = sinusoidal_encoding(m + k, dim).unwrap();
            for t in 0..dim / 2 {
                let w = k / sinusoidal_wavelength(t, dim);
                let (s, c) = w.sin_cos();
                // (sin, cos) at m+k from (sin, cos) at m
                let sin_next = a[2 * t] * c + a[2 * t + 1] * s;
                let cos_next = a[2 * t + 1] * c - a[2 * t] * s;
                assert!((sin_next - b[2 * t]).abs() < 1e-10);
                assert!((cos_next - b[2 * t + 1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn table_rows_match_and_are_bounded() {
        let t = SinusoidalTable::new(10, 64).unwrap();
        assert_eq!(t.row(7).unwrap(), sinusoidal_encoding(7.0, 10).unwrap().as_slice());
        assert!(t.row(64).is_none());
        assert!((0..64).all(|m| t.row(m).unwrap().iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn rope_theta_values() {
        assert!((rope_theta(1, 4).unwrap() - 0.1).abs() < 1e-15);
        assert!((rope_theta(2, 4).unwrap() - 0.001).abs() < 1e-15);
        assert!(matches!(rope_theta(3, 4), Err(Error::IndexOutOfRange { index: 3, max: 2 })));
        assert!(rope_theta(0, 4).is_err());
        assert_eq!(rope_theta_with(1, 4, RopeExponent::Canonical).unwrap(), 1.0);
    }

    #[test]
    fn rope_schedule_decreasing() {
        for exp in [RopeExponent::OddOffset, RopeExponent::Canonical] {
            let s = RopeSchedule::new(64, exp).unwrap();
            assert!(s.thetas()[0] <= 1.0);
            assert!(s.thetas().windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn rope_rotate_examples() {
        let s = RopeSchedule::new(6, RopeExponent::OddOffset).unwrap();
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(rope_rotate(&v, 0.0, &s).unwrap(), v);
        let quarter = RopeSchedule::from_thetas(vec![FRAC_PI_2]).unwrap();
        let out = rope_rotate(&[1.0, 0.0], 1.0, &quarter).unwrap();
        assert!(out[0].abs() < 1e-15 && (out[1] - 1.0).abs() < 1e-15);
        assert!(rope_rotate(&v[..4], 1.0, &s).is_err());
    }
}
