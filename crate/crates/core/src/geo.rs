//! Positions on the sphere, geotokens and the geometric helpers built on them.
//!
//! Angles are stored in radians. Degrees appear only at I/O boundaries
//! ([`GeoPosition::from_degrees`], [`GeoPosition::lat_deg`]).

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// A point on the sphere. Latitude lies in `[-π/2, π/2]`, longitude in `[-π, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    lat: f64,
    lon: f64,
}

impl GeoPosition {
    /// Builds a position from degrees. Longitude is wrapped in degree space
    /// first so that `lon` and `lon + 360` give bit-identical results whenever
    /// both inputs are exactly representable.
    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        check_finite("latitude", lat_deg)?;
        check_finite("longitude", lon_deg)?;
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::LatitudeOutOfRange { value: lat_deg });
        }
        let lat = lat_deg.to_radians().clamp(-FRAC_PI_2, FRAC_PI_2);
        let lon = clamp_lon(wrap_degrees(lon_deg).to_radians());
        Ok(Self { lat, lon })
    }

    /// Builds a position from radians, wrapping longitude into `[-π, π)`.
    pub fn from_radians(lat: f64, lon: f64) -> Result<Self> {
        check_finite("latitude", lat)?;
        check_finite("longitude", lon)?;
        if !(-FRAC_PI_2..=FRAC_PI_2).contains(&lat) {
            return Err(Error::LatitudeOutOfRange {
                value: lat.to_degrees(),
            });
        }
        let mut lon = (lon + PI).rem_euclid(TAU) - PI;
        if lon < -PI {
            lon = -PI;
        }
        Ok(Self {
            lat,
            lon: clamp_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat.to_degrees()
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon.to_degrees()
    }
}

fn check_finite(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, value })
    }
}

/// Wraps into `[-180, 180)`.
///
/// `lon + 360.0` is rounded by the caller, so the two spellings only agree
/// bit-for-bit if both are first brought to the same representative. Every
/// input is mapped into `[180, 540)` (values from `[-180, 180)` by adding
/// 360, which is exactly the rounding the caller performed), and 360 is then
/// subtracted, which is exact in that range.
fn wrap_degrees(lon_deg: f64) -> f64 {
    let shifted = if (180.0..540.0).contains(&lon_deg) {
        lon_deg
    } else if (-180.0..180.0).contains(&lon_deg) {
        lon_deg + 360.0
    } else {
        (lon_deg - 180.0).rem_euclid(360.0) + 180.0
    };
    if shifted >= 540.0 {
        return -180.0;
    }
    shifted - 360.0
}

// Degrees just below 180 can round up to the f64 value of π after conversion.
fn clamp_lon(lon: f64) -> f64 {
    if lon >= PI {
        -PI
    } else {
        lon
    }
}

/// Convenience wrapper over [`GeoPosition::from_degrees`].
pub fn make_position(lat_deg: f64, lon_deg: f64) -> Result<GeoPosition> {
    GeoPosition::from_degrees(lat_deg, lon_deg)
}

/// Perfect sphere used for distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereModel {
    radius: f64,
}

impl SphereModel {
    pub fn new(radius: f64) -> Result<Self> {
        if radius.is_finite() && radius > 0.0 {
            Ok(Self { radius })
        } else {
            Err(Error::Config(format!("sphere radius must be > 0, got {radius}")))
        }
    }

    pub fn unit() -> Self {
        Self { radius: 1.0 }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Default for SphereModel {
    fn default() -> Self {
        Self {
            radius: EARTH_RADIUS_M,
        }
    }
}

/// Haversine great-circle distance, in the units of the sphere radius.
pub fn great_circle_distance(a: &GeoPosition, b: &GeoPosition, sphere: &SphereModel) -> f64 {
    let half_dlat = 0.5 * (b.lat - a.lat);
    let half_dlon = 0.5 * (b.lon - a.lon);
    let s_lat = half_dlat.sin();
    let s_lon = half_dlon.sin();
    // cos(a)·cos(b) is commutative in IEEE arithmetic, so the result is exactly symmetric.
    let h = s_lat * s_lat + (a.lat.cos() * b.lat.cos()) * (s_lon * s_lon);
    2.0 * h.clamp(0.0, 1.0).sqrt().asin() * sphere.radius
}

/// Area-uniform samples: `sin(lat)` uniform on `[-1, 1]`, longitude uniform on `[-π, π)`.
pub fn sample_uniform_sphere(n: usize, seed: u64) -> Vec<GeoPosition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_uniform_sphere_with(n, &mut rng)
}

pub(crate) fn sample_uniform_sphere_with<R: Rng>(n: usize, rng: &mut R) -> Vec<GeoPosition> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let lon: f64 = rng.random_range(-PI..PI);
            GeoPosition {
                lat: z.asin(),
                lon,
            }
        })
        .collect()
}

/// A feature vector tagged with a point on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geotoken {
    id: String,
    position: GeoPosition,
    features: Vec<f64>,
}

impl Geotoken {
    pub fn new(id: impl Into<String>, position: GeoPosition, features: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if let Some(bad) = features.iter().find(|f| !f.is_finite()) {
            return Err(Error::Token {
                id,
                message: format!("non-finite feature value {bad}"),
            });
        }
        Ok(Self {
            id,
            position,
            features,
        })
    }

    /// Like [`Geotoken::new`] but also checks the feature length against `dim`.
    pub fn with_dim(
        id: impl Into<String>,
        position: GeoPosition,
        features: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let id = id.into();
        if features.len() != dim {
            return Err(Error::Token {
                id,
                message: format!("expected {dim} features, got {}", features.len()),
            });
        }
        Self::new(id, position, features)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn position(&self) -> &GeoPosition {
        &self.position
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}
