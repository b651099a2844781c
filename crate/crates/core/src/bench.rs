//! Dense vs. block-wise application timing and log-log scaling fit.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::GeoPosition;
use crate::spherical::{apply_blockwise_into, apply_dense, build_encoding, EncodingConfig};

pub const DEFAULT_DIMS: [usize; 5] = [48, 96, 192, 384, 768];
pub const MIN_REPS: usize = 30;

/// Each repetition loops the operation until at least this much time passes.
const REP_TARGET: Duration = Duration::from_micros(200);

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub dim: usize,
    /// Median nanoseconds per apply.
    pub dense_ns: f64,
    pub blockwise_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub reps: usize,
    pub points: Vec<BenchPoint>,
    pub dense_slope: f64,
    pub blockwise_slope: f64,
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dim,dense_median_ns,blockwise_median_ns\n");
        for p in &self.points {
            s.push_str(&format!("{},{:.3},{:.3}\n", p.dim, p.dense_ns, p.blockwise_ns));
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("median time per apply over {} repetitions\n", self.reps);
        s.push_str(&format!("{:>6} {:>14} {:>14} {:>8}\n", "dim", "dense (ns)", "blockwise (ns)", "ratio"));
        for p in &self.points {
            s.push_str(&format!(
                "{:>6} {:>14.1} {:>14.1} {:>8.1}\n",
                p.dim,
                p.dense_ns,
                p.blockwise_ns,
                p.dense_ns / p.blockwise_ns
            ));
        }
        s.push_str(&format!(
            "log-log slope: dense {:.3}, blockwise {:.3}\n",
            self.dense_slope, self.blockwise_slope
        ));
        s
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median ns per call over `reps` repetitions, each looping `f` for at
/// least [`REP_TARGET`].
fn time_per_call(reps: usize, mut f: impl FnMut()) -> f64 {
    // calibrate the inner loop count
    let mut iters = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..iters {
            f();
        }
        if t.elapsed() >= REP_TARGET || iters >= 1 << 24 {
            break;
        }
        iters *= 2;
    }
    let samples = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..iters {
                f();
            }
            t.elapsed().as_nanos() as f64 / iters as f64
        })
        .collect();
    median(samples)
}

pub fn run_bench(dims: &[usize], reps: usize, seed: u64) -> Result<BenchResult> {
    if dims.len() < 2 {
        return Err(Error::Config("bench needs at least two dimensions".into()));
    }
    if reps < MIN_REPS {
        return Err(Error::Config(format!("bench needs at least {MIN_REPS} repetitions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(dims.len());
    for &dim in dims {
        let cfg = EncodingConfig::uniform(dim)?;
        let pos = GeoPosition::from_degrees(rng.random_range(-90.0..90.0), rng.random_range(-180.0..180.0))?;
        let enc = build_encoding(&pos, &cfg)?;
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; dim];
        let dense_ns = time_per_call(reps, || {
            black_box(apply_dense(black_box(&enc), black_box(&v)).expect("length checked"));
        });
        let blockwise_ns = time_per_call(reps, || {
            apply_blockwise_into(black_box(&enc), black_box(&v), &mut out).expect("length checked");
            black_box(&out);
        });
        points.push(BenchPoint {
            dim,
            dense_ns,
            blockwise_ns,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.dim as f64).collect();
    let dense: Vec<f64> = points.iter().map(|p| p.dense_ns).collect();
    let block: Vec<f64> = points.iter().map(|p| p.blockwise_ns).collect();
    Ok(BenchResult {
        reps,
        dense_slope: loglog_slope(&xs, &dense),
        blockwise_slope: loglog_slope(&xs, &block),
        points,
    })
}
