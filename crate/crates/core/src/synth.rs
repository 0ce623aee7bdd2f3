//! Seeded synthetic series generators.
//!
//! Used for the fingerprint probe, the `synth` command and the desk-scale
//! experiments. Output depends only on the arguments.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mts::{inject_anomaly, AnomalyKind, AnomalySpec, Matrix, TimeSeries};

/// Seed of the fingerprint probe series.
pub const PROBE_SEED: u64 = 42;
pub const PROBE_LEN: usize = 512;
pub const PROBE_DIMS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Sine,
    Ar1,
    TrendSeason,
    LevelShift,
    /// Dimensions cycle through the other four regimes.
    Mixed,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Sine => "sine",
            Regime::Ar1 => "ar1",
            Regime::TrendSeason => "trend_season",
            Regime::LevelShift => "level_shift",
            Regime::Mixed => "mixed",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(Regime::Sine),
            "ar1" => Ok(Regime::Ar1),
            "trend_season" => Ok(Regime::TrendSeason),
            "level_shift" => Ok(Regime::LevelShift),
            "mixed" => Ok(Regime::Mixed),
            _ => Err(Error::Invalid(format!("unknown regime '{s}'"))),
        }
    }
}

fn column(regime: Regime, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    match regime {
        Regime::Sine => {
            let period = rng.random_range(20.0..60.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.8..1.5);
            (0..m)
                .map(|t| {
                    amp * (std::f64::consts::TAU * t as f64 / period + phase).sin()
                        + 0.05 * noise.sample(rng)
                })
                .collect()
        }
        Regime::Ar1 => {
            let phi = rng.random_range(0.6..0.9);
            let mut x = 0.0;
            (0..m)
                .map(|_| {
                    x = phi * x + 0.3 * noise.sample(rng);
                    x
                })
                .collect()
        }
        Regime::TrendSeason => {
            let slope = rng.random_range(-2.0..2.0) / m as f64;
            let period = rng.random_range(30.0..80.0);
            (0..m)
                .map(|t| {
                    let t = t as f64;
                    slope * t * 4.0
                        + 0.7 * (std::f64::consts::TAU * t / period).sin()
                        + 0.08 * noise.sample(rng)
                })
                .collect()
        }
        Regime::LevelShift => {
            let mut level = rng.random_range(-1.0..1.0);
            let mut next_shift = rng.random_range(m / 8..m / 3 + 2);
            (0..m)
                .map(|t| {
                    if t == next_shift {
                        level = rng.random_range(-1.5..1.5);
                        next_shift += rng.random_range(m / 8..m / 3 + 2);
                    }
                    level + 0.1 * noise.sample(rng)
                })
                .collect()
        }
        Regime::Mixed => unreachable!("mixed is expanded per dimension"),
    }
}

/// `m × n` series of the given regime.
pub fn generate(regime: Regime, m: usize, n: usize, seed: u64) -> Result<TimeSeries> {
    if m < 8 || n == 0 {
        return Err(Error::Size(format!(
            "synthetic series must be at least 8x1, got {m}x{n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cycle = [
        Regime::Sine,
        Regime::Ar1,
        Regime::TrendSeason,
        Regime::LevelShift,
    ];
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|d| {
            let r = match regime {
                Regime::Mixed => cycle[d % cycle.len()],
                r => r,
            };
            column(r, m, &mut rng)
        })
        .collect();
    TimeSeries::new(Matrix::from_columns(&columns)?)
}

/// [`generate`] with zero labels, then each spec injected in order.
pub fn generate_labeled(
    regime: Regime,
    m: usize,
    n: usize,
    specs: &[AnomalySpec],
    seed: u64,
) -> Result<TimeSeries> {
    let mut ts = generate(regime, m, n, seed)?.with_labels(vec![0; m])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a);
    for spec in specs {
        ts = inject_anomaly(&ts, spec, rng.random())?;
    }
    Ok(ts)
}

/// The fixed multi-regime series every model fingerprint is computed on:
/// 512 rows, one dimension each of sinusoid, AR(1), trend + season and level
/// shifts, seed 42.
pub fn probe_series() -> TimeSeries {
    generate(Regime::Mixed, PROBE_LEN, PROBE_DIMS, PROBE_SEED).expect("probe dimensions are valid")
}

/// Inject `count` anomalies of `kind` at seeded, non-overlapping positions.
///
/// The series is split into `count` equal slots with one anomaly placed at a
/// random offset in each; every anomaly hits one random dimension. Returns
/// `None` when a slot cannot hold an anomaly of `length` with a margin.
pub fn inject_random(
    ts: &TimeSeries,
    kind: AnomalyKind,
    count: usize,
    length: usize,
    magnitude: f64,
    seed: u64,
) -> Result<Option<TimeSeries>> {
    if count == 0 {
        return Ok(Some(ts.clone()));
    }
    let slot = ts.len() / count;
    if slot < length + 4 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ts.clone();
    for k in 0..count {
        let lo = k * slot + 2;
        let hi = (k + 1) * slot - length - 2;
        let start = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let dim = rng.random_range(0..ts.dims());
        let spec = AnomalySpec {
            kind,
            start,
            length,
            magnitude,
            dims: vec![dim],
        };
        out = inject_anomaly(&out, &spec, rng.random())?;
    }
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_is_stable() {
        let a = probe_series();
        let b = probe_series();
        assert_eq!(a, b);
        assert_eq!((a.len(), a.dims()), (PROBE_LEN, PROBE_DIMS));
    }

    #[test]
    fn regimes_differ_by_seed() {
        for r in [Regime::Sine, Regime::Ar1, Regime::TrendSeason, Regime::LevelShift, Regime::Mixed] {
            let a = generate(r, 200, 2, 1).unwrap();
            let b = generate(r, 200, 2, 2).unwrap();
            assert_ne!(a, b, "{}", r.name());
            assert_eq!(a, generate(r, 200, 2, 1).unwrap());
        }
    }

    #[test]
    fn random_injection_places_count_anomalies() {
        let ts = generate(Regime::Sine, 500, 2, 3).unwrap();
        let out = inject_random(&ts, AnomalyKind::Spike, 5, 1, 4.0, 11).unwrap().unwrap();
        let positives = out.labels().unwrap().iter().filter(|&&l| l == 1).count();
        assert_eq!(positives, 5);
        assert!(inject_random(&ts, AnomalyKind::Flip, 5, 200, 1.0, 0).unwrap().is_none());
    }
}
