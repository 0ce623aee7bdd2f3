//! Fixed-length dataset descriptors.
//!
//! Fourteen statistics are computed per dimension and summarized across
//! dimensions by mean and standard deviation, followed by six cross-dimension
//! statistics. Per-dimension values are sorted before aggregation so the
//! result is bitwise invariant to column order.

use crate::error::{Error, Result};
use crate::mts::{mean, TimeSeries, STD_GUARD};

pub const PER_DIM_FEATURES: usize = 14;
pub const FEATURE_LEN: usize = 2 * PER_DIM_FEATURES + 6;
pub const MIN_FEATURE_LEN: usize = 8;

pub const FEATURE_NAMES: [&str; FEATURE_LEN] = [
    "mean_mean",
    "variance_mean",
    "skewness_mean",
    "kurtosis_mean",
    "acf1_mean",
    "acf2_mean",
    "acf3_mean",
    "acf_zero_crossing_mean",
    "dominant_period_mean",
    "seasonal_strength_mean",
    "drift_mean",
    "std_ratio_mean",
    "outlier_fraction_mean",
    "max_abs_z_mean",
    "mean_std",
    "variance_std",
    "skewness_std",
    "kurtosis_std",
    "acf1_std",
    "acf2_std",
    "acf3_std",
    "acf_zero_crossing_std",
    "dominant_period_std",
    "seasonal_strength_std",
    "drift_std",
    "std_ratio_std",
    "outlier_fraction_std",
    "max_abs_z_std",
    "log_dims",
    "log_len",
    "mean_correlation",
    "max_correlation",
    "mean_dim_std",
    "global_outlier_fraction",
];

/// Index of the dominant-period feature's cross-dimension mean.
pub const DOMINANT_PERIOD_MEAN: usize = 8;

/// Moments of a column: mean, population variance.
fn moments(x: &[f64]) -> (f64, f64) {
    let mu = mean(x);
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / x.len() as f64;
    (mu, var)
}

fn std_of(x: &[f64]) -> f64 {
    moments(x).1.sqrt()
}

/// Biased autocorrelation estimates for lags `0..=max_lag`; all zero for a
/// constant column.
fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let (mu, var) = moments(x);
    let m = x.len();
    let mut out = vec![0.0; max_lag + 1];
    if var.sqrt() < STD_GUARD {
        return out;
    }
    let denom = var * m as f64;
    for (k, slot) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..m - k {
            s += (x[i] - mu) * (x[i + k] - mu);
        }
        *slot = s / denom;
    }
    out
}

fn dimension_features(x: &[f64]) -> [f64; PER_DIM_FEATURES] {
    let m = x.len();
    let (mu, var) = moments(x);
    let sd = var.sqrt();
    let degenerate = sd < STD_GUARD;
    let (skew, kurt) = if degenerate {
        (0.0, 0.0)
    } else {
        let m3 = x.iter().map(|v| ((v - mu) / sd).powi(3)).sum::<f64>() / m as f64;
        let m4 = x.iter().map(|v| ((v - mu) / sd).powi(4)).sum::<f64>() / m as f64;
        (m3, m4 - 3.0)
    };

    let max_lag = m / 2;
    let r = acf(x, max_lag);
    let zero_crossing = if degenerate {
        0.0
    } else {
        (1..=max_lag)
            .find(|&k| r[k] <= 0.0)
            .unwrap_or(max_lag) as f64
    };
    let mut period = 0usize;
    let mut best = f64::NEG_INFINITY;
    for k in 4..max_lag {
        if r[k] > r[k - 1] && r[k] >= r[k + 1] && r[k] > best {
            best = r[k];
            period = k;
        }
    }
    let strength = if period > 0 { r[period] } else { 0.0 };

    let half = m / 2;
    let (first, second) = x.split_at(half);
    let drift = if degenerate {
        0.0
    } else {
        (mean(second) - mean(first)).abs() / sd
    };
    let s1 = std_of(first);
    let std_ratio = if s1 < STD_GUARD { 0.0 } else { std_of(second) / s1 };

    let (outliers, max_z) = if degenerate {
        (0.0, 0.0)
    } else {
        let mut count = 0usize;
        let mut max_z: f64 = 0.0;
        for v in x {
            let z = ((v - mu) / sd).abs();
            if z > 3.0 {
                count += 1;
            }
            max_z = max_z.max(z);
        }
        (count as f64 / m as f64, max_z)
    };

    [
        mu,
        var,
        skew,
        kurt,
        r[1],
        r[2],
        r[3],
        zero_crossing,
        period as f64,
        strength,
        drift,
        std_ratio,
        outliers,
        max_z,
    ]
}

/// Order-independent mean and population std.
fn sorted_summary(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let (mu, var) = moments(values);
    (mu, var.sqrt())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    if va.sqrt() < STD_GUARD || vb.sqrt() < STD_GUARD {
        return 0.0;
    }
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    cov / (va * vb).sqrt()
}

/// Feature vector of length [`FEATURE_LEN`]. Requires at least 8 rows.
pub fn extract_features(ts: &TimeSeries) -> Result<Vec<f64>> {
    let m = ts.len();
    let n = ts.dims();
    if m < MIN_FEATURE_LEN {
        return Err(Error::Size(format!(
            "feature extraction needs at least {MIN_FEATURE_LEN} rows, got {m}"
        )));
    }
    let columns: Vec<Vec<f64>> = (0..n).map(|d| ts.column(d)).collect();
    let per_dim: Vec<[f64; PER_DIM_FEATURES]> = columns.iter().map(|c| dimension_features(c)).collect();

    let mut out = vec![0.0; FEATURE_LEN];
    for f in 0..PER_DIM_FEATURES {
        let mut vals: Vec<f64> = per_dim.iter().map(|p| p[f]).collect();
        let (mu, sd) = sorted_summary(&mut vals);
        out[f] = mu;
        out[PER_DIM_FEATURES + f] = sd;
    }

    let mut corrs = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            corrs.push(pearson(&columns[i], &columns[j]));
        }
    }
    corrs.sort_by(f64::total_cmp);
    let base = 2 * PER_DIM_FEATURES;
    out[base] = (n as f64).ln();
    out[base + 1] = (m as f64).ln();
    out[base + 2] = mean(&corrs);
    out[base + 3] = corrs.last().copied().unwrap_or(0.0);
    let mut stds: Vec<f64> = columns.iter().map(|c| std_of(c)).collect();
    out[base + 4] = sorted_summary(&mut stds).0;
    let outlier_total: usize = per_dim
        .iter()
        .map(|p| (p[12] * m as f64).round() as usize)
        .sum();
    out[base + 5] = outlier_total as f64 / (m * n) as f64;

    for v in &mut out {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    Ok(out)
}
