//! Thresholds, point labeling and precision-recall metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mts::mean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdMethod {
    MeanStd { multiplier: f64 },
    Epsilon,
    Percentile { anomaly_ratio: f64 },
}

impl Default for ThresholdMethod {
    fn default() -> Self {
        ThresholdMethod::MeanStd { multiplier: 2.5 }
    }
}

impl ThresholdMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdMethod::MeanStd { multiplier } if !(multiplier >= 0.0 && multiplier.is_finite()) => {
                Err(Error::Config("multiplier must be non-negative".into()))
            }
            ThresholdMethod::Percentile { anomaly_ratio } if !(anomaly_ratio > 0.0 && anomaly_ratio < 1.0) => {
                Err(Error::Config("anomaly_ratio must lie in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn threshold(&self, scores: &[f64]) -> Result<f64> {
        match *self {
            ThresholdMethod::MeanStd { multiplier } => threshold_mean_std(scores, multiplier),
            ThresholdMethod::Epsilon => threshold_epsilon(scores),
            ThresholdMethod::Percentile { anomaly_ratio } => threshold_percentile(scores, anomaly_ratio),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ThresholdMethod::MeanStd { .. } => "mean_std",
            ThresholdMethod::Epsilon => "epsilon",
            ThresholdMethod::Percentile { .. } => "percentile",
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::Invalid("thresholds need at least two scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("scores must be finite".into()));
    }
    Ok(())
}

fn mean_pop_std(xs: &[f64]) -> (f64, f64) {
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64;
    (mu, var.sqrt())
}

/// `mean + multiplier · std` (population std).
pub fn threshold_mean_std(scores: &[f64], multiplier: f64) -> Result<f64> {
    check_scores(scores)?;
    let (mu, sd) = mean_pop_std(scores);
    Ok(mu + multiplier * sd)
}

/// Grid of `z` values searched by [`threshold_epsilon`].
pub fn epsilon_grid() -> Vec<f64> {
    (0..=8).map(|i| 2.0 + 0.5 * i as f64).collect()
}

fn count_runs(flags: &[bool]) -> usize {
    let mut runs = 0;
    let mut prev = false;
    for &f in flags {
        if f && !prev {
            runs += 1;
        }
        prev = f;
    }
    runs
}

/// Grid search over `mean + z · std` balancing the drop in mean and std from
/// removing the flagged points against the number of points and runs flagged.
pub fn threshold_epsilon(scores: &[f64]) -> Result<f64> {
    check_scores(scores)?;
    let (mu, sd) = mean_pop_std(scores);
    let mut best: Option<(f64, f64)> = None;
    for z in epsilon_grid() {
        let eps = mu + z * sd;
        let flags: Vec<bool> = scores.iter().map(|&s| s > eps).collect();
        let above = flags.iter().filter(|&&f| f).count();
        if above == 0 || above == scores.len() {
            continue;
        }
        let rest: Vec<f64> = scores
            .iter()
            .zip(&flags)
            .filter(|(_, &f)| !f)
            .map(|(&s, _)| s)
            .collect();
        let (rmu, rsd) = mean_pop_std(&rest);
        let dmean = if mu != 0.0 { (mu - rmu) / mu } else { 0.0 };
        let dstd = if sd != 0.0 { (sd - rsd) / sd } else { 0.0 };
        let runs = count_runs(&flags);
        let quality = (dmean + dstd) / (above + runs * runs) as f64;
        if best.is_none_or(|(q, _)| quality > q) {
            best = Some((quality, eps));
        }
    }
    Ok(best.map_or_else(
        || scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        |(_, eps)| eps,
    ))
}

/// The `(1 − ratio)` quantile of the scores, linearly interpolated.
pub fn threshold_percentile(scores: &[f64], anomaly_ratio: f64) -> Result<f64> {
    check_scores(scores)?;
    if !(anomaly_ratio > 0.0 && anomaly_ratio < 1.0) {
        return Err(Error::Invalid("anomaly_ratio must lie in (0, 1)".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (1.0 - anomaly_ratio) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub threshold: f64,
    pub labels: Vec<u8>,
    /// Maximal runs of anomalous points, inclusive on both ends.
    pub ranges: Vec<(usize, usize)>,
}

/// Maximal runs of ones, inclusive.
pub fn label_ranges(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l == 1, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len() - 1));
    }
    out
}

/// Label point `i` anomalous iff `scores[i] > epsilon`.
pub fn identify(scores: &[f64], epsilon: f64) -> DetectionResult {
    let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > epsilon)).collect();
    DetectionResult {
        threshold: epsilon,
        ranges: label_ranges(&labels),
        labels,
    }
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("scores must be finite".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::UndefinedMetric("degenerate labels: need both classes".into()));
    }
    Ok(())
}

/// Score order (descending) with tie groups.
struct Ranked {
    order: Vec<usize>,
    /// End offsets (exclusive) of each group of equal scores in `order`.
    group_ends: Vec<usize>,
}

fn rank_scores(scores: &[f64]) -> Ranked {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut group_ends = Vec::new();
    for k in 1..=order.len() {
        if k == order.len() || scores[order[k]] != scores[order[k - 1]] {
            group_ends.push(k);
        }
    }
    Ranked { order, group_ends }
}

/// Average precision with per-point relevance weights in `[0, 1]`.
fn weighted_ap(ranked: &Ranked, weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0.0, 0.0, 0.0, 0.0);
    let mut start = 0;
    for &end in &ranked.group_ends {
        for &i in &ranked.order[start..end] {
            tp += weights[i];
            fp += 1.0 - weights[i];
        }
        start = end;
        let recall = tp / total;
        if recall > prev_recall {
            ap += tp / (tp + fp) * (recall - prev_recall);
            prev_recall = recall;
        }
    }
    ap
}

/// Point-wise area under the precision-recall curve (average precision).
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    range_auc_pr(scores, labels, 0)
}

/// Distance from each point to the nearest labeled point.
fn distance_to_positive(labels: &[u8]) -> Vec<usize> {
    let m = labels.len();
    let mut dist = vec![usize::MAX; m];
    let mut last = None;
    for i in 0..m {
        if labels[i] == 1 {
            last = Some(i);
        }
        if let Some(p) = last {
            dist[i] = i - p;
        }
    }
    let mut next = None;
    for i in (0..m).rev() {
        if labels[i] == 1 {
            next = Some(i);
        }
        if let Some(p) = next {
            dist[i] = dist[i].min(p - i);
        }
    }
    dist
}

/// Soft labels: 1 inside labeled ranges, `1 − d/(buffer+1)` within `buffer`
/// points of one, 0 elsewhere.
pub fn soft_labels(labels: &[u8], buffer: usize) -> Vec<f64> {
    distance_to_positive(labels)
        .into_iter()
        .map(|d| {
            if d == 0 {
                1.0
            } else if d <= buffer {
                1.0 - d as f64 / (buffer + 1) as f64
            } else {
                0.0
            }
        })
        .collect()
}

/// Average precision against labels whose ranges are widened by a linear ramp
/// of `buffer` points on each side.
pub fn range_auc_pr(scores: &[f64], labels: &[u8], buffer: usize) -> Result<f64> {
    check_labels(scores, labels)?;
    Ok(weighted_ap(&rank_scores(scores), &soft_labels(labels, buffer)))
}

/// Mean of [`range_auc_pr`] over buffers `0..=max_buffer`.
pub fn vus_pr(scores: &[f64], labels: &[u8], max_buffer: usize) -> Result<f64> {
    check_labels(scores, labels)?;
    let ranked = rank_scores(scores);
    let total: f64 = (0..=max_buffer)
        .map(|b| weighted_ap(&ranked, &soft_labels(labels, b)))
        .sum();
    Ok(total / (max_buffer + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ts_auc_pr: f64,
    pub range_auc_pr: f64,
    pub vus_pr: f64,
}

/// All three metrics; the range metric uses `buffer = max_buffer`.
pub fn evaluate(scores: &[f64], labels: &[u8], max_buffer: usize) -> Result<Metrics> {
    Ok(Metrics {
        ts_auc_pr: auc_pr(scores, labels)?,
        range_auc_pr: range_auc_pr(scores, labels, max_buffer)?,
        vus_pr: vus_pr(scores, labels, max_buffer)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_std_examples() {
        assert_eq!(threshold_mean_std(&[0.0, 0.0, 0.0, 0.0, 10.0], 2.5).unwrap(), 12.0);
        assert_eq!(identify(&[0.0, 0.0, 0.0, 0.0, 10.0], 12.0).ranges.len(), 0);
        let eps = threshold_mean_std(&[3.0; 6], 2.5).unwrap();
        assert_eq!(eps, 3.0);
        assert!(identify(&[3.0; 6], eps).labels.iter().all(|&l| l == 0));
        assert_eq!(threshold_mean_std(&[1.0, 3.0], 0.0).unwrap(), 2.0);
    }

    #[test]
    fn epsilon_examples() {
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 100.0];
        let eps = threshold_epsilon(&scores).unwrap();
        assert!(eps < 100.0 && eps > 9.0);
        assert_eq!(identify(&scores, eps).labels.iter().filter(|&&l| l == 1).count(), 1);
        let (mu, sd) = mean_pop_std(&scores);
        assert!(epsilon_grid().iter().any(|z| mu + z * sd == eps));
        assert_eq!(threshold_epsilon(&[2.0; 5]).unwrap(), 2.0);
    }

    #[test]
    fn percentile_examples() {
        let eps = threshold_percentile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap();
        assert_eq!(eps, 2.5);
        assert_eq!(identify(&[1.0, 2.0, 3.0, 4.0], eps).labels, [0, 0, 1, 1]);
        let dup = threshold_percentile(&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0], 0.5).unwrap();
        assert_eq!(dup, 2.5);
        let tiny = threshold_percentile(&[1.0, 2.0, 3.0, 4.0], 1e-9).unwrap();
        assert!((tiny - 4.0).abs() < 1e-6);
    }

    #[test]
    fn identify_examples() {
        let r = identify(&[0.1, 0.9, 0.8, 0.1], 0.5);
        assert_eq!(r.labels, [0, 1, 1, 0]);
        assert_eq!(r.ranges, [(1, 2)]);
        assert!(identify(&[0.1, 0.9], 0.9).labels.iter().all(|&l| l == 0));
        assert_eq!(identify(&[0.1, 0.9], 0.0).ranges, [(0, 1)]);
    }

    #[test]
    fn two_point_ap() {
        assert_eq!(auc_pr(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.1, 0.9], &[1, 0]).unwrap(), 0.5);
        assert!(matches!(auc_pr(&[0.1, 0.9], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn random_scores_give_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = 10_000;
        let p = 0.2;
        let mut total = 0.0;
        let trials = 5;
        for _ in 0..trials {
            let scores: Vec<f64> = (0..m).map(|_| rng.random()).collect();
            let labels: Vec<u8> = (0..m).map(|_| u8::from(rng.random::<f64>() < p)).collect();
            total += auc_pr(&scores, &labels).unwrap();
        }
        assert!((total / trials as f64 - p).abs() < 0.05);
    }

    #[test]
    fn buffer_rewards_near_misses() {
        let m = 60;
        let mut labels = vec![0u8; m];
        labels[30..35].iter_mut().for_each(|l| *l = 1);
        let mut scores = vec![0.0; m];
        scores[32..37].iter_mut().for_each(|s| *s = 1.0);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += i as f64 * 1e-4;
        }
        let point = auc_pr(&scores, &labels).unwrap();
        let range = range_auc_pr(&scores, &labels, 4).unwrap();
        assert!(range > point, "{range} vs {point}");
    }

    #[test]
    fn vus_with_zero_window() {
        let scores = [0.3, 0.2, 0.9, 0.4, 0.1];
        let labels = [0, 0, 1, 1, 0];
        assert_eq!(vus_pr(&scores, &labels, 0).unwrap(), range_auc_pr(&scores, &labels, 0).unwrap());
        let manual: f64 = (0..=3).map(|b| range_auc_pr(&scores, &labels, b).unwrap()).sum::<f64>() / 4.0;
        assert_eq!(vus_pr(&scores, &labels, 3).unwrap(), manual);
    }

    proptest! {
        #[test]
        fn identify_matches_strict_inequality(
            scores in prop::collection::vec(-10.0f64..10.0, 1..60),
            eps in -10.0f64..10.0,
        ) {
            let r = identify(&scores, eps);
            for (s, l) in scores.iter().zip(&r.labels) {
                prop_assert_eq!(*l == 1, *s > eps);
            }
            let covered: usize = r.ranges.iter().map(|(a, b)| b - a + 1).sum();
            prop_assert_eq!(covered, r.labels.iter().filter(|&&l| l == 1).count());
        }

        #[test]
        fn ap_is_a_probability(
            scores in prop::collection::vec(0.0f64..1.0, 2..50),
            seed in any::<u64>(),
        ) {
            let mut labels: Vec<u8> = (0..scores.len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let ap = auc_pr(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
            let separated = scores.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).fold(f64::INFINITY, f64::min)
                > scores.iter().zip(&labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(separated, (ap - 1.0).abs() < 1e-12);
        }
    }
}
