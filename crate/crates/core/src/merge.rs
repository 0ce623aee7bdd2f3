//! Parameter-space merging of near-duplicate pool models.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{refresh_store, train_meta_adaptive, MetaModel, MetaStore, MetaTrainConfig};
use crate::model::ReconModel;
use crate::mts::TimeSeries;
use crate::pool::{MergeRecord, ModelPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeTiming {
    BeforeTest,
    #[default]
    AfterTest,
}

impl FromStr for MergeTiming {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before_test" => Ok(MergeTiming::BeforeTest),
            "after_test" => Ok(MergeTiming::AfterTest),
            _ => Err(Error::Config(format!("unknown merge timing '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergePolicy {
    /// Merging runs only when the pool holds more models than this.
    pub eps_merge: usize,
    /// Pairs with a dissimilarity score below this are merged.
    pub eps_disscore: f64,
    #[serde(default)]
    pub timing: MergeTiming,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            eps_merge: 15,
            eps_disscore: 0.01,
            timing: MergeTiming::AfterTest,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.eps_merge < 2 {
            return Err(Error::Config("eps_merge must be at least 2".into()));
        }
        if !(self.eps_disscore > 0.0 && self.eps_disscore.is_finite()) {
            return Err(Error::Config("eps_disscore must be positive".into()));
        }
        Ok(())
    }

    pub fn triggered(&self, pool_size: usize) -> bool {
        pool_size > self.eps_merge
    }
}

/// Euclidean, statistical and cosine components.
pub type Components = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    pub raw: Components,
    pub normalized: Components,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissimilarityReport {
    pub ids: Vec<String>,
    /// One entry per unordered pair `i < j`.
    pub pairs: Vec<PairScore>,
}

impl DissimilarityReport {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let n = self.ids.len();
        // pairs are stored row by row: (0,1), (0,2), ..., (1,2), ...
        let idx = a * n - a * (a + 1) / 2 + (b - a - 1);
        self.pairs[idx].score
    }
}

fn summary(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, std, min, max)
}

/// Raw dissimilarity components of two parameter vectors.
pub fn raw_components(a: &[f64], b: &[f64]) -> Components {
    let euclid = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let (ma, sa, mina, maxa) = summary(a);
    let (mb, sb, minb, maxb) = summary(b);
    let stat = ((ma - mb).abs() + (sa - sb).abs() + (mina - minb).abs() + (maxa - maxb).abs()) / 4.0;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = if na == 0.0 && nb == 0.0 {
        0.0
    } else if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        // rounding noise on parallel vectors
        let c = 1.0 - dot / (na * nb);
        if c < 1e-12 {
            0.0
        } else {
            c
        }
    };
    [euclid, stat, cosine]
}

/// Pairwise dissimilarity scores over a set of same-length parameter vectors.
pub fn dissimilarity_of(ids: Vec<String>, thetas: &[Vec<f64>]) -> Result<DissimilarityReport> {
    if thetas.len() < 2 {
        return Err(Error::Invalid("dissimilarity needs at least two models".into()));
    }
    if thetas.iter().any(|t| t.len() != thetas[0].len() || t.is_empty()) {
        return Err(Error::Shape("parameter vectors differ in length".into()));
    }
    let mut pairs = Vec::new();
    for i in 0..thetas.len() {
        for j in i + 1..thetas.len() {
            pairs.push(PairScore {
                i,
                j,
                raw: raw_components(&thetas[i], &thetas[j]),
                normalized: [0.0; 3],
                score: 0.0,
            });
        }
    }
    for c in 0..3 {
        let lo = pairs.iter().map(|p| p.raw[c]).fold(f64::INFINITY, f64::min);
        let hi = pairs.iter().map(|p| p.raw[c]).fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for p in &mut pairs {
            p.normalized[c] = if range > 0.0 {
                (p.raw[c] - lo) / range
            } else if p.raw[c] > 0.0 {
                1.0
            } else {
                0.0
            };
        }
    }
    for p in &mut pairs {
        p.score = p.normalized.iter().sum::<f64>() / 3.0;
    }
    Ok(DissimilarityReport { ids, pairs })
}

pub fn dissimilarity(pool: &ModelPool) -> Result<DissimilarityReport> {
    let thetas: Vec<Vec<f64>> = pool.models().iter().map(ReconModel::theta_f64).collect();
    dissimilarity_of(pool.ids(), &thetas)
}

/// Disjoint pairs below the cutoff, most similar first. Ties keep pair order.
pub fn plan_merges(report: &DissimilarityReport, policy: &MergePolicy) -> Vec<(usize, usize, f64)> {
    let mut candidates: Vec<&PairScore> = report
        .pairs
        .iter()
        .filter(|p| p.score < policy.eps_disscore)
        .collect();
    candidates.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut used = vec![false; report.ids.len()];
    let mut plan = Vec::new();
    for p in candidates {
        if !used[p.i] && !used[p.j] {
            used[p.i] = true;
            used[p.j] = true;
            plan.push((p.i, p.j, p.score));
        }
    }
    plan
}

/// Elementwise mean of two models' parameters; nothing is frozen.
pub fn average_pair(a: &ReconModel, b: &ReconModel) -> Result<ReconModel> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!("models {} and {} differ in shape", a.id(), b.id())));
    }
    let theta = a
        .theta()
        .iter()
        .zip(b.theta())
        .map(|(&x, &y)| ((f64::from(x) + f64::from(y)) / 2.0) as f32)
        .collect();
    let mut child = a.clone();
    child.set_theta(theta)?;
    child.set_trained_on(format!("{}+{}", a.trained_on(), b.trained_on()));
    Ok(child)
}

/// Merge rounds until no pair qualifies (at most `⌈log2 |pool|⌉` rounds).
/// Nothing happens unless `|pool| > eps_merge`. Returns the merges performed.
pub fn merge_round(pool: &mut ModelPool, policy: &MergePolicy) -> Result<Vec<MergeRecord>> {
    policy.validate()?;
    let mut done = Vec::new();
    if !policy.triggered(pool.len()) {
        return Ok(done);
    }
    let max_rounds = (pool.len() as f64).log2().ceil() as usize;
    for _ in 0..max_rounds {
        if pool.len() < 2 {
            break;
        }
        let report = dissimilarity(pool)?;
        let plan = plan_merges(&report, policy);
        if plan.is_empty() {
            break;
        }
        let round = pool.bump_merge_rounds();
        let snapshot: Vec<ReconModel> = pool.models().to_vec();
        for (i, j, score) in plan {
            let (a, b) = (&snapshot[i], &snapshot[j]);
            let child = average_pair(a, b)?;
            pool.replace_pair([a.id(), b.id()], child, round, score)?;
            done.push(pool.manifest().lineage.last().expect("lineage entry").clone());
        }
        log::info!("merge round {round}: pool now holds {} models", pool.len());
    }
    Ok(done)
}

/// Rebuild the meta store for the merged pool and retrain the meta-model.
pub fn refresh_meta_after_merge(
    pool: &mut ModelPool,
    store: &MetaStore,
    meta: Option<&MetaModel>,
    catalog: &BTreeMap<String, TimeSeries>,
    k_folds: usize,
    meta_cfg: &MetaTrainConfig,
) -> Result<(MetaStore, Option<MetaModel>)> {
    let refreshed = refresh_store(pool, store, catalog)?;
    let retrained = train_meta_adaptive(&refreshed, k_folds, meta_cfg, meta)?;
    if let Some(m) = &retrained {
        pool.set_meta_version(m.version());
    }
    Ok((refreshed, retrained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{ModelShape, Origin};

    fn report_from_scores(n: usize, scores: &[((usize, usize), f64)]) -> DissimilarityReport {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let s = scores
                    .iter()
                    .find(|((a, b), _)| (*a, *b) == (i, j))
                    .map_or(1.0, |(_, s)| *s);
                pairs.push(PairScore {
                    i,
                    j,
                    raw: [0.0; 3],
                    normalized: [0.0; 3],
                    score: s,
                });
            }
        }
        DissimilarityReport {
            ids: (0..n).map(|i| format!("m{i}")).collect(),
            pairs,
        }
    }

    fn shape() -> ModelShape {
        ModelShape {
            segment_length: 4,
            stride: 4,
            hidden: vec![2],
        }
    }

    #[test]
    fn identical_vectors_score_zero() {
        let t = vec![0.5, -1.0, 2.0];
        let r = dissimilarity_of(vec!["a".into(), "b".into()], &[t.clone(), t]).unwrap();
        assert_eq!(r.score(0, 1), 0.0);
    }

    #[test]
    fn two_distinct_models_score_one() {
        let r = dissimilarity_of(vec!["a".into(), "b".into()], &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(r.score(0, 1), 1.0);
        assert_eq!(r.score(1, 0), 1.0);
        assert_eq!(r.score(1, 1), 0.0);
    }

    #[test]
    fn colinear_vectors_have_zero_cosine() {
        let a = vec![1.0, -2.0, 3.0];
        let b: Vec<f64> = a.iter().map(|v| 2.5 * v).collect();
        assert_eq!(raw_components(&a, &b)[2], 0.0);
    }

    #[test]
    fn greedy_plan_skips_used_models() {
        let r = report_from_scores(3, &[((0, 1), 0.001), ((1, 2), 0.002), ((0, 2), 0.5)]);
        assert_eq!(plan_merges(&r, &MergePolicy::default()), vec![(0, 1, 0.001)]);
        let none = report_from_scores(3, &[]);
        assert!(plan_merges(&none, &MergePolicy::default()).is_empty());
        let all = report_from_scores(
            4,
            &[((0, 1), 0.001), ((0, 2), 0.002), ((0, 3), 0.003), ((1, 2), 0.004), ((1, 3), 0.005), ((2, 3), 0.006)],
        );
        assert_eq!(plan_merges(&all, &MergePolicy::default()).len(), 2);
    }

    #[test]
    fn averaging_two_models() {
        let a = ReconModel::from_theta("a", 1, &[], 1, vec![1.0, 3.0]).unwrap();
        let b = ReconModel::from_theta("b", 1, &[], 1, vec![3.0, 5.0]).unwrap();
        assert_eq!(average_pair(&a, &b).unwrap().theta(), &[2.0, 4.0]);
    }

    #[test]
    fn identical_models_collapse_to_one() {
        let base = ReconModel::new("x", 4, &[2], 4, 3).unwrap();
        let mut pool = ModelPool::empty(shape());
        for _ in 0..6 {
            pool.add_model(base.clone(), Origin::Initial, None).unwrap();
        }
        let policy = MergePolicy {
            eps_merge: 2,
            ..MergePolicy::default()
        };
        let merges = merge_round(&mut pool, &policy).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(merges.len(), 5);
        assert_eq!(pool.models()[0].theta(), base.theta());
        assert_eq!(pool.models()[0].frozen_count(), 0);
    }

    #[test]
    fn no_merge_at_threshold() {
        let base = ReconModel::new("x", 4, &[2], 4, 3).unwrap();
        let mut pool = ModelPool::empty(shape());
        for _ in 0..15 {
            pool.add_model(base.clone(), Origin::Initial, None).unwrap();
        }
        let before = pool.clone();
        assert!(merge_round(&mut pool, &MergePolicy::default()).unwrap().is_empty());
        assert_eq!(pool, before);
    }

    #[test]
    fn refresh_moves_rows_to_descendants() {
        use crate::features::FEATURE_LEN;
        use crate::meta::{MetaRow, RowTag};
        use crate::synth::{generate, Regime};

        let base = ReconModel::new("x", 4, &[2], 4, 3).unwrap();
        let mut pool = ModelPool::empty(shape());
        for _ in 0..3 {
            pool.add_model(base.clone(), Origin::Initial, None).unwrap();
        }
        let mut store = MetaStore::new();
        for (d, t) in [("a", 1.0), ("b", 2.0)] {
            for (i, id) in pool.ids().iter().enumerate() {
                store
                    .push(MetaRow {
                        dataset: d.into(),
                        model_id: id.clone(),
                        tag: RowTag::Initial,
                        target: t + i as f64,
                        features: vec![0.5; FEATURE_LEN],
                        fingerprint: pool.fingerprint_of(id).unwrap().to_vec(),
                    })
                    .unwrap();
            }
        }
        let policy = MergePolicy {
            eps_merge: 2,
            ..MergePolicy::default()
        };
        merge_round(&mut pool, &policy).unwrap();
        assert_eq!(pool.len(), 1);
        let ts = generate(Regime::Sine, 64, 2, 1).unwrap();
        let catalog = BTreeMap::from([("a".to_string(), ts.clone())]);
        let refreshed = refresh_store(&pool, &store, &catalog).unwrap();
        let child = pool.ids()[0].clone();
        assert_eq!(refreshed.len(), 2);
        let rows = refreshed.rows();
        assert_eq!((rows[0].dataset.as_str(), rows[0].tag), ("a", RowTag::Refresh));
        assert_eq!(rows[0].target, crate::meta::observed_error(&pool.models()[0], &ts).unwrap());
        assert_eq!((rows[1].dataset.as_str(), rows[1].tag), ("b", RowTag::RefreshStale));
        assert_eq!(rows[1].target, 3.0);
        assert!(rows.iter().all(|r| r.model_id == child && r.features == vec![0.5; FEATURE_LEN]));
    }
}
