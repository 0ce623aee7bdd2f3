//! Per-model scoring, label-free model rankings and Borda top-k aggregation.
//!
//! Thirteen rankings are produced for a subset of two or more models: four
//! from whole-series prediction error, five from detection skill on injected
//! synthetic anomalies and four from the models' centrality among each
//! other's score series. Every ranking breaks ties by subset order, which is
//! the pool's creation order.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::detect::auc_pr;
use crate::error::{Error, Result};
use crate::model::{point_errors, ReconModel};
use crate::mts::{AnomalyKind, Matrix, TimeSeries};
use crate::pool::derive_seed;
use crate::synth::inject_random;

const STREAM_SYNTHETIC: u64 = 21;
const STREAM_MEDOIDS: u64 = 22;
pub const SYNTHETIC_INSTANCES: usize = 5;
pub const MIN_SYNTHETIC_LEN: usize = 64;
pub const AP_DAMPING: f64 = 0.7;
pub const AP_ITERATIONS: usize = 200;
const AP_STABLE_ITERATIONS: usize = 15;
pub const MAPE_FLOOR: f64 = 0.01;

/// Per-point anomaly scores, one row per model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `t,<id>...` with one line per time point; `final` is appended when given.
    pub fn write_csv<W: Write>(&self, final_score: Option<&[f64]>, mut out: W) -> Result<()> {
        write!(out, "t")?;
        for id in &self.ids {
            write!(out, ",{id}")?;
        }
        if final_score.is_some() {
            write!(out, ",final")?;
        }
        writeln!(out)?;
        let m = self.rows.first().map_or(0, Vec::len);
        for i in 0..m {
            write!(out, "{i}")?;
            for r in &self.rows {
                write!(out, ",{}", r[i])?;
            }
            if let Some(f) = final_score {
                write!(out, ",{}", f[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Reconstructions and per-point scores of every model.
pub fn score_models(models: &[&ReconModel], ts: &TimeSeries) -> Result<(ScoreMatrix, Vec<Matrix>)> {
    if models.is_empty() {
        return Err(Error::Invalid("no models to score".into()));
    }
    let mut rows = Vec::with_capacity(models.len());
    let mut recons = Vec::with_capacity(models.len());
    for m in models {
        let recon = m.reconstruct(ts)?;
        rows.push(point_errors(ts.values(), &recon)?);
        recons.push(recon);
    }
    Ok((
        ScoreMatrix {
            ids: models.iter().map(|m| m.id().to_string()).collect(),
            rows,
        },
        recons,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub metric: String,
    /// Subset indices, best first.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub ids: Vec<String>,
    pub rankings: Vec<Ranking>,
}

impl RankTable {
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        for r in &self.rankings {
            let mut seen = vec![false; n];
            if r.order.len() != n {
                return Err(Error::Invalid(format!("ranking {} has {} entries, expected {n}", r.metric, r.order.len())));
            }
            for &i in &r.order {
                if i >= n || seen[i] {
                    return Err(Error::Invalid(format!("ranking {} is not a permutation", r.metric)));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// `metric,model_id,position` with positions counted from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "metric,model_id,position")?;
        for r in &self.rankings {
            for (p, &i) in r.order.iter().enumerate() {
                writeln!(out, "{},{},{}", r.metric, self.ids[i], p + 1)?;
            }
        }
        Ok(())
    }
}

/// Indices sorted by `key` ascending, ties by index.
fn order_by(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    idx
}

/// MSE, MAE, RMSE and MAPE rankings, lowest error first.
pub fn rank_prediction_error(ts: &TimeSeries, recons: &[Matrix]) -> Vec<Ranking> {
    let x = ts.values().as_slice();
    let count = x.len() as f64;
    let mut mse = Vec::with_capacity(recons.len());
    let mut mae = Vec::with_capacity(recons.len());
    let mut mape = Vec::with_capacity(recons.len());
    for r in recons {
        let (mut se, mut ae, mut pe) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(r.as_slice()) {
            let d = (b - a).abs();
            se += d * d;
            ae += d;
            pe += d / a.abs().max(MAPE_FLOOR);
        }
        mse.push(se / count);
        mae.push(ae / count);
        mape.push(pe / count);
    }
    let rmse: Vec<f64> = mse.iter().map(|v| v.sqrt()).collect();
    vec![
        Ranking { metric: "mse".into(), order: order_by(&mse) },
        Ranking { metric: "mae".into(), order: order_by(&mae) },
        Ranking { metric: "rmse".into(), order: order_by(&rmse) },
        Ranking { metric: "mape".into(), order: order_by(&mape) },
    ]
}

/// Window length and magnitude used for each injected anomaly kind.
pub fn synthetic_recipe(kind: AnomalyKind) -> (usize, f64) {
    match kind {
        AnomalyKind::Spike => (1, 5.0),
        AnomalyKind::Contextual => (8, 3.0),
        AnomalyKind::Flip => (16, 1.0),
        AnomalyKind::Speedup => (16, 1.0),
        AnomalyKind::Scale => (8, 1.5),
    }
}

/// One ranking per anomaly kind, best detection AUC-PR first. Kinds that do
/// not fit the series are skipped with a warning.
pub fn rank_synthetic(models: &[&ReconModel], ts: &TimeSeries, seed: u64) -> Result<Vec<Ranking>> {
    let mut out = Vec::new();
    if ts.len() < MIN_SYNTHETIC_LEN {
        log::warn!("series of {} rows is too short for synthetic rankings", ts.len());
        return Ok(out);
    }
    let clean = TimeSeries::new(ts.values().clone())?;
    for (k, kind) in AnomalyKind::ALL.into_iter().enumerate() {
        let (length, magnitude) = synthetic_recipe(kind);
        let s = derive_seed(seed, STREAM_SYNTHETIC, k as u64);
        let Some(injected) = inject_random(&clean, kind, SYNTHETIC_INSTANCES, length, magnitude, s)? else {
            log::warn!("skipping {kind} ranking: series too short");
            continue;
        };
        let labels = injected.labels().expect("injection sets labels");
        let mut neg_ap = Vec::with_capacity(models.len());
        for m in models {
            let recon = m.reconstruct(&injected)?;
            let scores = point_errors(injected.values(), &recon)?;
            match auc_pr(&scores, labels) {
                Ok(ap) => neg_ap.push(-ap),
                Err(Error::UndefinedMetric(_)) => break,
                Err(e) => return Err(e),
            }
        }
        if neg_ap.len() != models.len() {
            log::warn!("skipping {kind} ranking: degenerate labels");
            continue;
        }
        out.push(Ranking {
            metric: format!("synthetic_{kind}"),
            order: order_by(&neg_ap),
        });
    }
    Ok(out)
}

fn z_rows(scores: &ScoreMatrix) -> Vec<Vec<f64>> {
    scores
        .rows
        .iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let sd = (r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
            if sd < crate::mts::STD_GUARD {
                vec![0.0; r.len()]
            } else {
                r.iter().map(|v| (v - mu) / sd).collect()
            }
        })
        .collect()
}

/// Euclidean distances between z-normalized score rows.
pub fn distance_matrix(scores: &ScoreMatrix) -> Vec<Vec<f64>> {
    let z = z_rows(scores);
    let n = z.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Closest-neighbor distance, smallest first.
pub fn rank_nearest_neighbor(d: &[Vec<f64>]) -> Ranking {
    let n = d.len();
    let keys: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| d[i][j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ranking {
        metric: "nearest_neighbor".into(),
        order: order_by(&keys),
    }
}

fn assign(d: &[Vec<f64>], centers: &[usize]) -> Vec<usize> {
    (0..d.len())
        .map(|i| {
            if let Some(c) = centers.iter().position(|&c| c == i) {
                return c;
            }
            let mut best = 0;
            for (c, &m) in centers.iter().enumerate() {
                let (cur, cand) = (d[i][centers[best]], d[i][m]);
                if cand < cur || (cand == cur && m < centers[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn pam_cost(d: &[Vec<f64>], medoids: &[usize]) -> f64 {
    (0..d.len())
        .map(|i| medoids.iter().map(|&m| d[i][m]).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Rank by cluster, larger clusters first; within a cluster the center comes
/// first, then members by `closeness` ascending.
fn cluster_order(centers: &[usize], labels: &[usize], closeness: &[f64]) -> Vec<usize> {
    let mut sizes = vec![0usize; centers.len()];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    idx.sort_by(|&a, &b| {
        sizes[labels[b]]
            .cmp(&sizes[labels[a]])
            .then((centers[labels[b]] == b).cmp(&(centers[labels[a]] == a)))
            .then(closeness[a].total_cmp(&closeness[b]))
            .then(a.cmp(&b))
    });
    idx
}

/// PAM with `k = min(2, n − 1)` medoids from a seeded start.
pub fn k_medoids(d: &[Vec<f64>], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = d.len();
    let k = 2.min(n - 1).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MEDOIDS, 0));
    let mut medoids: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
    medoids.sort_unstable();
    let mut cost = pam_cost(d, &medoids);
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for slot in 0..k {
            for o in (0..n).filter(|o| !medoids.contains(o)) {
                let mut trial = medoids.clone();
                trial[slot] = o;
                let c = pam_cost(d, &trial);
                if c < cost - 1e-12 && best.is_none_or(|(bc, _, _)| c < bc) {
                    best = Some((c, slot, o));
                }
            }
        }
        match best {
            Some((c, slot, o)) => {
                medoids[slot] = o;
                cost = c;
            }
            None => break,
        }
    }
    // the medoid of each cluster is its most central member, lowest index on ties
    for _ in 0..n {
        let labels = assign(d, &medoids);
        let mut changed = false;
        for (c, m) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let total = |i: usize| members.iter().map(|&j| d[i][j]).sum::<f64>();
            let mut best = *m;
            for &i in &members {
                let (ti, tb) = (total(i), total(best));
                if ti < tb || (ti == tb && i < best) {
                    best = i;
                }
            }
            if best != *m {
                *m = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let labels = assign(d, &medoids);
    (medoids, labels)
}

pub fn rank_k_medoids(d: &[Vec<f64>], seed: u64) -> Ranking {
    let (medoids, labels) = k_medoids(d, seed);
    let closeness: Vec<f64> = (0..d.len()).map(|i| d[i][medoids[labels[i]]]).collect();
    Ranking {
        metric: "k_medoids".into(),
        order: cluster_order(&medoids, &labels, &closeness),
    }
}

/// Affinity propagation on `−d²` with the median similarity as preference.
/// Returns exemplars and labels, or `None` if the exemplar set does not settle.
pub fn affinity_propagation(d: &[Vec<f64>]) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = d.len();
    let mut s = vec![vec![0.0; n]; n];
    let mut off = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for k in 0..n {
            if i != k {
                s[i][k] = -d[i][k] * d[i][k];
                off.push(s[i][k]);
            }
        }
    }
    off.sort_by(f64::total_cmp);
    let pref = if off.len() % 2 == 1 {
        off[off.len() / 2]
    } else {
        (off[off.len() / 2 - 1] + off[off.len() / 2]) / 2.0
    };
    // a small penalty on later candidates breaks ties between identical rows
    // in favor of creation order
    let scale = off.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for (i, row) in s.iter_mut().enumerate() {
        row[i] = pref;
        for (k, v) in row.iter_mut().enumerate() {
            *v -= 1e-9 * scale * k as f64;
        }
    }

    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0;
    for _ in 0..AP_ITERATIONS {
        for i in 0..n {
            let mut first = (f64::NEG_INFINITY, usize::MAX);
            let mut second = f64::NEG_INFINITY;
            for k in 0..n {
                let v = a[i][k] + s[i][k];
                if v > first.0 {
                    second = first.0;
                    first = (v, k);
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let other = if k == first.1 { second } else { first.0 };
                let new = s[i][k] - other;
                r[i][k] = AP_DAMPING * r[i][k] + (1.0 - AP_DAMPING) * new;
            }
        }
        for k in 0..n {
            let pos: f64 = (0..n).filter(|&i| i != k).map(|i| r[i][k].max(0.0)).sum();
            for i in 0..n {
                let new = if i == k {
                    pos
                } else {
                    (r[k][k] + pos - r[i][k].max(0.0)).min(0.0)
                };
                a[i][k] = AP_DAMPING * a[i][k] + (1.0 - AP_DAMPING) * new;
            }
        }
        let exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        if !exemplars.is_empty() && exemplars == last {
            stable += 1;
            if stable >= AP_STABLE_ITERATIONS {
                let mut exemplars = exemplars;
                let labels = ap_assign(&s, &exemplars);
                // each cluster's exemplar becomes its member with the highest
                // total similarity to the rest of the cluster
                for (c, e) in exemplars.iter_mut().enumerate() {
                    let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                    let total = |k: usize| members.iter().map(|&i| s[i][k]).sum::<f64>();
                    let mut best = members[0];
                    for &k in &members[1..] {
                        if total(k) > total(best) {
                            best = k;
                        }
                    }
                    *e = best;
                }
                let labels = ap_assign(&s, &exemplars);
                return Some((exemplars, labels));
            }
        } else {
            stable = 0;
            last = exemplars;
        }
    }
    None
}

fn ap_assign(s: &[Vec<f64>], exemplars: &[usize]) -> Vec<usize> {
    (0..s.len())
        .map(|i| {
            if let Some(c) = exemplars.iter().position(|&e| e == i) {
                return c;
            }
            let mut best = 0;
            for (c, &e) in exemplars.iter().enumerate() {
                if s[i][e] > s[i][exemplars[best]] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn rank_affinity_propagation(d: &[Vec<f64>]) -> Ranking {
    match affinity_propagation(d) {
        Some((exemplars, labels)) => {
            // closeness = distance to the exemplar, i.e. similarity descending
            let closeness: Vec<f64> = (0..d.len()).map(|i| d[i][exemplars[labels[i]]]).collect();
            Ranking {
                metric: "affinity_propagation".into(),
                order: cluster_order(&exemplars, &labels, &closeness),
            }
        }
        None => {
            log::warn!("affinity propagation did not converge; using nearest-neighbor ranking");
            Ranking {
                metric: "affinity_propagation".into(),
                order: rank_nearest_neighbor(d).order,
            }
        }
    }
}

/// Farthest-first traversal starting from the most distant pair; the last
/// model selected is ranked first. Ties select the later model first.
pub fn rank_farthest_first(d: &[Vec<f64>]) -> Ranking {
    let n = d.len();
    let mut pair = (0, 1.min(n - 1));
    let mut far = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            if d[i][j] > far {
                far = d[i][j];
                pair = (i, j);
            }
        }
    }
    let total = |i: usize| d[i].iter().sum::<f64>();
    let (a, b) = pair;
    let mut selected = if n == 1 {
        vec![0]
    } else if total(a) > total(b) {
        vec![a, b]
    } else {
        vec![b, a]
    };
    while selected.len() < n {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|i| !selected.contains(i)) {
            let gap = selected.iter().map(|&s| d[i][s]).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(g, _)| gap >= g) {
                best = Some((gap, i));
            }
        }
        selected.push(best.expect("unselected model remains").1);
    }
    selected.reverse();
    Ranking {
        metric: "farthest_first".into(),
        order: selected,
    }
}

pub fn rank_centrality(scores: &ScoreMatrix, seed: u64) -> Result<Vec<Ranking>> {
    if scores.len() < 2 {
        return Err(Error::Invalid("centrality needs at least two models".into()));
    }
    let d = distance_matrix(scores);
    Ok(vec![
        rank_nearest_neighbor(&d),
        rank_k_medoids(&d, seed),
        rank_affinity_propagation(&d),
        rank_farthest_first(&d),
    ])
}

/// Borda points: position `p` (0-based) in a ranking of `n` earns `n − p`.
pub fn borda_points(table: &RankTable) -> Vec<u64> {
    let n = table.ids.len();
    let mut points = vec![0u64; n];
    for r in &table.rankings {
        for (p, &i) in r.order.iter().enumerate() {
            points[i] += (n - p) as u64;
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BordaSelection {
    /// Empty when ranking was skipped.
    pub points: Vec<u64>,
    /// Selected subset indices, best first.
    pub selected: Vec<usize>,
}

/// Top `k` by Borda points (ties by index); all models when `k ≥ n`.
pub fn borda_topk(table: &RankTable, k: usize) -> BordaSelection {
    let n = table.ids.len();
    if k >= n {
        return BordaSelection {
            points: Vec::new(),
            selected: (0..n).collect(),
        };
    }
    let points = borda_points(table);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| points[b].cmp(&points[a]).then(a.cmp(&b)));
    idx.truncate(k);
    BordaSelection { points, selected: idx }
}

/// Min-max normalize a row to `[0, 1]`; constant rows become 0.
pub fn min_max(row: &[f64]) -> Vec<f64> {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        row.iter().map(|v| (v - lo) / range).collect()
    } else {
        vec![0.0; row.len()]
    }
}

/// Mean of the selected rows after min-max normalization.
pub fn aggregate(scores: &ScoreMatrix, selected: &[usize]) -> Vec<f64> {
    let m = scores.rows[0].len();
    let mut out = vec![0.0; m];
    for &s in selected {
        for (o, v) in out.iter_mut().zip(min_max(&scores.rows[s])) {
            *o += v;
        }
    }
    let k = selected.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleOutcome {
    pub scores: ScoreMatrix,
    pub table: Option<RankTable>,
    pub selection: BordaSelection,
    pub final_score: Vec<f64>,
}

impl EnsembleOutcome {
    pub fn selected_ids(&self) -> Vec<String> {
        self.selection
            .selected
            .iter()
            .map(|&i| self.scores.ids[i].clone())
            .collect()
    }
}

/// Score the subset, rank it when `k < |subset|`, and average the top `k`.
pub fn run_ensemble(models: &[&ReconModel], ts: &TimeSeries, k: usize, seed: u64) -> Result<EnsembleOutcome> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let (scores, recons) = score_models(models, ts)?;
    let table = if k < models.len() {
        let mut rankings = rank_prediction_error(ts, &recons);
        rankings.extend(rank_synthetic(models, ts, seed)?);
        rankings.extend(rank_centrality(&scores, seed)?);
        Some(RankTable {
            ids: scores.ids.clone(),
            rankings,
        })
    } else {
        None
    };
    let selection = match &table {
        Some(t) => borda_topk(t, k),
        None => BordaSelection {
            points: Vec::new(),
            selected: (0..models.len()).collect(),
        },
    };
    let final_score = aggregate(&scores, &selection.selected);
    Ok(EnsembleOutcome {
        scores,
        table,
        selection,
        final_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize, orders: &[&[usize]]) -> RankTable {
        RankTable {
            ids: (0..n).map(|i| format!("m{i}")).collect(),
            rankings: orders
                .iter()
                .enumerate()
                .map(|(r, o)| Ranking {
                    metric: format!("r{r}"),
                    order: o.to_vec(),
                })
                .collect(),
        }
    }

    fn matrix(rows: Vec<Vec<f64>>) -> ScoreMatrix {
        ScoreMatrix {
            ids: (0..rows.len()).map(|i| format!("m{i}")).collect(),
            rows,
        }
    }

    #[test]
    fn borda_hand_count() {
        let t = table(3, &[&[0, 1, 2], &[1, 0, 2], &[0, 2, 1]]);
        assert_eq!(borda_points(&t), [8, 6, 4]);
        assert_eq!(borda_topk(&t, 2).selected, [0, 1]);
        let order: &[usize] = &[2, 0, 3, 1];
        let unanimous = table(4, &[order; 13]);
        assert_eq!(borda_topk(&unanimous, 2).selected, [2, 0]);
        assert_eq!(borda_topk(&t, 3).selected, [0, 1, 2]);
        assert!(borda_topk(&t, 3).points.is_empty());
    }

    #[test]
    fn score_of_known_reconstruction() {
        // zero network on X = [1, 3] at a single point: (1 + 9) / 2 = 5
        let zero = ReconModel::from_theta("z", 1, &[], 1, vec![0.0, 0.0]).unwrap();
        let ts = TimeSeries::from_columns(&[vec![1.0], vec![3.0]]).unwrap();
        let (s, _) = score_models(&[&zero], &ts).unwrap();
        assert_eq!(s.rows[0], [5.0]);
    }

    #[test]
    fn prediction_error_rankings() {
        let ts = TimeSeries::from_columns(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let perfect = ts.values().clone();
        let noisy = Matrix::new(4, 1, vec![1.5, 2.0, 2.0, 4.0]).unwrap();
        let worse = Matrix::new(4, 1, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let r = rank_prediction_error(&ts, &[noisy, worse, perfect]);
        for ranking in &r {
            assert_eq!(ranking.order[0], 2, "{}", ranking.metric);
        }
        assert_eq!(r[0].order, r[2].order);
    }

    #[test]
    fn outlier_ranked_last_by_centrality() {
        let base: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.3).sin().abs()).collect();
        let outlier: Vec<f64> = (0..50).map(|i| if i % 7 == 0 { 3.0 } else { 0.1 }).collect();
        let s = matrix(vec![base.clone(), outlier, base.clone(), base]);
        for r in rank_centrality(&s, 1).unwrap() {
            assert_eq!(*r.order.last().unwrap(), 1, "{}", r.metric);
        }
    }

    #[test]
    fn two_models_keep_creation_order() {
        let s = matrix(vec![vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.5]]);
        for r in rank_centrality(&s, 3).unwrap() {
            assert_eq!(r.order, [0, 1], "{}", r.metric);
        }
    }

    #[test]
    fn centrality_ignores_row_scale() {
        let rows = vec![
            vec![0.1, 0.5, 0.2, 0.9, 0.3],
            vec![0.2, 0.4, 0.1, 0.8, 0.5],
            vec![0.9, 0.1, 0.7, 0.2, 0.3],
            vec![0.3, 0.3, 0.6, 0.1, 0.0],
        ];
        let doubled = rows.iter().map(|r| r.iter().map(|v| v * 2.0).collect()).collect();
        let a = rank_centrality(&matrix(rows), 5).unwrap();
        let b = rank_centrality(&matrix(doubled), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_normalizes_rows() {
        let s = matrix(vec![vec![0.0, 10.0, 5.0], vec![1.0, 1.0, 1.0]]);
        assert_eq!(aggregate(&s, &[0]), [0.0, 1.0, 0.5]);
        assert_eq!(aggregate(&s, &[0, 1]), [0.0, 0.5, 0.25]);
    }
}
