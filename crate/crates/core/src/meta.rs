//! Error prediction for pool models on unseen data, and pool expansion.
//!
//! The meta-model maps `dataset features ⊕ model fingerprint` to the model's
//! mean per-point reconstruction error on that dataset. Inputs and targets are
//! standardized with statistics computed at training time; predictions are
//! reported in standardized units and the match score is their negation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{ParamRecord, RecordKind};
use crate::error::{Error, Result};
use crate::features::{extract_features, FEATURE_LEN};
use crate::model::{average_parameters, mse_loss, transfer_parameters, ReconModel, TrainConfig};
use crate::mts::{TimeSeries, STD_GUARD};
use crate::nn::{narrow, widen, Architecture, Trace};
use crate::pool::{derive_seed, train_member, ModelPool, Origin, STREAM_TRANSFER};

pub const META_INPUT: usize = 2 * FEATURE_LEN;
pub const META_HIDDEN: [usize; 2] = [32, 16];
const STREAM_META_FOLDS: u64 = 11;
const STREAM_META_INIT: u64 = 12;
const STREAM_META_SHUFFLE: u64 = 13;

/// Mean per-point reconstruction error of `model` on `ts`.
pub fn observed_error(model: &ReconModel, ts: &TimeSeries) -> Result<f64> {
    let recon = model.reconstruct(ts)?;
    Ok(mse_loss(ts.values(), &recon)? / ts.len() as f64)
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowTag {
    Initial,
    Expansion,
    Refresh,
    RefreshStale,
}

impl RowTag {
    pub fn name(self) -> &'static str {
        match self {
            RowTag::Initial => "initial",
            RowTag::Expansion => "expansion",
            RowTag::Refresh => "refresh",
            RowTag::RefreshStale => "refresh_stale",
        }
    }
}

impl fmt::Display for RowTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RowTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(RowTag::Initial),
            "expansion" => Ok(RowTag::Expansion),
            "refresh" => Ok(RowTag::Refresh),
            "refresh_stale" => Ok(RowTag::RefreshStale),
            _ => Err(Error::Invalid(format!("unknown row tag '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaRow {
    pub dataset: String,
    pub model_id: String,
    pub tag: RowTag,
    pub target: f64,
    pub features: Vec<f64>,
    pub fingerprint: Vec<f64>,
}

impl MetaRow {
    fn input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(META_INPUT);
        v.extend_from_slice(&self.features);
        v.extend_from_slice(&self.fingerprint);
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaStore {
    rows: Vec<MetaRow>,
}

impl MetaStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[MetaRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: MetaRow) -> Result<()> {
        if row.features.len() != FEATURE_LEN || row.fingerprint.len() != FEATURE_LEN {
            return Err(Error::Shape(format!(
                "meta rows need {FEATURE_LEN} features and {FEATURE_LEN} fingerprint values"
            )));
        }
        if !(row.target >= 0.0 && row.target.is_finite()) {
            return Err(Error::Invalid(format!("observed error {} is not a finite non-negative value", row.target)));
        }
        if row.features.iter().chain(&row.fingerprint).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("meta row holds a non-finite value".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Rows usable for training (stale rows excluded).
    pub fn training_rows(&self) -> impl Iterator<Item = &MetaRow> {
        self.rows.iter().filter(|r| r.tag != RowTag::RefreshStale)
    }

    /// Dataset tags in order of first appearance, with their feature vectors.
    pub fn datasets(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|(d, _)| d == &r.dataset) {
                out.push((r.dataset.clone(), r.features.clone()));
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["dataset".to_string(), "model_id".into(), "tag".into(), "target".into()];
        header.extend((0..FEATURE_LEN).map(|i| format!("f{i:02}")));
        header.extend((0..FEATURE_LEN).map(|i| format!("p{i:02}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.dataset.clone(), r.model_id.clone(), r.tag.to_string(), r.target.to_string()];
            rec.extend(r.features.iter().chain(&r.fingerprint).map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::integrity(path, e.to_string()))?;
        Self::read_csv(bytes.as_slice()).map_err(|e| Error::integrity(path, e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let expected = 4 + 2 * FEATURE_LEN;
        let width = r.headers().map_err(csv_err)?.len();
        if width != expected {
            return Err(Error::Parse {
                row: 0,
                msg: format!("expected {expected} columns, found {width}"),
            });
        }
        let mut store = MetaStore::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            let num = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("'{}' is not a number", &rec[j]),
                })
            };
            let tag = rec[2].parse::<RowTag>().map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            let features = (4..4 + FEATURE_LEN).map(num).collect::<Result<Vec<_>>>()?;
            let fingerprint = (4 + FEATURE_LEN..expected).map(num).collect::<Result<Vec<_>>>()?;
            store
                .push(MetaRow {
                    dataset: rec[0].to_string(),
                    model_id: rec[1].to_string(),
                    tag,
                    target: num(3)?,
                    features,
                    fingerprint,
                })
                .map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        }
        Ok(store)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// One row per pool model for a dataset.
pub fn rows_for_dataset(
    pool: &ModelPool,
    tag: &str,
    ts: &TimeSeries,
    features: &[f64],
    row_tag: RowTag,
) -> Result<Vec<MetaRow>> {
    pool.models()
        .iter()
        .map(|m| {
            Ok(MetaRow {
                dataset: tag.to_string(),
                model_id: m.id().to_string(),
                tag: row_tag,
                target: observed_error(m, ts)?,
                features: features.to_vec(),
                fingerprint: pool.fingerprint_of(m.id()).expect("pool models have fingerprints").to_vec(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Meta-model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Early stop after this many epochs without validation improvement.
    pub patience: usize,
    /// Halve the learning rate after this many epochs without training improvement.
    pub plateau: usize,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 400,
            learning_rate: 0.02,
            batch_size: 16,
            patience: 10,
            plateau: 20,
            seed: 0,
        }
    }
}

/// Anything that predicts a standardized error for (dataset, model) pairs.
pub trait ErrorPredictor {
    fn predicted_z(&self, features: &[f64], fingerprint: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    arch: Architecture,
    theta: Vec<f32>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    target_mean: f64,
    target_std: f64,
    version: u64,
    fold: usize,
    validation_loss: f64,
}

impl MetaModel {
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Index of the selected cross-validation fold.
    pub fn fold(&self) -> usize {
        self.fold
    }

    pub fn validation_loss(&self) -> f64 {
        self.validation_loss
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    fn standardize(&self, features: &[f64], fingerprint: &[f64]) -> Vec<f64> {
        features
            .iter()
            .chain(fingerprint)
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Predicted error in the original units.
    pub fn predict(&self, features: &[f64], fingerprint: &[f64]) -> f64 {
        self.predicted_z(features, fingerprint) * self.target_std + self.target_mean
    }

    pub fn to_record(&self) -> ParamRecord {
        let mut extra = vec![
            self.version as f64,
            self.fold as f64,
            self.validation_loss,
            self.target_mean,
            self.target_std,
        ];
        extra.extend_from_slice(&self.input_mean);
        extra.extend_from_slice(&self.input_std);
        ParamRecord {
            kind: RecordKind::Meta,
            id: "meta".into(),
            tag: format!("v{}", self.version),
            segment_length: 0,
            stride: 0,
            sizes: self.arch.sizes().iter().map(|&s| s as u32).collect(),
            theta: self.theta.clone(),
            frozen: vec![false; self.theta.len()],
            extra,
        }
    }

    pub fn from_record(rec: ParamRecord) -> std::result::Result<Self, String> {
        if rec.kind != RecordKind::Meta {
            return Err("not a meta-model record".into());
        }
        let sizes: Vec<usize> = rec.sizes.iter().map(|&s| s as usize).collect();
        let mut expected = vec![META_INPUT];
        expected.extend_from_slice(&META_HIDDEN);
        expected.push(1);
        if sizes != expected {
            return Err(format!("unexpected layer widths {sizes:?}"));
        }
        let arch = Architecture::new(sizes);
        if arch.param_count() != rec.theta.len() {
            return Err("parameter count does not match layer widths".into());
        }
        if rec.extra.len() != 5 + 2 * META_INPUT {
            return Err("normalization statistics missing".into());
        }
        let e = &rec.extra;
        Ok(Self {
            arch,
            theta: rec.theta,
            version: e[0] as u64,
            fold: e[1] as usize,
            validation_loss: e[2],
            target_mean: e[3],
            target_std: e[4],
            input_mean: e[5..5 + META_INPUT].to_vec(),
            input_std: e[5 + META_INPUT..].to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_record().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec = ParamRecord::read(path)?;
        Self::from_record(rec).map_err(|msg| Error::integrity(path, msg))
    }
}

impl ErrorPredictor for MetaModel {
    fn predicted_z(&self, features: &[f64], fingerprint: &[f64]) -> f64 {
        let x = self.standardize(features, fingerprint);
        self.arch.forward(&widen(&self.theta), &x)[0]
    }
}

fn column_stats(rows: &[Vec<f64>], width: usize) -> (Vec<f64>, Vec<f64>) {
    let k = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut std = vec![0.0; width];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / k).sqrt();
        if *s < STD_GUARD {
            *s = 1.0;
        }
    }
    (mean, std)
}

fn mean_sq(arch: &Architecture, theta: &[f64], xs: &[Vec<f64>], ys: &[f64], idx: &[usize]) -> f64 {
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let r = arch.forward(theta, &xs[i])[0] - ys[i];
            r * r
        })
        .sum();
    total / idx.len() as f64
}

struct FoldFit {
    theta: Vec<f64>,
    validation: f64,
}

fn fit_fold(
    arch: &Architecture,
    xs: &[Vec<f64>],
    ys: &[f64],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &MetaTrainConfig,
    fold: u64,
) -> FoldFit {
    let mut theta = widen(&arch.init(derive_seed(cfg.seed, STREAM_META_INIT, fold)));
    // output layer starts at zero, so an untrained model predicts the target mean
    let (w_out, _) = arch.layer_offsets(arch.sizes().len() - 2);
    theta[w_out..].iter_mut().for_each(|t| *t = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_META_SHUFFLE, fold));
    let mut order = train_idx.to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut trace = Trace::default();
    let mut lr = cfg.learning_rate;

    let mut best = FoldFit {
        validation: mean_sq(arch, &theta, xs, ys, val_idx),
        theta: theta.clone(),
    };
    let mut best_train = mean_sq(arch, &theta, xs, ys, train_idx);
    let (mut since_val, mut since_train) = (0usize, 0usize);

    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / chunk.len() as f64;
            for &i in chunk {
                arch.forward_trace(&theta, &xs[i], &mut trace);
                let r = trace.output()[0] - ys[i];
                arch.backward(&theta, &trace, &[scale * r], &mut grad);
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            break;
        }
        let train_loss = mean_sq(arch, &theta, xs, ys, train_idx);
        if train_loss < best_train {
            best_train = train_loss;
            since_train = 0;
        } else {
            since_train += 1;
            if since_train >= cfg.plateau {
                lr *= 0.5;
                since_train = 0;
            }
        }
        let val = mean_sq(arch, &theta, xs, ys, val_idx);
        if val < best.validation {
            best = FoldFit {
                validation: val,
                theta: theta.clone(),
            };
            since_val = 0;
        } else {
            since_val += 1;
            if since_val >= cfg.patience {
                break;
            }
        }
    }
    best
}

/// K-fold training; returns the fold model with the lowest validation loss.
/// The version is one more than `previous`'s (or 1).
pub fn train_meta(
    store: &MetaStore,
    k_folds: usize,
    cfg: &MetaTrainConfig,
    previous: Option<&MetaModel>,
) -> Result<MetaModel> {
    if k_folds < 2 {
        return Err(Error::Config("meta folds must be at least 2".into()));
    }
    let rows: Vec<&MetaRow> = store.training_rows().collect();
    if rows.len() < 2 * k_folds {
        return Err(Error::Data(format!(
            "meta training needs at least {} rows, store has {}",
            2 * k_folds,
            rows.len()
        )));
    }
    let raw: Vec<Vec<f64>> = rows.iter().map(|r| r.input()).collect();
    let (input_mean, input_std) = column_stats(&raw, META_INPUT);
    let targets: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.target]).collect();
    let (tm, ts) = column_stats(&targets, 1);
    let (target_mean, target_std) = (tm[0], ts[0]);

    let xs: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            r.iter()
                .zip(input_mean.iter().zip(&input_std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| (r.target - target_mean) / target_std).collect();

    let mut perm: Vec<usize> = (0..rows.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_META_FOLDS, 0)));

    let mut sizes = vec![META_INPUT];
    sizes.extend_from_slice(&META_HIDDEN);
    sizes.push(1);
    let arch = Architecture::new(sizes);

    let mut selected: Option<(usize, FoldFit)> = None;
    for fold in 0..k_folds {
        let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..perm.len()).partition(|p| p % k_folds == fold);
        let val_idx: Vec<usize> = val_idx.iter().map(|&p| perm[p]).collect();
        let train_idx: Vec<usize> = train_idx.iter().map(|&p| perm[p]).collect();
        let fit = fit_fold(&arch, &xs, &ys, &train_idx, &val_idx, cfg, fold as u64);
        log::debug!("meta fold {fold}: validation loss {:.6}", fit.validation);
        if selected.as_ref().is_none_or(|(_, b)| fit.validation < b.validation) {
            selected = Some((fold, fit));
        }
    }
    let (fold, fit) = selected.expect("at least two folds");
    Ok(MetaModel {
        arch,
        theta: narrow(&fit.theta),
        input_mean,
        input_std,
        target_mean,
        target_std,
        version: previous.map_or(1, |p| p.version + 1),
        fold,
        validation_loss: fit.validation,
    })
}

/// Train with `min(k, rows / 2)` folds, or return `None` when fewer than four
/// rows are usable.
pub fn train_meta_adaptive(
    store: &MetaStore,
    k_folds: usize,
    cfg: &MetaTrainConfig,
    previous: Option<&MetaModel>,
) -> Result<Option<MetaModel>> {
    let usable = store.training_rows().count();
    let k = k_folds.min(usable / 2);
    if k < 2 {
        log::warn!("only {usable} usable meta rows; meta-model not trained");
        return Ok(None);
    }
    train_meta(store, k, cfg, previous).map(Some)
}

// ---------------------------------------------------------------------------
// Matching and expansion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionPolicy {
    pub eps_model: f64,
    pub eps_judge_factor: f64,
}

impl Default for ExpansionPolicy {
    fn default() -> Self {
        Self {
            eps_model: 0.8,
            eps_judge_factor: 0.34,
        }
    }
}

impl ExpansionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_judge_factor > 0.0 && self.eps_judge_factor <= 1.0) {
            return Err(Error::Config("eps_judge_factor must lie in (0, 1]".into()));
        }
        if !self.eps_model.is_finite() {
            return Err(Error::Config("eps_model must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reuse,
    CreateNew,
}

/// `Reuse` iff `subset > factor · pool`.
pub fn decide(subset: usize, pool: usize, eps_judge_factor: f64) -> Decision {
    if subset as f64 > eps_judge_factor * pool as f64 {
        Decision::Reuse
    } else {
        Decision::CreateNew
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Match score of every pool model, in pool order.
    pub scores: Vec<(String, f64)>,
    /// Ids whose score exceeds `eps_model`, in pool order.
    pub subset: Vec<String>,
    pub decision: Decision,
}

/// Score every pool model on a dataset with features `features`.
pub fn match_models(
    predictor: &dyn ErrorPredictor,
    pool: &ModelPool,
    features: &[f64],
    policy: &ExpansionPolicy,
) -> MatchResult {
    let scores: Vec<(String, f64)> = pool
        .models()
        .iter()
        .map(|m| {
            let fp = pool.fingerprint_of(m.id()).expect("pool models have fingerprints");
            (m.id().to_string(), 0.0 - predictor.predicted_z(features, fp))
        })
        .collect();
    let subset: Vec<String> = scores
        .iter()
        .filter(|(_, s)| *s > policy.eps_model)
        .map(|(id, _)| id.clone())
        .collect();
    let decision = decide(subset.len(), pool.len(), policy.eps_judge_factor);
    MatchResult {
        scores,
        subset,
        decision,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferSource {
    #[default]
    Last,
    Average,
}

impl FromStr for TransferSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(TransferSource::Last),
            "average" => Ok(TransferSource::Average),
            _ => Err(Error::Config(format!("unknown transfer source '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpansionOutcome {
    pub new_id: String,
    pub rows_added: usize,
    pub meta: Option<MetaModel>,
}

/// Train a new model on `ts`, append it to the pool, add one store row per
/// pool model for this dataset and retrain the meta-model. Existing models are
/// not modified.
#[allow(clippy::too_many_arguments)]
pub fn expand_pool(
    pool: &mut ModelPool,
    tag: &str,
    ts: &TimeSeries,
    cfg: &TrainConfig,
    transfer: TransferSource,
    store: &mut MetaStore,
    meta: Option<&MetaModel>,
    k_folds: usize,
    meta_cfg: &MetaTrainConfig,
) -> Result<ExpansionOutcome> {
    let index = pool.manifest().next_id;
    let seed = derive_seed(cfg.seed, STREAM_TRANSFER, index);
    let (source_model, source_id) = match transfer {
        TransferSource::Last => {
            let last = pool.last().ok_or_else(|| Error::Invalid("cannot expand an empty pool".into()))?;
            (last.clone(), Some(last.id().to_string()))
        }
        TransferSource::Average => (average_parameters(pool.models(), "average")?, None),
    };
    let start = transfer_parameters(&source_model, cfg.beta, seed)?;
    let mut trained = train_member(&start, ts, pool.models(), cfg, index)
        .map_err(|e| e.with_divergence_context(format!("expansion on {tag}")))?;
    trained.set_trained_on(tag);
    let new_id = pool.add_model(trained, Origin::Expansion, source_id)?;

    let features = extract_features(ts)?;
    let rows = rows_for_dataset(pool, tag, ts, &features, RowTag::Expansion)?;
    let rows_added = rows.len();
    for r in rows {
        store.push(r)?;
    }
    let meta = train_meta_adaptive(store, k_folds, meta_cfg, meta)?;
    if let Some(m) = &meta {
        pool.set_meta_version(m.version());
    }
    Ok(ExpansionOutcome {
        new_id,
        rows_added,
        meta,
    })
}

/// Regenerate fingerprints and targets after the pool changed by merging.
///
/// Every row moves to the current descendant of its model (itself when it
/// survived); rows that land on the same (dataset, model) pair collapse into
/// one. Dataset features are kept. Targets are recomputed for datasets present
/// in `catalog`; rows of other datasets keep the mean of their old targets and
/// are tagged stale.
pub fn refresh_store(
    pool: &ModelPool,
    store: &MetaStore,
    catalog: &BTreeMap<String, TimeSeries>,
) -> Result<MetaStore> {
    let mut out = MetaStore::new();
    for (dataset, features) in store.datasets() {
        let mut old: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in store.rows().iter().filter(|r| r.dataset == dataset) {
            match pool.current_descendant(&r.model_id) {
                Some(id) => old.entry(id).or_default().push(r.target),
                None => log::warn!("meta row for unknown model {} dropped", r.model_id),
            }
        }
        let ts = catalog.get(&dataset);
        if ts.is_none() {
            log::warn!("dataset {dataset} unavailable; its meta rows are marked stale");
        }
        for m in pool.models() {
            let Some(targets) = old.get(m.id()) else { continue };
            let (tag, target) = match ts {
                Some(ts) => (RowTag::Refresh, observed_error(m, ts)?),
                None => (RowTag::RefreshStale, targets.iter().sum::<f64>() / targets.len() as f64),
            };
            out.push(MetaRow {
                dataset: dataset.clone(),
                model_id: m.id().to_string(),
                tag,
                target,
                features: features.clone(),
                fingerprint: pool.fingerprint_of(m.id()).expect("pool models have fingerprints").to_vec(),
            })?;
        }
    }
    Ok(out)
}
