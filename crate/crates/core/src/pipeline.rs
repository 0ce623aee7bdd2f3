//! End-to-end flows over a pool directory: build, detect and the on-disk state.
//!
//! Pool directory layout:
//!
//! ```text
//! manifest.json        ids, order, lineage, versions, fingerprints
//! models/<id>.bin      reconstruction models
//! probe.csv            the fingerprint probe series
//! meta/meta.bin        meta-model (absent while too few rows exist)
//! meta/store.csv       meta training rows
//! data/<tag>.csv       normalized training series, used to refresh targets
//! config.toml          configuration the pool was built with
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::detect::{evaluate, identify, DetectionResult, Metrics};
use crate::ensemble::{run_ensemble, EnsembleOutcome};
use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::merge::{merge_round, refresh_meta_after_merge, MergeTiming};
use crate::meta::{
    expand_pool, match_models, rows_for_dataset, train_meta_adaptive, Decision, MetaModel, MetaStore, RowTag,
};
use crate::mts::{load_csv, normalize, save_csv, TimeSeries};
use crate::pool::{construct_pool, load_pool, save_pool, MergeRecord, ModelPool};

pub const CONFIG_FILE: &str = "config.toml";
pub const META_DIR: &str = "meta";
pub const META_MODEL_FILE: &str = "meta.bin";
pub const STORE_FILE: &str = "store.csv";
pub const DATA_DIR: &str = "data";
pub const LOCK_FILE: &str = ".lock";
pub const REPORT_FORMAT: u32 = 1;

/// Every `*.csv` in `dir`, sorted by file name, tagged by file stem.
pub fn load_datasets(dir: &Path, has_labels: bool) -> Result<Vec<(String, TimeSeries)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no datasets in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let tag = p.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
            let ts = load_csv(p, has_labels).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?;
            Ok((tag, ts))
        })
        .collect()
}

/// Exclusive marker file held while a command mutates a pool directory.
#[derive(Debug)]
pub struct PoolLock {
    path: PathBuf,
}

impl PoolLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "pool {} is locked ({} exists)",
                dir.display(),
                LOCK_FILE
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for PoolLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Pool, meta store, meta-model and training catalog, loaded together.
#[derive(Debug, Clone)]
pub struct PoolState {
    pub config: Config,
    pub pool: ModelPool,
    pub store: MetaStore,
    pub meta: Option<MetaModel>,
    /// Normalized series by dataset tag.
    pub catalog: BTreeMap<String, TimeSeries>,
}

/// Train the initial pool, the meta store and the meta-model.
pub fn build(config: &Config, datasets: &[(String, TimeSeries)]) -> Result<PoolState> {
    config.validate()?;
    if datasets.is_empty() {
        return Err(Error::Data("no datasets".into()));
    }
    let mut normalized = Vec::with_capacity(datasets.len());
    let mut catalog = BTreeMap::new();
    for (tag, ts) in datasets {
        if catalog.contains_key(tag) {
            return Err(Error::Data(format!("duplicate dataset tag '{tag}'")));
        }
        let n = normalize(ts)?.0.values_only();
        catalog.insert(tag.clone(), n.clone());
        normalized.push((tag.clone(), n));
    }
    let mut pool = construct_pool(&normalized, &config.shape(), &config.train_config())?;
    let mut store = MetaStore::new();
    for (tag, ts) in &normalized {
        let features = extract_features(ts)?;
        for row in rows_for_dataset(&pool, tag, ts, &features, RowTag::Initial)? {
            store.push(row)?;
        }
    }
    let meta = train_meta_adaptive(&store, config.meta_folds, &config.meta_config(), None)?;
    if let Some(m) = &meta {
        pool.set_meta_version(m.version());
    }
    Ok(PoolState {
        config: config.clone(),
        pool,
        store,
        meta,
        catalog,
    })
}

impl PoolState {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_pool(&self.pool, dir)?;
        let meta_dir = dir.join(META_DIR);
        fs::create_dir_all(&meta_dir)?;
        let meta_path = meta_dir.join(META_MODEL_FILE);
        match &self.meta {
            Some(m) => m.save(&meta_path)?,
            None if meta_path.exists() => fs::remove_file(&meta_path)?,
            None => {}
        }
        self.store.save(&meta_dir.join(STORE_FILE))?;
        let data_dir = dir.join(DATA_DIR);
        fs::create_dir_all(&data_dir)?;
        for (tag, ts) in &self.catalog {
            save_csv(ts, data_dir.join(format!("{tag}.csv")))?;
        }
        fs::write(dir.join(CONFIG_FILE), self.config.to_toml_string()?)?;
        Ok(())
    }

    /// Load a pool directory. `config` replaces the stored configuration when
    /// given; its model shape must match the pool's.
    pub fn load(dir: &Path, config: Option<Config>) -> Result<Self> {
        let pool = load_pool(dir)?;
        let config = match config {
            Some(c) => c,
            None => {
                let path = dir.join(CONFIG_FILE);
                let text = fs::read_to_string(&path).map_err(|e| Error::integrity(&path, e.to_string()))?;
                Config::from_toml_str(&text).map_err(|e| Error::integrity(&path, e.to_string()))?
            }
        };
        if config.shape() != *pool.shape() {
            return Err(Error::Config(format!(
                "configured model shape {:?} is incompatible with the pool's {:?}",
                config.shape(),
                pool.shape()
            )));
        }
        let meta_dir = dir.join(META_DIR);
        let store_path = meta_dir.join(STORE_FILE);
        let store = MetaStore::load(&store_path).map_err(|e| match e {
            Error::Io(io) => Error::integrity(&store_path, io.to_string()),
            other => other,
        })?;
        let meta_path = meta_dir.join(META_MODEL_FILE);
        let meta = if meta_path.exists() {
            Some(MetaModel::load(&meta_path)?)
        } else {
            None
        };
        let mut catalog = BTreeMap::new();
        for (tag, _) in store.datasets() {
            let path = dir.join(DATA_DIR).join(format!("{tag}.csv"));
            if path.exists() {
                catalog.insert(tag, load_csv(&path, false)?.values_only());
            }
        }
        Ok(Self {
            config,
            pool,
            store,
            meta,
            catalog,
        })
    }

    /// Merge per the configured policy and refresh the meta side if anything merged.
    pub fn merge(&mut self) -> Result<Vec<MergeRecord>> {
        let merges = merge_round(&mut self.pool, &self.config.merge_policy())?;
        if !merges.is_empty() {
            let (store, meta) = refresh_meta_after_merge(
                &mut self.pool,
                &self.store,
                self.meta.as_ref(),
                &self.catalog,
                self.config.meta_folds,
                &self.config.meta_config(),
            )?;
            self.store = store;
            self.meta = meta;
        }
        Ok(merges)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    pub expansion: bool,
    pub merging: bool,
    /// Ground truth; falls back to the input's own labels.
    pub labels: Option<Vec<u8>>,
}

impl DetectOptions {
    pub fn full() -> Self {
        Self {
            expansion: true,
            merging: true,
            labels: None,
        }
    }

    pub fn frozen() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSection {
    /// Empty when no meta-model exists.
    pub scores: Vec<MatchScore>,
    pub subset: Vec<String>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSection {
    pub candidates: Vec<String>,
    pub k: usize,
    pub selected: Vec<String>,
    /// Borda points per candidate; empty when every candidate was selected.
    pub borda_points: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSection {
    pub method: String,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSection {
    pub ts_auc_pr: f64,
    pub range_auc_pr: f64,
    pub vus_pr: f64,
    pub max_buffer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectReport {
    pub format: u32,
    pub input: String,
    pub points: usize,
    pub seed: u64,
    pub config_hash: String,
    pub pool_version_before: u64,
    pub pool_version: u64,
    pub meta_version: u64,
    pub pool_size: usize,
    #[serde(rename = "match")]
    pub matching: MatchSection,
    pub expanded: Option<String>,
    pub merges: Vec<MergeRecord>,
    pub ensemble: EnsembleSection,
    pub threshold: ThresholdSection,
    pub anomaly_points: usize,
    /// Inclusive `[start, end]` index pairs.
    pub ranges: Vec<(usize, usize)>,
    pub metrics: Option<MetricsSection>,
    pub warnings: Vec<String>,
}

impl DetectReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct DetectRun {
    pub report: DetectReport,
    pub outcome: EnsembleOutcome,
    pub detection: DetectionResult,
    /// Whether the pool, store or meta-model changed.
    pub changed: bool,
}

/// Tag for a detection input: its name plus a digest of the normalized values.
pub fn input_tag(name: &str, ts: &TimeSeries) -> String {
    let mut h = Sha256::new();
    for v in ts.values().as_slice() {
        h.update(v.to_le_bytes());
    }
    let digest: String = h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect();
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}-{digest}")
}

/// Match, optionally expand, ensemble, threshold and optionally merge.
pub fn detect(state: &mut PoolState, name: &str, raw: &TimeSeries, opts: &DetectOptions) -> Result<DetectRun> {
    let cfg = state.config.clone();
    cfg.validate()?;
    let (ts, _) = normalize(raw)?;
    let labels = opts.labels.clone().or_else(|| raw.labels().map(<[u8]>::to_vec));
    if let Some(l) = &labels {
        if l.len() != ts.len() {
            return Err(Error::Shape(format!("{} labels for {} points", l.len(), ts.len())));
        }
    }
    let tag = input_tag(name, &ts);
    let version_before = state.pool.manifest().pool_version;
    let mut warnings = Vec::new();
    let mut merges = Vec::new();
    let mut changed = false;

    if opts.merging && cfg.merge_timing == MergeTiming::BeforeTest {
        merges.extend(state.merge()?);
    }

    let features = extract_features(&ts)?;
    let matching = match &state.meta {
        Some(meta) => {
            let r = match_models(meta, &state.pool, &features, &cfg.expansion_policy());
            MatchSection {
                scores: r.scores.into_iter().map(|(id, score)| MatchScore { id, score }).collect(),
                subset: r.subset,
                decision: r.decision,
            }
        }
        None => {
            warnings.push("no meta-model; no model counts as matched".to_string());
            MatchSection {
                scores: Vec::new(),
                subset: Vec::new(),
                decision: Decision::CreateNew,
            }
        }
    };
    let mut subset = matching.subset.clone();

    let mut expanded = None;
    if matching.decision == Decision::CreateNew && opts.expansion {
        if state.catalog.contains_key(&tag) {
            warnings.push(format!("input {tag} was already used for expansion; pool not expanded"));
        } else {
            let outcome = expand_pool(
                &mut state.pool,
                &tag,
                &ts,
                &cfg.train_config(),
                cfg.transfer,
                &mut state.store,
                state.meta.as_ref(),
                cfg.meta_folds,
                &cfg.meta_config(),
            )?;
            state.catalog.insert(tag.clone(), ts.values_only());
            state.meta = outcome.meta;
            subset.push(outcome.new_id.clone());
            expanded = Some(outcome.new_id);
            changed = true;
        }
    }
    if subset.is_empty() {
        log::warn!("no matching models; using the whole pool");
        warnings.push("no matching models; the whole pool was used".to_string());
        subset = state.pool.ids();
    }
    // current pool order
    let models: Vec<_> = state
        .pool
        .models()
        .iter()
        .filter(|m| subset.iter().any(|s| s == m.id()))
        .collect();
    let outcome = run_ensemble(&models, &ts, cfg.k, cfg.seed)?;
    let epsilon = cfg.threshold.threshold(&outcome.final_score)?;
    let detection = identify(&outcome.final_score, epsilon);

    let metrics = match &labels {
        Some(l) => match evaluate(&outcome.final_score, l, cfg.vus_max_buffer) {
            Ok(Metrics {
                ts_auc_pr,
                range_auc_pr,
                vus_pr,
            }) => Some(MetricsSection {
                ts_auc_pr,
                range_auc_pr,
                vus_pr,
                max_buffer: cfg.vus_max_buffer,
            }),
            Err(e) => {
                warnings.push(format!("metrics skipped: {e}"));
                None
            }
        },
        None => None,
    };

    if opts.merging && cfg.merge_timing == MergeTiming::AfterTest {
        merges.extend(state.merge()?);
    }
    changed |= !merges.is_empty();

    let report = DetectReport {
        format: REPORT_FORMAT,
        input: name.to_string(),
        points: ts.len(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        pool_version_before: version_before,
        pool_version: state.pool.manifest().pool_version,
        meta_version: state.pool.manifest().meta_version,
        pool_size: state.pool.len(),
        matching,
        expanded,
        merges,
        ensemble: EnsembleSection {
            candidates: outcome.scores.ids.clone(),
            k: cfg.k,
            selected: outcome.selected_ids(),
            borda_points: outcome.selection.points.clone(),
        },
        threshold: ThresholdSection {
            method: cfg.threshold.name().to_string(),
            epsilon,
        },
        anomaly_points: detection.labels.iter().filter(|&&l| l == 1).count(),
        ranges: detection.ranges.clone(),
        metrics,
        warnings,
    };
    Ok(DetectRun {
        report,
        outcome,
        detection,
        changed,
    })
}

/// One numeric column of a headed CSV: the first header found in `names`,
/// otherwise the last column.
pub fn load_column(path: &Path, names: &[&str]) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 0, msg: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Data(format!("{}: no columns", path.display())));
    }
    let col = names
        .iter()
        .find_map(|n| headers.iter().position(|h| h == *n))
        .unwrap_or(headers.len() - 1);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row: i + 1, msg: e.to_string() })?;
        let field = rec.get(col).ok_or_else(|| Error::Parse {
            row: i + 1,
            msg: format!("missing column {}", col + 1),
        })?;
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            row: i + 1,
            msg: format!("'{field}' is not a number"),
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    Ok(out)
}

/// Labels column (`label`, else the last column); values must be 0 or 1.
pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    load_column(path, &["label"])?
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(Error::Parse {
                row: i + 1,
                msg: format!("label {v} is not 0 or 1"),
            }),
        })
        .collect()
}

/// `t,score,threshold,label` rows for external plotting.
pub fn write_plot_csv<W: std::io::Write>(run: &DetectRun, mut out: W) -> Result<()> {
    writeln!(out, "t,score,threshold,label")?;
    for (i, (s, l)) in run.outcome.final_score.iter().zip(&run.detection.labels).enumerate() {
        writeln!(out, "{i},{s},{},{l}", run.detection.threshold)?;
    }
    Ok(())
}
