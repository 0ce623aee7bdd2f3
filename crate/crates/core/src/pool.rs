//! The model pool: sequential construction, fingerprints and on-disk layout.
//!
//! ```text
//! <pool>/manifest.json     ids, creation order, lineage, versions, fingerprints
//! <pool>/models/<id>.bin   one parameter file per model
//! <pool>/probe.csv         the fingerprint probe series
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::model::{point_errors, pool_loss, train, transfer_parameters, ReconModel, TrainConfig};
use crate::mts::{save_csv, TimeSeries};
use crate::synth::probe_series;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";
pub const PROBE_FILE: &str = "probe.csv";
pub const POOL_FORMAT: u32 = 1;

/// Layer widths and windowing shared by every model in a pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub segment_length: usize,
    pub stride: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            segment_length: crate::model::DEFAULT_SEGMENT_LENGTH,
            stride: crate::model::DEFAULT_STRIDE,
            hidden: crate::model::DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Expansion,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreationRecord {
    pub id: String,
    pub origin: Origin,
    pub trained_on: String,
    /// Model the parameters were transferred from, if any.
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub round: u64,
    pub parents: [String; 2],
    pub child: String,
    pub dissimilarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub shape: ModelShape,
    pub model_count: usize,
    /// Current models, in creation order.
    pub order: Vec<String>,
    /// Every model ever created, including merged-away parents.
    pub created: Vec<CreationRecord>,
    pub lineage: Vec<MergeRecord>,
    pub next_id: u64,
    pub merge_rounds: u64,
    pub pool_version: u64,
    pub meta_version: u64,
    pub fingerprints: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    models: Vec<ReconModel>,
    manifest: Manifest,
}

/// Features of the model's per-point reconstruction error on the probe series.
pub fn fingerprint(model: &ReconModel, probe: &TimeSeries) -> Result<Vec<f64>> {
    let recon = model.reconstruct(probe)?;
    let errors = point_errors(probe.values(), &recon)?;
    extract_features(&TimeSeries::from_columns(&[errors])?)
}

/// Mix a base seed with a stream tag and an index (splitmix64 finalizer).
pub(crate) fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRANSFER: u64 = 2;
pub(crate) const STREAM_TRAIN: u64 = 3;

impl ModelPool {
    pub fn empty(shape: ModelShape) -> Self {
        Self {
            models: Vec::new(),
            manifest: Manifest {
                format: POOL_FORMAT,
                shape,
                model_count: 0,
                order: Vec::new(),
                created: Vec::new(),
                lineage: Vec::new(),
                next_id: 0,
                merge_rounds: 0,
                pool_version: 0,
                meta_version: 0,
                fingerprints: BTreeMap::new(),
            },
        }
    }

    pub fn models(&self) -> &[ReconModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id().to_string()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ReconModel> {
        self.models.iter().find(|m| m.id() == id)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn shape(&self) -> &ModelShape {
        &self.manifest.shape
    }

    pub fn segment_length(&self) -> usize {
        self.manifest.shape.segment_length
    }

    pub fn fingerprint_of(&self, id: &str) -> Option<&[f64]> {
        self.manifest.fingerprints.get(id).map(Vec::as_slice)
    }

    pub fn last(&self) -> Option<&ReconModel> {
        self.models.last()
    }

    pub fn set_meta_version(&mut self, version: u64) {
        self.manifest.meta_version = version;
    }

    /// Position of `id` in the creation log; used to break ranking ties.
    pub fn creation_index(&self, id: &str) -> Option<usize> {
        self.manifest.created.iter().position(|c| c.id == id)
    }

    /// Fresh model with the pool's shape (not added).
    pub fn fresh_model(&self, seed: u64) -> Result<ReconModel> {
        let s = &self.manifest.shape;
        ReconModel::new("", s.segment_length, &s.hidden, s.stride, seed)
    }

    fn next_id(&mut self) -> String {
        let id = format!("m{:03}", self.manifest.next_id);
        self.manifest.next_id += 1;
        id
    }

    /// The pool model `id` became through merging, or `id` itself if present.
    pub fn current_descendant(&self, id: &str) -> Option<String> {
        let mut cur = id.to_string();
        loop {
            if self.get(&cur).is_some() {
                return Some(cur);
            }
            cur = self
                .manifest
                .lineage
                .iter()
                .find(|r| r.parents.contains(&cur))?
                .child
                .clone();
        }
    }

    /// Append `model` under a fresh id, computing its fingerprint. Returns the id.
    pub fn add_model(
        &mut self,
        mut model: ReconModel,
        origin: Origin,
        source: Option<String>,
    ) -> Result<String> {
        let s = &self.manifest.shape;
        if model.segment_length() != s.segment_length
            || model.stride() != s.stride
            || model.hidden() != s.hidden.as_slice()
        {
            return Err(Error::Shape(
                "model shape does not match the pool shape".into(),
            ));
        }
        let id = self.next_id();
        model.set_id(id.clone());
        let fp = fingerprint(&model, &probe_series())?;
        self.manifest.created.push(CreationRecord {
            id: id.clone(),
            origin,
            trained_on: model.trained_on().to_string(),
            source,
        });
        self.manifest.fingerprints.insert(id.clone(), fp);
        self.models.push(model);
        self.sync_order();
        self.manifest.pool_version += 1;
        Ok(id)
    }

    /// Replace two models by their merged child. Returns the child id.
    pub(crate) fn replace_pair(
        &mut self,
        parents: [&str; 2],
        child: ReconModel,
        round: u64,
        dissimilarity: f64,
    ) -> Result<String> {
        for p in parents {
            if self.get(p).is_none() {
                return Err(Error::Invalid(format!("unknown model '{p}'")));
            }
        }
        self.models.retain(|m| m.id() != parents[0] && m.id() != parents[1]);
        for p in parents {
            self.manifest.fingerprints.remove(p);
        }
        let id = self.add_model(child, Origin::Merge, None)?;
        self.manifest.lineage.push(MergeRecord {
            round,
            parents: [parents[0].to_string(), parents[1].to_string()],
            child: id.clone(),
            dissimilarity,
        });
        Ok(id)
    }

    pub(crate) fn bump_merge_rounds(&mut self) -> u64 {
        self.manifest.merge_rounds += 1;
        self.manifest.merge_rounds
    }

    fn sync_order(&mut self) {
        self.manifest.order = self.ids();
        self.manifest.model_count = self.models.len();
    }
}

/// Train one model per dataset in order. Model `i` starts from a transfer of
/// model `i − 1` (model 0 is fresh) and is trained against models `0..i`.
pub fn construct_pool(
    datasets: &[(String, TimeSeries)],
    shape: &ModelShape,
    cfg: &TrainConfig,
) -> Result<ModelPool> {
    if datasets.is_empty() {
        return Err(Error::Data("no datasets".into()));
    }
    cfg.validate()?;
    let mut pool = ModelPool::empty(shape.clone());
    for (i, (tag, ts)) in datasets.iter().enumerate() {
        let idx = i as u64;
        let (start, source) = match pool.last() {
            None => (pool.fresh_model(derive_seed(cfg.seed, STREAM_INIT, idx))?, None),
            Some(prev) => (
                transfer_parameters(prev, cfg.beta, derive_seed(cfg.seed, STREAM_TRANSFER, idx))?,
                Some(prev.id().to_string()),
            ),
        };
        let mut trained = train_member(&start, ts, pool.models(), cfg, idx)
            .map_err(|e| e.with_divergence_context(format!("dataset {i} ({tag})")))?;
        trained.set_trained_on(tag.clone());
        pool.add_model(trained, Origin::Initial, source)?;
        log::info!(
            "trained model {} of {} on {tag}",
            i + 1,
            datasets.len()
        );
    }
    Ok(pool)
}

pub(crate) fn train_member(
    start: &ReconModel,
    ts: &TimeSeries,
    prior: &[ReconModel],
    cfg: &TrainConfig,
    index: u64,
) -> Result<ReconModel> {
    let run = TrainConfig {
        seed: derive_seed(cfg.seed, STREAM_TRAIN, index),
        ..cfg.clone()
    };
    let trained = train(start, ts, prior, &run)?;
    log::debug!(
        "pool loss {:.6}",
        pool_loss(&trained, ts, prior, cfg.mu).unwrap_or(f64::NAN)
    );
    Ok(trained)
}

pub fn save_pool(pool: &ModelPool, dir: &Path) -> Result<()> {
    let models_dir = dir.join(MODELS_DIR);
    fs::create_dir_all(&models_dir)?;
    for m in pool.models() {
        m.save(&models_dir.join(format!("{}.bin", m.id())))?;
    }
    for entry in fs::read_dir(&models_dir)? {
        let path = entry?.path();
        let keep = path
            .file_stem()
            .and_then(|s| s.to_str())
            .is_some_and(|s| pool.get(s).is_some());
        if !keep && path.extension().is_some_and(|e| e == "bin") {
            fs::remove_file(&path)?;
        }
    }
    save_csv(&probe_series(), dir.join(PROBE_FILE))?;
    let json = serde_json::to_string_pretty(&pool.manifest).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::integrity(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::integrity(&path, e.to_string()))
}

pub fn load_pool(dir: &Path) -> Result<ModelPool> {
    let manifest = load_manifest(dir)?;
    let mpath = dir.join(MANIFEST_FILE);
    if manifest.format != POOL_FORMAT {
        return Err(Error::integrity(&mpath, format!("unsupported format {}", manifest.format)));
    }
    if manifest.model_count != manifest.order.len() {
        return Err(Error::integrity(
            &mpath,
            format!(
                "model_count {} but {} ids listed",
                manifest.model_count,
                manifest.order.len()
            ),
        ));
    }
    if manifest.order.is_empty() {
        return Err(Error::integrity(&mpath, "pool has no models"));
    }
    let mut models = Vec::with_capacity(manifest.order.len());
    for id in &manifest.order {
        let path = dir.join(MODELS_DIR).join(format!("{id}.bin"));
        let model = ReconModel::load(&path)?;
        if model.id() != id {
            return Err(Error::integrity(&path, format!("holds model '{}'", model.id())));
        }
        let s = &manifest.shape;
        if model.segment_length() != s.segment_length
            || model.stride() != s.stride
            || model.hidden() != s.hidden.as_slice()
        {
            return Err(Error::integrity(&path, "model shape differs from manifest"));
        }
        if !manifest.fingerprints.contains_key(id) {
            return Err(Error::integrity(&mpath, format!("no fingerprint for '{id}'")));
        }
        models.push(model);
    }
    if manifest.fingerprints.len() != models.len() {
        return Err(Error::integrity(&mpath, "fingerprint count differs from model count"));
    }
    Ok(ModelPool { models, manifest })
}
