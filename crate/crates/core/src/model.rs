//! Dimension-independent segment reconstruction model.
//!
//! One small autoencoder maps a length-`L` window of a single dimension to its
//! reconstruction. The same parameters are applied to every window of every
//! dimension, so a model never depends on the dimension count `n`.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{ParamRecord, RecordKind};
use crate::error::{Error, Result};
use crate::mts::{segment_covering, Matrix, SegmentedView, TimeSeries};
use crate::nn::{narrow, widen, Architecture, Trace};

pub const DEFAULT_SEGMENT_LENGTH: usize = 32;
pub const DEFAULT_STRIDE: usize = 16;
pub const DEFAULT_HIDDEN: [usize; 3] = [16, 8, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the diversity term against earlier pool models.
    pub mu: f64,
    /// Fraction of the predecessor's parameters copied and frozen.
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 64,
            mu: 2.0,
            beta: 0.3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config("mu must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config("beta must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconModel {
    id: String,
    trained_on: String,
    arch: Architecture,
    stride: usize,
    theta: Vec<f32>,
    frozen: Vec<bool>,
}

impl ReconModel {
    /// Freshly initialized model `L → hidden... → L`.
    pub fn new(
        id: impl Into<String>,
        segment_length: usize,
        hidden: &[usize],
        stride: usize,
        seed: u64,
    ) -> Result<Self> {
        let arch = Self::architecture(segment_length, hidden, stride)?;
        let theta = arch.init(seed);
        Ok(Self {
            id: id.into(),
            trained_on: String::new(),
            frozen: vec![false; theta.len()],
            arch,
            stride,
            theta,
        })
    }

    /// Model with explicit parameters and no frozen entries.
    pub fn from_theta(
        id: impl Into<String>,
        segment_length: usize,
        hidden: &[usize],
        stride: usize,
        theta: Vec<f32>,
    ) -> Result<Self> {
        let arch = Self::architecture(segment_length, hidden, stride)?;
        if theta.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for an architecture of {}",
                theta.len(),
                arch.param_count()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("parameters must be finite".into()));
        }
        Ok(Self {
            id: id.into(),
            trained_on: String::new(),
            frozen: vec![false; theta.len()],
            arch,
            stride,
            theta,
        })
    }

    fn architecture(segment_length: usize, hidden: &[usize], stride: usize) -> Result<Architecture> {
        if segment_length == 0 || stride == 0 || hidden.contains(&0) {
            return Err(Error::Config(
                "segment length, stride and hidden widths must be positive".into(),
            ));
        }
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(segment_length);
        sizes.extend_from_slice(hidden);
        sizes.push(segment_length);
        Ok(Architecture::new(sizes))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn set_id(&mut self, id: impl Into<String>) {
        self.id = id.into();
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn set_trained_on(&mut self, tag: impl Into<String>) {
        self.trained_on = tag.into();
    }

    pub fn segment_length(&self) -> usize {
        self.arch.input_width()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn hidden(&self) -> &[usize] {
        let s = self.arch.sizes();
        &s[1..s.len() - 1]
    }

    pub fn architecture_ref(&self) -> &Architecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    pub fn theta_f64(&self) -> Vec<f64> {
        widen(&self.theta)
    }

    /// Replace the parameters, keeping shapes. The frozen mask is cleared.
    pub fn set_theta(&mut self, theta: Vec<f32>) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Shape(format!(
                "{} parameters for a model of {}",
                theta.len(),
                self.theta.len()
            )));
        }
        self.theta = theta;
        self.frozen = vec![false; self.theta.len()];
        Ok(())
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Identical layer widths and stride.
    pub fn same_shape(&self, other: &ReconModel) -> bool {
        self.arch == other.arch && self.stride == other.stride
    }

    /// Reconstruct every row of `ts` (windows from [`segment_covering`]).
    pub fn reconstruct(&self, ts: &TimeSeries) -> Result<Matrix> {
        let view = segment_covering(ts, self.segment_length(), self.stride)?;
        forward(self, &view)
    }

    pub fn to_record(&self) -> ParamRecord {
        ParamRecord {
            kind: RecordKind::Recon,
            id: self.id.clone(),
            tag: self.trained_on.clone(),
            segment_length: self.segment_length() as u32,
            stride: self.stride as u32,
            sizes: self.arch.sizes().iter().map(|&s| s as u32).collect(),
            theta: self.theta.clone(),
            frozen: self.frozen.clone(),
            extra: Vec::new(),
        }
    }

    pub fn from_record(rec: ParamRecord) -> std::result::Result<Self, String> {
        if rec.kind != RecordKind::Recon {
            return Err("not a reconstruction model record".into());
        }
        let sizes: Vec<usize> = rec.sizes.iter().map(|&s| s as usize).collect();
        if sizes.len() < 2
            || sizes[0] != rec.segment_length as usize
            || *sizes.last().unwrap() != rec.segment_length as usize
            || sizes.contains(&0)
        {
            return Err("layer widths do not describe an L → L network".into());
        }
        let arch = Architecture::new(sizes);
        if arch.param_count() != rec.theta.len() {
            return Err("parameter count does not match layer widths".into());
        }
        if rec.stride == 0 {
            return Err("stride is zero".into());
        }
        Ok(Self {
            id: rec.id,
            trained_on: rec.tag,
            arch,
            stride: rec.stride as usize,
            theta: rec.theta,
            frozen: rec.frozen,
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

/// Reconstruct each segment of `view` and reassemble on the time axis,
/// averaging overlapping windows.
pub fn forward(model: &ReconModel, view: &SegmentedView) -> Result<Matrix> {
    forward_at(model, &model.theta_f64(), view)
}

fn forward_at(model: &ReconModel, theta: &[f64], view: &SegmentedView) -> Result<Matrix> {
    check_view(model, view)?;
    let outputs: Vec<Vec<f64>> = view
        .segments()
        .iter()
        .map(|s| model.arch.forward(theta, s))
        .collect();
    view.reassemble(&outputs)
}

fn check_view(model: &ReconModel, view: &SegmentedView) -> Result<()> {
    if view.segment_length() != model.segment_length() {
        return Err(Error::Shape(format!(
            "segment length {} does not match model length {}",
            view.segment_length(),
            model.segment_length()
        )));
    }
    Ok(())
}

fn check_same_shape(x: &Matrix, xhat: &Matrix) -> Result<()> {
    if x.rows() != xhat.rows() || x.cols() != xhat.cols() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            x.rows(),
            x.cols(),
            xhat.rows(),
            xhat.cols()
        )));
    }
    Ok(())
}

/// Mean squared error across dimensions at every time point.
pub fn point_errors(x: &Matrix, xhat: &Matrix) -> Result<Vec<f64>> {
    check_same_shape(x, xhat)?;
    let n = x.cols() as f64;
    Ok((0..x.rows())
        .map(|i| {
            x.row(i)
                .iter()
                .zip(xhat.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Reconstruction loss: the per-point dimension-mean squared error summed over
/// all `m` points.
pub fn mse_loss(x: &Matrix, xhat: &Matrix) -> Result<f64> {
    Ok(point_errors(x, xhat)?.iter().sum())
}

/// Mean squared difference between two models' reconstructions of `ts`,
/// averaged over all `m·n` entries.
pub fn diversity(mi: &ReconModel, mj: &ReconModel, ts: &TimeSeries) -> Result<f64> {
    let a = mi.reconstruct(ts)?;
    let b = mj.reconstruct(ts)?;
    mean_sq_diff(&a, &b)
}

fn mean_sq_diff(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same_shape(a, b)?;
    let total: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / a.as_slice().len() as f64)
}

/// Pool training loss: `mse_loss − μ · Σ_j diversity(model, prior_j)`.
pub fn pool_loss(model: &ReconModel, ts: &TimeSeries, prior: &[ReconModel], mu: f64) -> Result<f64> {
    PoolObjective::new(model, ts, prior, mu)?.value(&model.theta_f64())
}

/// [`pool_loss`] as a function of a parameter vector, with frozen prior
/// reconstructions computed once.
pub struct PoolObjective<'a> {
    model: &'a ReconModel,
    target: &'a Matrix,
    view: SegmentedView,
    counts: Vec<u32>,
    priors: Vec<Matrix>,
    mu: f64,
}

impl<'a> PoolObjective<'a> {
    pub fn new(model: &'a ReconModel, ts: &'a TimeSeries, prior: &[ReconModel], mu: f64) -> Result<Self> {
        let view = segment_covering(ts, model.segment_length(), model.stride())?;
        let priors = prior
            .iter()
            .map(|p| p.reconstruct(ts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            target: ts.values(),
            counts: view.coverage_counts(),
            view,
            priors,
            mu,
        })
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let xhat = forward_at(self.model, theta, &self.view)?;
        let mut loss = mse_loss(self.target, &xhat)?;
        for p in &self.priors {
            loss -= self.mu * mean_sq_diff(&xhat, p)?;
        }
        Ok(loss)
    }

    /// Loss and exact gradient with respect to every entry of `theta`.
    pub fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let arch = &self.model.arch;
        let mut traces = Vec::with_capacity(self.view.len());
        let mut outputs = Vec::with_capacity(self.view.len());
        for s in self.view.segments() {
            let mut t = Trace::default();
            arch.forward_trace(theta, s, &mut t);
            outputs.push(t.output().to_vec());
            traces.push(t);
        }
        let xhat = self.view.reassemble(&outputs)?;
        let (m, n) = (xhat.rows(), xhat.cols());
        let entries = (m * n) as f64;

        let mut loss = mse_loss(self.target, &xhat)?;
        for p in &self.priors {
            loss -= self.mu * mean_sq_diff(&xhat, p)?;
        }

        // dL/dX̂ on the time axis
        let mut g = Matrix::zeros(m, n);
        for i in 0..m {
            for d in 0..n {
                let y = xhat.get(i, d);
                let mut v = -2.0 * (self.target.get(i, d) - y) / n as f64;
                for p in &self.priors {
                    v -= self.mu * 2.0 * (y - p.get(i, d)) / entries;
                }
                g.set(i, d, v);
            }
        }

        let mut grad = vec![0.0; theta.len()];
        let l = self.view.segment_length();
        let mut g_out = vec![0.0; l];
        for ((trace, &(d, start)), _) in traces.iter().zip(self.view.origins()).zip(self.view.segments()) {
            for (k, slot) in g_out.iter_mut().enumerate() {
                let i = start + k;
                *slot = g.get(i, d) / f64::from(self.counts[i * n + d]);
            }
            arch.backward(theta, trace, &g_out, &mut grad);
        }
        Ok((loss, grad))
    }
}

/// Mini-batch training objective over independent segments:
/// `mean (x − x̂)² − w · Σ_j mean (x̂ − x̂_j)²`, with prior outputs fixed.
pub(crate) fn batch_objective(
    arch: &Architecture,
    theta: &[f64],
    batch: &[&[f64]],
    prior_outputs: &[&[Vec<f64>]],
    div_weight: f64,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let width = arch.output_width();
    let entries = (batch.len() * width) as f64;
    let mut trace = Trace::default();
    let mut g_out = vec![0.0; width];
    let mut loss = 0.0;
    for (b, x) in batch.iter().enumerate() {
        arch.forward_trace(theta, x, &mut trace);
        let y = trace.output();
        for k in 0..width {
            let r = y[k] - x[k];
            loss += r * r / entries;
            g_out[k] = 2.0 * r / entries;
        }
        for prior in prior_outputs {
            let p = &prior[b];
            for k in 0..width {
                let r = y[k] - p[k];
                loss -= div_weight * r * r / entries;
                g_out[k] -= div_weight * 2.0 * r / entries;
            }
        }
        arch.backward(theta, &trace, &g_out, grad);
    }
    loss
}

/// New model with the shapes of `source`: `⌊β·|θ|⌋` positions, sampled without
/// replacement, copy the source value and are frozen; the rest are freshly
/// initialized.
pub fn transfer_parameters(source: &ReconModel, beta: f64, seed: u64) -> Result<ReconModel> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config("beta must lie in [0, 1)".into()));
    }
    // the nudge absorbs product rounding such as 0.29 * 100 = 28.999...
    let count = ((beta * source.param_count() as f64 + 1e-9).floor() as usize).min(source.param_count());
    let mut model = source.clone();
    model.theta = source.arch.init(seed);
    model.frozen = vec![false; model.theta.len()];
    model.trained_on.clear();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a45);
    for i in index::sample(&mut rng, source.param_count(), count) {
        model.theta[i] = source.theta[i];
        model.frozen[i] = true;
    }
    Ok(model)
}

/// Elementwise mean of the models' parameters (shapes must agree).
pub fn average_parameters(models: &[ReconModel], id: impl Into<String>) -> Result<ReconModel> {
    let first = models
        .first()
        .ok_or_else(|| Error::Invalid("cannot average zero models".into()))?;
    if let Some(m) = models.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::Shape(format!(
            "model {} differs in shape from {}",
            m.id, first.id
        )));
    }
    let mut acc = vec![0.0f64; first.param_count()];
    for m in models {
        for (a, &v) in acc.iter_mut().zip(&m.theta) {
            *a += f64::from(v);
        }
    }
    let k = models.len() as f64;
    let mut out = first.clone();
    out.set_id(id);
    out.trained_on.clear();
    out.set_theta(acc.iter().map(|a| (a / k) as f32).collect())?;
    Ok(out)
}

/// Train `model` on `ts` with the pool loss against frozen `prior` models.
pub fn train(
    model: &ReconModel,
    ts: &TimeSeries,
    prior: &[ReconModel],
    cfg: &TrainConfig,
) -> Result<ReconModel> {
    train_with_history(model, ts, prior, cfg).map(|(m, _)| m)
}

/// [`train`], also returning the mean batch loss of every epoch.
///
/// Batches are mean-reduced, so the reconstruction term is a mean over batch
/// entries. The diversity weight is `μ / m`, which keeps the summed-over-points
/// reconstruction loss and the mean diversity on their relative scale.
pub fn train_with_history(
    model: &ReconModel,
    ts: &TimeSeries,
    prior: &[ReconModel],
    cfg: &TrainConfig,
) -> Result<(ReconModel, Vec<f64>)> {
    cfg.validate()?;
    if let Some(p) = prior.iter().find(|p| p.segment_length() != model.segment_length()) {
        return Err(Error::Shape(format!(
            "prior model {} has segment length {}, expected {}",
            p.id,
            p.segment_length(),
            model.segment_length()
        )));
    }
    let view = segment_covering(ts, model.segment_length(), model.stride())?;
    let prior_outputs: Vec<Vec<Vec<f64>>> = prior
        .iter()
        .map(|p| {
            let theta = p.theta_f64();
            view.segments().iter().map(|s| p.arch.forward(&theta, s)).collect()
        })
        .collect();
    let div_weight = cfg.mu / ts.len() as f64;

    let mut theta = model.theta_f64();
    let trainable: Vec<usize> = (0..theta.len()).filter(|&i| !model.frozen[i]).collect();
    let mut grad = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..view.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| view.segments()[i].as_slice()).collect();
            let priors: Vec<Vec<Vec<f64>>> = prior_outputs
                .iter()
                .map(|po| chunk.iter().map(|&i| po[i].clone()).collect())
                .collect();
            let prior_refs: Vec<&[Vec<f64>]> = priors.iter().map(Vec::as_slice).collect();
            let loss = batch_objective(&model.arch, &theta, &batch, &prior_refs, div_weight, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, context: None });
            }
            for &i in &trainable {
                theta[i] -= cfg.learning_rate * grad[i];
            }
            epoch_loss += loss;
            batches += 1;
        }
        if trainable.iter().any(|&i| !theta[i].is_finite()) {
            return Err(Error::Divergence { epoch, context: None });
        }
        history.push(epoch_loss / batches as f64);
    }

    let mut trained = model.clone();
    let narrowed = narrow(&theta);
    for &i in &trainable {
        trained.theta[i] = narrowed[i];
    }
    if trained.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            context: Some("parameters overflow f32".into()),
        });
    }
    Ok((trained, history))
}
