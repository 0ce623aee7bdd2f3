//! Multivariate time-series data model.
//!
//! A [`TimeSeries`] is an `m × n` matrix (time along rows, dimensions along
//! columns) with optional integer timestamps and optional 0/1 labels. This
//! module also owns ingestion from CSV, per-column normalization, the
//! segment-wise view consumed by the reconstruction models, and synthetic
//! anomaly injection.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Columns with a standard deviation below this are treated as constant.
pub const STD_GUARD: f64 = 1e-8;

const TIMESTAMP_HEADERS: &[&str] = &["t", "ts", "time", "timestamp", "date", "index"];

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a list of equally long columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns differ in length".into()));
        }
        let mut data = vec![0.0; rows * cols];
        for (d, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * cols + d] = v;
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the first `rows` rows.
    pub fn truncated(&self, rows: usize) -> Matrix {
        let rows = rows.min(self.rows);
        Matrix {
            rows,
            cols: self.cols,
            data: self.data[..rows * self.cols].to_vec(),
        }
    }

    /// Reorder columns: output column `j` is input column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, perm.len());
        for i in 0..self.rows {
            for (j, &src) in perm.iter().enumerate() {
                out.set(i, j, self.get(i, src));
            }
        }
        out
    }
}

/// `m × n` multivariate series with optional timestamps and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Matrix,
    timestamps: Option<Vec<i64>>,
    labels: Option<Vec<u8>>,
}

impl TimeSeries {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Size(format!(
                "time series must be at least 1x1, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite value at row {}, column {}",
                pos / values.cols(),
                pos % values.cols()
            )));
        }
        Ok(Self {
            values,
            timestamps: None,
            labels: None,
        })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_columns(columns)?)
    }

    pub fn with_timestamps(mut self, timestamps: Vec<i64>) -> Result<Self> {
        if timestamps.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                self.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(format!(
                "timestamps not strictly increasing at row {}",
                w + 1
            )));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Invalid("labels must be 0 or 1".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Number of time points `m`.
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Number of dimensions `n`.
    pub fn dims(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.values.column(d)
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Same series with its values replaced (timestamps and labels kept).
    pub fn with_values(&self, values: Matrix) -> Result<Self> {
        if values.rows() != self.len() {
            return Err(Error::Shape("replacement values change row count".into()));
        }
        let mut ts = TimeSeries::new(values)?;
        ts.timestamps = self.timestamps.clone();
        ts.labels = self.labels.clone();
        Ok(ts)
    }

    /// Same values with timestamps and labels dropped.
    pub fn values_only(&self) -> Self {
        Self {
            timestamps: None,
            labels: None,
            ..self.clone()
        }
    }

    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        self.with_values(self.values.permute_columns(perm))
    }

    /// Rows `[start, end)` as a new series.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Size(format!(
                "row range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let n = self.dims();
        let data = self.values.as_slice()[start * n..end * n].to_vec();
        let mut ts = TimeSeries::new(Matrix::new(end - start, n, data)?)?;
        ts.timestamps = self.timestamps.as_ref().map(|t| t[start..end].to_vec());
        ts.labels = self.labels.as_ref().map(|l| l[start..end].to_vec());
        Ok(ts)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Read a headed CSV file.
///
/// The first column is taken as an integer timestamp when its header is one of
/// `t`, `ts`, `time`, `timestamp`, `date` or `index`. With `has_labels` the last
/// column holds 0/1 labels. Every remaining column is a dimension.
pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, has_labels)
}

pub fn read_csv<R: std::io::Read>(reader: R, has_labels: bool) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    let width = headers.len();
    let has_ts = headers
        .get(0)
        .is_some_and(|h| TIMESTAMP_HEADERS.contains(&h.to_ascii_lowercase().as_str()));
    let first_dim = usize::from(has_ts);
    let end_dim = width - usize::from(has_labels);
    if end_dim <= first_dim {
        return Err(Error::Parse {
            row: 0,
            msg: "header has no value columns".into(),
        });
    }
    let n = end_dim - first_dim;

    let mut data = Vec::new();
    let mut timestamps = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                msg: format!("expected {width} fields, found {}", record.len()),
            });
        }
        if has_ts {
            let t: i64 = record[0].parse().map_err(|_| Error::Parse {
                row,
                msg: format!("timestamp '{}' is not an integer", &record[0]),
            })?;
            if timestamps.last().is_some_and(|&prev| t <= prev) {
                return Err(Error::Parse {
                    row,
                    msg: "timestamps must be strictly increasing".into(),
                });
            }
            timestamps.push(t);
        }
        for field in record.iter().take(end_dim).skip(first_dim) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("'{field}' is not finite"),
                });
            }
            data.push(v);
        }
        if has_labels {
            let raw = &record[width - 1];
            let l = match raw.parse::<f64>() {
                Ok(0.0) => 0,
                Ok(1.0) => 1,
                _ => {
                    return Err(Error::Parse {
                        row,
                        msg: format!("label '{raw}' is not 0 or 1"),
                    })
                }
            };
            labels.push(l);
        }
    }
    let m = data.len() / n;
    if m == 0 {
        return Err(Error::Parse {
            row: 1,
            msg: "no data rows".into(),
        });
    }
    let mut ts = TimeSeries::new(Matrix::new(m, n, data)?)?;
    if has_ts {
        ts = ts.with_timestamps(timestamps)?;
    }
    if has_labels {
        ts = ts.with_labels(labels)?;
    }
    Ok(ts)
}

/// Write in the layout [`load_csv`] reads: `t,d0..d{n-1}[,label]`.
///
/// Rows without stored timestamps are numbered from 0. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(ts: &TimeSeries, mut out: W) -> Result<()> {
    let mut header = String::from("t");
    for d in 0..ts.dims() {
        header.push_str(&format!(",d{d}"));
    }
    if ts.labels().is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for i in 0..ts.len() {
        line.clear();
        let t = ts.timestamps().map_or(i as i64, |t| t[i]);
        line.push_str(&t.to_string());
        for &v in ts.values().row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        if let Some(labels) = ts.labels() {
            line.push(',');
            line.push_str(&labels[i].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_csv(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(ts, &mut w)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-dimension `(mean, std)` recorded by [`normalize`].
///
/// `std` is the raw sample standard deviation; columns below [`STD_GUARD`]
/// were only shifted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    fn scale(&self, d: usize) -> f64 {
        if self.std[d] < STD_GUARD {
            1.0
        } else {
            self.std[d]
        }
    }

    /// Invert [`normalize`].
    pub fn denormalize(&self, ts: &TimeSeries) -> Result<TimeSeries> {
        if ts.dims() != self.mean.len() {
            return Err(Error::Shape(format!(
                "stats cover {} dimensions, series has {}",
                self.mean.len(),
                ts.dims()
            )));
        }
        let mut values = ts.values().clone();
        for i in 0..values.rows() {
            for d in 0..values.cols() {
                values.set(i, d, values.get(i, d) * self.scale(d) + self.mean[d]);
            }
        }
        ts.with_values(values)
    }
}

/// Z-score each column with its sample mean and sample standard deviation.
pub fn normalize(ts: &TimeSeries) -> Result<(TimeSeries, NormStats)> {
    if ts.len() < 2 {
        return Err(Error::Size("normalization needs at least 2 rows".into()));
    }
    let n = ts.dims();
    let mut stats = NormStats {
        mean: Vec::with_capacity(n),
        std: Vec::with_capacity(n),
    };
    for d in 0..n {
        let col = ts.column(d);
        stats.mean.push(mean(&col));
        stats.std.push(sample_std(&col));
    }
    let mut values = ts.values().clone();
    for i in 0..values.rows() {
        for d in 0..n {
            values.set(i, d, (values.get(i, d) - stats.mean[d]) / stats.scale(d));
        }
    }
    Ok((ts.with_values(values)?, stats))
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Length-`L` windows over every dimension, with the origin of each window.
///
/// Segments are ordered dimension-major: all windows of dimension 0, then
/// dimension 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedView {
    segment_length: usize,
    stride: usize,
    rows: usize,
    dims: usize,
    segments: Vec<Vec<f64>>,
    origins: Vec<(usize, usize)>,
}

impl SegmentedView {
    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Row count of the source series.
    pub fn source_rows(&self) -> usize {
        self.rows
    }

    pub fn segments(&self) -> &[Vec<f64>] {
        &self.segments
    }

    /// `(dimension, start row)` for every segment.
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments_per_dim(&self) -> usize {
        self.segments.len() / self.dims
    }

    /// Number of leading rows covered by at least one window.
    pub fn covered_rows(&self) -> usize {
        self.origins
            .iter()
            .map(|&(_, s)| s + self.segment_length)
            .max()
            .unwrap_or(0)
    }

    /// Place per-segment outputs back on the time axis, averaging rows covered
    /// by several windows. The result has [`covered_rows`](Self::covered_rows) rows.
    pub fn reassemble(&self, outputs: &[Vec<f64>]) -> Result<Matrix> {
        if outputs.len() != self.segments.len() {
            return Err(Error::Shape(format!(
                "{} outputs for {} segments",
                outputs.len(),
                self.segments.len()
            )));
        }
        let rows = self.covered_rows();
        let mut sum = Matrix::zeros(rows, self.dims);
        let mut count = vec![0u32; rows * self.dims];
        for (out, &(d, start)) in outputs.iter().zip(&self.origins) {
            if out.len() != self.segment_length {
                return Err(Error::Shape(format!(
                    "output of length {} for segment length {}",
                    out.len(),
                    self.segment_length
                )));
            }
            for (k, &v) in out.iter().enumerate() {
                let i = start + k;
                sum.set(i, d, sum.get(i, d) + v);
                count[i * self.dims + d] += 1;
            }
        }
        for i in 0..rows {
            for d in 0..self.dims {
                let c = count[i * self.dims + d];
                if c > 1 {
                    sum.set(i, d, sum.get(i, d) / f64::from(c));
                }
            }
        }
        Ok(sum)
    }

    /// How many windows cover each `(row, dim)` cell, row-major.
    pub(crate) fn coverage_counts(&self) -> Vec<u32> {
        let rows = self.covered_rows();
        let mut count = vec![0u32; rows * self.dims];
        for &(d, start) in &self.origins {
            for k in 0..self.segment_length {
                count[(start + k) * self.dims + d] += 1;
            }
        }
        count
    }
}

fn window_starts(m: usize, length: usize, stride: usize) -> Vec<usize> {
    (0..=(m - length) / stride).map(|k| k * stride).collect()
}

fn build_view(ts: &TimeSeries, length: usize, stride: usize, starts: &[usize]) -> SegmentedView {
    let n = ts.dims();
    let mut segments = Vec::with_capacity(n * starts.len());
    let mut origins = Vec::with_capacity(n * starts.len());
    for d in 0..n {
        let col = ts.column(d);
        for &s in starts {
            segments.push(col[s..s + length].to_vec());
            origins.push((d, s));
        }
    }
    SegmentedView {
        segment_length: length,
        stride,
        rows: ts.len(),
        dims: n,
        segments,
        origins,
    }
}

fn check_window(ts: &TimeSeries, length: usize, stride: usize) -> Result<()> {
    if length == 0 || stride == 0 {
        return Err(Error::Size(
            "segment length and stride must be positive".into(),
        ));
    }
    if length > ts.len() {
        return Err(Error::Size(format!(
            "segment length {length} exceeds series length {}",
            ts.len()
        )));
    }
    Ok(())
}

/// Split each dimension into windows of `length` every `stride` rows.
/// A trailing partial window is dropped.
pub fn segment(ts: &TimeSeries, length: usize, stride: usize) -> Result<SegmentedView> {
    check_window(ts, length, stride)?;
    let starts = window_starts(ts.len(), length, stride);
    Ok(build_view(ts, length, stride, &starts))
}

/// Like [`segment`], but when the regular grid leaves trailing rows uncovered
/// one extra window anchored at `m − length` is added, so every row is covered.
/// Used for inference, where every point needs a reconstruction.
pub fn segment_covering(ts: &TimeSeries, length: usize, stride: usize) -> Result<SegmentedView> {
    check_window(ts, length, stride)?;
    let mut starts = window_starts(ts.len(), length, stride);
    let last = *starts.last().expect("at least one window");
    if last + length < ts.len() {
        starts.push(ts.len() - length);
    }
    Ok(build_view(ts, length, stride, &starts))
}

// ---------------------------------------------------------------------------
// Synthetic anomalies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    Contextual,
    Flip,
    Speedup,
    Scale,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::Spike,
        AnomalyKind::Contextual,
        AnomalyKind::Flip,
        AnomalyKind::Speedup,
        AnomalyKind::Scale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::Spike => "spike",
            AnomalyKind::Contextual => "contextual",
            AnomalyKind::Flip => "flip",
            AnomalyKind::Speedup => "speedup",
            AnomalyKind::Scale => "scale",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown anomaly kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub start: usize,
    pub length: usize,
    pub magnitude: f64,
    pub dims: Vec<usize>,
}

impl AnomalySpec {
    pub fn validate(&self, ts: &TimeSeries) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Invalid("anomaly length must be positive".into()));
        }
        if self.start + self.length > ts.len() {
            return Err(Error::Invalid(format!(
                "anomaly window {}..{} exceeds series length {}",
                self.start,
                self.start + self.length,
                ts.len()
            )));
        }
        if !(self.magnitude > 0.0 && self.magnitude.is_finite()) {
            return Err(Error::Invalid("anomaly magnitude must be positive".into()));
        }
        if self.dims.is_empty() {
            return Err(Error::Invalid("anomaly must affect at least one dimension".into()));
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d >= ts.dims()) {
            return Err(Error::Invalid(format!(
                "anomaly dimension {d} out of range for {} dimensions",
                ts.dims()
            )));
        }
        Ok(())
    }
}

/// `kind:start:length:magnitude:dim[+dim...]`, e.g. `spike:120:1:4.0:0+2`.
impl FromStr for AnomalySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Invalid(format!("anomaly spec '{s}': {msg}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() != 5 {
            return Err(bad("expected kind:start:length:magnitude:dims"));
        }
        let kind = parts[0].parse()?;
        let start = parts[1].parse().map_err(|_| bad("bad start"))?;
        let length = parts[2].parse().map_err(|_| bad("bad length"))?;
        let magnitude = parts[3].parse().map_err(|_| bad("bad magnitude"))?;
        let dims = parts[4]
            .split('+')
            .map(|d| d.parse().map_err(|_| bad("bad dimension list")))
            .collect::<Result<Vec<usize>>>()?;
        Ok(AnomalySpec {
            kind,
            start,
            length,
            magnitude,
            dims,
        })
    }
}

fn interpolate(window: &[f64], pos: f64) -> f64 {
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(window.len() - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        window[lo]
    } else {
        window[lo] * (1.0 - frac) + window[hi] * frac
    }
}

/// Copy of `ts` with one synthetic anomaly applied.
///
/// Per kind, on every dimension in `spec.dims` over `[start, start + length)`:
///
/// * `spike`: add `magnitude · σ` at selected points. A length-1 window selects its
///   point; longer windows select a seeded random non-empty subset.
/// * `contextual`: replace the window with `μ + magnitude · σ`.
/// * `flip`: reverse the window in time.
/// * `speedup`: replay the window at double rate; once the source runs out the last
///   value is held.
/// * `scale`: multiply by `1 + magnitude`.
///
/// `μ` and `σ` are the column's mean and sample std (σ falls back to 1 for
/// constant columns). Labels become 1 on affected rows and are otherwise kept.
pub fn inject_anomaly(ts: &TimeSeries, spec: &AnomalySpec, seed: u64) -> Result<TimeSeries> {
    spec.validate(ts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = spec.start..spec.start + spec.length;

    let rows: Vec<usize> = match spec.kind {
        AnomalyKind::Spike if spec.length > 1 => {
            let mut picked: Vec<usize> = window
                .clone()
                .filter(|_| rng.random_bool(0.5))
                .collect();
            if picked.is_empty() {
                picked.push(spec.start + rng.random_range(0..spec.length));
            }
            picked
        }
        _ => window.clone().collect(),
    };

    let mut values = ts.values().clone();
    for &d in &spec.dims {
        let col = ts.column(d);
        let sigma = match sample_std(&col) {
            s if s < STD_GUARD => 1.0,
            s => s,
        };
        let seg = &col[window.clone()];
        let len = seg.len();
        for (k, i) in window.clone().enumerate() {
            let v = match spec.kind {
                AnomalyKind::Spike => {
                    if rows.contains(&i) {
                        col[i] + spec.magnitude * sigma
                    } else {
                        col[i]
                    }
                }
                AnomalyKind::Contextual => mean(&col) + spec.magnitude * sigma,
                AnomalyKind::Flip => seg[len - 1 - k],
                AnomalyKind::Speedup => interpolate(seg, ((2 * k) as f64).min((len - 1) as f64)),
                AnomalyKind::Scale => col[i] * (1.0 + spec.magnitude),
            };
            values.set(i, d, v);
        }
    }

    let mut labels = ts
        .labels()
        .map_or_else(|| vec![0u8; ts.len()], <[u8]>::to_vec);
    for &i in &rows {
        labels[i] = 1;
    }
    ts.with_values(values)?.with_labels(labels)
}
