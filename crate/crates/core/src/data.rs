//! Feature-table ingestion, temporal alignment, windowing, normalization and
//! synthetic multimodal datasets.
//!
//! Feature CSV: header `timestamp,segment_id,f_0,...,f_{d-1}`, integer
//! millisecond timestamps, `.` decimal point. Label CSV: either
//! `sample_id,<target columns>` (one row per segment) or
//! `timestamp,arousal,valence` (per-timestep series).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kernels::par_map_indices;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Feature sets whose arity is validated at load time.
pub const KNOWN_FEATURE_SETS: &[(&str, usize)] = &[
    ("egemaps", 88),
    ("deepspectrum", 1024),
    ("is09", 384),
    ("is13", 6373),
    ("mfcc", 120),
    ("cnn14", 2048),
    ("bert", 768),
    ("phrase", 256),
];

pub fn known_feature_dim(name: &str) -> Option<usize> {
    let lower = name.to_ascii_lowercase();
    KNOWN_FEATURE_SETS
        .iter()
        .find(|(n, _)| *n == lower)
        .map(|(_, d)| *d)
}

#[derive(Debug, Clone)]
pub struct TableRow {
    pub timestamp_ms: i64,
    pub segment_id: i64,
    pub features: Vec<f64>,
}

/// Per-timestep feature rows for one modality.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub modality: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Rows belonging to one segment, in file order.
    pub fn segment(&self, id: i64) -> FeatureTable {
        FeatureTable {
            modality: self.modality.clone(),
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.segment_id == id)
                .cloned()
                .collect(),
        }
    }

    pub fn segment_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.rows.iter().map(|r| r.segment_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Loads a feature CSV and validates structure. When `feature_set` names one
/// of the known sets, the column count must match its dimensionality.
pub fn load_feature_csv(
    path: &Path,
    modality: &str,
    feature_set: Option<&str>,
) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 3 || &headers[0] != "timestamp" || &headers[1] != "segment_id" {
        return Err(Error::Data(format!(
            "{}: header must be timestamp,segment_id,f_0,...",
            path.display()
        )));
    }
    let columns: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();

    if let Some(set) = feature_set {
        if let Some(expected) = known_feature_dim(set) {
            if columns.len() != expected {
                return Err(Error::Data(format!(
                    "{}: feature set {set} requires {expected} feature columns, found {}",
                    path.display(),
                    columns.len()
                )));
            }
        }
    }

    let mut rows = Vec::new();
    let mut last_ts: BTreeMap<i64, i64> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1; // 1-based data row
        let record = record.map_err(|e| Error::DataRow {
            row: row_no,
            message: e.to_string(),
        })?;
        let timestamp_ms: i64 = record[0].parse().map_err(|_| Error::DataRow {
            row: row_no,
            message: format!("unparseable timestamp {:?}", &record[0]),
        })?;
        let segment_id: i64 = record[1].parse().map_err(|_| Error::DataRow {
            row: row_no,
            message: format!("unparseable segment_id {:?}", &record[1]),
        })?;
        let mut features = Vec::with_capacity(columns.len());
        for field in record.iter().skip(2) {
            let v: f64 = field.parse().map_err(|_| Error::DataRow {
                row: row_no,
                message: format!("unparseable number {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::DataRow {
                    row: row_no,
                    message: format!("non-finite feature value {v}"),
                });
            }
            features.push(v);
        }
        if let Some(&prev) = last_ts.get(&segment_id) {
            if timestamp_ms <= prev {
                return Err(Error::DataRow {
                    row: row_no,
                    message: format!(
                        "timestamps must be strictly increasing within segment {segment_id}: {timestamp_ms} after {prev}"
                    ),
                });
            }
        }
        last_ts.insert(segment_id, timestamp_ms);
        rows.push(TableRow {
            timestamp_ms,
            segment_id,
            features,
        });
    }
    Ok(FeatureTable {
        modality: modality.to_string(),
        columns,
        rows,
    })
}

/// Labels carried by a sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Not yet attached.
    None,
    /// One scalar or vector per sample (classification / fixed-size targets).
    PerSample(Vec<f64>),
    /// One value per timestep per named target series.
    PerStep {
        names: Vec<String>,
        series: Vec<Vec<f64>>,
    },
}

impl Labels {
    /// Index of a named per-step target.
    pub fn series_index(&self, name: &str) -> Option<usize> {
        match self {
            Labels::PerStep { names, .. } => names.iter().position(|n| n == name),
            _ => None,
        }
    }
}

/// One subject/segment's synchronized per-timestep feature matrices plus
/// labels. Every modality matrix shares the same T; `valid_len < T` marks a
/// zero-padded window tail that losses and metrics must skip.
#[derive(Debug, Clone)]
pub struct AlignedSample {
    pub id: String,
    pub modalities: Vec<Tensor>,
    pub labels: Labels,
    pub valid_len: usize,
}

impl AlignedSample {
    pub fn t_len(&self) -> usize {
        self.modalities[0].shape()[0]
    }

    pub fn is_padded(&self) -> bool {
        self.valid_len < self.t_len()
    }
}

/// Resamples every table onto a shared `hop_ms` grid covering the overlap of
/// their time ranges, holding the nearest preceding sample. The grid runs
/// from the latest start to the earliest end inclusive, so already-aligned
/// inputs come back unchanged and alignment is idempotent.
pub fn align_modalities(tables: &[FeatureTable], hop_ms: i64) -> Result<AlignedSample> {
    if tables.is_empty() {
        return Err(Error::InvalidArgument("align: no tables".into()));
    }
    if hop_ms <= 0 {
        return Err(Error::InvalidArgument(format!(
            "align: hop must be positive, got {hop_ms}"
        )));
    }
    for t in tables {
        if t.rows.is_empty() {
            return Err(Error::Data(format!(
                "align: modality {} has no rows",
                t.modality
            )));
        }
    }
    let start = tables
        .iter()
        .map(|t| t.rows.first().unwrap().timestamp_ms)
        .max()
        .unwrap();
    let end = tables
        .iter()
        .map(|t| t.rows.last().unwrap().timestamp_ms)
        .min()
        .unwrap();
    if end < start {
        return Err(Error::Data(format!(
            "align: no temporal overlap (latest start {start} > earliest end {end})"
        )));
    }
    let t_len = ((end - start) / hop_ms) as usize + 1;
    let mut modalities = Vec::with_capacity(tables.len());
    for table in tables {
        let d = table.dim();
        let mut values = Vec::with_capacity(t_len * d);
        let mut cursor = 0usize;
        for i in 0..t_len {
            let grid_ts = start + i as i64 * hop_ms;
            while cursor + 1 < table.rows.len() && table.rows[cursor + 1].timestamp_ms <= grid_ts
            {
                cursor += 1;
            }
            values.extend_from_slice(&table.rows[cursor].features);
        }
        modalities.push(Tensor::new(vec![t_len, d], values)?);
    }
    Ok(AlignedSample {
        id: String::new(),
        modalities,
        labels: Labels::None,
        valid_len: t_len,
    })
}

/// Cuts a sample into windows of `win_len` steps advancing by `hop`. The
/// final partial window is zero-padded and flagged through `valid_len`;
/// per-sample labels replicate into each window, per-step labels are sliced
/// (padded region zero-filled).
pub fn window(sample: &AlignedSample, win_len: usize, hop: usize) -> Result<Vec<AlignedSample>> {
    if win_len == 0 || hop == 0 {
        return Err(Error::InvalidArgument(
            "window: win_len and hop must be positive".into(),
        ));
    }
    let t_total = sample.t_len();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut index = 0usize;
    loop {
        let valid = win_len.min(t_total - start);
        let mut modalities = Vec::with_capacity(sample.modalities.len());
        for m in &sample.modalities {
            let d = m.shape()[1];
            let mut values = vec![0.0; win_len * d];
            values[..valid * d].copy_from_slice(&m.values()[start * d..(start + valid) * d]);
            modalities.push(Tensor::new(vec![win_len, d], values)?);
        }
        let labels = match &sample.labels {
            Labels::None => Labels::None,
            Labels::PerSample(v) => Labels::PerSample(v.clone()),
            Labels::PerStep { names, series } => {
                let sliced = series
                    .iter()
                    .map(|s| {
                        let mut w = vec![0.0; win_len];
                        w[..valid].copy_from_slice(&s[start..start + valid]);
                        w
                    })
                    .collect();
                Labels::PerStep {
                    names: names.clone(),
                    series: sliced,
                }
            }
        };
        out.push(AlignedSample {
            id: format!("{}:{}", sample.id, index),
            modalities,
            labels,
            valid_len: valid,
        });
        index += 1;
        start += hop;
        if start >= t_total {
            break;
        }
    }
    Ok(out)
}

/// Per-modality, per-feature z-score statistics from a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub per_modality: Vec<FeatureStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    /// Features with std below the floor are applied as identity.
    fn apply(&self, samples: &mut [AlignedSample]) {
        for s in samples.iter_mut() {
            for (m, stats) in s.modalities.iter_mut().zip(&self.per_modality) {
                let d = m.shape()[1];
                let valid = s.valid_len;
                let shape = m.shape().to_vec();
                let mut values = m.values().to_vec();
                for (row, chunk) in values.chunks_mut(d).enumerate() {
                    if row >= valid {
                        break; // padded rows stay zero
                    }
                    for (j, v) in chunk.iter_mut().enumerate() {
                        if stats.std[j] >= STD_FLOOR {
                            *v = (*v - stats.mean[j]) / stats.std[j];
                        }
                    }
                }
                *m = Tensor::new(shape, values).expect("shape unchanged");
            }
        }
    }

    /// Undoes `apply` (identity features untouched).
    pub fn invert(&self, samples: &mut [AlignedSample]) {
        for s in samples.iter_mut() {
            for (m, stats) in s.modalities.iter_mut().zip(&self.per_modality) {
                let d = m.shape()[1];
                let valid = s.valid_len;
                let shape = m.shape().to_vec();
                let mut values = m.values().to_vec();
                for (row, chunk) in values.chunks_mut(d).enumerate() {
                    if row >= valid {
                        break;
                    }
                    for (j, v) in chunk.iter_mut().enumerate() {
                        if stats.std[j] >= STD_FLOOR {
                            *v = *v * stats.std[j] + stats.mean[j];
                        }
                    }
                }
                *m = Tensor::new(shape, values).expect("shape unchanged");
            }
        }
    }
}

/// Z-scores each feature using training-set statistics. Pass `stats: None`
/// on the training split (statistics are computed and returned) and the
/// returned stats for dev/test splits. Padded rows are excluded from the
/// statistics and left at zero.
pub fn normalize(
    mut samples: Vec<AlignedSample>,
    stats: Option<&NormStats>,
) -> Result<(Vec<AlignedSample>, NormStats)> {
    if samples.is_empty() {
        return Err(Error::Data("normalize: empty dataset".into()));
    }
    let dims: Vec<usize> = samples[0].modalities.iter().map(|m| m.shape()[1]).collect();
    for s in &samples {
        let sdims: Vec<usize> = s.modalities.iter().map(|m| m.shape()[1]).collect();
        if sdims != dims {
            return Err(Error::Data(format!(
                "normalize: inconsistent modality dims {sdims:?} vs {dims:?}"
            )));
        }
    }
    let stats = match stats {
        Some(st) => {
            let sdims: Vec<usize> = st.per_modality.iter().map(|f| f.mean.len()).collect();
            if sdims != dims {
                return Err(Error::Data(format!(
                    "normalize: stats dims {sdims:?} do not match dataset dims {dims:?}"
                )));
            }
            st.clone()
        }
        None => {
            let mut per_modality = Vec::with_capacity(dims.len());
            for (mi, &d) in dims.iter().enumerate() {
                let mut sum = vec![0.0; d];
                let mut count = 0usize;
                for s in &samples {
                    let m = &s.modalities[mi];
                    for row in 0..s.valid_len {
                        for (j, acc) in sum.iter_mut().enumerate() {
                            *acc += m.row(row)[j];
                        }
                    }
                    count += s.valid_len;
                }
                let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
                let mut sq = vec![0.0; d];
                for s in &samples {
                    let m = &s.modalities[mi];
                    for row in 0..s.valid_len {
                        for (j, acc) in sq.iter_mut().enumerate() {
                            let c = m.row(row)[j] - mean[j];
                            *acc += c * c;
                        }
                    }
                }
                let std: Vec<f64> = sq.iter().map(|v| (v / count as f64).sqrt()).collect();
                per_modality.push(FeatureStats { mean, std });
            }
            NormStats { per_modality }
        }
    };
    stats.apply(&mut samples);
    Ok((samples, stats))
}

// ── label files ──────────────────────────────────────────────────────

/// `sample_id,<target columns>`; returns (target names, id -> values).
pub fn load_labels_per_sample(path: &Path) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "sample_id" {
        return Err(Error::Data(format!(
            "{}: header must be sample_id,<targets>",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::DataRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        let id = record[0].to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::DataRow {
                    row: i + 1,
                    message: format!("unparseable label {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((id, values));
    }
    Ok((names, rows))
}

/// `timestamp,<series columns>` (e.g. arousal,valence); strictly increasing
/// timestamps.
pub fn load_labels_per_step(path: &Path) -> Result<(Vec<String>, Vec<(i64, Vec<f64>)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "timestamp" {
        return Err(Error::Data(format!(
            "{}: header must be timestamp,<series>",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::DataRow {
            row: i + 1,
            message: e.to_string(),
        })?;
        let ts: i64 = record[0].parse().map_err(|_| Error::DataRow {
            row: i + 1,
            message: format!("unparseable timestamp {:?}", &record[0]),
        })?;
        if let Some((prev, _)) = rows.last() {
            if ts <= *prev {
                return Err(Error::DataRow {
                    row: i + 1,
                    message: format!("label timestamps must increase: {ts} after {prev}"),
                });
            }
        }
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::DataRow {
                    row: i + 1,
                    message: format!("unparseable label {f:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((ts, values));
    }
    Ok((names, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    PerSample,
    PerStep,
}

#[derive(Debug, Clone)]
pub struct FeatureFile {
    pub modality: String,
    pub feature_set: Option<String>,
    pub path: PathBuf,
}

/// File-backed dataset description: one feature CSV per modality plus a
/// label CSV.
#[derive(Debug, Clone)]
pub struct CsvDataSpec {
    pub features: Vec<FeatureFile>,
    pub labels: PathBuf,
    pub label_kind: LabelKind,
    pub hop_ms: i64,
}

/// Loads feature tables, aligns them segment by segment onto the hop grid
/// and attaches labels. Segments are emitted in ascending id order.
pub fn load_csv_dataset(spec: &CsvDataSpec) -> Result<Vec<AlignedSample>> {
    if spec.features.is_empty() {
        return Err(Error::Data("dataset: no feature files configured".into()));
    }
    let tables: Vec<FeatureTable> = spec
        .features
        .iter()
        .map(|f| load_feature_csv(&f.path, &f.modality, f.feature_set.as_deref()))
        .collect::<Result<_>>()?;

    let segment_ids = tables[0].segment_ids();
    for t in &tables[1..] {
        if t.segment_ids() != segment_ids {
            return Err(Error::Data(format!(
                "dataset: modality {} covers different segments than {}",
                t.modality, tables[0].modality
            )));
        }
    }

    let per_sample_labels = match spec.label_kind {
        LabelKind::PerSample => Some(load_labels_per_sample(&spec.labels)?),
        LabelKind::PerStep => None,
    };
    let per_step_labels = match spec.label_kind {
        LabelKind::PerStep => Some(load_labels_per_step(&spec.labels)?),
        LabelKind::PerSample => None,
    };

    let mut samples = Vec::with_capacity(segment_ids.len());
    for seg in segment_ids {
        let seg_tables: Vec<FeatureTable> = tables.iter().map(|t| t.segment(seg)).collect();
        let mut sample = align_modalities(&seg_tables, spec.hop_ms)?;
        sample.id = seg.to_string();
        sample.labels = match (&per_sample_labels, &per_step_labels) {
            (Some((_, rows)), None) => {
                let values = rows
                    .iter()
                    .find(|(id, _)| *id == sample.id)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| {
                        Error::Data(format!("dataset: no label row for sample {}", sample.id))
                    })?;
                Labels::PerSample(values)
            }
            (None, Some((names, rows))) => {
                let start = seg_tables
                    .iter()
                    .map(|t| t.rows.first().unwrap().timestamp_ms)
                    .max()
                    .unwrap();
                let t_len = sample.t_len();
                let mut series = vec![Vec::with_capacity(t_len); names.len()];
                let mut cursor = 0usize;
                for i in 0..t_len {
                    let grid_ts = start + i as i64 * spec.hop_ms;
                    if rows.is_empty() || rows[0].0 > grid_ts {
                        return Err(Error::Data(format!(
                            "dataset: label series starts after grid point {grid_ts}"
                        )));
                    }
                    while cursor + 1 < rows.len() && rows[cursor + 1].0 <= grid_ts {
                        cursor += 1;
                    }
                    for (k, s) in series.iter_mut().enumerate() {
                        s.push(rows[cursor].1[k]);
                    }
                }
                Labels::PerStep {
                    names: names.clone(),
                    series,
                }
            }
            _ => unreachable!("exactly one label kind is loaded"),
        };
        samples.push(sample);
    }
    Ok(samples)
}

// ── synthetic data ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Binary label: threshold of the mean latent value.
    Binary,
    /// Seven bounded intensities, fixed functions of the latent path.
    Intensity,
    /// Per-timestep arousal/valence series in [-1, 1].
    Series,
}

/// Recipe for a labeled synthetic multimodal dataset: a smooth latent path
/// drives every modality through a fixed random linear map plus observation
/// noise, and the labels are deterministic functions of the latent path.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub modalities: usize,
    pub dims: Vec<usize>,
    pub t_range: (usize, usize),
    pub samples: usize,
    pub latent_dim: usize,
    pub noise: Vec<f64>,
    pub task: SyntheticTask,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.modalities == 0
            || self.dims.len() != self.modalities
            || self.noise.len() != self.modalities
        {
            return Err(Error::InvalidArgument(
                "synthetic: dims/noise must match modality count".into(),
            ));
        }
        if self.noise.iter().any(|&n| n < 0.0) {
            return Err(Error::InvalidArgument(
                "synthetic: noise must be >= 0".into(),
            ));
        }
        if self.t_range.0 == 0 || self.t_range.0 > self.t_range.1 {
            return Err(Error::InvalidArgument(format!(
                "synthetic: bad T range {:?}",
                self.t_range
            )));
        }
        if self.latent_dim == 0 || self.samples == 0 {
            return Err(Error::InvalidArgument(
                "synthetic: latent_dim and samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

const INTENSITY_TARGETS: usize = 7;
/// AR(1) smoothness of the latent path.
const LATENT_RHO: f64 = 0.9;

/// Deterministic per seed; samples are generated on independent derived
/// streams so the result does not depend on thread scheduling.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<AlignedSample>> {
    spec.validate()?;
    let mut base = Rng::new(spec.seed);

    // fixed random structure shared by all samples
    let max_dim = *spec.dims.iter().max().unwrap();
    let maps: Vec<Vec<f64>> = (0..spec.modalities)
        .map(|_| {
            let scale = 1.0 / (spec.latent_dim as f64).sqrt();
            (0..spec.latent_dim * max_dim)
                .map(|_| base.normal() * scale)
                .collect()
        })
        .collect();
    let intensity_w: Vec<f64> = (0..INTENSITY_TARGETS * spec.latent_dim)
        .map(|_| base.normal())
        .collect();
    let arousal_dir: Vec<f64> = (0..spec.latent_dim).map(|_| base.normal()).collect();
    let valence_dir: Vec<f64> = (0..spec.latent_dim).map(|_| base.normal()).collect();

    let samples = par_map_indices(spec.samples, |i| {
        let mut rng = base.derive(i as u64);
        let t_len = spec.t_range.0 + rng.below(spec.t_range.1 - spec.t_range.0 + 1);
        let k = spec.latent_dim;

        // stationary AR(1) latent path with unit marginals
        let mut latent = vec![0.0; t_len * k];
        for slot in latent.iter_mut().take(k) {
            *slot = rng.normal();
        }
        let innovation = (1.0 - LATENT_RHO * LATENT_RHO).sqrt();
        for t in 1..t_len {
            for j in 0..k {
                latent[t * k + j] =
                    LATENT_RHO * latent[(t - 1) * k + j] + innovation * rng.normal();
            }
        }

        let mut modalities = Vec::with_capacity(spec.modalities);
        for m in 0..spec.modalities {
            let d = spec.dims[m];
            let mut values = vec![0.0; t_len * d];
            for t in 0..t_len {
                for c in 0..d {
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += latent[t * k + j] * maps[m][j * max_dim + c];
                    }
                    values[t * d + c] = acc + spec.noise[m] * rng.normal();
                }
            }
            modalities.push(Tensor::new(vec![t_len, d], values).expect("consistent shape"));
        }

        let labels = match spec.task {
            SyntheticTask::Binary => {
                let mean: f64 = latent.iter().sum::<f64>() / latent.len() as f64;
                Labels::PerSample(vec![if mean > 0.0 { 1.0 } else { 0.0 }])
            }
            SyntheticTask::Intensity => {
                let mut zbar = vec![0.0; k];
                for t in 0..t_len {
                    for j in 0..k {
                        zbar[j] += latent[t * k + j] / t_len as f64;
                    }
                }
                let values = (0..INTENSITY_TARGETS)
                    .map(|r| {
                        let dot: f64 = (0..k).map(|j| intensity_w[r * k + j] * zbar[j]).sum();
                        1.0 / (1.0 + (-2.0 * dot).exp())
                    })
                    .collect();
                Labels::PerSample(values)
            }
            SyntheticTask::Series => {
                // 3-step moving average, then squash into [-1, 1]
                let project = |dir: &[f64]| -> Vec<f64> {
                    (0..t_len)
                        .map(|t| {
                            let lo = t.saturating_sub(1);
                            let hi = (t + 1).min(t_len - 1);
                            let mut acc = 0.0;
                            for s in lo..=hi {
                                for j in 0..k {
                                    acc += latent[s * k + j] * dir[j];
                                }
                            }
                            (acc / (hi - lo + 1) as f64).tanh()
                        })
                        .collect()
                };
                Labels::PerStep {
                    names: vec!["arousal".into(), "valence".into()],
                    series: vec![project(&arousal_dir), project(&valence_dir)],
                }
            }
        };

        AlignedSample {
            id: format!("syn{i}"),
            modalities,
            labels,
            valid_len: t_len,
        }
    });
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use std::io::Write;

    fn write_csv(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn table(modality: &str, rows: &[(i64, i64, &[f64])]) -> FeatureTable {
        FeatureTable {
            modality: modality.into(),
            columns: (0..rows[0].2.len()).map(|i| format!("f_{i}")).collect(),
            rows: rows
                .iter()
                .map(|(ts, seg, f)| TableRow {
                    timestamp_ms: *ts,
                    segment_id: *seg,
                    features: f.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn load_well_formed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "a.csv",
            "timestamp,segment_id,f_0,f_1\n0,1,0.5,1.5\n40,1,0.6,1.6\n80,1,0.7,1.7\n",
        );
        let t = load_feature_csv(&path, "audio", None).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.rows[1].features, vec![0.6, 1.6]);
    }

    #[test]
    fn known_set_arity_enforced() {
        let dir = tempfile::tempdir().unwrap();
        // 87 feature columns, one short of the expected arity
        let header: Vec<String> = (0..87).map(|i| format!("f_{i}")).collect();
        let row: Vec<String> = (0..87).map(|_| "0.0".to_string()).collect();
        let body = format!(
            "timestamp,segment_id,{}\n0,1,{}\n",
            header.join(","),
            row.join(",")
        );
        let path = write_csv(dir.path(), "ege.csv", &body);
        let err = load_feature_csv(&path, "audio", Some("egemaps")).unwrap_err();
        assert!(err.to_string().contains("88"), "{err}");
        assert!(load_feature_csv(&path, "audio", Some("custom")).is_ok());
    }

    #[test]
    fn timestamp_regression_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            dir.path(),
            "bad.csv",
            "timestamp,segment_id,f_0\n0,1,0.1\n40,1,0.2\n40,1,0.3\n",
        );
        let err = load_feature_csv(&path, "audio", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "{msg}");
        assert!(msg.contains("increasing"), "{msg}");
    }

    #[test]
    fn ragged_and_unparseable_rows_name_row() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = write_csv(
            dir.path(),
            "ragged.csv",
            "timestamp,segment_id,f_0,f_1\n0,1,0.1,0.2\n40,1,0.3\n",
        );
        let err = load_feature_csv(&ragged, "audio", None).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");

        let garbled = write_csv(
            dir.path(),
            "garbled.csv",
            "timestamp,segment_id,f_0\n0,1,0.1\n40,1,oops\n",
        );
        let err = load_feature_csv(&garbled, "audio", None).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn align_identical_grids_is_identity() {
        let a = table("a", &[(0, 1, &[1.0]), (40, 1, &[2.0]), (80, 1, &[3.0])]);
        let b = table(
            "b",
            &[
                (0, 1, &[5.0, 6.0]),
                (40, 1, &[7.0, 8.0]),
                (80, 1, &[9.0, 10.0]),
            ],
        );
        let s = align_modalities(&[a, b], 40).unwrap();
        assert_eq!(s.t_len(), 3);
        assert_eq!(s.modalities[0].values(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.modalities[1].values(), &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn align_hold_resampling_fixture() {
        // 10 ms grid vs 40 ms grid, aligned at 40 ms hop:
        // fine covers 0..40, coarse covers 0..160 -> overlap [0, 40], T = 2.
        let fine = table(
            "fine",
            &[
                (0, 1, &[10.0]),
                (10, 1, &[11.0]),
                (20, 1, &[12.0]),
                (30, 1, &[13.0]),
                (40, 1, &[14.0]),
            ],
        );
        let coarse = table(
            "coarse",
            &[
                (0, 1, &[20.0]),
                (40, 1, &[21.0]),
                (80, 1, &[22.0]),
                (120, 1, &[23.0]),
                (160, 1, &[24.0]),
            ],
        );
        let s = align_modalities(&[fine, coarse], 40).unwrap();
        assert_eq!(s.t_len(), 2);
        // grid points 0 and 40: fine holds rows at exactly 0 and 40
        assert_eq!(s.modalities[0].values(), &[10.0, 14.0]);
        assert_eq!(s.modalities[1].values(), &[20.0, 21.0]);
    }

    #[test]
    fn align_offset_grids_hold_preceding() {
        // second modality lags by 15 ms: grid starts at its first sample
        let a = table("a", &[(0, 1, &[1.0]), (40, 1, &[2.0]), (80, 1, &[3.0])]);
        let b = table("b", &[(15, 1, &[5.0]), (55, 1, &[6.0]), (95, 1, &[7.0])]);
        let s = align_modalities(&[a, b], 40).unwrap();
        // overlap [15, 80]: grid 15, 55 -> a holds rows 0 and 40
        assert_eq!(s.t_len(), 2);
        assert_eq!(s.modalities[0].values(), &[1.0, 2.0]);
        assert_eq!(s.modalities[1].values(), &[5.0, 6.0]);
    }

    #[test]
    fn align_disjoint_ranges_error() {
        let a = table("a", &[(0, 1, &[1.0]), (40, 1, &[2.0])]);
        let b = table("b", &[(100, 1, &[5.0]), (140, 1, &[6.0])]);
        assert!(align_modalities(&[a, b], 40).is_err());
    }

    #[test]
    fn align_is_idempotent() {
        let a = table(
            "a",
            &[
                (0, 1, &[1.0, 2.0]),
                (40, 1, &[3.0, 4.0]),
                (80, 1, &[5.0, 6.0]),
            ],
        );
        let once = align_modalities(&[a.clone()], 40).unwrap();
        // rebuild a table from the aligned output and align again
        let rebuilt = FeatureTable {
            modality: "a".into(),
            columns: a.columns.clone(),
            rows: (0..once.t_len())
                .map(|i| TableRow {
                    timestamp_ms: i as i64 * 40,
                    segment_id: 1,
                    features: once.modalities[0].row(i).to_vec(),
                })
                .collect(),
        };
        let twice = align_modalities(&[rebuilt], 40).unwrap();
        assert_eq!(once.modalities[0].values(), twice.modalities[0].values());
    }

    fn sample_with_series(t: usize) -> AlignedSample {
        let values: Vec<f64> = (0..t * 2).map(|i| i as f64).collect();
        AlignedSample {
            id: "s".into(),
            modalities: vec![Tensor::new(vec![t, 2], values).unwrap()],
            labels: Labels::PerStep {
                names: vec!["arousal".into()],
                series: vec![(0..t).map(|i| i as f64 / t as f64).collect()],
            },
            valid_len: t,
        }
    }

    #[test]
    fn window_counts() {
        let s = sample_with_series(10);
        assert_eq!(window(&s, 5, 5).unwrap().len(), 2);

        let s = sample_with_series(7);
        let w = window(&s, 5, 5).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].valid_len, 2);
        assert!(w[1].is_padded());
        // padded tail is zero
        assert_eq!(&w[1].modalities[0].values()[4..], &[0.0; 6]);

        let s = sample_with_series(3);
        let w = window(&s, 5, 5).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].valid_len, 3);
    }

    #[test]
    fn window_reconstructs_series_for_hop_equals_win() {
        let s = sample_with_series(12);
        let ws = window(&s, 4, 4).unwrap();
        let mut rebuilt = Vec::new();
        for w in &ws {
            assert!(!w.is_padded());
            rebuilt.extend_from_slice(w.modalities[0].values());
        }
        assert_eq!(rebuilt, s.modalities[0].values());
        // per-step labels sliced alongside
        if let Labels::PerStep { series, .. } = &ws[1].labels {
            assert_eq!(series[0].len(), 4);
            assert_eq!(series[0][0], 4.0 / 12.0);
        } else {
            panic!("expected per-step labels");
        }
    }

    #[test]
    fn window_replicates_per_sample_labels() {
        let mut s = sample_with_series(9);
        s.labels = Labels::PerSample(vec![1.0]);
        let ws = window(&s, 4, 4).unwrap();
        assert_eq!(ws.len(), 3);
        for w in &ws {
            assert_eq!(w.labels, Labels::PerSample(vec![1.0]));
        }
    }

    #[test]
    fn normalize_train_then_dev() {
        let spec = SyntheticSpec {
            modalities: 2,
            dims: vec![3, 2],
            t_range: (6, 6),
            samples: 20,
            latent_dim: 2,
            noise: vec![0.1, 0.1],
            task: SyntheticTask::Binary,
            seed: 5,
        };
        let all = generate_synthetic(&spec).unwrap();
        let (train, dev) = all.split_at(15);
        let (train_n, stats) = normalize(train.to_vec(), None).unwrap();
        // train means ~0 per feature
        for (mi, fs) in stats.per_modality.iter().enumerate() {
            for j in 0..fs.mean.len() {
                let mut sum = 0.0;
                let mut count = 0.0;
                for s in &train_n {
                    for r in 0..s.valid_len {
                        sum += s.modalities[mi].row(r)[j];
                        count += 1.0;
                    }
                }
                assert!((sum / count).abs() < 1e-9);
            }
        }
        let (dev_n, _) = normalize(dev.to_vec(), Some(&stats)).unwrap();
        // dev means generally nonzero under train stats
        let mut sum = 0.0;
        let mut count = 0.0;
        for s in &dev_n {
            for r in 0..s.valid_len {
                sum += s.modalities[0].row(r)[0];
                count += 1.0;
            }
        }
        assert!((sum / count).abs() > 1e-6);
    }

    #[test]
    fn normalize_constant_feature_unchanged() {
        let t = Tensor::new(vec![3, 2], vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let s = AlignedSample {
            id: "c".into(),
            modalities: vec![t],
            labels: Labels::None,
            valid_len: 3,
        };
        let (out, stats) = normalize(vec![s], None).unwrap();
        // column 0 constant -> untouched; column 1 z-scored
        assert_eq!(out[0].modalities[0].row(0)[0], 5.0);
        assert_eq!(out[0].modalities[0].row(2)[0], 5.0);
        assert!(stats.per_modality[0].std[0] < 1e-8);
        let col1: Vec<f64> = (0..3).map(|r| out[0].modalities[0].row(r)[1]).collect();
        assert!((col1.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn normalize_roundtrip() {
        let spec = SyntheticSpec {
            modalities: 1,
            dims: vec![4],
            t_range: (5, 8),
            samples: 6,
            latent_dim: 2,
            noise: vec![0.3],
            task: SyntheticTask::Binary,
            seed: 9,
        };
        let original = generate_synthetic(&spec).unwrap();
        let (mut normalized, stats) = normalize(original.clone(), None).unwrap();
        stats.invert(&mut normalized);
        for (a, b) in original.iter().zip(&normalized) {
            for (ma, mb) in a.modalities.iter().zip(&b.modalities) {
                for (x, y) in ma.values().iter().zip(mb.values()) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn normalize_dim_mismatch_rejected() {
        let s = AlignedSample {
            id: "x".into(),
            modalities: vec![Tensor::zeros(&[2, 3])],
            labels: Labels::None,
            valid_len: 2,
        };
        let stats = NormStats {
            per_modality: vec![FeatureStats {
                mean: vec![0.0; 4],
                std: vec![1.0; 4],
            }],
        };
        assert!(normalize(vec![s], Some(&stats)).is_err());
    }

    #[test]
    fn synthetic_same_seed_identical() {
        let spec = SyntheticSpec {
            modalities: 2,
            dims: vec![3, 5],
            t_range: (4, 9),
            samples: 12,
            latent_dim: 2,
            noise: vec![0.2, 0.4],
            task: SyntheticTask::Series,
            seed: 31,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.labels, y.labels);
            for (mx, my) in x.modalities.iter().zip(&y.modalities) {
                assert_eq!(mx.shape(), my.shape());
                for (a, b) in mx.values().iter().zip(my.values()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    /// Ridge least squares by Gaussian elimination (test oracle only).
    fn linear_probe_fit(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        let d = xs[0].len();
        let n = xs.len();
        let ridge = 1e-8;
        // normal equations (X^T X + rI) b = X^T y
        let mut a = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        for i in 0..n {
            for p in 0..d {
                rhs[p] += xs[i][p] * ys[i];
                for q in 0..d {
                    a[p * d + q] += xs[i][p] * xs[i][q];
                }
            }
        }
        for p in 0..d {
            a[p * d + p] += ridge;
        }
        // elimination with partial pivoting
        let mut b = rhs;
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))
                .unwrap();
            if pivot != col {
                for q in 0..d {
                    a.swap(col * d + q, pivot * d + q);
                }
                b.swap(col, pivot);
            }
            let diag = a[col * d + col];
            for r in col + 1..d {
                let factor = a[r * d + col] / diag;
                for q in col..d {
                    a[r * d + q] -= factor * a[col * d + q];
                }
                b[r] -= factor * b[col];
            }
        }
        let mut beta = vec![0.0; d];
        for col in (0..d).rev() {
            let mut acc = b[col];
            for q in col + 1..d {
                acc -= a[col * d + q] * beta[q];
            }
            beta[col] = acc / a[col * d + col];
        }
        beta
    }

    fn probe_scores(beta: &[f64], xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter()
            .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn linear_probe_scores(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        probe_scores(&linear_probe_fit(xs, ys), xs)
    }

    fn pooled_features(samples: &[AlignedSample], modality: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = samples
            .iter()
            .map(|s| {
                let m = &s.modalities[modality];
                let d = m.shape()[1];
                let mut pooled = vec![0.0; d];
                for r in 0..s.valid_len {
                    for (j, p) in pooled.iter_mut().enumerate() {
                        *p += m.row(r)[j] / s.valid_len as f64;
                    }
                }
                pooled
            })
            .collect();
        let ys = samples
            .iter()
            .map(|s| match &s.labels {
                Labels::PerSample(v) => v[0],
                _ => panic!("expected per-sample labels"),
            })
            .collect();
        (xs, ys)
    }

    #[test]
    fn zero_noise_probe_is_perfect() {
        let spec = SyntheticSpec {
            modalities: 2,
            dims: vec![4, 6],
            t_range: (8, 8),
            samples: 60,
            latent_dim: 1,
            noise: vec![0.0, 0.0],
            task: SyntheticTask::Binary,
            seed: 2,
        };
        let samples = generate_synthetic(&spec).unwrap();
        for m in 0..2 {
            let (xs, ys) = pooled_features(&samples, m);
            let scores = linear_probe_scores(&xs, &ys);
            assert_eq!(auc(&scores, &ys).unwrap(), 1.0, "modality {m}");
        }
    }

    #[test]
    fn drowned_modality_probe_is_chance() {
        let spec = SyntheticSpec {
            modalities: 2,
            dims: vec![4, 4],
            t_range: (8, 8),
            samples: 500,
            latent_dim: 1,
            noise: vec![1e3, 0.0],
            task: SyntheticTask::Binary,
            seed: 6,
        };
        let samples = generate_synthetic(&spec).unwrap();
        // fit on one half, score the held-out half
        let probe_auc = |modality: usize| {
            let (xs, ys) = pooled_features(&samples, modality);
            let (fit_x, eval_x) = xs.split_at(250);
            let (fit_y, eval_y) = ys.split_at(250);
            let beta = linear_probe_fit(fit_x, fit_y);
            auc(&probe_scores(&beta, eval_x), eval_y).unwrap()
        };
        let noisy = probe_auc(0);
        assert!((0.4..0.6).contains(&noisy), "noisy-modality probe auc {noisy}");
        // the clean modality still separates perfectly
        assert_eq!(probe_auc(1), 1.0);
    }

    #[test]
    fn synthetic_series_labels_bounded() {
        let spec = SyntheticSpec {
            modalities: 1,
            dims: vec![3],
            t_range: (10, 20),
            samples: 10,
            latent_dim: 3,
            noise: vec![0.1],
            task: SyntheticTask::Series,
            seed: 8,
        };
        for s in generate_synthetic(&spec).unwrap() {
            match &s.labels {
                Labels::PerStep { names, series } => {
                    assert_eq!(names, &["arousal", "valence"]);
                    for ser in series {
                        assert_eq!(ser.len(), s.t_len());
                        assert!(ser.iter().all(|v| (-1.0..=1.0).contains(v)));
                    }
                }
                _ => panic!("expected series labels"),
            }
        }
    }

    #[test]
    fn synthetic_intensity_has_seven_bounded_targets() {
        let spec = SyntheticSpec {
            modalities: 1,
            dims: vec![4],
            t_range: (6, 6),
            samples: 8,
            latent_dim: 2,
            noise: vec![0.2],
            task: SyntheticTask::Intensity,
            seed: 12,
        };
        for s in generate_synthetic(&spec).unwrap() {
            match &s.labels {
                Labels::PerSample(v) => {
                    assert_eq!(v.len(), 7);
                    assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
                }
                _ => panic!("expected per-sample labels"),
            }
        }
    }

    #[test]
    fn csv_dataset_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let audio = write_csv(
            dir.path(),
            "audio.csv",
            "timestamp,segment_id,f_0\n0,1,0.1\n40,1,0.2\n80,1,0.3\n0,2,0.4\n40,2,0.5\n80,2,0.6\n",
        );
        let video = write_csv(
            dir.path(),
            "video.csv",
            "timestamp,segment_id,g_0,g_1\n0,1,1.0,2.0\n40,1,3.0,4.0\n80,1,5.0,6.0\n0,2,1.1,2.1\n40,2,3.1,4.1\n80,2,5.1,6.1\n",
        );
        let labels = write_csv(dir.path(), "labels.csv", "sample_id,humor\n1,1\n2,0\n");
        let spec = CsvDataSpec {
            features: vec![
                FeatureFile {
                    modality: "audio".into(),
                    feature_set: None,
                    path: audio,
                },
                FeatureFile {
                    modality: "video".into(),
                    feature_set: None,
                    path: video,
                },
            ],
            labels,
            label_kind: LabelKind::PerSample,
            hop_ms: 40,
        };
        let samples = load_csv_dataset(&spec).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].id, "1");
        assert_eq!(samples[0].labels, Labels::PerSample(vec![1.0]));
        assert_eq!(samples[0].t_len(), 3);
        assert_eq!(samples[1].labels, Labels::PerSample(vec![0.0]));

        // missing label row
        let bad_labels = write_csv(dir.path(), "labels2.csv", "sample_id,humor\n1,1\n");
        let bad_spec = CsvDataSpec {
            labels: bad_labels,
            ..spec
        };
        assert!(load_csv_dataset(&bad_spec).is_err());
    }

    #[test]
    fn csv_dataset_per_step_labels() {
        let dir = tempfile::tempdir().unwrap();
        let feat = write_csv(
            dir.path(),
            "bio.csv",
            "timestamp,segment_id,f_0\n0,1,0.1\n40,1,0.2\n80,1,0.3\n",
        );
        let labels = write_csv(
            dir.path(),
            "series.csv",
            "timestamp,arousal,valence\n0,0.5,-0.5\n40,0.6,-0.6\n80,0.7,-0.7\n",
        );
        let spec = CsvDataSpec {
            features: vec![FeatureFile {
                modality: "bio".into(),
                feature_set: None,
                path: feat,
            }],
            labels,
            label_kind: LabelKind::PerStep,
            hop_ms: 40,
        };
        let samples = load_csv_dataset(&spec).unwrap();
        assert_eq!(samples.len(), 1);
        match &samples[0].labels {
            Labels::PerStep { names, series } => {
                assert_eq!(names, &["arousal", "valence"]);
                assert_eq!(series[0], vec![0.5, 0.6, 0.7]);
                assert_eq!(series[1], vec![-0.5, -0.6, -0.7]);
            }
            _ => panic!("expected per-step labels"),
        }
    }
}
