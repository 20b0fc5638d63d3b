//! File formats, experiment manifests, grouped splits and the seeded
//! synthetic-annotator generator.
//!
//! Every numeric file is comma-separated text preceded by `# key = value`
//! metadata lines, one of which is `format_version`. Floats are written with
//! 17 significant digits so a write/read cycle is bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Matrix, ModelConfig, TrainConfig};
use crate::representation::{fmt_f64, Family};
use crate::trace::{align, delay_samples, minmax_normalize, samples_per_window, AnnotationTrace, TraceSet};

pub const FORMAT_VERSION: u32 = 1;
const PERIOD_TOLERANCE: f64 = 1e-9;

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Splits a text file into its `# key = value` header and the remaining body.
pub fn split_header(text: &str) -> (BTreeMap<String, String>, &str) {
    let mut meta = BTreeMap::new();
    let mut rest = text;
    while let Some(line) = rest.lines().next() {
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some((k, v)) = comment.split_once('=') {
            meta.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        rest = rest[line.len()..].trim_start_matches(['\r', '\n']);
    }
    (meta, rest)
}

fn check_version(meta: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    match meta.get("format_version") {
        None => Ok(()),
        Some(v) if v == &FORMAT_VERSION.to_string() => Ok(()),
        Some(v) => Err(Error::format(path, format!("unsupported format_version {v}"))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a CSV body into its header names and numeric rows. Row numbers in
/// errors are 1-based data rows.
fn parse_numeric_csv(body: &str, path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let values = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                if field.is_empty() {
                    return Err(Error::format(path, format!("row {row}: missing value in column `{}`", headers[c])));
                }
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(path, format!("row {row}: `{field}` is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    Ok((headers, rows))
}

/// Reads a trace table: header `time_s,<annotator>...`, uniform time steps.
pub fn load_trace_table(path: &Path) -> Result<Vec<AnnotationTrace>> {
    let text = read_text(path)?;
    let (meta, body) = split_header(&text);
    check_version(&meta, path)?;
    let (headers, rows) = parse_numeric_csv(body, path)?;
    if headers.first().map(String::as_str) != Some("time_s") {
        return Err(Error::format(path, "first column must be `time_s`"));
    }
    if headers.len() < 2 {
        return Err(Error::format(path, "no annotator columns"));
    }
    if rows.len() < 2 {
        return Err(Error::format(path, "need at least two rows to infer the sample period"));
    }
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let period = times[1] - times[0];
    if period <= 0.0 {
        return Err(Error::format(path, "time column must increase"));
    }
    for (i, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - period).abs() > PERIOD_TOLERANCE * period {
            return Err(Error::format(
                path,
                format!("row {}: non-uniform time step {step} (expected {period})", i + 2),
            ));
        }
    }
    (1..headers.len())
        .map(|c| AnnotationTrace::new(headers[c].clone(), rows.iter().map(|r| r[c]).collect(), period))
        .collect()
}

pub fn trace_table_string(traces: &[AnnotationTrace]) -> Result<String> {
    let first = traces.first().ok_or(Error::Empty("traces"))?;
    let n = first.len();
    if let Some(t) = traces.iter().find(|t| t.len() != n) {
        return Err(Error::LengthMismatch { left: n, right: t.len() });
    }
    let mut out = format!("# format_version = {FORMAT_VERSION}\ntime_s");
    for t in traces {
        write!(out, ",{}", t.annotator_id()).unwrap();
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&fmt_f64(i as f64 * first.sample_period()));
        for t in traces {
            write!(out, ",{}", fmt_f64(t.values()[i])).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trace_table(path: &Path, traces: &[AnnotationTrace]) -> Result<()> {
    write_atomic(path, trace_table_string(traces)?.as_bytes())
}

/// Precomputed per-window stimulus features of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub item_id: String,
    pub feature_name: String,
    pub matrix: Matrix,
}

impl FeatureTable {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# format_version = {FORMAT_VERSION}\n# item_id = {}\n# feature_name = {}\nwindow_index",
            self.item_id, self.feature_name
        );
        for d in 0..self.matrix.cols() {
            write!(out, ",f{d}").unwrap();
        }
        out.push('\n');
        for n in 0..self.matrix.rows() {
            write!(out, "{n}").unwrap();
            for v in self.matrix.row(n) {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let (meta, body) = split_header(&text);
        check_version(&meta, path)?;
        let (headers, rows) = parse_numeric_csv(body, path)?;
        if headers.first().map(String::as_str) != Some("window_index") || headers.len() < 2 {
            return Err(Error::format(path, "expected `window_index` followed by feature columns"));
        }
        let features: Vec<Vec<f64>> = rows.into_iter().map(|r| r[1..].to_vec()).collect();
        if features.is_empty() {
            return Err(Error::format(path, "no feature rows"));
        }
        Ok(Self {
            item_id: meta.get("item_id").cloned().unwrap_or_default(),
            feature_name: meta.get("feature_name").cloned().unwrap_or_default(),
            matrix: Matrix::from_rows(&features)?,
        })
    }
}

/// How raw native-rate traces become per-window trace sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Native sample period of the trace files, seconds.
    pub native_period: f64,
    /// Aggregation window, seconds.
    pub window_length: f64,
    /// Annotation delay compensated at the native rate, seconds.
    #[serde(default)]
    pub delay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_first: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
    /// Min-max normalize each windowed trace onto [0, 1].
    #[serde(default)]
    pub normalize: bool,
}

impl Preprocessing {
    /// 40 ms ratings in [−1, 1], 3 s windows, 4 s annotation delay.
    pub fn recola() -> Self {
        Self {
            native_period: 0.04,
            window_length: 3.0,
            delay: 4.0,
            keep_first: None,
            bounds: Some([-1.0, 1.0]),
            normalize: false,
        }
    }

    /// 250 ms unbounded ratings, 3 s windows, first 19 windows kept.
    pub fn gamevibe() -> Self {
        Self {
            native_period: 0.25,
            window_length: 3.0,
            delay: 0.0,
            keep_first: Some(19),
            bounds: None,
            normalize: false,
        }
    }

    pub fn samples_per_window(&self) -> Result<usize> {
        samples_per_window(self.native_period, self.window_length)
    }

    pub fn delay_samples(&self) -> Result<usize> {
        delay_samples(self.native_period, self.delay)
    }

    pub fn validate(&self) -> Result<()> {
        self.samples_per_window()?;
        self.delay_samples()?;
        if let Some([lo, hi]) = self.bounds {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid("bounds", format!("[{lo}, {hi}] is not a valid range")));
            }
        }
        if self.keep_first == Some(0) {
            return Err(Error::invalid("keep_first", "must be positive"));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds.map(|[lo, hi]| (lo, hi))
    }

    /// Delay shift, window averaging, alignment, optional normalization.
    pub fn apply(&self, raw: &[AnnotationTrace]) -> Result<TraceSet> {
        let windowed = raw
            .iter()
            .map(|t| {
                if (t.sample_period() - self.native_period).abs() > 1e-6 * self.native_period {
                    return Err(Error::invalid(
                        "native_period",
                        format!(
                            "annotator {} is sampled every {} s, expected {} s",
                            t.annotator_id(),
                            t.sample_period(),
                            self.native_period
                        ),
                    ));
                }
                t.preprocess(self.delay, self.window_length)
            })
            .collect::<Result<Vec<_>>>()?;
        let set = align(&windowed, self.keep_first)?;
        let set = if self.normalize {
            let traces = set
                .traces()
                .iter()
                .map(|t| t.map_values(minmax_normalize))
                .collect::<Result<Vec<_>>>()?;
            TraceSet::new(traces, None)?
        } else {
            set
        };
        set.with_bounds(self.bounds())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationConfig {
    pub family: Family,
    #[serde(default = "default_radius")]
    pub neighbor_radius: usize,
}

fn default_radius() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    FixedTrainDev,
    KFoldGrouped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Overrides the manifest seed for the group shuffle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    64
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dim: default_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub id: String,
    pub group: String,
    pub traces: PathBuf,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<Partition>,
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub items: Vec<ItemEntry>,
    /// Directory relative item paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One loaded item: aligned traces plus matching features.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub group: String,
    pub partition: Option<Partition>,
    pub trace_set: TraceSet,
    pub features: FeatureTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<Item>,
    /// SHA-256 over the aligned traces and features.
    pub hash: String,
}

impl ExperimentManifest {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let mut manifest: Self = toml::from_str(text).map_err(|e| Error::format(origin, e.message().to_owned()))?;
        manifest.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden_dim: self.model.hidden_dim,
            layers: crate::model::LAYERS,
            seed: self.seed,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks settings that do not need the data files.
    pub fn validate_settings(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::invalid(
                "format_version",
                format!("unsupported version {}", self.format_version),
            ));
        }
        self.preprocessing.validate()?;
        self.train.validate()?;
        if self.model.hidden_dim == 0 {
            return Err(Error::invalid("model.hidden_dim", "must be positive"));
        }
        if self.representation.family == Family::BetaMapped && self.preprocessing.bounds.is_none() {
            return Err(Error::invalid("representation.family", "beta_mapped requires preprocessing.bounds"));
        }
        if self.items.is_empty() {
            return Err(Error::invalid("items", "manifest lists no items"));
        }
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if !seen.insert(&item.id) {
                return Err(Error::invalid("items", format!("duplicate item id `{}`", item.id)));
            }
        }
        Ok(())
    }

    /// Loads and cross-checks every item.
    pub fn load_dataset(&self) -> Result<Dataset> {
        self.validate_settings()?;
        let mut items = Vec::with_capacity(self.items.len());
        let mut width = None;
        for entry in &self.items {
            let traces_path = self.resolve(&entry.traces);
            let features_path = self.resolve(&entry.features);
            for p in [&traces_path, &features_path] {
                if !p.is_file() {
                    return Err(Error::format(p, format!("file for item `{}` not found", entry.id)));
                }
            }
            let raw = load_trace_table(&traces_path)?;
            let trace_set = self.preprocessing.apply(&raw).map_err(|e| {
                Error::format(&traces_path, format!("item `{}`: {e}", entry.id))
            })?;
            let mut features = FeatureTable::load(&features_path)?;
            let n = trace_set.window_count();
            if features.matrix.rows() < n {
                return Err(Error::format(
                    &features_path,
                    format!(
                        "item `{}`: {} feature rows but {} aligned windows",
                        entry.id,
                        features.matrix.rows(),
                        n
                    ),
                ));
            }
            // Surplus trailing stimulus windows pair with delay-shifted labels.
            features.matrix = features.matrix.slice_rows(0, n);
            features.item_id = entry.id.clone();
            if *width.get_or_insert(features.matrix.cols()) != features.matrix.cols() {
                return Err(Error::format(
                    &features_path,
                    format!("item `{}`: feature width differs from other items", entry.id),
                ));
            }
            items.push(Item {
                id: entry.id.clone(),
                group: entry.group.clone(),
                partition: entry.partition,
                trace_set,
                features,
            });
        }
        let hash = dataset_hash(&items);
        Ok(Dataset { items, hash })
    }
}

/// Parses and fully validates a manifest, including every referenced file.
pub fn load_manifest(path: &Path) -> Result<ExperimentManifest> {
    let manifest = ExperimentManifest::from_toml(&read_text(path)?, path)?;
    manifest.load_dataset()?;
    Ok(manifest)
}

fn dataset_hash(items: &[Item]) -> String {
    let mut h = Sha256::new();
    for item in items {
        h.update(item.id.as_bytes());
        h.update([0]);
        h.update(item.group.as_bytes());
        h.update([0]);
        for t in item.trace_set.traces() {
            h.update(t.annotator_id().as_bytes());
            for v in t.values() {
                h.update(v.to_le_bytes());
            }
        }
        h.update((item.features.matrix.cols() as u64).to_le_bytes());
        for v in item.features.matrix.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Train and validation item indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Builds folds over `groups` (one label per item). Grouped mode shuffles the
/// distinct groups with `seed` and deals them round-robin into `k` folds.
pub fn make_splits(groups: &[&str], partitions: &[Option<Partition>], spec: &SplitSpec, seed: u64) -> Result<Vec<Fold>> {
    match spec.mode {
        SplitMode::FixedTrainDev => {
            let mut fold = Fold {
                train: Vec::new(),
                validation: Vec::new(),
            };
            for (i, p) in partitions.iter().enumerate() {
                match p {
                    Some(Partition::Train) => fold.train.push(i),
                    Some(Partition::Dev) => fold.validation.push(i),
                    None => {
                        return Err(Error::invalid("partition", format!("item {i} has no train/dev partition")))
                    }
                }
            }
            if fold.train.is_empty() || fold.validation.is_empty() {
                return Err(Error::invalid("partition", "both train and dev items are required"));
            }
            Ok(vec![fold])
        }
        SplitMode::KFoldGrouped => {
            let mut distinct: Vec<&str> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
            let k = spec.k;
            if k < 2 {
                return Err(Error::invalid("split.k", "grouped k-fold needs k >= 2"));
            }
            if k > distinct.len() {
                return Err(Error::invalid(
                    "split.k",
                    format!("k = {k} exceeds the {} distinct groups", distinct.len()),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(seed));
            distinct.shuffle(&mut rng);
            let fold_of: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
            Ok((0..k)
                .map(|f| {
                    let (validation, train) = (0..groups.len()).partition(|&i| fold_of[groups[i]] == f);
                    Fold { train, validation }
                })
                .collect())
        }
    }
}

/// Fold listing: `fold,item_id,group,role` rows.
pub fn folds_table(folds: &[Fold], items: &[Item]) -> String {
    let mut out = format!("# format_version = {FORMAT_VERSION}\nfold,item_id,group,role\n");
    for (f, fold) in folds.iter().enumerate() {
        for (role, idx) in [("train", &fold.train), ("validation", &fold.validation)] {
            for &i in idx {
                writeln!(out, "{f},{},{},{role}", items[i].id, items[i].group).unwrap();
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Shared trend, per-annotator constant offsets.
    ConsistentTrend,
    /// Per-annotator random sign on the trend, one shared offset.
    InconsistentTrend,
}

/// Seeded generator of multi-annotator traces and matching features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub items: usize,
    pub groups: usize,
    pub annotators: usize,
    pub windows: usize,
    pub sample_period: f64,
    pub window_length: f64,
    pub trend_amplitude: f64,
    /// Number of sinusoids summed into the latent trend.
    pub trend_components: usize,
    /// Trend frequency range in cycles per window.
    pub min_frequency: f64,
    pub max_frequency: f64,
    pub offset_std: f64,
    pub gain_std: f64,
    pub noise_std: f64,
    pub lag_windows: usize,
    pub scenario: Scenario,
    pub feature_dim: usize,
    pub feature_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            items: 30,
            groups: 30,
            annotators: 5,
            windows: 20,
            sample_period: 0.25,
            window_length: 3.0,
            trend_amplitude: 0.6,
            trend_components: 3,
            min_frequency: 0.05,
            max_frequency: 0.2,
            offset_std: 0.1,
            gain_std: 0.1,
            noise_std: 0.02,
            lag_windows: 0,
            scenario: Scenario::ConsistentTrend,
            feature_dim: 8,
            feature_noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let stds = [
            ("trend_amplitude", self.trend_amplitude),
            ("offset_std", self.offset_std),
            ("gain_std", self.gain_std),
            ("noise_std", self.noise_std),
            ("feature_noise_std", self.feature_noise_std),
        ];
        for (name, v) in stds {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.annotators < 2 {
            return Err(Error::invalid("annotators", "need at least 2"));
        }
        if self.items == 0 {
            return Err(Error::invalid("items", "must be positive"));
        }
        if self.groups == 0 || self.groups > self.items {
            return Err(Error::invalid("groups", "must be between 1 and the item count"));
        }
        if self.windows < 2 {
            return Err(Error::invalid("windows", "need at least 2"));
        }
        if self.trend_components == 0 {
            return Err(Error::invalid("trend_components", "must be positive"));
        }
        if !(self.min_frequency > 0.0 && self.max_frequency >= self.min_frequency && self.max_frequency.is_finite()) {
            return Err(Error::invalid("min_frequency", "need 0 < min_frequency <= max_frequency"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        samples_per_window(self.sample_period, self.window_length)
            .map_err(|_| Error::invalid("window_length", "must be a positive multiple of sample_period"))?;
        Ok(())
    }
}

/// One generated item with its ground-truth latent trend per window.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub group: String,
    /// Native-rate traces.
    pub traces: Vec<AnnotationTrace>,
    pub features: FeatureTable,
    pub latent: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per = samples_per_window(cfg.sample_period, cfg.window_length)?;
    let native_len = cfg.windows * per;

    // Feature map shared by all items so the latent is recoverable.
    let weights: Vec<f64> = (0..cfg.feature_dim).map(|_| normal(&mut rng, 1.0)).collect();
    let biases: Vec<f64> = (0..cfg.feature_dim).map(|_| normal(&mut rng, 0.5)).collect();
    let width = (cfg.trend_components as f64).sqrt();

    (0..cfg.items)
        .map(|i| {
            let components: Vec<(f64, f64)> = (0..cfg.trend_components)
                .map(|_| {
                    let freq = rng.gen_range(cfg.min_frequency..=cfg.max_frequency);
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    (freq, phase)
                })
                .collect();
            // Time measured in windows.
            let latent_at = |w: f64| {
                cfg.trend_amplitude / width
                    * components
                        .iter()
                        .map(|(f, p)| (std::f64::consts::TAU * f * w + p).sin())
                        .sum::<f64>()
            };
            let step = 1.0 / per as f64;
            let native_latent: Vec<f64> = (0..native_len).map(|s| latent_at(s as f64 * step)).collect();
            let latent: Vec<f64> = native_latent.chunks_exact(per).map(|c| c.iter().sum::<f64>() / per as f64).collect();

            let shared_offset = normal(&mut rng, cfg.offset_std);
            let traces = (0..cfg.annotators)
                .map(|m| {
                    let gain = 1.0 + normal(&mut rng, cfg.gain_std);
                    let lag = if cfg.lag_windows > 0 {
                        rng.gen_range(0..=cfg.lag_windows) as f64
                    } else {
                        0.0
                    };
                    let (sign, offset) = match cfg.scenario {
                        Scenario::ConsistentTrend => (1.0, normal(&mut rng, cfg.offset_std)),
                        Scenario::InconsistentTrend => (if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, shared_offset),
                    };
                    let values = (0..native_len)
                        .map(|s| sign * gain * latent_at(s as f64 * step - lag) + offset + normal(&mut rng, cfg.noise_std))
                        .collect();
                    AnnotationTrace::new(format!("a{m}"), values, cfg.sample_period)
                })
                .collect::<Result<Vec<_>>>()?;

            let mut matrix = Matrix::zeros(cfg.windows, cfg.feature_dim);
            for (n, &z) in latent.iter().enumerate() {
                for (d, v) in matrix.row_mut(n).iter_mut().enumerate() {
                    *v = weights[d] * z + biases[d] + normal(&mut rng, cfg.feature_noise_std);
                }
            }
            let id = format!("item_{i:03}");
            Ok(SynthItem {
                features: FeatureTable {
                    item_id: id.clone(),
                    feature_name: "synthetic_affine".into(),
                    matrix,
                },
                id,
                group: format!("group_{:03}", i % cfg.groups),
                traces,
                latent,
            })
        })
        .collect()
}

/// Window-level trace set of a generated item (no delay, no truncation).
pub fn synth_trace_set(cfg: &SynthConfig, item: &SynthItem) -> Result<TraceSet> {
    Preprocessing {
        native_period: cfg.sample_period,
        window_length: cfg.window_length,
        delay: 0.0,
        keep_first: None,
        bounds: None,
        normalize: false,
    }
    .apply(&item.traces)
}

/// Input to `ordaffect synth`: generator settings plus the experiment
/// settings copied into the written manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthExperiment {
    pub name: String,
    pub synth: SynthConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_first: Option<usize>,
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl SynthExperiment {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.model.hidden_dim == 0 {
            return Err(Error::invalid("model.hidden_dim", "must be positive"));
        }
        if self.representation.family == Family::BetaMapped {
            return Err(Error::invalid("representation.family", "synthetic traces are unbounded; use gaussian"));
        }
        Ok(())
    }

    /// Writes traces, features, latents and `manifest.toml` under `out`.
    pub fn write(&self, out: &Path) -> Result<ExperimentManifest> {
        self.validate()?;
        let items = synth_generate(&self.synth)?;
        let mut entries = Vec::with_capacity(items.len());
        for item in &items {
            let traces = PathBuf::from("traces").join(format!("{}.csv", item.id));
            let features = PathBuf::from("features").join(format!("{}.csv", item.id));
            write_trace_table(&out.join(&traces), &item.traces)?;
            item.features.save(&out.join(&features))?;
            let mut latent = format!("# format_version = {FORMAT_VERSION}\n# item_id = {}\nwindow_index,latent\n", item.id);
            for (n, v) in item.latent.iter().enumerate() {
                writeln!(latent, "{n},{}", fmt_f64(*v)).unwrap();
            }
            write_atomic(&out.join("latent").join(format!("{}.csv", item.id)), latent.as_bytes())?;
            entries.push(ItemEntry {
                id: item.id.clone(),
                group: item.group.clone(),
                traces,
                features,
                partition: None,
            });
        }
        let manifest = ExperimentManifest {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            seed: self.synth.seed,
            preprocessing: Preprocessing {
                native_period: self.synth.sample_period,
                window_length: self.synth.window_length,
                delay: 0.0,
                keep_first: self.keep_first,
                bounds: None,
                normalize: false,
            },
            representation: self.representation.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            split: self.split.clone(),
            items: entries,
            base_dir: out.to_path_buf(),
        };
        write_atomic(&out.join("manifest.toml"), manifest.to_toml().as_bytes())?;
        Ok(manifest)
    }
}
