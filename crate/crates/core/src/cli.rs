//! `ordaffect` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration, 3 representation, 4 training,
//! 5 reporting.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{folds_table, make_splits, write_atomic, Dataset, ExperimentManifest, Fold, SynthExperiment, FORMAT_VERSION};
use crate::error::Error;
use crate::metrics::{evaluate_sequences, ChannelMetrics, Summary};
use crate::model::{train, Sequence, TrainConfig};
use crate::representation::{fmt_f64, Channel, Representation, TableHeader, Tag};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REPRESENTATION: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_REPORT: i32 = 5;

pub const CCC_MODE: &str = "concatenated_validation";
pub const SDA_MODE: &str = "per_sequence_mean";

#[derive(Debug, Parser)]
#[command(name = "ordaffect", version, about = "Ambiguity-aware emotion representations, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TagArg {
    #[value(name = "I")]
    I,
    #[value(name = "O_I")]
    OI,
    #[value(name = "O_G")]
    OG,
}

impl From<TagArg> for Tag {
    fn from(t: TagArg) -> Self {
        match t {
            TagArg::I => Tag::Interval,
            TagArg::OI => Tag::IndividualOrdinal,
            TagArg::OG => Tag::GroupOrdinal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Mu,
    Sigma,
    Both,
}

impl TargetArg {
    fn channels(self) -> Vec<Channel> {
        match self {
            TargetArg::Mu => vec![Channel::Mu],
            TargetArg::Sigma => vec![Channel::Sigma],
            TargetArg::Both => Channel::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-annotator dataset and its manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute one representation for every item of a manifest.
    Represent {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        tag: TagArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated training and evaluation on one representation.
    TrainEval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        tag: TagArg,
        #[arg(long, value_enum, default_value = "both")]
        target: TargetArg,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the manifest seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for fold jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Merge train-eval result directories into one comparative table.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure tagged with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn with(code: i32) -> impl Fn(Error) -> Self {
        move |e| Self::new(code, e.to_string())
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Synth { config, out, seed } => cmd_synth(&config, &out, seed),
        Command::Represent { manifest, tag, out } => cmd_represent(&manifest, tag.into(), &out),
        Command::TrainEval {
            manifest,
            tag,
            target,
            out,
            seed,
            jobs,
        } => cmd_train_eval(&manifest, tag.into(), &target.channels(), &out, seed, jobs),
        Command::Report { results, out } => cmd_report(&results, &out),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn cmd_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let config_err = Failure::with(EXIT_CONFIG);
    let text = fs::read_to_string(config).map_err(|e| config_err(Error::io(config, e)))?;
    let mut exp: SynthExperiment =
        toml::from_str(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {}", config.display(), e.message())))?;
    if let Some(seed) = seed {
        exp.synth.seed = seed;
    }
    exp.validate().map_err(&config_err)?;
    exp.write(out).map_err(config_err)?;
    Ok(())
}

fn load(manifest: &Path) -> Result<(ExperimentManifest, Dataset), Failure> {
    let config_err = Failure::with(EXIT_CONFIG);
    let text = fs::read_to_string(manifest).map_err(|e| config_err(Error::io(manifest, e)))?;
    let m = ExperimentManifest::from_toml(&text, manifest).map_err(&config_err)?;
    let ds = m.load_dataset().map_err(config_err)?;
    Ok((m, ds))
}

fn compute_all(manifest: &ExperimentManifest, ds: &Dataset, tag: Tag) -> Result<Vec<Representation>, Failure> {
    ds.items
        .iter()
        .map(|item| {
            Representation::compute(
                &item.trace_set,
                tag,
                manifest.representation.family,
                manifest.representation.neighbor_radius,
            )
            .map_err(|e| Failure::new(EXIT_REPRESENTATION, format!("item `{}`: {e}", item.id)))
        })
        .collect()
}

fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn cmd_represent(manifest_path: &Path, tag: Tag, out: &Path) -> Result<(), Failure> {
    let (manifest, ds) = load(manifest_path)?;
    let reps = compute_all(&manifest, &ds, tag)?;
    let rep_err = Failure::with(EXIT_REPRESENTATION);

    let mut summary = format!(
        "# format_version = {FORMAT_VERSION}\n# tag = {tag}\n# dataset_hash = {}\n",
        ds.hash
    );
    let mut rows = String::from("item_id,windows,mean_sigma\n");
    let mut total = 0.0;
    for ((entry, item), rep) in manifest.items.iter().zip(&ds.items).zip(&reps) {
        let header = TableHeader {
            family: manifest.representation.family,
            neighbor_radius: manifest.representation.neighbor_radius,
            source_hash: sha256_file(&manifest.resolve(&entry.traces)).map_err(&rep_err)?,
        };
        let mut table = Vec::new();
        rep.write_table(&mut table, &header)
            .map_err(|e| rep_err(Error::io(out.join(format!("{}.csv", item.id)), e)))?;
        write_atomic(&out.join(format!("{}.csv", item.id)), &table).map_err(&rep_err)?;
        write_atomic(&out.join("plot").join(format!("{}.csv", item.id)), plot_series(rep, item.trace_set.window_length()).as_bytes())
            .map_err(&rep_err)?;

        let sigma = rep.channel(Channel::Sigma);
        let mean_sigma = sigma.iter().sum::<f64>() / sigma.len() as f64;
        total += mean_sigma;
        writeln!(rows, "{},{},{}", item.id, sigma.len(), fmt_f64(mean_sigma)).unwrap();
    }
    writeln!(summary, "# overall_mean_sigma = {}", fmt_f64(total / reps.len() as f64)).unwrap();
    summary.push_str(&rows);
    write_atomic(&out.join("summary.csv"), summary.as_bytes()).map_err(rep_err)?;
    Ok(())
}

/// Per-window series for plotting: window centre time, the two channels and,
/// for absolute representations, the one-σ band.
fn plot_series(rep: &Representation, window_length: f64) -> String {
    let mu = rep.channel(Channel::Mu);
    let sigma = rep.channel(Channel::Sigma);
    let mut out = format!("# format_version = {FORMAT_VERSION}\n# tag = {}\n", rep.tag());
    match rep.tag() {
        Tag::GroupOrdinal => out.push_str("window_index,time_s,dmu,dsigma\n"),
        _ => out.push_str("window_index,time_s,mu,sigma,lower,upper\n"),
    }
    for n in 0..mu.len() {
        let t = (n as f64 + 0.5) * window_length;
        write!(out, "{n},{},{},{}", fmt_f64(t), fmt_f64(mu[n]), fmt_f64(sigma[n])).unwrap();
        if rep.tag() != Tag::GroupOrdinal {
            write!(out, ",{},{}", fmt_f64(mu[n] - sigma[n]), fmt_f64(mu[n] + sigma[n])).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Scores of one trained channel on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResult {
    pub ccc: f64,
    pub sda: f64,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub skipped_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_items: usize,
    pub validation_items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<ChannelResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<ChannelResult>,
}

impl FoldResult {
    fn channel(&self, c: Channel) -> Option<&ChannelResult> {
        match c {
            Channel::Mu => self.mu.as_ref(),
            Channel::Sigma => self.sigma.as_ref(),
        }
    }
}

/// Mean ± std of the four table columns; absent channels are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccc_mu: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ccc_sigma: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sda_mu: Option<Summary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sda_sigma: Option<Summary>,
}

impl RowSummary {
    pub fn columns(&self) -> [Option<Summary>; 4] {
        [self.ccc_mu, self.ccc_sigma, self.sda_mu, self.sda_sigma]
    }

    fn merge(&mut self, other: &RowSummary) -> bool {
        let mut clash = false;
        for (mine, theirs) in [
            (&mut self.ccc_mu, other.ccc_mu),
            (&mut self.ccc_sigma, other.ccc_sigma),
            (&mut self.sda_mu, other.sda_mu),
            (&mut self.sda_sigma, other.sda_sigma),
        ] {
            if theirs.is_some() {
                clash |= mine.is_some();
                *mine = theirs;
            }
        }
        clash
    }
}

/// Contents of `result.toml` written by `train-eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub format_version: u32,
    pub name: String,
    pub tag: Tag,
    pub targets: Vec<Channel>,
    pub dataset_hash: String,
    pub seed: u64,
    pub family: String,
    pub neighbor_radius: usize,
    pub hidden_dim: usize,
    pub train: TrainConfig,
    pub ccc_mode: String,
    pub sda_mode: String,
    pub std_mode: String,
    pub summary: RowSummary,
    pub folds: Vec<FoldResult>,
}

fn summarize(folds: &[FoldResult], targets: &[Channel]) -> Result<RowSummary, Error> {
    let column = |c: Channel, pick: fn(&ChannelResult) -> f64| -> Result<Option<Summary>, Error> {
        if !targets.contains(&c) {
            return Ok(None);
        }
        let values: Vec<f64> = folds.iter().filter_map(|f| f.channel(c).map(pick)).collect();
        Summary::of(&values).map(Some)
    };
    Ok(RowSummary {
        ccc_mu: column(Channel::Mu, |r| r.ccc)?,
        ccc_sigma: column(Channel::Sigma, |r| r.ccc)?,
        sda_mu: column(Channel::Mu, |r| r.sda)?,
        sda_sigma: column(Channel::Sigma, |r| r.sda)?,
    })
}

fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold:02}"))
}

/// Shared inputs of the fold jobs of one `train-eval` run.
struct Jobs<'a> {
    out: &'a Path,
    folds: &'a [Fold],
    ds: &'a Dataset,
    reps: &'a [Representation],
    manifest: &'a ExperimentManifest,
}

/// Trains and evaluates one channel on one fold, writing its files.
fn run_job(jobs: &Jobs<'_>, fold_idx: usize, channel: Channel) -> Result<ChannelResult, Error> {
    let Jobs {
        out,
        folds,
        ds,
        reps,
        manifest,
    } = *jobs;
    let fold = &folds[fold_idx];
    let seed = manifest.seed;
    let seq = |i: usize| Sequence::new(ds.items[i].features.matrix.clone(), reps[i].channel(channel));
    let train_set = fold.train.iter().map(|&i| seq(i)).collect::<Result<Vec<_>, _>>()?;
    let valid_set = fold.validation.iter().map(|&i| seq(i)).collect::<Result<Vec<_>, _>>()?;
    let input_dim = ds.items[0].features.matrix.cols();
    let mut model_cfg = manifest.model_config(input_dim);
    model_cfg.seed = seed.wrapping_add(fold_idx as u64);
    let trained = train(&train_set, &valid_set, &model_cfg, &manifest.train)
        .map_err(|e| Error::Training(format!("fold {fold_idx}, target {channel}: {e}")))?;

    let mut preds = Vec::with_capacity(valid_set.len());
    let mut csv = format!("# format_version = {FORMAT_VERSION}\nitem_id,window_index,prediction,target\n");
    for (&i, s) in fold.validation.iter().zip(&valid_set) {
        let p = trained.predict(&s.features)?;
        for (n, (a, b)) in p.iter().zip(&s.target).enumerate() {
            writeln!(csv, "{},{n},{},{}", ds.items[i].id, fmt_f64(*a), fmt_f64(*b)).unwrap();
        }
        preds.push(p);
    }
    let targets: Vec<Vec<f64>> = valid_set.into_iter().map(|s| s.target).collect();
    let ChannelMetrics { ccc, sda } = evaluate_sequences(&preds, &targets)?;
    let result = ChannelResult {
        ccc,
        sda,
        best_epoch: trained.best_epoch,
        best_validation_loss: trained.best_validation_loss,
        skipped_segments: trained.skipped_segments,
    };
    let dir = fold_dir(out, fold_idx);
    trained.save(&dir.join(format!("{channel}.ckpt")))?;
    write_atomic(&dir.join(format!("{channel}_predictions.csv")), csv.as_bytes())?;
    let mut history = String::from("epoch,train_loss,validation_loss\n");
    for h in &trained.history {
        writeln!(history, "{},{},{}", h.epoch, fmt_f64(h.train_loss), fmt_f64(h.validation_loss)).unwrap();
    }
    write_atomic(&dir.join(format!("{channel}_history.csv")), history.as_bytes())?;
    write_atomic(
        &dir.join(format!("{channel}.toml")),
        toml::to_string(&result).expect("fold record serializes").as_bytes(),
    )?;
    Ok(result)
}

pub fn cmd_train_eval(
    manifest_path: &Path,
    tag: Tag,
    targets: &[Channel],
    out: &Path,
    seed: Option<u64>,
    jobs: usize,
) -> Result<(), Failure> {
    let (mut manifest, ds) = load(manifest_path)?;
    if let Some(seed) = seed {
        manifest.seed = seed;
    }
    if jobs == 0 {
        return Err(Failure::new(EXIT_CONFIG, "invalid argument `jobs`: must be positive"));
    }
    let groups: Vec<&str> = ds.items.iter().map(|i| i.group.as_str()).collect();
    let partitions: Vec<_> = ds.items.iter().map(|i| i.partition).collect();
    let folds = make_splits(&groups, &partitions, &manifest.split, manifest.seed).map_err(Failure::with(EXIT_CONFIG))?;
    let reps = compute_all(&manifest, &ds, tag)?;

    let train_err = Failure::with(EXIT_TRAINING);
    write_atomic(&out.join("folds.csv"), folds_table(&folds, &ds.items).as_bytes()).map_err(&train_err)?;

    let work: Vec<(usize, Channel)> = (0..folds.len())
        .flat_map(|f| targets.iter().map(move |&c| (f, c)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("thread pool: {e}")))?;
    let outcomes: Mutex<BTreeMap<(usize, Channel), Result<ChannelResult, Error>>> = Mutex::new(BTreeMap::new());
    let ctx = Jobs {
        out,
        folds: &folds,
        ds: &ds,
        reps: &reps,
        manifest: &manifest,
    };
    pool.install(|| {
        work.par_iter().for_each(|&(f, c)| {
            let r = run_job(&ctx, f, c);
            outcomes.lock().expect("result lock").insert((f, c), r);
        })
    });
    let outcomes = outcomes.into_inner().expect("result lock");

    let mut results: Vec<FoldResult> = folds
        .iter()
        .enumerate()
        .map(|(f, fold)| FoldResult {
            fold: f,
            train_items: fold.train.len(),
            validation_items: fold.validation.len(),
            mu: None,
            sigma: None,
        })
        .collect();
    let mut failures = Vec::new();
    for ((f, c), r) in outcomes {
        match r {
            Ok(r) => match c {
                Channel::Mu => results[f].mu = Some(r),
                Channel::Sigma => results[f].sigma = Some(r),
            },
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        return Err(Failure::new(
            EXIT_TRAINING,
            format!(
                "{} of {} fold jobs failed (completed folds kept under {}): {}",
                failures.len(),
                work.len(),
                out.display(),
                failures.join("; ")
            ),
        ));
    }

    let summary = summarize(&results, targets).map_err(&train_err)?;
    let result = RunResult {
        format_version: FORMAT_VERSION,
        name: manifest.name.clone(),
        tag,
        targets: targets.to_vec(),
        dataset_hash: ds.hash.clone(),
        seed: manifest.seed,
        family: manifest.representation.family.to_string(),
        neighbor_radius: manifest.representation.neighbor_radius,
        hidden_dim: manifest.model.hidden_dim,
        train: manifest.train.clone(),
        ccc_mode: CCC_MODE.into(),
        sda_mode: SDA_MODE.into(),
        std_mode: "population".into(),
        summary,
        folds: results,
    };
    write_atomic(
        &out.join("result.toml"),
        toml::to_string(&result).expect("result serializes").as_bytes(),
    )
    .map_err(&train_err)?;
    let table = render_table(&[(tag, summary)]);
    write_atomic(&out.join("table.md"), table.as_bytes()).map_err(train_err)?;
    Ok(())
}

const COLUMN_TITLES: [&str; 4] = ["CCC μ", "CCC σ", "SDA μ", "SDA σ"];

/// Markdown table in the Representation × {CCC μ, CCC σ, SDA μ, SDA σ}
/// layout with each column's largest mean in bold.
pub fn render_table(rows: &[(Tag, RowSummary)]) -> String {
    let mut best = [f64::NEG_INFINITY; 4];
    for (_, r) in rows {
        for (b, s) in best.iter_mut().zip(r.columns()) {
            if let Some(s) = s {
                *b = b.max(s.mean);
            }
        }
    }
    let mut out = String::from("| Representation |");
    for t in COLUMN_TITLES {
        write!(out, " {t} |").unwrap();
    }
    out.push_str("\n|---|---|---|---|---|\n");
    for (tag, r) in rows {
        write!(out, "| {} |", tag.label()).unwrap();
        for (b, s) in best.iter().zip(r.columns()) {
            match s {
                Some(s) if s.mean == *b => write!(out, " **{s}** |").unwrap(),
                Some(s) => write!(out, " {s} |").unwrap(),
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct ReportRow {
    tag: Tag,
    label: &'static str,
    #[serde(flatten)]
    summary: RowSummary,
}

#[derive(Debug, Serialize)]
struct ReportRecord {
    format_version: u32,
    dataset_hash: String,
    ccc_mode: String,
    sda_mode: String,
    sources: Vec<String>,
    rows: Vec<ReportRow>,
}

pub fn cmd_report(results: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let report_err = Failure::with(EXIT_REPORT);
    let mut runs = Vec::with_capacity(results.len());
    for dir in results {
        let path = dir.join("result.toml");
        let text = fs::read_to_string(&path).map_err(|e| report_err(Error::io(&path, e)))?;
        let run: RunResult =
            toml::from_str(&text).map_err(|e| Failure::new(EXIT_REPORT, format!("{}: {}", path.display(), e.message())))?;
        if run.format_version != FORMAT_VERSION {
            return Err(Failure::new(
                EXIT_REPORT,
                format!("{}: unsupported format_version {}", path.display(), run.format_version),
            ));
        }
        runs.push((dir, run));
    }
    let (first_dir, first) = &runs[0];
    for (dir, run) in &runs[1..] {
        for (what, a, b) in [
            ("dataset_hash", &first.dataset_hash, &run.dataset_hash),
            ("ccc_mode", &first.ccc_mode, &run.ccc_mode),
            ("sda_mode", &first.sda_mode, &run.sda_mode),
        ] {
            if a != b {
                return Err(Failure::new(
                    EXIT_REPORT,
                    format!(
                        "conflicting {what}: {} has `{a}`, {} has `{b}`",
                        first_dir.display(),
                        dir.display()
                    ),
                ));
            }
        }
    }
    let mut merged: BTreeMap<Tag, RowSummary> = BTreeMap::new();
    for (dir, run) in &runs {
        let row = merged.entry(run.tag).or_insert(RowSummary {
            ccc_mu: None,
            ccc_sigma: None,
            sda_mu: None,
            sda_sigma: None,
        });
        if row.merge(&run.summary) {
            return Err(Failure::new(
                EXIT_REPORT,
                format!("{}: duplicate result for representation {}", dir.display(), run.tag),
            ));
        }
    }
    let rows: Vec<(Tag, RowSummary)> = merged.into_iter().collect();
    let table = render_table(&rows);
    let record = ReportRecord {
        format_version: FORMAT_VERSION,
        dataset_hash: first.dataset_hash.clone(),
        ccc_mode: first.ccc_mode.clone(),
        sda_mode: first.sda_mode.clone(),
        sources: runs.iter().map(|(_, r)| format!("{}:{}", r.tag, r.name)).collect(),
        rows: rows
            .iter()
            .map(|(tag, summary)| ReportRow {
                tag: *tag,
                label: tag.label(),
                summary: *summary,
            })
            .collect(),
    };
    write_atomic(&out.join("report.md"), table.as_bytes()).map_err(&report_err)?;
    let json = serde_json::to_string_pretty(&record).expect("report serializes") + "\n";
    write_atomic(&out.join("report.json"), json.as_bytes()).map_err(report_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mean: f64, count: usize) -> Option<Summary> {
        Some(Summary { mean, std: 0.1, count })
    }

    #[test]
    fn table_bolds_column_maxima() {
        let rows = [
            (
                Tag::Interval,
                RowSummary {
                    ccc_mu: summary(0.8, 10),
                    ccc_sigma: summary(0.2, 10),
                    sda_mu: summary(0.5, 10),
                    sda_sigma: None,
                },
            ),
            (
                Tag::GroupOrdinal,
                RowSummary {
                    ccc_mu: summary(0.3, 10),
                    ccc_sigma: summary(0.4, 10),
                    sda_mu: summary(0.5, 10),
                    sda_sigma: summary(0.1, 10),
                },
            ),
        ];
        let t = render_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| Representation | CCC μ | CCC σ | SDA μ | SDA σ |");
        assert_eq!(lines[2], "| I | **0.800±0.100** | 0.200±0.100 | **0.500±0.100** | – |");
        assert_eq!(lines[3], "| O^G | 0.300±0.100 | **0.400±0.100** | **0.500±0.100** | **0.100±0.100** |");
    }

    #[test]
    fn single_fold_has_no_std() {
        let rows = [(
            Tag::IndividualOrdinal,
            RowSummary {
                ccc_mu: summary(0.25, 1),
                ccc_sigma: None,
                sda_mu: summary(-0.5, 1),
                sda_sigma: None,
            },
        )];
        assert!(render_table(&rows).contains("| O^I | **0.250** | – | **-0.500** | – |"));
    }

    #[test]
    fn merge_detects_duplicates() {
        let mut a = RowSummary {
            ccc_mu: summary(0.1, 2),
            ccc_sigma: None,
            sda_mu: summary(0.1, 2),
            sda_sigma: None,
        };
        let b = RowSummary {
            ccc_mu: None,
            ccc_sigma: summary(0.2, 2),
            sda_mu: None,
            sda_sigma: summary(0.2, 2),
        };
        assert!(!a.merge(&b));
        assert!(a.columns().iter().all(Option::is_some));
        assert!(a.merge(&b));
    }

    #[test]
    fn usage_errors_are_config_failures() {
        assert_eq!(run(["ordaffect", "represent", "--tag", "X"]), EXIT_CONFIG);
        assert_eq!(run(["ordaffect", "--help"]), 0);
    }
}
