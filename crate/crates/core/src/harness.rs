//! Sweeps over training configurations, NVP selection, training-profile
//! series and the standard-dataset table.
//!
//! A sweep writes one directory per run,
//!
//! ```text
//! <out>/runs/<config-id>/<seed>/profile.csv
//! <out>/runs/<config-id>/<seed>/final.csv
//! <out>/aggregate.csv
//! <out>/nvp.txt
//! ```
//!
//! where the config id is a short SHA-256 of the resolved configuration
//! (seed excluded) and the data source. Runs whose `final.csv` already
//! exists are loaded instead of retrained, so interrupted sweeps resume.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::KeyValueConfig;
use crate::data::{self, Dataset, DatasetSchema, Standardizer, SynthSpec};
use crate::fairmetrics::{self, MetricReport, NvpCandidate, NvpSelection};
use crate::trainers::{self, Method, TrainConfig, TrainProfile};
use crate::{Constraint, Error, Result};

/// Where a sweep's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Fresh synthetic draw per repeat: repeat `r` uses `spec.seed + r`.
    Synth { spec: SynthSpec, test_fraction: f64 },
    /// A CSV file split per repeat; standardization (when the schema asks
    /// for it) is fitted on the training split only.
    Csv {
        path: PathBuf,
        schema: DatasetSchema,
        test_fraction: f64,
    },
}

impl DataSource {
    /// Train/test pair for repeat `r`.
    pub fn load(&self, r: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synth { spec, test_fraction } => {
                let spec = SynthSpec {
                    seed: spec.seed.wrapping_add(r),
                    ..spec.clone()
                };
                let d = data::synth(&spec)?;
                Ok(data::split(&d, *test_fraction, spec.seed)?)
            }
            DataSource::Csv {
                path,
                schema,
                test_fraction,
            } => {
                let raw_schema = DatasetSchema {
                    standardize: false,
                    ..schema.clone()
                };
                let d = data::load_csv(path, &raw_schema)?;
                let (train, test) = data::split(&d, *test_fraction, r)?;
                if schema.standardize {
                    let st = Standardizer::fit(&train)?;
                    Ok((st.transform(&train)?, st.transform(&test)?))
                } else {
                    Ok((train, test))
                }
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            DataSource::Synth { spec, test_fraction } => {
                format!("synth\n{}test_fraction = {test_fraction}\n", spec.to_key_values())
            }
            DataSource::Csv {
                path,
                schema,
                test_fraction,
            } => format!(
                "csv = {}\n{}test_fraction = {test_fraction}\n",
                path.display(),
                schema.to_key_values()
            ),
        }
    }
}

/// Short stable hash of a resolved configuration and its data source. The
/// training seed is excluded so repeats share an id.
pub fn config_id(config: &TrainConfig, data: &DataSource) -> String {
    let mut text = String::new();
    for (k, v) in config.pairs() {
        if k != "seed" {
            let _ = writeln!(text, "{k} = {v}");
        }
    }
    text.push_str(&data.describe());
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(digest)[..12].to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: TrainConfig,
    /// `(config key, values)` in iteration order; the last key varies fastest.
    pub grid: Vec<(String, Vec<String>)>,
    /// Repeat `r` trains with seed `base.seed + r`.
    pub repeats: usize,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl SweepSpec {
    pub fn new(base: TrainConfig, data: DataSource, out_dir: impl Into<PathBuf>) -> Self {
        SweepSpec {
            base,
            grid: Vec::new(),
            repeats: 5,
            data,
            out_dir: out_dir.into(),
            workers: 0,
        }
    }

    pub fn with_grid(mut self, key: &str, values: &[&str]) -> Self {
        self.grid
            .push((key.to_string(), values.iter().map(|v| v.to_string()).collect()));
        self
    }

    pub fn with_repeats(mut self, repeats: usize) -> Self {
        self.repeats = repeats;
        self
    }

    /// Every grid point as `(overrides, resolved config)`.
    pub fn configs(&self) -> Result<Vec<(Vec<(String, String)>, TrainConfig)>> {
        let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
        for (key, values) in &self.grid {
            if values.is_empty() {
                return Err(Error::Invalid(format!("grid key `{key}` has no values")));
            }
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
            .into_iter()
            .map(|overrides| {
                let mut c = self.base.clone();
                for (k, v) in &overrides {
                    c.set(k, v)?;
                }
                c.validate()?;
                Ok((overrides, c))
            })
            .collect()
    }
}

/// One completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_id: String,
    pub repeat: u64,
    pub seed: u64,
    pub config: TrainConfig,
    pub overrides: Vec<(String, String)>,
    pub final_report: MetricReport,
    pub profile_path: PathBuf,
    /// Test gap (for the training constraint) per epoch.
    pub gap_series: Vec<Option<f64>>,
    pub err_series: Vec<Option<f64>>,
    /// Loaded from disk rather than trained in this invocation.
    pub resumed: bool,
}

impl RunRecord {
    pub fn final_gap(&self) -> Option<f64> {
        self.final_report.gap(self.config.constraint)
    }

    pub fn swing(&self) -> Option<f64> {
        swing(&self.gap_series)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub config_id: String,
    pub seed: u64,
    pub reason: String,
}

/// Mean and sample standard deviation over a config's completed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigAggregate {
    pub config_id: String,
    pub overrides: Vec<(String, String)>,
    pub runs: usize,
    pub err_mean: f64,
    pub err_std: f64,
    /// `None` when some run's gap is undefined.
    pub gap_mean: Option<f64>,
    pub gap_std: Option<f64>,
    pub swing_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub aggregates: Vec<ConfigAggregate>,
    /// Selection over per-config means; `None` when nothing completed.
    pub nvp: Option<NvpSelection>,
}

impl ExperimentResult {
    pub fn aggregate(&self, id: &str) -> Option<&ConfigAggregate> {
        self.aggregates.iter().find(|a| a.config_id == id)
    }

    pub fn chosen(&self) -> Option<&ConfigAggregate> {
        self.aggregate(&self.nvp.as_ref()?.chosen)
    }

    pub fn runs_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.config_id == id)
    }
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Largest epoch-to-epoch change of a series, over consecutive defined pairs.
pub fn swing(series: &[Option<f64>]) -> Option<f64> {
    series
        .windows(2)
        .filter_map(|w| Some((w[1]? - w[0]?).abs()))
        .reduce(f64::max)
}

/// First 1-based epoch whose value is at most `threshold`.
pub fn first_at_or_below(series: &[Option<f64>], threshold: f64) -> Option<usize> {
    series
        .iter()
        .position(|v| v.is_some_and(|v| v <= threshold))
        .map(|i| i + 1)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_opt(cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::Invalid(format!("bad number `{cell}` in run artifact")))
}

/// Reads the metric row of a `final.csv`.
fn read_final(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let row = text
        .lines()
        .nth(1)
        .ok_or_else(|| Error::Invalid(format!("{} has no data row", path.display())))?;
    let cells: Vec<&str> = row.split(',').collect();
    if cells.len() != 9 {
        return Err(Error::Invalid(format!("{} is malformed", path.display())));
    }
    let v = |i: usize| parse_opt(cells[i]);
    Ok(MetricReport {
        err: v(1)?,
        err_by_group: [v(2)?, v(3)?],
        positive_rate: [None; 2],
        fnr: [None; 2],
        fpr: [None; 2],
        fdr: [None; 2],
        ddp: v(4)?,
        deo_fnr: v(5)?,
        deo_fpr: v(6)?,
        eodds: v(7)?,
        pp_fdr_gap: v(8)?,
    })
}

/// `(test_err, gap)` series from a `profile.csv`.
fn read_profile_series(path: &Path, constraint: Constraint) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let col = match constraint {
        Constraint::EqualOpportunity(true) => 3,
        Constraint::EqualOpportunity(false) => 4,
        Constraint::DemographicParity => 5,
    };
    let mut err = Vec::new();
    let mut gap = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(Error::Invalid(format!("{} is malformed", path.display())));
        }
        err.push(parse_opt(cells[2])?);
        gap.push(parse_opt(cells[col])?);
    }
    Ok((err, gap))
}

struct RunJob {
    config_id: String,
    overrides: Vec<(String, String)>,
    config: TrainConfig,
    repeat: u64,
}

fn execute(job: &RunJob, spec: &SweepSpec, data: &(Dataset, Dataset)) -> Result<RunRecord> {
    let dir = spec
        .out_dir
        .join("runs")
        .join(&job.config_id)
        .join(job.config.seed.to_string());
    let profile_path = dir.join("profile.csv");
    let final_path = dir.join("final.csv");
    if final_path.exists() && profile_path.exists() {
        let final_report = read_final(&final_path)?;
        let (err_series, gap_series) = read_profile_series(&profile_path, job.config.constraint)?;
        return Ok(RunRecord {
            config_id: job.config_id.clone(),
            repeat: job.repeat,
            seed: job.config.seed,
            config: job.config.clone(),
            overrides: job.overrides.clone(),
            final_report,
            profile_path,
            gap_series,
            err_series,
            resumed: true,
        });
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (train, test) = data;
    let out = trainers::train(&job.config, train, test)?;
    let final_report = out.profile.last().test;
    write_atomic(&dir.join("config.txt"), job.config.to_key_values().as_bytes())?;
    write_atomic(&profile_path, out.profile.to_csv_string().as_bytes())?;
    let final_csv = format!(
        "{}\n{}\n",
        fairmetrics::CSV_HEADER,
        final_report.csv_row(&job.config_id)
    );
    // written last: its presence marks the run complete
    write_atomic(&final_path, final_csv.as_bytes())?;
    log::info!("run {}/{} done", job.config_id, job.config.seed);
    Ok(RunRecord {
        config_id: job.config_id.clone(),
        repeat: job.repeat,
        seed: job.config.seed,
        config: job.config.clone(),
        overrides: job.overrides.clone(),
        final_report,
        profile_path,
        gap_series: out.profile.gap_series(),
        err_series: out.profile.epochs.iter().map(|e| e.test.err).collect(),
        resumed: false,
    })
}

fn aggregate(runs: &[RunRecord], configs: &[(String, Vec<(String, String)>)]) -> Vec<ConfigAggregate> {
    configs
        .iter()
        .filter_map(|(id, overrides)| {
            let rs: Vec<&RunRecord> = runs.iter().filter(|r| &r.config_id == id).collect();
            if rs.is_empty() {
                return None;
            }
            let errs: Vec<f64> = rs.iter().map(|r| r.final_report.err.unwrap_or(f64::NAN)).collect();
            let (err_mean, err_std) = mean_std(&errs);
            let gaps: Option<Vec<f64>> = rs.iter().map(|r| r.final_gap()).collect();
            let (gap_mean, gap_std) = match gaps {
                Some(g) => {
                    let (m, s) = mean_std(&g);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            let swing_max = rs.iter().filter_map(|r| r.swing()).reduce(f64::max);
            Some(ConfigAggregate {
                config_id: id.clone(),
                overrides: overrides.clone(),
                runs: rs.len(),
                err_mean,
                err_std,
                gap_mean,
                gap_std,
                swing_max,
            })
        })
        .collect()
}

fn aggregate_csv(aggs: &[ConfigAggregate], keys: &[String]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("id");
    for k in keys {
        let _ = write!(out, ",{k}");
    }
    out.push_str(",runs,err_mean,err_std,deo_mean,deo_std,swing_max\n");
    for a in aggs {
        out.push_str(&a.config_id);
        for k in keys {
            let v = a.overrides.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
            let _ = write!(out, ",{}", v.unwrap_or(""));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{}",
            a.runs,
            a.err_mean,
            a.err_std,
            opt(a.gap_mean),
            opt(a.gap_std),
            opt(a.swing_max)
        );
    }
    out
}

fn nvp_text(sel: &Option<NvpSelection>, failures: &[RunFailure]) -> String {
    let mut out = String::new();
    match sel {
        Some(s) => {
            let _ = writeln!(out, "best_err = {}", s.best_err);
            let _ = writeln!(out, "accuracy_floor = {}", s.accuracy_floor);
            let _ = writeln!(out, "admissible = {}", s.admissible.join(","));
            let _ = writeln!(out, "skipped = {}", s.skipped.join(","));
            let _ = writeln!(out, "chosen = {}", s.chosen);
        }
        None => out.push_str("chosen =\n"),
    }
    let _ = writeln!(out, "failed_runs = {}", failures.len());
    out
}

/// Runs every grid point × repeat, writes artifacts and selects by NVP over
/// per-config mean results. Individual run failures are recorded and
/// excluded; the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Result<ExperimentResult> {
    if spec.repeats == 0 {
        return Err(Error::Invalid("repeats must be >= 1".into()));
    }
    let configs = spec.configs()?;
    let mut jobs = Vec::new();
    let mut ids = Vec::new();
    for (overrides, config) in &configs {
        let id = config_id(config, &spec.data);
        if ids.iter().any(|(i, _): &(String, _)| *i == id) {
            return Err(Error::Invalid(format!("grid point {overrides:?} duplicates another")));
        }
        ids.push((id.clone(), overrides.clone()));
        for r in 0..spec.repeats as u64 {
            jobs.push(RunJob {
                config_id: id.clone(),
                overrides: overrides.clone(),
                config: TrainConfig {
                    seed: config.seed.wrapping_add(r),
                    ..config.clone()
                },
                repeat: r,
            });
        }
    }
    fs::create_dir_all(&spec.out_dir).map_err(|e| Error::io(&spec.out_dir, e))?;
    let mut datasets = BTreeMap::new();
    for r in 0..spec.repeats as u64 {
        datasets.insert(r, spec.data.load(r));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let outcomes: Vec<std::result::Result<RunRecord, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| match &datasets[&job.repeat] {
                Ok(data) => execute(job, spec, data).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => runs.push(r),
            Err(reason) => {
                log::warn!("run {}/{} failed: {reason}", job.config_id, job.config.seed);
                failures.push(RunFailure {
                    config_id: job.config_id.clone(),
                    seed: job.config.seed,
                    reason,
                });
            }
        }
    }
    let aggregates = aggregate(&runs, &ids);
    let candidates: Vec<NvpCandidate> = aggregates
        .iter()
        .map(|a| NvpCandidate::new(a.config_id.clone(), a.err_mean, a.gap_mean))
        .collect();
    let nvp = if candidates.is_empty() {
        None
    } else {
        fairmetrics::nvp_select(&candidates).ok()
    };
    let keys: Vec<String> = spec.grid.iter().map(|(k, _)| k.clone()).collect();
    write_atomic(
        &spec.out_dir.join("aggregate.csv"),
        aggregate_csv(&aggregates, &keys).as_bytes(),
    )?;
    write_atomic(&spec.out_dir.join("nvp.txt"), nvp_text(&nvp, &failures).as_bytes())?;
    Ok(ExperimentResult {
        runs,
        failures,
        aggregates,
        nvp,
    })
}

/// Epoch-aligned series of several labelled profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `label,epoch,test_err,deo` rows, undefined values empty.
    pub csv: String,
    /// Per label, the first epoch whose gap is at most the threshold.
    pub first_below: Vec<(String, Option<usize>)>,
    pub threshold: f64,
}

impl PlotData {
    /// One line per label, `never` when the threshold is not reached.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (label, epoch) in &self.first_below {
            let when = epoch.map(|e| format!("epoch {e}")).unwrap_or_else(|| "never".into());
            let _ = writeln!(out, "{label}: gap <= {} first at {when}", self.threshold);
        }
        out
    }
}

pub fn profile_plot_data(profiles: &[(&str, &TrainProfile)], threshold: f64) -> PlotData {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from("label,epoch,test_err,deo\n");
    let mut first_below = Vec::new();
    for (label, p) in profiles {
        let gaps = p.gap_series();
        for (e, g) in p.epochs.iter().zip(&gaps) {
            let _ = writeln!(csv, "{label},{},{},{}", e.epoch, opt(e.test.err), opt(*g));
        }
        first_below.push((label.to_string(), first_at_or_below(&gaps, threshold)));
    }
    PlotData {
        csv,
        first_below,
        threshold,
    }
}

/// The biased synthetic task used throughout the tests and the guide:
/// 500 samples split 400/100, positives concentrated in group `s0` (the
/// minority cells hold 13 samples each), one class feature and a proxy
/// feature that almost copies the group.
pub fn biased_benchmark() -> SynthSpec {
    SynthSpec {
        n_per_cell: [[13, 237], [237, 13]],
        dim: 2,
        bias_strength: 0.9,
        separation: 3.5,
        seed: 0,
    }
}

pub const BENCHMARK_TEST_FRACTION: f64 = 0.2;

pub fn benchmark_source() -> DataSource {
    DataSource::Synth {
        spec: biased_benchmark(),
        test_fraction: BENCHMARK_TEST_FRACTION,
    }
}

/// Training settings tuned for [`biased_benchmark`].
pub fn benchmark_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        eta: 1.0,
        tau: 0.3,
        batch_size: 64,
        epochs: 20,
        ..TrainConfig::default()
    }
}

/// A row of the standard-dataset table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableDataset {
    pub name: String,
    /// `None` when the data file is not available.
    pub source: Option<DataSource>,
}

/// Environment variable naming a dataset's CSV file.
pub fn dataset_env_var(name: &str) -> String {
    format!("FAIRALM_{}_CSV", name.to_ascii_uppercase())
}

/// Environment variable naming a dataset's schema file (`key = value`).
pub fn schema_env_var(name: &str) -> String {
    format!("FAIRALM_{}_SCHEMA", name.to_ascii_uppercase())
}

pub const STANDARD_DATASETS: [&str; 4] = ["adult", "compas", "german", "law"];

/// The four standard tabular datasets, located through
/// `FAIRALM_<NAME>_CSV`. A dataset whose variable is unset or points to a
/// missing file is unavailable. The schema defaults to the canonical
/// layout (`y`, `s`, every other column a feature) with standardization
/// on, and can be overridden through `FAIRALM_<NAME>_SCHEMA`.
pub fn standard_datasets() -> Result<Vec<TableDataset>> {
    STANDARD_DATASETS
        .iter()
        .map(|name| {
            let source = match std::env::var_os(dataset_env_var(name)) {
                Some(path) if Path::new(&path).is_file() => {
                    let mut schema = DatasetSchema {
                        standardize: true,
                        ..DatasetSchema::default()
                    };
                    if let Some(schema_path) = std::env::var_os(schema_env_var(name)) {
                        let file = crate::config::KeyValueFile::read(schema_path)?;
                        schema.apply_all(file.section(""))?;
                    }
                    Some(DataSource::Csv {
                        path: PathBuf::from(path),
                        schema,
                        test_fraction: 0.3,
                    })
                }
                _ => None,
            };
            Ok(TableDataset {
                name: name.to_string(),
                source,
            })
        })
        .collect()
}

/// Published reference rows: `(dataset, method, ERR %, DEO %)`. These are
/// quoted numbers, never recomputed.
pub const REFERENCE_ROWS: &[(&str, &str, Option<&str>, Option<&str>)] = &[
    ("adult", "zafar", Some("22.0"), Some("5.0")),
    ("adult", "hardt", Some("18.0"), Some("11.0")),
    ("adult", "donini", Some("19.0"), Some("1.0")),
    ("adult", "agarwal", Some("17.0"), Some("1.0")),
    ("adult", "fairalm (published)", Some("15.8 ± 1.0"), Some("0.7 ± 0.6")),
    ("compas", "zafar", Some("31.0"), Some("10.0")),
    ("compas", "hardt", Some("29.0"), Some("8.0")),
    ("compas", "donini", Some("27.0"), Some("5.0")),
    ("compas", "agarwal", Some("31.0"), Some("3.0")),
    ("compas", "fairalm (published)", Some("34.7 ± 1.0"), Some("0.1 ± 0.1")),
    ("german", "zafar", Some("38.0"), Some("13.0")),
    ("german", "hardt", Some("29.0"), Some("11.0")),
    ("german", "donini", Some("27.0"), Some("5.0")),
    ("german", "agarwal", None, None),
    ("german", "fairalm (published)", Some("24.3 ± 2.7"), Some("10.8 ± 4.5")),
    ("law", "zafar", None, None),
    ("law", "hardt", Some("4.5"), Some("0.0")),
    ("law", "donini", None, None),
    ("law", "agarwal", Some("4.5"), Some("1.0")),
    ("law", "fairalm (published)", Some("4.8 ± 0.1"), Some("0.4 ± 0.2")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub dataset: String,
    pub method: String,
    /// Percentages `(mean, std)`; `None` when unavailable.
    pub err: Option<(f64, f64)>,
    pub deo: Option<(f64, f64)>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn row(&self, dataset: &str, method: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,method,err_pct_mean,err_pct_std,deo_pct_mean,deo_pct_std,status\n");
        let pair = |v: Option<(f64, f64)>| match v {
            Some((m, s)) => format!("{m},{s}"),
            None => ",".into(),
        };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.dataset,
                r.method,
                pair(r.err),
                pair(r.deo),
                r.status
            );
        }
        for (d, m, e, g) in REFERENCE_ROWS {
            let _ = writeln!(out, "{d},{m},{},,{},,reference", e.unwrap_or(""), g.unwrap_or(""));
        }
        out
    }

    /// Aligned text rendering, measured rows first, then reference rows.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<(f64, f64)>| match v {
            Some((m, s)) => format!("{m:.1} ± {s:.1}"),
            None => "–".into(),
        };
        let mut lines: Vec<[String; 5]> = vec![[
            "dataset".into(),
            "method".into(),
            "ERR %".into(),
            "DEO %".into(),
            "status".into(),
        ]];
        for r in &self.rows {
            lines.push([
                r.dataset.clone(),
                r.method.clone(),
                cell(r.err),
                cell(r.deo),
                r.status.clone(),
            ]);
        }
        for (d, m, e, g) in REFERENCE_ROWS {
            lines.push([
                d.to_string(),
                m.to_string(),
                e.unwrap_or("–").to_string(),
                g.unwrap_or("–").to_string(),
                "reference".into(),
            ]);
        }
        let mut widths = [0usize; 5];
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// Settings shared by every cell of the standard table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub base: TrainConfig,
    /// Per-method hyper-parameter grid searched with NVP.
    pub grid: Vec<(String, Vec<String>)>,
    pub repeats: usize,
    pub out_dir: PathBuf,
    pub workers: usize,
}

/// For every `(dataset, method)`, sweeps the grid, selects by NVP and
/// reports the chosen configuration's mean ± std ERR and DEO in percent.
/// Unavailable datasets and failed sweeps become rows with a status.
pub fn standard_table(datasets: &[TableDataset], methods: &[Method], spec: &TableSpec) -> Table {
    let mut rows = Vec::new();
    for ds in datasets {
        for &method in methods {
            let mut row = TableRow {
                dataset: ds.name.clone(),
                method: method.to_string(),
                err: None,
                deo: None,
                status: String::new(),
            };
            let Some(source) = &ds.source else {
                row.status = "skipped: dataset not provided".into();
                rows.push(row);
                continue;
            };
            let sweep = SweepSpec {
                base: TrainConfig {
                    method,
                    ..spec.base.clone()
                },
                grid: spec.grid.clone(),
                repeats: spec.repeats,
                data: source.clone(),
                out_dir: spec.out_dir.join(&ds.name).join(method.name()),
                workers: spec.workers,
            };
            match run_sweep(&sweep) {
                Ok(res) => match res.chosen() {
                    Some(a) => {
                        row.err = Some((100.0 * a.err_mean, 100.0 * a.err_std));
                        row.deo = a.gap_mean.zip(a.gap_std).map(|(m, s)| (100.0 * m, 100.0 * s));
                        row.status = format!("ok ({} runs)", a.runs);
                    }
                    None => row.status = "failed: no completed runs".into(),
                },
                Err(e) => row.status = format!("failed: {e}"),
            }
            rows.push(row);
        }
    }
    Table { rows }
}
