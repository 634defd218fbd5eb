//! Samples, datasets, CSV ingestion, synthetic biased data and stratified
//! splits.
//!
//! A sample is a triple `(x, y, s)`: a feature vector, a binary label and a
//! binary protected group. Datasets are immutable once built; every
//! operation that reorders or subsets returns a new [`Dataset`].

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::config::{parse_value, ConfigError, KeyValueConfig};
use crate::Constraint;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: column `{column}` not found in header")]
    MissingColumn { column: String },
    #[error("schema error: column `{column}` is used both as a feature and as label/protected")]
    OverlappingColumns { column: String },
    #[error("parse error at data row {row}, column `{column}`: `{value}` is not a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("cardinality error: column `{column}` has {} distinct values ({}), expected at most 2", values.len(), values.join(", "))]
    Cardinality { column: String, values: Vec<String> },
    #[error("sample {row} has {found} features, dataset dimension is {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("synthetic spec error: {0}")]
    Spec(String),
    #[error("dataset has no samples with y={label} in group {group}")]
    EmptyCell { label: u8, group: Group },
    #[error("dataset is empty")]
    Empty,
    #[error("split fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error("no feature column survives standardization")]
    NoFeatures,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Binary protected attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    S0,
    S1,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::S0, Group::S1];

    pub fn index(self) -> usize {
        match self {
            Group::S0 => 0,
            Group::S1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Group {
        if i == 0 {
            Group::S0
        } else {
            Group::S1
        }
    }

    pub fn other(self) -> Group {
        match self {
            Group::S0 => Group::S1,
            Group::S1 => Group::S0,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::S0 => f.write_str("s0"),
            Group::S1 => f.write_str("s1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: bool,
    pub group: Group,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: bool, group: Group) -> Self {
        Sample {
            features,
            label,
            group,
        }
    }
}

/// How to read a CSV file into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub label_column: String,
    /// Label cells equal to this string map to `y = 1`, everything else to 0.
    pub positive_label_value: String,
    pub protected_column: String,
    /// Protected cells equal to this string map to `s0`, everything else to `s1`.
    pub group0_value: String,
    /// Feature columns in order. Empty means "every other column".
    pub feature_columns: Vec<String>,
    pub standardize: bool,
}

impl Default for DatasetSchema {
    /// The canonical layout written by [`Dataset::write_csv`].
    fn default() -> Self {
        DatasetSchema {
            label_column: "y".into(),
            positive_label_value: "1".into(),
            protected_column: "s".into(),
            group0_value: "0".into(),
            feature_columns: Vec::new(),
            standardize: false,
        }
    }
}

impl KeyValueConfig for DatasetSchema {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "label_column" => self.label_column = value.into(),
            "positive_label_value" => self.positive_label_value = value.into(),
            "protected_column" => self.protected_column = value.into(),
            "group0_value" => self.group0_value = value.into(),
            "feature_columns" => {
                self.feature_columns = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "standardize" => self.standardize = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("label_column".into(), self.label_column.clone()),
            ("positive_label_value".into(), self.positive_label_value.clone()),
            ("protected_column".into(), self.protected_column.clone()),
            ("group0_value".into(), self.group0_value.clone()),
            ("feature_columns".into(), self.feature_columns.join(",")),
            ("standardize".into(), self.standardize.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    feature_names: Vec<String>,
    schema: DatasetSchema,
    synth: Option<SynthSpec>,
}

impl Dataset {
    /// Builds a dataset, checking every sample against the declared
    /// dimensionality `feature_names.len()`.
    pub fn new(samples: Vec<Sample>, feature_names: Vec<String>) -> Result<Self, DataError> {
        let dim = feature_names.len();
        if dim == 0 {
            return Err(DataError::NoFeatures);
        }
        if let Some((row, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.features.len() != dim)
        {
            return Err(DataError::DimensionMismatch {
                row,
                expected: dim,
                found: s.features.len(),
            });
        }
        Ok(Dataset {
            samples,
            dim,
            feature_names,
            schema: DatasetSchema::default(),
            synth: None,
        })
    }

    /// Same as [`Dataset::new`] with generic feature names `x0, x1, ...`.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, DataError> {
        let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
        Self::new(samples, (0..dim).map(|j| format!("x{j}")).collect())
    }

    pub fn with_schema(mut self, schema: DatasetSchema) -> Self {
        self.schema = schema;
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// The generating spec, for datasets produced by [`synth`].
    pub fn synth_spec(&self) -> Option<&SynthSpec> {
        self.synth.as_ref()
    }

    /// Sample counts indexed `[y][s]`.
    pub fn cell_counts(&self) -> [[usize; 2]; 2] {
        let mut counts = [[0usize; 2]; 2];
        for s in &self.samples {
            counts[s.label as usize][s.group.index()] += 1;
        }
        counts
    }

    pub fn group_counts(&self) -> [usize; 2] {
        let c = self.cell_counts();
        [c[0][0] + c[1][0], c[0][1] + c[1][1]]
    }

    /// Checks that both groups have a non-empty constraint cell.
    pub fn require_cells(&self, constraint: Constraint) -> Result<(), DataError> {
        let counts = self.cell_counts();
        for g in Group::BOTH {
            let n = match constraint {
                Constraint::DemographicParity => counts[0][g.index()] + counts[1][g.index()],
                Constraint::EqualOpportunity(y) => counts[y as usize][g.index()],
            };
            if n == 0 {
                return Err(match constraint {
                    Constraint::DemographicParity => DataError::Empty,
                    Constraint::EqualOpportunity(y) => DataError::EmptyCell {
                        label: y as u8,
                        group: g,
                    },
                });
            }
        }
        Ok(())
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            feature_names: self.feature_names.clone(),
            schema: self.schema.clone(),
            synth: self.synth.clone(),
        }
    }

    /// Writes the canonical CSV: feature columns, then `y` (`0`/`1`) and `s`
    /// (`0` for `s0`, `1` for `s1`). Floats use the shortest representation
    /// that parses back to the same value.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push("y");
        header.push("s");
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 2);
        for s in &self.samples {
            row.clear();
            row.extend(s.features.iter().map(|v| v.to_string()));
            row.push(if s.label { "1" } else { "0" }.to_string());
            row.push(s.group.index().to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }
}

/// Reads a CSV file into a dataset according to `schema`.
///
/// With `schema.standardize` set, features are shifted and scaled to zero
/// mean and unit variance using statistics of this file; zero-variance
/// columns are dropped with a warning.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.to_string(),
            })
    };
    let label_idx = find(&schema.label_column)?;
    let group_idx = find(&schema.protected_column)?;
    let feature_names: Vec<String> = if schema.feature_columns.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx && *i != group_idx)
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        schema.feature_columns.clone()
    };
    for name in &feature_names {
        if *name == schema.label_column || *name == schema.protected_column {
            return Err(DataError::OverlappingColumns {
                column: name.clone(),
            });
        }
    }
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut samples = Vec::new();
    let mut label_values = BTreeSet::new();
    let mut group_values = BTreeSet::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let label_cell = record.get(label_idx).unwrap_or("");
        let group_cell = record.get(group_idx).unwrap_or("");
        label_values.insert(label_cell.to_string());
        group_values.insert(group_cell.to_string());
        let mut features = Vec::with_capacity(feature_idx.len());
        for (&j, name) in feature_idx.iter().zip(&feature_names) {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                row,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            features.push(v);
        }
        let group = if group_cell == schema.group0_value {
            Group::S0
        } else {
            Group::S1
        };
        samples.push(Sample::new(
            features,
            label_cell == schema.positive_label_value,
            group,
        ));
    }
    for (column, values) in [
        (&schema.label_column, label_values),
        (&schema.protected_column, group_values),
    ] {
        if values.len() > 2 {
            return Err(DataError::Cardinality {
                column: column.clone(),
                values: values.into_iter().collect(),
            });
        }
    }
    let data = Dataset::new(samples, feature_names)?.with_schema(schema.clone());
    if schema.standardize {
        let st = Standardizer::fit(&data)?;
        st.transform(&data)
    } else {
        Ok(data)
    }
}

/// Per-column affine standardization fitted on one dataset and reusable on
/// others (fit on the training split, apply to both splits).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    kept: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    dropped: Vec<String>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self, DataError> {
        if data.is_empty() {
            return Err(DataError::Empty);
        }
        let n = data.len() as f64;
        let mut st = Standardizer {
            kept: Vec::new(),
            mean: Vec::new(),
            scale: Vec::new(),
            dropped: Vec::new(),
        };
        for j in 0..data.dim() {
            let mean = data.samples.iter().map(|s| s.features[j]).sum::<f64>() / n;
            let var = data
                .samples
                .iter()
                .map(|s| (s.features[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            if sd <= f64::EPSILON * mean.abs().max(1.0) {
                log::warn!(
                    "dropping zero-variance feature column `{}`",
                    data.feature_names[j]
                );
                st.dropped.push(data.feature_names[j].clone());
            } else {
                st.kept.push(j);
                st.mean.push(mean);
                st.scale.push(sd);
            }
        }
        if st.kept.is_empty() {
            return Err(DataError::NoFeatures);
        }
        Ok(st)
    }

    /// Names of the columns dropped for having zero variance.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset, DataError> {
        let names = self
            .kept
            .iter()
            .map(|&j| data.feature_names[j].clone())
            .collect();
        let samples = data
            .samples
            .iter()
            .map(|s| {
                let features = self
                    .kept
                    .iter()
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|(&j, (m, sd))| (s.features[j] - m) / sd)
                    .collect();
                Sample::new(features, s.label, s.group)
            })
            .collect();
        let mut out = Dataset::new(samples, names)?.with_schema(data.schema.clone());
        out.synth = data.synth.clone();
        Ok(out)
    }
}

/// Parameters of the synthetic biased-data generator.
///
/// The first `dim - 1` features are two unit-variance Gaussian clusters
/// whose class means sit `separation` apart along the all-ones direction.
/// The last feature is a proxy of the group,
/// `bias_strength * 1[s = s1] + (1 - bias_strength) * N(0, 1)`: pure noise at
/// 0, an exact copy of the group indicator at 1. Unequal `n_per_cell`
/// counts correlate the label with the group, which is what lets a
/// classifier "cheat" through the proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Sample counts indexed `[y][s]`.
    pub n_per_cell: [[usize; 2]; 2],
    pub dim: usize,
    pub bias_strength: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_per_cell: [[100, 100], [100, 100]],
            dim: 3,
            bias_strength: 0.5,
            separation: 2.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn total(&self) -> usize {
        self.n_per_cell.iter().flatten().sum()
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.dim < 2 {
            return Err(DataError::Spec(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.n_per_cell.iter().flatten().any(|&n| n == 0) {
            return Err(DataError::Spec("every (y, s) cell needs at least one sample".into()));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return Err(DataError::Spec(format!(
                "bias_strength must lie in [0, 1], got {}",
                self.bias_strength
            )));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(DataError::Spec(format!(
                "separation must be positive, got {}",
                self.separation
            )));
        }
        Ok(())
    }

    /// Score of the equal-prior Bayes rule on the class features; its sign
    /// is the fair reference classifier (it ignores the proxy).
    pub fn class_score(&self, features: &[f64]) -> f64 {
        features[..self.dim - 1].iter().sum()
    }

    /// The "cheating" rule: reads the group off the proxy feature.
    pub fn proxy_group(&self, features: &[f64]) -> Group {
        if features[self.dim - 1] > self.bias_strength / 2.0 {
            Group::S1
        } else {
            Group::S0
        }
    }
}

impl KeyValueConfig for SynthSpec {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "n_y0_s0" => self.n_per_cell[0][0] = parse_value(key, value)?,
            "n_y0_s1" => self.n_per_cell[0][1] = parse_value(key, value)?,
            "n_y1_s0" => self.n_per_cell[1][0] = parse_value(key, value)?,
            "n_y1_s1" => self.n_per_cell[1][1] = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "bias_strength" => self.bias_strength = parse_value(key, value)?,
            "separation" => self.separation = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("n_y0_s0".into(), self.n_per_cell[0][0].to_string()),
            ("n_y0_s1".into(), self.n_per_cell[0][1].to_string()),
            ("n_y1_s0".into(), self.n_per_cell[1][0].to_string()),
            ("n_y1_s1".into(), self.n_per_cell[1][1].to_string()),
            ("dim".into(), self.dim.to_string()),
            ("bias_strength".into(), self.bias_strength.to_string()),
            ("separation".into(), self.separation.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// Generates a dataset from `spec`. Samples are emitted cell by cell in the
/// order `(y=0,s0), (y=0,s1), (y=1,s0), (y=1,s1)`.
pub fn synth(spec: &SynthSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_dims = spec.dim - 1;
    let offset = spec.separation / 2.0 / (class_dims as f64).sqrt();
    let b = spec.bias_strength;
    let mut samples = Vec::with_capacity(spec.total());
    for y in [false, true] {
        for g in Group::BOTH {
            let sign = if y { 1.0 } else { -1.0 };
            for _ in 0..spec.n_per_cell[y as usize][g.index()] {
                let mut features = Vec::with_capacity(spec.dim);
                for _ in 0..class_dims {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(sign * offset + z);
                }
                let z: f64 = rng.sample(StandardNormal);
                features.push(b * g.index() as f64 + (1.0 - b) * z);
                samples.push(Sample::new(features, y, g));
            }
        }
    }
    let mut names: Vec<String> = (0..class_dims).map(|j| format!("x{j}")).collect();
    names.push("proxy".into());
    let mut data = Dataset::new(samples, names)?;
    data.synth = Some(spec.clone());
    Ok(data)
}

/// Train/test index sets produced by [`split_indices`], each sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split by `(y, s)` cell.
///
/// The test set has `round(test_fraction * n)` samples over the eligible
/// cells, allocated by largest remainder so each cell's test share is within
/// one sample of `test_fraction * |cell|`. Cells with fewer than two samples
/// go wholly to train.
pub fn split_indices(data: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitIndices, DataError> {
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Fraction(test_fraction));
    }
    let mut cells: [Vec<usize>; 4] = Default::default();
    for (i, s) in data.samples.iter().enumerate() {
        cells[2 * s.label as usize + s.group.index()].push(i);
    }
    let eligible: Vec<usize> = (0..4)
        .filter(|&c| {
            let n = cells[c].len();
            if n == 1 {
                log::warn!(
                    "stratified split: cell (y={}, s{}) has a single sample; assigning it to train",
                    c / 2,
                    c % 2
                );
            }
            n >= 2
        })
        .collect();
    let n_eligible: usize = eligible.iter().map(|&c| cells[c].len()).sum();
    let target = (test_fraction * n_eligible as f64).round() as usize;
    let mut quota = [0usize; 4];
    let mut remainders = Vec::new();
    for &c in &eligible {
        let exact = test_fraction * cells[c].len() as f64;
        quota[c] = exact.floor() as usize;
        remainders.push((exact - exact.floor(), c));
    }
    let assigned: usize = quota.iter().sum();
    // largest remainder first, ties to the lower cell index
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take(target.saturating_sub(assigned)) {
        quota[c] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in cells.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let k = quota[c].min(members.len());
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// [`split_indices`] materialised as `(train, test)` datasets.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let idx = split_indices(data, test_fraction, seed)?;
    Ok((data.subset(&idx.train), data.subset(&idx.test)))
}
