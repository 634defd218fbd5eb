//! Layered settings: defaults, then the config file, then `--set`, then
//! explicit flags. Every section maps onto one [`KeyValueConfig`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fairalm::config::{parse_value, split_override, ConfigError, KeyValueConfig, KeyValueFile};
use fairalm::data::{DatasetSchema, SynthSpec};
use fairalm::harness::{biased_benchmark, DataSource, BENCHMARK_TEST_FRACTION};
use fairalm::trainers::{Method, TrainConfig};

pub const SECTIONS: [&str; 8] = ["train", "synth", "schema", "data", "sweep", "game", "verify", "table"];

/// Reference settings shown next to the defaults in help.
const REFERENCE: [(&str, &str); 3] = [("eta_beta", "0.01"), ("epsilon", "0.05"), ("inner_sgd_passes", "5")];

pub const CSV_TEST_FRACTION: f64 = 0.3;

fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    let items: Vec<&str> = value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason: "expected a comma-separated list".into(),
        });
    }
    items.into_iter().map(|v| parse_value(key, v)).collect()
}

fn parse_opt<T>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataSettings {
    /// CSV file; synthetic data when absent.
    pub csv: Option<PathBuf>,
    /// `None` picks the per-source default.
    pub test_fraction: Option<f64>,
    /// Draw/split index passed to the data source.
    pub repeat: u64,
}

impl KeyValueConfig for DataSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "csv" => self.csv = parse_opt(key, value)?,
            "test_fraction" => self.test_fraction = parse_opt(key, value)?,
            "repeat" => self.repeat = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("csv".into(), self.csv.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("test_fraction".into(), opt_str(&self.test_fraction)),
            ("repeat".into(), self.repeat.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub repeats: usize,
    pub workers: usize,
    pub grid: Vec<(String, Vec<String>)>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            repeats: 5,
            workers: 0,
            grid: Vec::new(),
        }
    }
}

impl SweepSettings {
    pub fn set_grid(&mut self, key: &str, values: &str) -> Result<(), ConfigError> {
        let vals: Vec<String> = parse_list(key, values)?;
        // reject unknown training keys here rather than mid-sweep
        TrainConfig::default().set(key, &vals[0])?;
        match self.grid.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = vals,
            None => self.grid.push((key.to_string(), vals)),
        }
        Ok(())
    }
}

impl KeyValueConfig for SweepSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "repeats" => self.repeats = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            _ => match key.strip_prefix("grid.") {
                Some(k) => self.set_grid(k, value)?,
                None => return Err(ConfigError::UnknownKey { key: key.into() }),
            },
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("repeats".into(), self.repeats.to_string()),
            ("workers".into(), self.workers.to_string()),
        ];
        out.extend(self.grid.iter().map(|(k, v)| (format!("grid.{k}"), v.join(","))));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSettings {
    /// `None` plays each horizon with `η = 1/T`.
    pub eta: Option<f64>,
    pub horizons: Vec<u64>,
    /// Pool CSV; the bundled demo pool when absent.
    pub pool: Option<PathBuf>,
    /// Rounds of pool growing on the configured data; 0 disables.
    pub grow_rounds: usize,
    pub bound: Option<f64>,
    /// Write the per-round trace of the longest horizon.
    pub trace: bool,
}

impl Default for GameSettings {
    fn default() -> Self {
        GameSettings {
            eta: None,
            horizons: vec![100, 1000, 10000],
            pool: None,
            grow_rounds: 0,
            bound: None,
            trace: false,
        }
    }
}

impl KeyValueConfig for GameSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "eta" => self.eta = parse_opt(key, value)?,
            "horizons" => self.horizons = parse_list(key, value)?,
            "pool" => self.pool = parse_opt(key, value)?,
            "grow_rounds" => self.grow_rounds = parse_value(key, value)?,
            "bound" => self.bound = parse_opt(key, value)?,
            "trace" => self.trace = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("eta".into(), opt_str(&self.eta)),
            ("horizons".into(), join(&self.horizons)),
            ("pool".into(), self.pool.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("grow_rounds".into(), self.grow_rounds.to_string()),
            ("bound".into(), opt_str(&self.bound)),
            ("trace".into(), self.trace.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub trials: usize,
    pub rounds: usize,
    pub etas: Vec<f64>,
    pub seed: u64,
    pub horizons: Vec<u64>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            trials: 1000,
            rounds: 512,
            etas: vec![0.1, 1.0, 10.0],
            seed: 7,
            horizons: vec![100, 1000, 10000],
        }
    }
}

impl KeyValueConfig for VerifySettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "trials" => self.trials = parse_value(key, value)?,
            "rounds" => self.rounds = parse_value(key, value)?,
            "etas" => self.etas = parse_list(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "horizons" => self.horizons = parse_list(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("trials".into(), self.trials.to_string()),
            ("rounds".into(), self.rounds.to_string()),
            ("etas".into(), join(&self.etas)),
            ("seed".into(), self.seed.to_string()),
            ("horizons".into(), join(&self.horizons)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSettings {
    pub repeats: usize,
    pub workers: usize,
    pub etas: Vec<String>,
    pub methods: Vec<Method>,
}

impl Default for TableSettings {
    fn default() -> Self {
        TableSettings {
            repeats: 5,
            workers: 0,
            etas: vec!["0.5".into(), "1".into(), "2".into()],
            methods: Method::ALL.to_vec(),
        }
    }
}

impl KeyValueConfig for TableSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "repeats" => self.repeats = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            "etas" => {
                let v: Vec<f64> = parse_list(key, value)?;
                self.etas = v.iter().map(f64::to_string).collect();
            }
            "methods" => self.methods = parse_list(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("repeats".into(), self.repeats.to_string()),
            ("workers".into(), self.workers.to_string()),
            ("etas".into(), self.etas.join(",")),
            ("methods".into(), join(&self.methods)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub schema: DatasetSchema,
    pub data: DataSettings,
    pub sweep: SweepSettings,
    pub game: GameSettings,
    pub verify: VerifySettings,
    pub table: TableSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            synth: biased_benchmark(),
            schema: DatasetSchema::default(),
            data: DataSettings::default(),
            sweep: SweepSettings::default(),
            game: GameSettings::default(),
            verify: VerifySettings::default(),
            table: TableSettings::default(),
        }
    }
}

/// A `(section, key, value)` override from an explicit flag.
pub type Flag = (&'static str, &'static str, String);

impl Settings {
    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        match section {
            "train" => self.train.set(key, value),
            "synth" => self.synth.set(key, value),
            "schema" => self.schema.set(key, value),
            "data" => self.data.set(key, value),
            "sweep" => self.sweep.set(key, value),
            "game" => self.game.set(key, value),
            "verify" => self.verify.set(key, value),
            "table" => self.table.set(key, value),
            _ => unreachable!("section names are checked first"),
        }
    }

    fn section_pairs(&self, name: &str) -> Vec<(String, String)> {
        match name {
            "train" => self.train.pairs(),
            "synth" => self.synth.pairs(),
            "schema" => self.schema.pairs(),
            "data" => self.data.pairs(),
            "sweep" => self.sweep.pairs(),
            "game" => self.game.pairs(),
            "verify" => self.verify.pairs(),
            "table" => self.table.pairs(),
            _ => Vec::new(),
        }
    }

    /// Resolves defaults < `file` < `sets` < `flags`. Unprefixed `--set`
    /// keys go to `primary`.
    pub fn resolve(file: Option<&Path>, sets: &[String], primary: &str, flags: Vec<Flag>) -> Result<Self, ConfigError> {
        let mut kv = match file {
            Some(p) => KeyValueFile::read(p)?,
            None => KeyValueFile::default(),
        };
        for name in kv.section_names() {
            if !SECTIONS.contains(&name) {
                let what = if name.is_empty() { "keys outside a [section]".to_string() } else { format!("[{name}]") };
                return Err(ConfigError::Syntax {
                    line: 0,
                    message: format!("{what} not recognised; sections are {}", SECTIONS.join(", ")),
                });
            }
        }
        for s in sets {
            let (key, value) = split_override(s)?;
            let (section, key) = match key.split_once('.') {
                Some((sec, k)) if SECTIONS.contains(&sec) => (sec, k),
                Some(_) => return Err(ConfigError::UnknownKey { key: key.into() }),
                None => (primary, key),
            };
            kv.insert(section, key, value);
        }
        for (section, key, value) in flags {
            kv.insert(section, key, &value);
        }
        let mut out = Settings::default();
        for name in SECTIONS {
            for (k, v) in kv.section(name) {
                out.set(name, k, v).map_err(|e| match e {
                    ConfigError::UnknownKey { key } => ConfigError::UnknownKey {
                        key: format!("{name}.{key}"),
                    },
                    other => other,
                })?;
            }
        }
        Ok(out)
    }

    /// The data source described by `[data]`, `[synth]` and `[schema]`.
    pub fn data_source(&self) -> DataSource {
        match &self.data.csv {
            Some(path) => DataSource::Csv {
                path: path.clone(),
                schema: self.schema.clone(),
                test_fraction: self.data.test_fraction.unwrap_or(CSV_TEST_FRACTION),
            },
            None => DataSource::Synth {
                spec: self.synth.clone(),
                test_fraction: self.data.test_fraction.unwrap_or(BENCHMARK_TEST_FRACTION),
            },
        }
    }

    /// The given sections as a config file that resolves back to `self`.
    pub fn dump(&self, sections: &[&str]) -> String {
        let mut out = String::new();
        for name in sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in self.section_pairs(name) {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Help text listing every key of `sections` with its default.
pub fn keys_help(sections: &[&str]) -> String {
    let defaults = Settings::default();
    let mut out = String::from("Config keys (file sections, or --set section.key=value) and defaults:\n");
    for name in sections {
        let _ = writeln!(out, "  [{name}]");
        for (k, v) in defaults.section_pairs(name) {
            let shown = if v.is_empty() { "(unset)".to_string() } else { v };
            let reference = REFERENCE
                .iter()
                .find(|(rk, _)| *name == "train" && *rk == k)
                .map(|(_, rv)| format!("  [reference: {rv}]"))
                .unwrap_or_default();
            let _ = writeln!(out, "    {k} = {shown}{reference}");
        }
    }
    if sections.contains(&"data") {
        let _ = writeln!(
            out,
            "  test_fraction defaults to {BENCHMARK_TEST_FRACTION} for synthetic data and {CSV_TEST_FRACTION} for CSV files."
        );
    }
    out
}
