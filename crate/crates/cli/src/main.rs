//! `fairalm` command-line front end.
//!
//! Progress and errors go to stderr. Stdout carries results and ends with a
//! single `summary status=... command=...` line.

mod settings;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};
use fairalm::config::ConfigError;
use fairalm::data::synth;
use fairalm::fairmetrics::CSV_HEADER;
use fairalm::harness::{config_id, run_sweep, standard_datasets, standard_table, SweepSpec, TableSpec};
use fairalm::lineargame::{
    grow_pool, read_pool_csv, regret_fuzz, run_game, saddle_decay, saddle_gap, write_trace, GameConfig,
    GrowConfig, PoolStats,
};
use fairalm::trainers::{self, TrainError};

use settings::{keys_help, Flag, Settings};

#[derive(Parser, Debug)]
#[command(name = "fairalm", version, about = "Fair classifiers via an augmented-Lagrangian game")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Config file with [train], [synth], [schema], [data], [sweep], [game], [verify] and [table] sections
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key; unprefixed keys go to the command's main section
    #[arg(long = "set", global = true, value_name = "[SECTION.]KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long, global = true, env = "FAIRALM_OUT", default_value = "fairalm-out")]
    out: PathBuf,
    /// More log output on stderr (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only log errors
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to CSV
    #[command(after_help = keys_help(&["synth"]))]
    Synth(SynthArgs),
    /// Train one model and write its profile, final metrics and weights
    #[command(after_help = keys_help(&["train", "data", "synth", "schema"]))]
    Train(TrainArgs),
    /// Sweep a hyper-parameter grid over repeats and select by NVP
    #[command(after_help = keys_help(&["train", "sweep", "data", "synth", "schema"]))]
    Sweep(SweepArgs),
    /// Play the finite-pool game and report the saddle gap per horizon
    #[command(after_help = keys_help(&["game", "train", "data", "synth", "schema"]))]
    Game(GameArgs),
    /// Check the cumulative-reward bound and the saddle-gap decay
    #[command(after_help = keys_help(&["verify"]))]
    Verify(VerifyArgs),
    /// Build the standard-dataset table from FAIRALM_<NAME>_CSV files
    #[command(after_help = keys_help(&["table", "train"]))]
    Table(TableArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output CSV [default: <out>/synth.csv]
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Generator seed
    #[arg(long)]
    seed: Option<String>,
    /// How strongly the proxy feature copies the group, in [0, 1]
    #[arg(long)]
    bias_strength: Option<String>,
    /// Distance between the class means
    #[arg(long)]
    separation: Option<String>,
    /// Number of features, proxy included
    #[arg(long)]
    dim: Option<String>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    /// fairalm, unconstrained, l2_penalty, reweight, lagrangian or proxy_lagrangian
    #[arg(long)]
    method: Option<String>,
    /// linear or mlp-<hidden>
    #[arg(long)]
    architecture: Option<String>,
    /// Dual step size (penalty weight for l2_penalty, weight scale for reweight)
    #[arg(long)]
    eta: Option<String>,
    /// Per-round multiplicative growth of eta
    #[arg(long)]
    eta_beta: Option<String>,
    /// Primal step size
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Constraint tolerance of the Lagrangian baselines
    #[arg(long)]
    epsilon: Option<String>,
    /// Multiplier budget of proxy_lagrangian
    #[arg(long)]
    budget: Option<String>,
    /// Primal steps per round
    #[arg(long)]
    inner_sgd_passes: Option<String>,
    /// Initialisation and shuffling seed
    #[arg(long)]
    seed: Option<String>,
    /// eo1 (FNR gap), eo0 (FPR gap) or dp
    #[arg(long)]
    constraint: Option<String>,
}

impl TrainFlags {
    fn flags(&self) -> Vec<Flag> {
        let fields = [
            ("method", &self.method),
            ("architecture", &self.architecture),
            ("eta", &self.eta),
            ("eta_beta", &self.eta_beta),
            ("tau", &self.tau),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("epsilon", &self.epsilon),
            ("budget", &self.budget),
            ("inner_sgd_passes", &self.inner_sgd_passes),
            ("seed", &self.seed),
            ("constraint", &self.constraint),
        ];
        collect("train", fields)
    }
}

#[derive(Args, Debug)]
struct DataFlags {
    /// CSV dataset; synthetic data from [synth] when absent
    #[arg(long, value_name = "FILE")]
    data: Option<String>,
    #[arg(long)]
    test_fraction: Option<String>,
}

impl DataFlags {
    fn flags(&self) -> Vec<Flag> {
        collect("data", [("csv", &self.data), ("test_fraction", &self.test_fraction)])
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    data: DataFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    data: DataFlags,
    /// Grid axis, e.g. --grid eta=0.5,1,2 (repeatable)
    #[arg(long, value_name = "KEY=V1,V2,...")]
    grid: Vec<String>,
    #[arg(long)]
    repeats: Option<String>,
    /// Worker threads, 0 for one per core
    #[arg(long)]
    workers: Option<String>,
}

#[derive(Args, Debug)]
struct GameArgs {
    /// Fixed dual step; each horizon T uses 1/T when absent
    #[arg(long)]
    eta: Option<String>,
    /// Comma-separated horizons
    #[arg(long)]
    horizons: Option<String>,
    /// Pool CSV with columns e and either mu_s0, mu_s1 or d
    #[arg(long, value_name = "FILE")]
    pool: Option<String>,
    /// Grow a pool from the configured data for this many rounds
    #[arg(long, value_name = "ROUNDS")]
    grow: Option<String>,
    /// Write trace.csv for the longest horizon
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    data: DataFlags,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    /// Comma-separated step sizes cycled over trials
    #[arg(long)]
    etas: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Args, Debug)]
struct TableArgs {
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long)]
    repeats: Option<String>,
    /// Comma-separated eta grid searched per method
    #[arg(long)]
    etas: Option<String>,
    /// Comma-separated methods
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    workers: Option<String>,
}

fn collect<const N: usize>(section: &'static str, fields: [(&'static str, &Option<String>); N]) -> Vec<Flag> {
    fields
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (section, k, v)))
        .collect()
}

enum Failure {
    Usage(String),
    Run(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Run(_) => 2,
            Failure::Verify(_) => 3,
        }
    }

    fn status(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage_error",
            Failure::Run(_) => "run_failed",
            Failure::Verify(_) => "verify_failed",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Run(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<fairalm::Error> for Failure {
    fn from(e: fairalm::Error) -> Self {
        match e {
            fairalm::Error::Config(c) => c.into(),
            fairalm::Error::Train(TrainError::Config(m)) => Failure::Usage(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code != 0 {
                println!("summary status=usage_error command=");
            }
            return ExitCode::from(code);
        }
    };
    let level = match (cli.global.quiet, cli.global.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let name = command_name(&cli.command);
    match dispatch(&cli) {
        Ok(summary) => {
            println!("summary status=ok command={name} {summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("fairalm {name}: {}", f.message());
            println!("summary status={} command={name}", f.status());
            ExitCode::from(f.code())
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Sweep(_) => "sweep",
        Command::Game(_) => "game",
        Command::Verify(_) => "verify",
        Command::Table(_) => "table",
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let resolve = |primary: &str, flags: Vec<Flag>| Settings::resolve(g.config.as_deref(), &g.set, primary, flags);
    match &cli.command {
        Command::Synth(a) => {
            let flags = collect(
                "synth",
                [
                    ("seed", &a.seed),
                    ("bias_strength", &a.bias_strength),
                    ("separation", &a.separation),
                    ("dim", &a.dim),
                ],
            );
            let s = resolve("synth", flags)?;
            cmd_synth(&s, a.output.clone().unwrap_or_else(|| g.out.join("synth.csv")))
        }
        Command::Train(a) => {
            let s = resolve("train", [a.train.flags(), a.data.flags()].concat())?;
            cmd_train(&s, &g.out)
        }
        Command::Sweep(a) => {
            let mut flags = [a.train.flags(), a.data.flags()].concat();
            flags.extend(collect("sweep", [("repeats", &a.repeats), ("workers", &a.workers)]));
            let mut s = resolve("train", flags)?;
            for axis in &a.grid {
                let (k, v) = fairalm::config::split_override(axis)?;
                s.sweep.set_grid(k, v)?;
            }
            cmd_sweep(&s, &g.out)
        }
        Command::Game(a) => {
            let trace = a.trace.then(|| "true".to_string());
            let mut flags = collect(
                "game",
                [
                    ("eta", &a.eta),
                    ("horizons", &a.horizons),
                    ("pool", &a.pool),
                    ("grow_rounds", &a.grow),
                    ("trace", &trace),
                ],
            );
            flags.extend(a.data.flags());
            let s = resolve("game", flags)?;
            cmd_game(&s, &g.out)
        }
        Command::Verify(a) => {
            let flags = collect(
                "verify",
                [
                    ("trials", &a.trials),
                    ("rounds", &a.rounds),
                    ("etas", &a.etas),
                    ("seed", &a.seed),
                ],
            );
            let s = resolve("verify", flags)?;
            cmd_verify(&s)
        }
        Command::Table(a) => {
            let mut flags = a.train.flags();
            flags.extend(collect(
                "table",
                [
                    ("repeats", &a.repeats),
                    ("etas", &a.etas),
                    ("methods", &a.methods),
                    ("workers", &a.workers),
                ],
            ));
            let s = resolve("table", flags)?;
            cmd_table(&s, &g.out)
        }
    }
}

fn write_file(path: &Path, text: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))
}

fn cmd_synth(s: &Settings, output: PathBuf) -> Outcome {
    let d = synth(&s.synth).map_err(run_err)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    }
    d.write_csv(&output).map_err(run_err)?;
    let c = d.cell_counts();
    println!("wrote {} samples to {}", d.len(), output.display());
    println!("cells y0s0={} y0s1={} y1s0={} y1s1={}", c[0][0], c[0][1], c[1][0], c[1][1]);
    Ok(format!("samples={} path={}", d.len(), output.display()))
}

fn cmd_train(s: &Settings, out: &Path) -> Outcome {
    s.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let source = s.data_source();
    let (train, test) = source.load(s.data.repeat)?;
    log::info!("training {} on {} samples", s.train.method, train.len());
    let result = trainers::train(&s.train, &train, &test).map_err(fairalm::Error::from)?;
    let id = config_id(&s.train, &source);
    let report = result.profile.last().test;
    write_file(&out.join("config.txt"), s.dump(&["train", "data", "synth", "schema"]))?;
    write_file(&out.join("profile.csv"), result.profile.to_csv_string())?;
    write_file(&out.join("final.csv"), format!("{CSV_HEADER}\n{}\n", report.csv_row(&id)))?;
    let weights = out.join("weights.bin");
    result.predictor.write_weights(&weights).map_err(run_err)?;
    let gap = report.gap(s.train.constraint);
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into());
    println!("{}", out.join("final.csv").display());
    println!("{}", weights.display());
    Ok(format!(
        "method={} constraint={} err={} gap={} id={id} out={}",
        s.train.method,
        s.train.constraint,
        fmt(report.err),
        fmt(gap),
        out.display()
    ))
}

fn cmd_sweep(s: &Settings, out: &Path) -> Outcome {
    s.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let spec = SweepSpec {
        base: s.train.clone(),
        grid: s.sweep.grid.clone(),
        repeats: s.sweep.repeats,
        data: s.data_source(),
        out_dir: out.to_path_buf(),
        workers: s.sweep.workers,
    };
    spec.configs()?;
    let res = run_sweep(&spec)?;
    for f in &res.failures {
        eprintln!("run {}/{} failed: {}", f.config_id, f.seed, f.reason);
    }
    println!("{}", out.join("aggregate.csv").display());
    let Some(chosen) = res.chosen() else {
        return Err(Failure::Run(format!(
            "no configuration completed ({} failed runs)",
            res.failures.len()
        )));
    };
    let overrides: Vec<String> = chosen.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("chosen {} {}", chosen.config_id, overrides.join(" "));
    Ok(format!(
        "runs={} failed={} chosen={} err_mean={:.6} gap_mean={}",
        res.runs.len(),
        res.failures.len(),
        chosen.config_id,
        chosen.err_mean,
        chosen.gap_mean.map(|g| format!("{g:.6}")).unwrap_or_else(|| "nan".into())
    ))
}

/// Two members: a low-error member with `d = 0.2` and a fair one with
/// higher error.
fn demo_pool() -> PoolStats {
    PoolStats::from_residuals(vec![0.1, 0.3], vec![0.2, 0.0]).expect("demo pool is valid")
}

fn load_pool(s: &Settings) -> Result<(PoolStats, String), Failure> {
    if let Some(path) = &s.game.pool {
        let file = fs::File::open(path).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
        let pool = read_pool_csv(file).map_err(run_err)?;
        return Ok((pool, path.display().to_string()));
    }
    if s.game.grow_rounds > 0 {
        let (train, _) = s.data_source().load(s.data.repeat)?;
        let config = GrowConfig {
            constraint: s.train.constraint,
            ..GrowConfig::default()
        };
        let grown = grow_pool(&train, &config, s.game.grow_rounds).map_err(run_err)?;
        return Ok((grown.pool.stats().clone(), format!("grown-{}", s.game.grow_rounds)));
    }
    Ok((demo_pool(), "demo".into()))
}

fn fmt_weights(w: &[f64]) -> String {
    w.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

fn cmd_game(s: &Settings, out: &Path) -> Outcome {
    let (pool, label) = load_pool(s)?;
    let mut nus = Vec::new();
    let longest = s.game.horizons.iter().copied().max().unwrap_or(0);
    println!("pool {label}: {} members, e=[{}] d=[{}]", pool.len(), fmt_weights(pool.e()), fmt_weights(pool.d()));
    for &t in &s.game.horizons {
        let mut config = match s.game.eta {
            Some(eta) => GameConfig::new(eta, t, s.train.constraint),
            None => GameConfig::inverse_rounds(t, s.train.constraint),
        }
        .map_err(|e| Failure::Usage(e.to_string()))?;
        if let Some(b) = s.game.bound {
            config = config.with_bound(b).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        let outcome = run_game(&config, &pool).map_err(run_err)?;
        let rep = saddle_gap(&outcome, &config, &pool);
        println!(
            "T={t} eta={} q_bar=[{}] lambda_bar={:.6} lambda_T={:.6} nu_hat={:.3e} q_gap={:.3e} lambda_gap={:.3e}",
            config.eta,
            fmt_weights(outcome.q_bar.weights()),
            outcome.lambda_bar,
            outcome.lambda_t,
            rep.nu_hat,
            rep.q_gap,
            rep.lambda_gap
        );
        if s.game.trace && t == longest {
            let mut buf = Vec::new();
            write_trace(&outcome, &pool, &mut buf).map_err(run_err)?;
            write_file(&out.join("trace.csv"), buf)?;
        }
        nus.push(rep.nu_hat);
    }
    let decreasing = nus.windows(2).all(|w| w[1] <= w[0]);
    let mut summary = format!("pool={label} horizons={} decreasing={decreasing}", nus.len());
    if let Some(last) = nus.last() {
        let _ = write!(summary, " nu_hat_last={last:.3e}");
    }
    Ok(summary)
}

fn cmd_verify(s: &Settings) -> Outcome {
    let v = &s.verify;
    let fuzz = regret_fuzz(v.trials, v.rounds, &v.etas, v.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let regret_ok = fuzz.violations == 0;
    println!(
        "lemma2: {} violations / {} trials (min slack {:.4}; half-constant form: {} violations) {}",
        fuzz.violations,
        fuzz.trials,
        fuzz.min_slack,
        fuzz.half_violations,
        if regret_ok { "PASS" } else { "FAIL" }
    );
    let nus = saddle_decay(&demo_pool(), &v.horizons, s.train.constraint).map_err(|e| Failure::Usage(e.to_string()))?;
    let decay_ok = nus.windows(2).all(|w| w[1] <= w[0]) && nus.first() > nus.last();
    let shown: Vec<String> = v.horizons.iter().zip(&nus).map(|(t, n)| format!("T={t}:{n:.3e}")).collect();
    println!(
        "theorem1: demo pool nu_hat {} {}",
        shown.join(" "),
        if decay_ok { "PASS" } else { "FAIL" }
    );
    let summary = format!(
        "lemma2_violations={} trials={} min_slack={:.4} decay={}",
        fuzz.violations, fuzz.trials, fuzz.min_slack, decay_ok
    );
    if regret_ok && decay_ok {
        Ok(summary)
    } else {
        Err(Failure::Verify(summary))
    }
}

fn cmd_table(s: &Settings, out: &Path) -> Outcome {
    s.train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let datasets = standard_datasets()?;
    let spec = TableSpec {
        base: s.train.clone(),
        grid: vec![("eta".into(), s.table.etas.clone())],
        repeats: s.table.repeats,
        out_dir: out.to_path_buf(),
        workers: s.table.workers,
    };
    let table = standard_table(&datasets, &s.table.methods, &spec);
    write_file(&out.join("table.csv"), table.to_csv())?;
    print!("{}", table.to_text());
    let measured = table.rows.iter().filter(|r| r.err.is_some()).count();
    let skipped = table.rows.iter().filter(|r| r.status.starts_with("skipped")).count();
    let failed = table.rows.iter().filter(|r| r.status.starts_with("failed")).count();
    Ok(format!(
        "rows={} measured={measured} skipped={skipped} failed={failed}",
        table.rows.len()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn demo_pool_residuals() {
        let p = demo_pool();
        assert_eq!(p.d(), &[0.2, 0.0]);
        assert_eq!(p.e(), &[0.1, 0.3]);
    }
}
