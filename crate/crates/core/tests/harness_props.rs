use std::fs;
use std::path::Path;

use fairalm::data::{DatasetSchema, SynthSpec};
use fairalm::fairmetrics::{nvp_select, NvpCandidate};
use fairalm::harness::{
    benchmark_config, benchmark_source, config_id, profile_plot_data, run_sweep, DataSource, SweepSpec,
};
use fairalm::trainers::{train, Method, TrainConfig};

fn source() -> DataSource {
    DataSource::Synth {
        spec: SynthSpec {
            n_per_cell: [[30, 15], [15, 30]],
            dim: 2,
            bias_strength: 0.8,
            separation: 2.0,
            seed: 21,
        },
        test_fraction: 0.3,
    }
}

fn spec(out: &Path) -> SweepSpec {
    let base = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    SweepSpec::new(base, source(), out)
        .with_grid("method", &["fairalm", "l2_penalty"])
        .with_grid("eta", &["0.5", "2"])
        .with_repeats(3)
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn sweeps_are_reproducible_and_resume() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_sweep(&spec(a.path())).unwrap();
    assert_eq!(first.runs.len(), 12);
    assert!(first.failures.is_empty());
    assert!(first.runs.iter().all(|r| !r.resumed));

    let other = run_sweep(&spec(b.path())).unwrap();
    for name in ["aggregate.csv", "nvp.txt"] {
        assert_eq!(read(&a.path().join(name)), read(&b.path().join(name)));
    }

    let again = run_sweep(&spec(a.path())).unwrap();
    assert!(again.runs.iter().all(|r| r.resumed));
    assert_eq!(again.aggregates, first.aggregates);
    assert_eq!(again.nvp, other.nvp);

    // a removed marker retrains just that run
    let victim = &first.runs[5];
    fs::remove_file(victim.profile_path.with_file_name("final.csv")).unwrap();
    let partial = run_sweep(&spec(a.path())).unwrap();
    let retrained: Vec<_> = partial.runs.iter().filter(|r| !r.resumed).collect();
    assert_eq!(retrained.len(), 1);
    assert_eq!((&retrained[0].config_id, retrained[0].seed), (&victim.config_id, victim.seed));
    assert_eq!(partial.aggregates, first.aggregates);
}

#[test]
fn aggregates_match_the_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let result = run_sweep(&spec(dir.path())).unwrap();
    for agg in &result.aggregates {
        let mut errs = Vec::new();
        let mut gaps = Vec::new();
        let run_dir = dir.path().join("runs").join(&agg.config_id);
        for entry in fs::read_dir(&run_dir).unwrap() {
            let text = read(&entry.unwrap().path().join("final.csv"));
            let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
            assert_eq!(row[0], agg.config_id);
            errs.push(row[1].parse::<f64>().unwrap());
            gaps.push(row[5].parse::<f64>().unwrap());
        }
        assert_eq!(errs.len(), agg.runs);
        let n = errs.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        assert!((agg.err_mean - mean(&errs)).abs() < 1e-12);
        assert!((agg.err_std - sd(&errs)).abs() < 1e-12);
        assert!((agg.gap_mean.unwrap() - mean(&gaps)).abs() < 1e-12);
        assert!((agg.gap_std.unwrap() - sd(&gaps)).abs() < 1e-12);
    }
    let cands: Vec<NvpCandidate> = result
        .aggregates
        .iter()
        .map(|a| NvpCandidate::new(a.config_id.clone(), a.err_mean, a.gap_mean))
        .collect();
    assert_eq!(result.nvp.as_ref().unwrap(), &nvp_select(&cands).unwrap());
    let nvp = read(&dir.path().join("nvp.txt"));
    assert!(nvp.contains(&format!("chosen = {}", result.nvp.unwrap().chosen)));
    let csv = read(&dir.path().join("aggregate.csv"));
    assert!(csv.starts_with("id,method,eta,runs,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn config_ids_ignore_the_seed_only() {
    let c = TrainConfig::default();
    let id = config_id(&c, &source());
    assert_eq!(id.len(), 12);
    assert!(id.chars().all(|ch| ch.is_ascii_hexdigit()));
    assert_eq!(id, config_id(&TrainConfig { seed: 99, ..c.clone() }, &source()));
    assert_ne!(id, config_id(&TrainConfig { eta: 2.0, ..c.clone() }, &source()));
    assert_ne!(id, config_id(&c, &benchmark_source()));
}

#[test]
fn unreadable_data_is_recorded_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let missing = DataSource::Csv {
        path: dir.path().join("absent.csv"),
        schema: DatasetSchema::default(),
        test_fraction: 0.3,
    };
    let s = SweepSpec::new(TrainConfig::default(), missing, dir.path()).with_repeats(2);
    let result = run_sweep(&s).unwrap();
    assert!(result.runs.is_empty());
    assert_eq!(result.failures.len(), 2);
    assert!(result.nvp.is_none());
    assert!(read(&dir.path().join("nvp.txt")).contains("failed_runs = 2"));
}

#[test]
fn fairalm_reaches_a_small_gap_first_on_the_benchmark() {
    let (tr, te) = benchmark_source().load(0).unwrap();
    let fair = train(&benchmark_config(Method::FairAlm), &tr, &te).unwrap();
    let plain = train(&benchmark_config(Method::Unconstrained), &tr, &te).unwrap();
    let plot = profile_plot_data(&[("fairalm", &fair.profile), ("unconstrained", &plain.profile)], 0.05);
    let first = |label: &str| plot.first_below.iter().find(|(l, _)| l == label).unwrap().1;
    let fair_at = first("fairalm").expect("fairalm reaches the threshold");
    assert!(first("unconstrained").is_none_or(|e| e > fair_at));
    assert_eq!(plot.csv.lines().count(), 1 + 2 * 20);
    assert!(plot.summary().contains("never") || first("unconstrained").is_some());
}
