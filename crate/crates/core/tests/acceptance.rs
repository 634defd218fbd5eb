//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero when a criterion fails, except for the criteria listed in
//! `KNOWN_RED`, whose failure is reported but tolerated unless
//! `FAIRALM_ACCEPTANCE_STRICT=1` is set.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fairalm::data::{Group, Sample};
use fairalm::diffcore::{self, Architecture, Coefficients, Predictor};
use fairalm::harness::{self, benchmark_config, benchmark_source, swing, TableSpec};
use fairalm::lineargame::{
    random_pool, regret_fuzz, run_game, saddle_decay, saddle_gap, GameConfig, MixtureWeights, PoolStats,
};
use fairalm::trainers::{train, Method, TrainConfig};
use fairalm::Constraint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Criteria whose failure is understood and recorded; see the README.
const KNOWN_RED: &[u32] = &[1, 5];

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Line {
    id: u32,
    name: &'static str,
    verdict: Verdict,
    elapsed: Duration,
    limit: Duration,
}

fn timed(id: u32, name: &'static str, limit_secs: u64, f: impl FnOnce() -> Verdict) -> Line {
    let start = Instant::now();
    let verdict = f();
    Line {
        id,
        name,
        verdict,
        elapsed: start.elapsed(),
        limit: Duration::from_secs(limit_secs),
    }
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn saddle_decay_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let horizons = [100, 1_000, 10_000];
    let pools: Vec<PoolStats> = (0..20).map(|_| random_pool(&mut rng, 5)).collect();
    let nus: Vec<Vec<f64>> = pools
        .par_iter()
        .map(|p| saddle_decay(p, &horizons, Constraint::default()).expect("valid pool"))
        .collect();
    let monotone = nus.iter().filter(|v| v[1] <= v[0] && v[2] <= v[1]).count();
    let fast = nus.iter().filter(|v| v[2] <= 0.05 * v[0]).count();
    let worst = nus.iter().map(|v| v[2] / v[0]).fold(0.0f64, f64::max);
    verdict(
        monotone == 20 && fast >= 15,
        format!("non-increasing {monotone}/20, ratio <= 0.05 in {fast}/20 (worst ratio {worst:.4})"),
    )
}

fn regret_suite() -> Verdict {
    let fuzz = regret_fuzz(1000, 512, &[0.1, 1.0, 10.0], 7).expect("valid fuzz settings");
    verdict(
        fuzz.violations == 0,
        format!(
            "{} violations / {} trials, min slack {:.4}",
            fuzz.violations, fuzz.trials, fuzz.min_slack
        ),
    )
}

/// `L_T(q, λ) − min_i L_T(e_i, λ)` computed directly from the definition.
fn q_gap_oracle(e: [f64; 2], d: [f64; 2], q: &MixtureWeights, lambda: f64) -> f64 {
    let w = q.weights();
    let mixed = w[0] * (e[0] + lambda * d[0]) + w[1] * (e[1] + lambda * d[1]);
    let vertex = (e[0] + lambda * d[0]).min(e[1] + lambda * d[1]);
    mixed - vertex
}

fn brute_force_suite() -> Verdict {
    let rounds = 10_000u64;
    let grid: Vec<(f64, f64)> = (0..=10)
        .flat_map(|i| (-10..=10).map(move |j| (i as f64 / 10.0, j as f64 / 10.0)))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|a| (0..grid.len()).map(move |b| (a, b)))
        .collect();
    // the bound is stated for eta = 1/T; a fixed eta = 1 is reported alongside
    let etas = [1.0 / rounds as f64, 1.0];
    let results: Vec<[(f64, f64); 2]> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ea, da) = grid[a];
            let (eb, db) = grid[b];
            let stats = PoolStats::from_residuals(vec![ea, eb], vec![da, db]).expect("grid pool");
            etas.map(|eta| {
                let config = GameConfig::new(eta, rounds, Constraint::default()).expect("config");
                let out = run_game(&config, &stats).expect("game");
                let oracle = q_gap_oracle([ea, eb], [da, db], &out.q_bar, out.lambda_bar);
                let reported = saddle_gap(&out, &config, &stats).q_gap;
                (oracle, (reported - oracle.max(0.0)).abs())
            })
        })
        .collect();
    let worst = |k: usize| results.iter().map(|r| r[k].0).fold(f64::NEG_INFINITY, f64::max);
    let mismatch = results.iter().flatten().map(|r| r.1).fold(0.0f64, f64::max);
    let over_fixed = results.iter().filter(|r| r[1].0 > 1e-2).count();
    verdict(
        worst(0) <= 1e-2 && mismatch <= 1e-12,
        format!(
            "{} pools, eta = 1/T: max q-gap {:.2e}; verifier vs oracle {mismatch:.1e}; \
             fixed eta = 1 (outside the bound): max {:.2e}, {over_fixed} pools above 1e-2",
            pairs.len(),
            worst(0),
            worst(1)
        ),
    )
}

fn random_batch(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Sample> {
    let n = rng.random_range(1..=32);
    (0..n)
        .map(|_| {
            let x = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = if rng.random_bool(0.5) { Group::S0 } else { Group::S1 };
            Sample::new(x, rng.random_bool(0.5), g)
        })
        .collect()
}

fn gradient_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for draw in 0..100 {
        let architecture = if draw % 2 == 0 {
            Architecture::Linear
        } else {
            Architecture::Mlp { hidden: 16 }
        };
        let dim = rng.random_range(1..=6);
        let weights = (0..architecture.num_weights(dim))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let p = Predictor::from_weights(architecture, dim, weights).expect("sized weights");
        let constraint = match draw % 3 {
            0 => Constraint::EqualOpportunity(true),
            1 => Constraint::EqualOpportunity(false),
            _ => Constraint::DemographicParity,
        };
        let batch = random_batch(&mut rng, dim);
        let counts = diffcore::cell_counts(&batch, constraint);
        let raw: [f64; 3] = [rng.random_range(0.1..2.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let masked = |k: usize| if counts[k] > 0 { raw[k + 1] } else { 0.0 };
        let coeffs = Coefficients::new(raw[0], masked(0), masked(1));
        let objective = |w: &[f64]| {
            let q = Predictor::from_weights(architecture, dim, w.to_vec()).expect("sized weights");
            coeffs
                .combine(&diffcore::estimates(&q, &batch, constraint).expect("estimates"))
                .expect("defined cells")
        };
        let g = diffcore::grad(&p, coeffs, &batch, constraint).expect("gradient");
        let mut w = p.weights().to_vec();
        for (k, &analytic) in g.grad.iter().enumerate() {
            let orig = w[k];
            w[k] = orig + h;
            let up = objective(&w);
            w[k] = orig - h;
            let down = objective(&w);
            w[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
                worst_at = format!(" (draw {draw}, {architecture}, component {k})");
            }
        }
    }
    verdict(worst <= 1e-4, format!("100 draws, max relative error {worst:.2e}{worst_at}"))
}

fn deo(report: &fairalm::fairmetrics::MetricReport) -> f64 {
    report.deo_fnr.expect("benchmark test split has both positive cells")
}

fn synthetic_suite() -> Verdict {
    let source = benchmark_source();
    let rows: Vec<(u64, f64, f64, f64, f64)> = (0..5u64)
        .into_par_iter()
        .map(|r| {
            let (tr, te) = source.load(r).expect("benchmark data");
            let run = |method| {
                let c = TrainConfig {
                    seed: r,
                    ..benchmark_config(method)
                };
                train(&c, &tr, &te).expect("training run").profile.last().test
            };
            let u = run(Method::Unconstrained);
            let f = run(Method::FairAlm);
            (r, deo(&u), u.err.unwrap(), deo(&f), f.err.unwrap())
        })
        .collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for (r, ud, ue, fd, fe) in rows {
        let pass = ud >= 0.20 && fd <= 0.02 && fe - ue <= 0.05;
        ok &= pass;
        detail.push(format!(
            "seed {r}: unc deo {ud:.3} err {ue:.3}, fairalm deo {fd:.3} err {fe:.3}{}",
            if pass { "" } else { " [miss]" }
        ));
    }
    verdict(ok, detail.join("; "))
}

fn eta_robustness_suite() -> Verdict {
    let (tr, te) = benchmark_source().load(0).expect("benchmark data");
    let grid = [0.5, 1.0, 2.0, 4.0];
    let rows: Vec<(f64, f64, f64, f64)> = grid
        .par_iter()
        .map(|&eta| {
            let run = |method| {
                let c = TrainConfig {
                    eta,
                    ..benchmark_config(method)
                };
                train(&c, &tr, &te).expect("training run").profile
            };
            let f = run(Method::FairAlm);
            let l = run(Method::L2Penalty);
            let fs = swing(&f.gap_series()).expect("several epochs");
            let ls = swing(&l.gap_series()).expect("several epochs");
            (eta, deo(&f.last().test), fs, ls)
        })
        .collect();
    let all_fair = rows.iter().all(|r| r.1 <= 0.05);
    let swing_gap = rows.iter().any(|r| r.3 > 0.0 && r.3 >= 3.0 * r.2);
    let detail: Vec<String> = rows
        .iter()
        .map(|(eta, d, fs, ls)| format!("eta {eta}: deo {d:.3} swing {fs:.3} vs l2 {ls:.3}"))
        .collect();
    verdict(all_fair && swing_gap, detail.join("; "))
}

fn exact_reductions_suite() -> Verdict {
    let (tr, te) = benchmark_source().load(1).expect("benchmark data");
    let mut problems = Vec::new();
    for architecture in [Architecture::Linear, Architecture::Mlp { hidden: 16 }] {
        let base = TrainConfig {
            architecture,
            epochs: 5,
            seed: 11,
            ..benchmark_config(Method::Unconstrained)
        };
        let u = train(&base, &tr, &te).expect("unconstrained run");
        let f = train(
            &TrainConfig {
                method: Method::FairAlm,
                eta: 0.0,
                ..base.clone()
            },
            &tr,
            &te,
        )
        .expect("fairalm run");
        let bits = |w: &[f64]| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let same_path = u
            .profile
            .epochs
            .iter()
            .zip(&f.profile.epochs)
            .all(|(a, b)| bits(&a.weights) == bits(&b.weights));
        let mut wa = Vec::new();
        let mut wb = Vec::new();
        u.predictor.write_weights_to(&mut wa).unwrap();
        f.predictor.write_weights_to(&mut wb).unwrap();
        if !same_path || wa != wb {
            problems.push(format!("eta=0 trajectory differs for {architecture}"));
        }
    }
    let mut proxy_steps = 0;
    for budget in [0.5, 1.0, 10.0] {
        let c = TrainConfig {
            budget,
            eta: 5.0,
            ..benchmark_config(Method::ProxyLagrangian)
        };
        let out = train(&c, &tr, &te).expect("proxy run");
        for r in &out.profile.rounds {
            proxy_steps += 1;
            let l = &r.lambda_after;
            if l.iter().any(|&v| v < 0.0) || l.iter().sum::<f64>() > budget {
                problems.push(format!("proxy round {} multipliers {l:?} exceed budget {budget}", r.round));
                break;
            }
        }
    }
    let mut lagrangian_steps = 0;
    for eta in [0.1, 1.0, 10.0] {
        let c = TrainConfig {
            eta,
            ..benchmark_config(Method::Lagrangian)
        };
        let out = train(&c, &tr, &te).expect("lagrangian run");
        for r in &out.profile.rounds {
            lagrangian_steps += 1;
            if r.lambda_before.iter().chain(&r.lambda_after).any(|&v| v < 0.0) {
                problems.push(format!("lagrangian round {} has a negative multiplier", r.round));
                break;
            }
        }
        if out.profile.epochs.iter().flat_map(|e| &e.lambdas).any(|&v| v < 0.0) {
            problems.push(format!("lagrangian epoch multiplier negative at eta {eta}"));
        }
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "eta=0 weights bit-identical (linear, mlp-16); {proxy_steps} proxy and {lagrangian_steps} lagrangian rounds in bounds"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn replication_suite() -> Verdict {
    let datasets = match harness::standard_datasets() {
        Ok(d) => d,
        Err(e) => return Verdict::Fail(format!("cannot locate datasets: {e}")),
    };
    let wanted: Vec<_> = datasets
        .into_iter()
        .filter(|d| (d.name == "adult" || d.name == "compas") && d.source.is_some())
        .collect();
    if wanted.is_empty() {
        return Verdict::Skip(format!(
            "set {} or {} to run",
            harness::dataset_env_var("adult"),
            harness::dataset_env_var("compas")
        ));
    }
    let out = tempfile::tempdir().expect("temp dir");
    let spec = TableSpec {
        base: TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        },
        grid: vec![("eta".into(), vec!["0.5".into(), "1".into(), "2".into()])],
        repeats: 5,
        out_dir: out.path().to_path_buf(),
        workers: 0,
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for ds in &wanted {
        let start = Instant::now();
        let table = harness::standard_table(std::slice::from_ref(ds), &[Method::FairAlm], &spec);
        let row = &table.rows[0];
        let in_time = start.elapsed() <= Duration::from_secs(600);
        let pass = match (ds.name.as_str(), row.err, row.deo) {
            ("adult", Some((e, _)), Some((d, _))) => (13.8..=17.8).contains(&e) && d <= 3.0,
            ("compas", _, Some((d, _))) => d <= 2.0,
            _ => false,
        } && in_time;
        ok &= pass;
        detail.push(format!(
            "{}: err {:?} deo {:?} ({}, {:.0}s)",
            ds.name,
            row.err.map(|v| v.0),
            row.deo.map(|v| v.0),
            row.status,
            start.elapsed().as_secs_f64()
        ));
    }
    verdict(ok, detail.join("; "))
}

fn main() -> ExitCode {
    let strict = std::env::var("FAIRALM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let lines = [
        timed(1, "saddle-point decay", 30, saddle_decay_suite),
        timed(2, "cumulative-reward bound", 10, regret_suite),
        timed(3, "brute-force saddle oracle", 60, brute_force_suite),
        timed(4, "gradient correctness", 20, gradient_suite),
        timed(5, "synthetic fairness result", 120, synthetic_suite),
        timed(6, "eta robustness", 300, eta_robustness_suite),
        timed(7, "exact reductions", 600, exact_reductions_suite),
        timed(8, "standard-dataset replication", 1200, replication_suite),
    ];
    let mut hard_failures = 0;
    for line in &lines {
        let secs = line.elapsed.as_secs_f64();
        let slow = line.elapsed > line.limit;
        let (status, detail) = match &line.verdict {
            Verdict::Pass(d) if !slow => ("PASS", d.clone()),
            Verdict::Pass(d) | Verdict::Fail(d) => (
                "FAIL",
                if slow {
                    format!("{d}; over the {}s limit", line.limit.as_secs())
                } else {
                    d.clone()
                },
            ),
            Verdict::Skip(d) => ("SKIP", d.clone()),
        };
        let note = if status == "FAIL" && KNOWN_RED.contains(&line.id) {
            " (known red)"
        } else {
            ""
        };
        println!(
            "criterion {} {}: {status}{note} [{secs:.1}s] {detail}",
            line.id, line.name
        );
        if status == "FAIL" && (strict || note.is_empty()) {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
