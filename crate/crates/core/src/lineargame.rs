//! The finite-pool game between a best-responding classifier player and a
//! proximal multiplier player.
//!
//! Given a pool `h_1..h_N` with errors `e` and constraint residuals
//! `d = μ_s0 − μ_s1`, the augmented Lagrangian is
//!
//! ```text
//! L_T(q, λ) = ⟨q, e⟩ + λ ⟨q, d⟩ − (λ − λ_T)² / (2η)
//! ```
//!
//! Each round the classifier player picks `argmin_i e_i + λ_t d_i` and the
//! multiplier player follows the leader, `λ_{t+1} = λ_t + η d_{h_t} / t`.
//! The average play `q̄` together with the average multiplier `λ̄` is an
//! approximate saddle point; [`saddle_gap`] measures how approximate, and
//! [`regret_check`] verifies the multiplier player's regret bound.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{DataError, Dataset, Group, Sample};
use crate::diffcore::{self, Architecture, DiffError, Predictor};
use crate::Constraint;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid game configuration: {0}")]
    Config(String),
    #[error("classifier pool is empty")]
    EmptyPool,
    #[error("dual step at iteration 0 (the update divides by t)")]
    ZeroIteration,
    #[error("invalid pool statistics: {0}")]
    Stats(String),
    #[error("invalid mixture weights: {0}")]
    Weights(String),
    #[error("reward sequence is empty")]
    NoRewards,
    #[error("pool file: {0}")]
    PoolFile(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Anything that maps a feature vector to a hard decision.
pub trait Classifier: Sync {
    fn classify(&self, x: &[f64]) -> Result<bool, DiffError>;
}

impl Classifier for Predictor {
    fn classify(&self, x: &[f64]) -> Result<bool, DiffError> {
        self.predict(x)
    }
}

impl<F> Classifier for F
where
    F: Fn(&[f64]) -> bool + Sync,
{
    fn classify(&self, x: &[f64]) -> Result<bool, DiffError> {
        Ok(self(x))
    }
}

/// Errors and conditional moments of every pool member.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolStats {
    e: Vec<f64>,
    mu_s0: Vec<f64>,
    mu_s1: Vec<f64>,
    d: Vec<f64>,
}

impl PoolStats {
    pub fn new(e: Vec<f64>, mu_s0: Vec<f64>, mu_s1: Vec<f64>) -> Result<Self, GameError> {
        if e.len() != mu_s0.len() || e.len() != mu_s1.len() {
            return Err(GameError::Stats(format!(
                "length mismatch: e {}, mu_s0 {}, mu_s1 {}",
                e.len(),
                mu_s0.len(),
                mu_s1.len()
            )));
        }
        for (name, v) in [("e", &e), ("mu_s0", &mu_s0), ("mu_s1", &mu_s1)] {
            if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(GameError::Stats(format!("{name} entry {x} outside [0, 1]")));
            }
        }
        let d = mu_s0.iter().zip(&mu_s1).map(|(a, b)| a - b).collect();
        Ok(PoolStats { e, mu_s0, mu_s1, d })
    }

    /// Stats with the given residuals, placing each residual's magnitude on
    /// the side of its sign so that `mu_s0 − mu_s1 = d` exactly.
    pub fn from_residuals(e: Vec<f64>, d: Vec<f64>) -> Result<Self, GameError> {
        if let Some(x) = d.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(GameError::Stats(format!("d entry {x} outside [-1, 1]")));
        }
        let mu_s0 = d.iter().map(|v| v.max(0.0)).collect();
        let mu_s1 = d.iter().map(|v| (-v).max(0.0)).collect();
        let stats = PoolStats::new(e, mu_s0, mu_s1)?;
        debug_assert_eq!(stats.d, d);
        Ok(stats)
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn mu_s0(&self) -> &[f64] {
        &self.mu_s0
    }

    pub fn mu_s1(&self) -> &[f64] {
        &self.mu_s1
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// `‖d‖_∞`.
    pub fn l_inf(&self) -> f64 {
        self.d.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lagrangian value `e_i + λ d_i` of member `i`.
    pub fn lagrangian(&self, i: usize, lambda: f64) -> f64 {
        self.e[i] + lambda * self.d[i]
    }

    fn push(&mut self, e: f64, mu_s0: f64, mu_s1: f64) {
        self.e.push(e);
        self.mu_s0.push(mu_s0);
        self.mu_s1.push(mu_s1);
        self.d.push(mu_s0 - mu_s1);
    }
}

/// Reads a pool from CSV with an `e` column and either a `d` column or
/// `mu_s0` and `mu_s1` columns, one member per row.
pub fn read_pool_csv<R: Read>(reader: R) -> Result<PoolStats, GameError> {
    let bad = |m: String| GameError::PoolFile(m);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let e_col = col("e").ok_or_else(|| bad("missing column `e`".into()))?;
    let moments = match (col("mu_s0"), col("mu_s1"), col("d")) {
        (Some(a), Some(b), _) => Ok((a, b)),
        (_, _, Some(d)) => Err(d),
        _ => return Err(bad("need a `d` column or `mu_s0` and `mu_s1` columns".into())),
    };
    let (mut e, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |c: usize| -> Result<f64, GameError> {
            let v = rec.get(c).unwrap_or("");
            v.parse()
                .map_err(|_| bad(format!("row {}: `{v}` is not a number", i + 1)))
        };
        e.push(num(e_col)?);
        match moments {
            Ok((c0, c1)) => {
                a.push(num(c0)?);
                b.push(num(c1)?);
            }
            Err(cd) => a.push(num(cd)?),
        }
    }
    match moments {
        Ok(_) => PoolStats::new(e, a, b),
        Err(_) => PoolStats::from_residuals(e, a),
    }
}

/// Stats of one classifier from its hard predictions on `data`.
fn member_stats(preds: &[bool], data: &Dataset, constraint: Constraint) -> (f64, f64, f64) {
    let mut wrong = 0usize;
    let mut cell = [0usize; 2];
    let mut hits = [0usize; 2];
    for (s, &p) in data.samples().iter().zip(preds) {
        wrong += (p != s.label) as usize;
        if constraint.in_cell(s.label) {
            let g = s.group.index();
            cell[g] += 1;
            hits[g] += (p != constraint.moment_target(s.label)) as usize;
        }
    }
    (
        wrong as f64 / data.len() as f64,
        hits[0] as f64 / cell[0] as f64,
        hits[1] as f64 / cell[1] as f64,
    )
}

/// Pool statistics from cached hard predictions (one vector per member).
pub fn stats_from_predictions(
    predictions: &[Vec<bool>],
    data: &Dataset,
    constraint: Constraint,
) -> Result<PoolStats, GameError> {
    data.require_cells(constraint)?;
    let mut stats = PoolStats::new(vec![], vec![], vec![])?;
    for preds in predictions {
        if preds.len() != data.len() {
            return Err(GameError::Stats(format!(
                "{} predictions for {} samples",
                preds.len(),
                data.len()
            )));
        }
        let (e, m0, m1) = member_stats(preds, data, constraint);
        stats.push(e, m0, m1);
    }
    Ok(stats)
}

fn predictions_of<C: Classifier>(member: &C, data: &Dataset) -> Result<Vec<bool>, DiffError> {
    data.samples()
        .iter()
        .map(|s| member.classify(&s.features))
        .collect()
}

/// Empirical error and constraint moments of each member on `data`.
/// Members are evaluated in parallel; the result does not depend on
/// scheduling.
pub fn pool_stats<C: Classifier>(
    members: &[C],
    data: &Dataset,
    constraint: Constraint,
) -> Result<PoolStats, GameError> {
    data.require_cells(constraint)?;
    let preds = members
        .par_iter()
        .map(|m| predictions_of(m, data))
        .collect::<Result<Vec<_>, _>>()?;
    stats_from_predictions(&preds, data, constraint)
}

/// A finite set of classifiers with their predictions on the game's
/// dataset cached.
#[derive(Debug, Clone)]
pub struct ClassifierPool {
    members: Vec<Predictor>,
    predictions: Vec<Vec<bool>>,
    stats: PoolStats,
}

impl ClassifierPool {
    pub fn build(
        members: Vec<Predictor>,
        data: &Dataset,
        constraint: Constraint,
    ) -> Result<Self, GameError> {
        data.require_cells(constraint)?;
        let predictions = members
            .par_iter()
            .map(|m| predictions_of(m, data))
            .collect::<Result<Vec<_>, _>>()?;
        let stats = stats_from_predictions(&predictions, data, constraint)?;
        Ok(ClassifierPool {
            members,
            predictions,
            stats,
        })
    }

    pub fn members(&self) -> &[Predictor] {
        &self.members
    }

    pub fn predictions(&self) -> &[Vec<bool>] {
        &self.predictions
    }

    pub fn stats(&self) -> &PoolStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights {
    q: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(q: Vec<f64>) -> Result<Self, GameError> {
        if q.is_empty() {
            return Err(GameError::Weights("empty".into()));
        }
        if let Some(x) = q.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(GameError::Weights(format!("negative or non-finite entry {x}")));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(GameError::Weights(format!("entries sum to {sum}")));
        }
        Ok(MixtureWeights { q })
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut q = vec![0.0; n];
        q[i] = 1.0;
        MixtureWeights { q }
    }

    /// Empirical distribution of play counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self, GameError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(GameError::Weights("no plays".into()));
        }
        Ok(MixtureWeights {
            q: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.q.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .q
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
            + 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameConfig {
    pub eta: f64,
    pub rounds: u64,
    pub constraint: Constraint,
    /// Optional clamp `|λ| ≤ B` for the bounded-multiplier regime.
    pub lambda_bound: Option<f64>,
}

impl GameConfig {
    pub fn new(eta: f64, rounds: u64, constraint: Constraint) -> Result<Self, GameError> {
        let c = GameConfig {
            eta,
            rounds,
            constraint,
            lambda_bound: None,
        };
        c.validate()?;
        Ok(c)
    }

    /// `η = 1/T`, the unbounded-multiplier regime.
    pub fn inverse_rounds(rounds: u64, constraint: Constraint) -> Result<Self, GameError> {
        Self::new(1.0 / rounds.max(1) as f64, rounds, constraint)
    }

    pub fn with_bound(mut self, bound: f64) -> Result<Self, GameError> {
        if !(bound > 0.0) {
            return Err(GameError::Config(format!("lambda bound must be positive, got {bound}")));
        }
        self.lambda_bound = Some(bound);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(GameError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.rounds == 0 {
            return Err(GameError::Config("at least one round is required".into()));
        }
        Ok(())
    }
}

/// `⟨q, e⟩ + λ ⟨q, d⟩ − (λ − λ_T)² / (2η)`.
pub fn augmented_lagrangian(
    q: &MixtureWeights,
    lambda: f64,
    lambda_t: f64,
    eta: f64,
    stats: &PoolStats,
) -> Result<f64, GameError> {
    if !(eta > 0.0) {
        return Err(GameError::Config(format!("eta must be positive, got {eta}")));
    }
    if q.len() != stats.len() {
        return Err(GameError::Weights(format!(
            "{} weights for a pool of {}",
            q.len(),
            stats.len()
        )));
    }
    Ok(lagrangian_unchecked(q, lambda, lambda_t, eta, stats))
}

fn lagrangian_unchecked(q: &MixtureWeights, lambda: f64, lambda_t: f64, eta: f64, stats: &PoolStats) -> f64 {
    q.dot(&stats.e) + lambda * q.dot(&stats.d) - (lambda - lambda_t).powi(2) / (2.0 * eta)
}

/// Best response `argmin_i e_i + λ d_i`, ties to the lowest index.
pub fn primal_step(stats: &PoolStats, lambda: f64) -> Result<usize, GameError> {
    let mut best = None::<(usize, f64)>;
    for i in 0..stats.len() {
        let v = stats.lagrangian(i, lambda);
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0).ok_or(GameError::EmptyPool)
}

/// One logged multiplier update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualRecord {
    pub t: u64,
    /// Multiplier used in round `t`.
    pub lambda: f64,
    pub chosen: usize,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: f64,
    /// Index of the next round, starting at 1.
    pub t: u64,
    pub history: Vec<DualRecord>,
}

impl Default for DualState {
    fn default() -> Self {
        DualState::new()
    }
}

impl DualState {
    pub fn new() -> Self {
        DualState::at(1, 0.0)
    }

    pub fn at(t: u64, lambda: f64) -> Self {
        DualState {
            lambda,
            t,
            history: Vec::new(),
        }
    }
}

/// `λ_{t+1} = λ_t + η d / t`, appending the round to the history.
pub fn dual_step(mut state: DualState, eta: f64, chosen: usize, d_chosen: f64) -> Result<DualState, GameError> {
    if state.t == 0 {
        return Err(GameError::ZeroIteration);
    }
    state.history.push(DualRecord {
        t: state.t,
        lambda: state.lambda,
        chosen,
        d: d_chosen,
    });
    state.lambda += eta * d_chosen / state.t as f64;
    state.t += 1;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    /// Empirical distribution of the classifier player's choices.
    pub q_bar: MixtureWeights,
    /// Mean of the multipliers used in rounds `1..=T`.
    pub lambda_bar: f64,
    /// Multiplier used in round `T`, the proximal centre of `L_T`.
    pub lambda_t: f64,
    /// Member chosen in the last round.
    pub h_last: usize,
    pub counts: Vec<u64>,
    /// `‖d‖_∞` of the pool.
    pub l_bound: f64,
    pub state: DualState,
}

pub fn run_game(config: &GameConfig, stats: &PoolStats) -> Result<GameOutcome, GameError> {
    config.validate()?;
    if stats.is_empty() {
        return Err(GameError::EmptyPool);
    }
    let mut state = DualState::new();
    state.history.reserve(config.rounds as usize);
    let mut counts = vec![0u64; stats.len()];
    let mut lambda_sum = 0.0;
    let mut h_last = 0;
    let mut lambda_t = 0.0;
    for _ in 0..config.rounds {
        let h = primal_step(stats, state.lambda)?;
        counts[h] += 1;
        lambda_sum += state.lambda;
        lambda_t = state.lambda;
        h_last = h;
        state = dual_step(state, config.eta, h, stats.d[h])?;
        if let Some(b) = config.lambda_bound {
            state.lambda = state.lambda.clamp(-b, b);
        }
    }
    Ok(GameOutcome {
        q_bar: MixtureWeights::from_counts(&counts)?,
        lambda_bar: lambda_sum / config.rounds as f64,
        lambda_t,
        h_last,
        counts,
        l_bound: stats.l_inf(),
        state,
    })
}

/// Writes `t,chosen_index,lambda,q_bar_entropy,constraint_value` rows,
/// where the last two describe the running average play up to round `t`.
pub fn write_trace<W: Write>(outcome: &GameOutcome, stats: &PoolStats, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,chosen_index,lambda,q_bar_entropy,constraint_value")?;
    let mut counts = vec![0u64; stats.len()];
    let mut d_sum = 0.0;
    for rec in &outcome.state.history {
        counts[rec.chosen] += 1;
        d_sum += rec.d;
        let t = rec.t as f64;
        let entropy: f64 = -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / t;
                p * p.ln()
            })
            .sum::<f64>()
            + 0.0;
        writeln!(w, "{},{},{},{},{}", rec.t, rec.chosen, rec.lambda, entropy, d_sum / t)?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReport {
    pub q_bar: MixtureWeights,
    pub lambda_bar: f64,
    pub lambda_t: f64,
    /// Closed-form maximiser `λ_T + η ⟨q̄, d⟩` of `L_T(q̄, ·)`.
    pub lambda_star: f64,
    /// `L_T(q̄, λ*) − L_T(q̄, λ̄)`.
    pub lambda_gap: f64,
    /// `L_T(q̄, λ̄) − min_i L_T(e_i, λ̄)`.
    pub q_gap: f64,
    pub nu_hat: f64,
    /// `min_i L_T(e_i, λ̄)`, the exact best response value.
    pub oracle_value: f64,
    pub best_vertex: usize,
}

/// Saddle gap of an arbitrary `(q̄, λ̄)` for `L_T` centred at `lambda_t`.
pub fn saddle_gap_at(
    q_bar: &MixtureWeights,
    lambda_bar: f64,
    lambda_t: f64,
    eta: f64,
    stats: &PoolStats,
) -> Result<SaddleReport, GameError> {
    let at_bar = augmented_lagrangian(q_bar, lambda_bar, lambda_t, eta, stats)?;
    let lambda_star = lambda_t + eta * q_bar.dot(&stats.d);
    let at_star = lagrangian_unchecked(q_bar, lambda_star, lambda_t, eta, stats);
    let best_vertex = primal_step(stats, lambda_bar)?;
    let prox = (lambda_bar - lambda_t).powi(2) / (2.0 * eta);
    let oracle_value = stats.lagrangian(best_vertex, lambda_bar) - prox;
    let lambda_gap = (at_star - at_bar).max(0.0);
    let q_gap = (at_bar - oracle_value).max(0.0);
    Ok(SaddleReport {
        q_bar: q_bar.clone(),
        lambda_bar,
        lambda_t,
        lambda_star,
        lambda_gap,
        q_gap,
        nu_hat: lambda_gap.max(q_gap),
        oracle_value,
        best_vertex,
    })
}

/// Saddle gap of a finished game.
pub fn saddle_gap(outcome: &GameOutcome, config: &GameConfig, stats: &PoolStats) -> SaddleReport {
    saddle_gap_at(&outcome.q_bar, outcome.lambda_bar, outcome.lambda_t, config.eta, stats)
        .expect("a finished game has valid weights and a positive step")
}

/// Runs the game at each horizon with `η = 1/T` and returns `ν̂(T)`.
pub fn saddle_decay(stats: &PoolStats, horizons: &[u64], constraint: Constraint) -> Result<Vec<f64>, GameError> {
    horizons
        .iter()
        .map(|&t| {
            let config = GameConfig::inverse_rounds(t, constraint)?;
            let outcome = run_game(&config, stats)?;
            Ok(saddle_gap(&outcome, &config, stats).nu_hat)
        })
        .collect()
}

/// A pool of `n` members with errors and moments uniform on `[0, 1]`.
pub fn random_pool<R: Rng>(rng: &mut R, n: usize) -> PoolStats {
    let draw = |rng: &mut R| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    let e = draw(rng);
    let m0 = draw(rng);
    let m1 = draw(rng);
    PoolStats::new(e, m0, m1).expect("uniform draws lie in [0, 1]")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    /// `λ_1..λ_T` from the follow-the-leader recursion.
    pub lambdas: Vec<f64>,
    /// Maximiser of the left-hand side, `mean(λ_t) + η mean(r_t)`.
    pub lambda_max: f64,
    /// `max_λ Σ_t λ r_t − (λ − λ_t)² / (2η)`.
    pub lhs: f64,
    /// `Σ_t λ_t r_t`.
    pub played: f64,
    /// `Σ_t λ_t r_t + η L² (ln T + 1)`.
    pub rhs: f64,
    /// `rhs − lhs`; non-negative when the bound holds.
    pub slack: f64,
    pub holds: bool,
    /// Slack against the tighter `(η/2) L² (ln T + 1)` constant.
    pub slack_half: f64,
}

/// Checks the cumulative-reward bound of the proximal multiplier player on
/// one reward sequence.
pub fn regret_check(rewards: &[f64], eta: f64) -> Result<RegretReport, GameError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(GameError::Config(format!("eta must be positive, got {eta}")));
    }
    if rewards.is_empty() {
        return Err(GameError::NoRewards);
    }
    let t_len = rewards.len() as f64;
    let mut lambdas = Vec::with_capacity(rewards.len());
    let mut lambda = 0.0;
    for (t, r) in rewards.iter().enumerate() {
        lambdas.push(lambda);
        lambda += eta * r / (t + 1) as f64;
    }
    let mean_lambda = lambdas.iter().sum::<f64>() / t_len;
    let mean_r = rewards.iter().sum::<f64>() / t_len;
    let lambda_max = mean_lambda + eta * mean_r;
    let lhs: f64 = rewards
        .iter()
        .zip(&lambdas)
        .map(|(r, l)| lambda_max * r - (lambda_max - l).powi(2) / (2.0 * eta))
        .sum();
    let played: f64 = rewards.iter().zip(&lambdas).map(|(r, l)| l * r).sum();
    let l = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let log_term = l * l * (t_len.ln() + 1.0);
    let rhs = played + eta * log_term;
    let slack = rhs - lhs;
    Ok(RegretReport {
        lambdas,
        lambda_max,
        lhs,
        played,
        rhs,
        slack,
        holds: slack >= 0.0,
        slack_half: played + 0.5 * eta * log_term - lhs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretFuzz {
    pub trials: usize,
    pub violations: usize,
    pub min_slack: f64,
    /// Violations of the tighter half-constant form (informational).
    pub half_violations: usize,
}

/// `trials` uniform reward sequences in `[−1, 1]` of length `rounds`, with
/// `η` cycling through `etas`.
pub fn regret_fuzz(trials: usize, rounds: usize, etas: &[f64], seed: u64) -> Result<RegretFuzz, GameError> {
    if etas.is_empty() {
        return Err(GameError::Config("no step sizes to fuzz".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RegretFuzz {
        trials,
        violations: 0,
        min_slack: f64::INFINITY,
        half_violations: 0,
    };
    let mut rewards = vec![0.0; rounds];
    for i in 0..trials {
        for r in rewards.iter_mut() {
            *r = rng.random_range(-1.0..=1.0);
        }
        let rep = regret_check(&rewards, etas[i % etas.len()])?;
        out.violations += (!rep.holds) as usize;
        out.half_violations += (rep.slack_half < 0.0) as usize;
        out.min_slack = out.min_slack.min(rep.slack);
    }
    Ok(out)
}

/// Settings for growing a pool by repeated cost-sensitive logistic fits.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowConfig {
    /// Dual step size for the multiplier updates between rounds.
    pub eta: f64,
    pub constraint: Constraint,
    /// Full-batch gradient steps per fitted member.
    pub fit_steps: usize,
    pub fit_tau: f64,
}

impl Default for GrowConfig {
    fn default() -> Self {
        GrowConfig {
            eta: 5.0,
            constraint: Constraint::default(),
            fit_steps: 300,
            fit_tau: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrownPool {
    pub pool: ClassifierPool,
    /// Dual trajectory; round `t` used `history[t-1].lambda`.
    pub state: DualState,
    /// Whether the classifier fitted in each round was admitted.
    pub admitted: Vec<bool>,
}

/// Per-sample `(cost of predicting 1) − (cost of predicting 0)` in the
/// hard Lagrangian `e_h + λ (μ_s0 − μ_s1)`.
fn cost_deltas(data: &Dataset, lambda: f64, constraint: Constraint) -> Vec<f64> {
    let n = data.len() as f64;
    let counts = diffcore::cell_counts(data.samples(), constraint);
    data.samples()
        .iter()
        .map(|s| {
            // predicting 1 is wrong exactly when the target is 0
            let flip = |target: bool| if target { -1.0 } else { 1.0 };
            let mut delta = flip(s.label) / n;
            if constraint.in_cell(s.label) {
                let sign = match s.group {
                    Group::S0 => 1.0,
                    Group::S1 => -1.0,
                };
                let nc = counts[s.group.index()] as f64;
                delta += lambda * sign / nc * flip(constraint.moment_target(s.label));
            }
            delta
        })
        .collect()
}

/// Fits a linear logistic classifier to the cost-sensitive problem at `λ`.
fn fit_member(data: &Dataset, lambda: f64, config: &GrowConfig) -> Result<Predictor, GameError> {
    let deltas = cost_deltas(data, lambda, config.constraint);
    let total: f64 = deltas.iter().map(|d| d.abs()).sum();
    let weights: Vec<f64> = deltas.iter().map(|d| d.abs() / total).collect();
    let targets: Vec<bool> = deltas.iter().map(|&d| d < 0.0).collect();
    let batch: &[Sample] = data.samples();
    let mut p = Predictor::zeros(Architecture::Linear, data.dim());
    for _ in 0..config.fit_steps {
        let g = diffcore::weighted_grad(&p, batch, &weights, &targets)?;
        p = diffcore::sgd_step(&p, &g, config.fit_tau)?;
    }
    Ok(p)
}

/// Grows a pool from empty: each round fits a classifier to the current
/// Lagrangian, admits it only if its hard Lagrangian value is strictly
/// below every member's, then plays one round of the game on the pool.
pub fn grow_pool(data: &Dataset, config: &GrowConfig, rounds: usize) -> Result<GrownPool, GameError> {
    if !(config.eta > 0.0) {
        return Err(GameError::Config(format!("eta must be positive, got {}", config.eta)));
    }
    data.require_cells(config.constraint)?;
    let mut members = Vec::new();
    let mut predictions: Vec<Vec<bool>> = Vec::new();
    let mut stats = PoolStats::new(vec![], vec![], vec![])?;
    let mut state = DualState::new();
    let mut admitted = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let lambda = state.lambda;
        let candidate = fit_member(data, lambda, config)?;
        let preds = predictions_of(&candidate, data)?;
        let (e, m0, m1) = member_stats(&preds, data, config.constraint);
        let value = e + lambda * (m0 - m1);
        let admit = (0..stats.len()).all(|i| value < stats.lagrangian(i, lambda));
        admitted.push(admit);
        if admit {
            members.push(candidate);
            predictions.push(preds);
            stats.push(e, m0, m1);
        }
        let h = primal_step(&stats, lambda)?;
        state = dual_step(state, config.eta, h, stats.d[h])?;
    }
    Ok(GrownPool {
        pool: ClassifierPool {
            members,
            predictions,
            stats,
        },
        state,
        admitted,
    })
}
