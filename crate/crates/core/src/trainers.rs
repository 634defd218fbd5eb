//! Minibatch trainers: the augmented-Lagrangian method and five baselines.
//!
//! Every method shares the same loop: shuffle, cut into batches, run
//! `inner_sgd_passes` gradient steps on a method-specific objective
//! `c_e · ê + c_s0 · μ̂_s0 + c_s1 · μ̂_s1`, then apply the method's multiplier
//! update. Only the coefficient rule and the update differ.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{parse_value, ConfigError, KeyValueConfig};
use crate::data::{DataError, Dataset, Sample};
use crate::diffcore::{self, Architecture, Coefficients, DiffError, Predictor};
use crate::fairmetrics::{self, MetricReport, MetricsError};
use crate::Constraint;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("epoch {epoch}, round {round}: {source}")]
    Step {
        epoch: usize,
        round: u64,
        #[source]
        source: DiffError,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    FairAlm,
    Unconstrained,
    L2Penalty,
    Reweight,
    Lagrangian,
    ProxyLagrangian,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FairAlm,
        Method::Unconstrained,
        Method::L2Penalty,
        Method::Reweight,
        Method::Lagrangian,
        Method::ProxyLagrangian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FairAlm => "fairalm",
            Method::Unconstrained => "unconstrained",
            Method::L2Penalty => "l2_penalty",
            Method::Reweight => "reweight",
            Method::Lagrangian => "lagrangian",
            Method::ProxyLagrangian => "proxy_lagrangian",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s.as_str() {
                "l2" => Some(Method::L2Penalty),
                "proxy" => Some(Method::ProxyLagrangian),
                _ => None,
            })
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub architecture: Architecture,
    /// Dual step size; the penalty weight for `l2_penalty` and the weight
    /// scale for `reweight`.
    pub eta: f64,
    /// Per-round multiplicative growth of `eta` (augmented Lagrangian only).
    pub eta_beta: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub epsilon: f64,
    /// Multiplier budget of the proxy-Lagrangian method.
    pub budget: f64,
    pub inner_sgd_passes: usize,
    pub seed: u64,
    pub constraint: Constraint,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::FairAlm,
            architecture: Architecture::Linear,
            eta: 1.0,
            eta_beta: 0.01,
            tau: 0.05,
            batch_size: 32,
            epochs: 30,
            epsilon: 0.05,
            budget: 1.0,
            inner_sgd_passes: 5,
            seed: 0,
            constraint: Constraint::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(self.eta_beta >= 0.0) || !self.eta_beta.is_finite() {
            return bad(format!("eta_beta must be >= 0, got {}", self.eta_beta));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.method == Method::ProxyLagrangian && !(self.budget > 0.0) {
            return bad(format!("budget must be > 0 for proxy_lagrangian, got {}", self.budget));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.inner_sgd_passes == 0 {
            return bad("batch_size, epochs and inner_sgd_passes must be >= 1".into());
        }
        Ok(())
    }
}

impl KeyValueConfig for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |reason: String| ConfigError::InvalidValue {
            key: key.into(),
            value: value.into(),
            reason,
        };
        match key {
            "method" => self.method = value.parse().map_err(invalid)?,
            "architecture" => {
                self.architecture = value.parse().map_err(|e: DiffError| invalid(e.to_string()))?
            }
            "eta" => self.eta = parse_value(key, value)?,
            "eta_beta" => self.eta_beta = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "budget" => self.budget = parse_value(key, value)?,
            "inner_sgd_passes" => self.inner_sgd_passes = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "constraint" => self.constraint = value.parse().map_err(invalid)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("method".into(), self.method.to_string()),
            ("architecture".into(), self.architecture.to_string()),
            ("eta".into(), self.eta.to_string()),
            ("eta_beta".into(), self.eta_beta.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("epsilon".into(), self.epsilon.to_string()),
            ("budget".into(), self.budget.to_string()),
            ("inner_sgd_passes".into(), self.inner_sgd_passes.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("constraint".into(), self.constraint.to_string()),
        ]
    }
}

/// Multipliers carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub enum MultiplierState {
    /// No multipliers (unconstrained and ℓ2 penalty).
    None,
    FairAlm { lambda: f64 },
    /// Fixed per-group moment weights, set once from training group sizes.
    Reweight { weights: [f64; 2] },
    /// `[λ^{0\1}, λ^{1\0}]`, both kept non-negative.
    Lagrangian { lambda: [f64; 2] },
    /// `θ` pair and the multipliers it induces.
    ProxyLagrangian { theta: [f64; 2], lambda: [f64; 2] },
}

impl MultiplierState {
    pub fn lambdas(&self) -> Vec<f64> {
        match self {
            MultiplierState::None | MultiplierState::Reweight { .. } => vec![],
            MultiplierState::FairAlm { lambda } => vec![*lambda],
            MultiplierState::Lagrangian { lambda } | MultiplierState::ProxyLagrangian { lambda, .. } => {
                lambda.to_vec()
            }
        }
    }
}

/// `λ^{i\j} = B e^{θ_ij} / (1 + e^{θ_01} + e^{θ_10})`, evaluated with a
/// max shift so large `θ` do not overflow.
pub fn proxy_multipliers(theta: [f64; 2], budget: f64) -> [f64; 2] {
    let m = theta[0].max(theta[1]).max(0.0);
    let a = (theta[0] - m).exp();
    let b = (theta[1] - m).exp();
    let z = (-m).exp() + a + b;
    [budget * a / z, budget * b / z]
}

/// Mutable training state threaded through rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub predictor: Predictor,
    pub multipliers: MultiplierState,
    /// Current dual step size.
    pub eta: f64,
    /// Rounds completed so far.
    pub round: u64,
    pub epoch: usize,
}

impl TrainState {
    /// Initial state: seeded weights, zero multipliers.
    pub fn new(config: &TrainConfig, train: &Dataset) -> Self {
        let multipliers = match config.method {
            Method::Unconstrained | Method::L2Penalty => MultiplierState::None,
            Method::FairAlm => MultiplierState::FairAlm { lambda: 0.0 },
            Method::Reweight => {
                let n = train.group_counts();
                let total = (n[0] + n[1]) as f64;
                let w = |k: usize| {
                    if n[k] == 0 {
                        0.0
                    } else {
                        config.eta * total / (2.0 * n[k] as f64)
                    }
                };
                MultiplierState::Reweight {
                    weights: [w(0), w(1)],
                }
            }
            Method::Lagrangian => MultiplierState::Lagrangian { lambda: [0.0; 2] },
            Method::ProxyLagrangian => MultiplierState::ProxyLagrangian {
                theta: [0.0; 2],
                lambda: proxy_multipliers([0.0; 2], config.budget),
            },
        };
        TrainState {
            predictor: Predictor::init(config.architecture, train.dim(), config.seed),
            multipliers,
            eta: config.eta,
            round: 0,
            epoch: 0,
        }
    }
}

/// What one round did, for audit and trace identities.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    /// 1-based global round index.
    pub round: u64,
    pub epoch: usize,
    /// Dual step size used in this round.
    pub eta: f64,
    pub lambda_before: Vec<f64>,
    pub lambda_after: Vec<f64>,
    /// Surrogate moments at the post-step weights.
    pub mu_hat: [Option<f64>; 2],
    /// Indicator moments at the post-step weights (proxy-Lagrangian dual).
    pub mu_hard: [Option<f64>; 2],
    /// Surrogate risk at the post-step weights.
    pub e_hat: f64,
    /// Set when a constraint cell was empty and the dual update was skipped.
    pub dual_skipped: bool,
}

impl RoundLog {
    /// Augmented-Lagrangian objective `ê + (λ+η)μ̂_s0 − (λ−η)μ̂_s1` and its
    /// lower bound `ê + λ(μ̂_s0 − μ̂_s1) + (η/2)(μ̂_s0 − μ̂_s1)²` at the logged
    /// estimates, for FairALM rounds with both moments defined. The bound
    /// holds whenever both moments lie in `[0, 2]`.
    pub fn jensen_pair(&self) -> Option<(f64, f64)> {
        let lambda = *self.lambda_before.first()?;
        let (m0, m1) = (self.mu_hat[0]?, self.mu_hat[1]?);
        let eta = self.eta;
        let objective = self.e_hat + (lambda + eta) * m0 - (lambda - eta) * m1;
        let gap = m0 - m1;
        Some((objective, self.e_hat + lambda * gap + 0.5 * eta * gap * gap))
    }
}

fn step_err(state: &TrainState) -> impl Fn(DiffError) -> TrainError + '_ {
    move |source| TrainError::Step {
        epoch: state.epoch,
        round: state.round + 1,
        source,
    }
}

/// Zero for a coefficient whose cell is empty in the batch.
fn masked(c: Coefficients, counts: [usize; 2]) -> Coefficients {
    Coefficients::new(
        c.error,
        if counts[0] > 0 { c.s0 } else { 0.0 },
        if counts[1] > 0 { c.s1 } else { 0.0 },
    )
}

fn primal_passes(
    state: &mut TrainState,
    batch: &[Sample],
    config: &TrainConfig,
    mut coeffs: impl FnMut(&Predictor) -> Result<Coefficients, DiffError>,
) -> Result<(), TrainError> {
    let counts = diffcore::cell_counts(batch, config.constraint);
    for _ in 0..config.inner_sgd_passes {
        let p = &state.predictor;
        let c = masked(coeffs(p).map_err(step_err(state))?, counts);
        let g = diffcore::grad(p, c, batch, config.constraint).map_err(step_err(state))?;
        let next = diffcore::sgd_step(p, &g, config.tau).map_err(step_err(state))?;
        state.predictor = next;
    }
    Ok(())
}

fn hard_moments(p: &Predictor, batch: &[Sample], constraint: Constraint) -> Result<[Option<f64>; 2], DiffError> {
    let mut hits = [0usize; 2];
    let mut counts = [0usize; 2];
    for s in batch {
        if constraint.in_cell(s.label) {
            let g = s.group.index();
            counts[g] += 1;
            hits[g] += (p.predict(&s.features)? != constraint.moment_target(s.label)) as usize;
        }
    }
    let avg = |k: usize| (counts[k] > 0).then(|| hits[k] as f64 / counts[k] as f64);
    Ok([avg(0), avg(1)])
}

fn finish_round(
    state: &mut TrainState,
    batch: &[Sample],
    config: &TrainConfig,
    lambda_before: Vec<f64>,
    eta: f64,
    mu_hard: [Option<f64>; 2],
    dual_skipped: bool,
) -> Result<RoundLog, TrainError> {
    let est = diffcore::estimates(&state.predictor, batch, config.constraint).map_err(step_err(state))?;
    state.round += 1;
    if dual_skipped {
        log::debug!(
            "round {}: constraint cell empty in batch, dual update skipped",
            state.round
        );
    }
    Ok(RoundLog {
        round: state.round,
        epoch: state.epoch,
        eta,
        lambda_before,
        lambda_after: state.multipliers.lambdas(),
        mu_hat: est.mu_hat,
        mu_hard,
        e_hat: est.e_hat,
        dual_skipped,
    })
}

/// One augmented-Lagrangian round: `inner_sgd_passes` steps on
/// `ê + (λ+η) μ̂_s0 − (λ−η) μ̂_s1` at fixed `λ`, then
/// `λ ← λ + η (μ̂_s0 − μ̂_s1)` at the new weights, then `η ← η (1 + η_β)`.
pub fn fairalm_round(
    mut state: TrainState,
    batch: &[Sample],
    config: &TrainConfig,
) -> Result<(TrainState, RoundLog), TrainError> {
    let MultiplierState::FairAlm { lambda } = state.multipliers else {
        return Err(TrainError::Config("fairalm_round needs FairALM multipliers".into()));
    };
    let eta = state.eta;
    primal_passes(&mut state, batch, config, |_| {
        Ok(Coefficients::new(1.0, lambda + eta, -(lambda - eta)))
    })?;
    let est = diffcore::estimates(&state.predictor, batch, config.constraint).map_err(step_err(&state))?;
    let skipped = match est.gap() {
        Some(gap) => {
            state.multipliers = MultiplierState::FairAlm {
                lambda: lambda + eta * gap,
            };
            false
        }
        None => true,
    };
    state.eta = eta * (1.0 + config.eta_beta);
    let log = finish_round(&mut state, batch, config, vec![lambda], eta, [None; 2], skipped)?;
    Ok((state, log))
}

/// One round of a baseline method, following its primal and dual rules.
pub fn baseline_round(
    mut state: TrainState,
    batch: &[Sample],
    config: &TrainConfig,
) -> Result<(TrainState, RoundLog), TrainError> {
    let eta = state.eta;
    let constraint = config.constraint;
    let before = state.multipliers.lambdas();
    let mut mu_hard = [None; 2];
    let mut skipped = false;
    match state.multipliers.clone() {
        MultiplierState::None if config.method == Method::L2Penalty => {
            // ê + η (μ̂_s0 − μ̂_s1)²; the gap is re-estimated before every pass
            primal_passes(&mut state, batch, config, |p| {
                let est = diffcore::estimates(p, batch, constraint)?;
                Ok(match est.gap() {
                    Some(gap) => Coefficients::new(1.0, 2.0 * eta * gap, -2.0 * eta * gap),
                    None => Coefficients::risk(),
                })
            })?;
        }
        MultiplierState::None => {
            primal_passes(&mut state, batch, config, |_| Ok(Coefficients::risk()))?;
        }
        MultiplierState::Reweight { weights } => {
            primal_passes(&mut state, batch, config, |_| {
                Ok(Coefficients::new(1.0, weights[0], weights[1]))
            })?;
        }
        MultiplierState::Lagrangian { lambda } => {
            let c = Coefficients::new(1.0, lambda[0] - lambda[1], lambda[1] - lambda[0]);
            primal_passes(&mut state, batch, config, |_| Ok(c))?;
            let est = diffcore::estimates(&state.predictor, batch, constraint).map_err(step_err(&state))?;
            match est.gap() {
                Some(gap) => {
                    state.multipliers = MultiplierState::Lagrangian {
                        lambda: [
                            (lambda[0] + eta * (gap - config.epsilon)).max(0.0),
                            (lambda[1] + eta * (-gap - config.epsilon)).max(0.0),
                        ],
                    }
                }
                None => skipped = true,
            }
        }
        MultiplierState::ProxyLagrangian { theta, lambda } => {
            let c = Coefficients::new(1.0, lambda[0] - lambda[1], lambda[1] - lambda[0]);
            primal_passes(&mut state, batch, config, |_| Ok(c))?;
            mu_hard = hard_moments(&state.predictor, batch, constraint).map_err(step_err(&state))?;
            match (mu_hard[0], mu_hard[1]) {
                (Some(m0), Some(m1)) => {
                    let theta = [
                        theta[0] + eta * (m0 - m1 - config.epsilon),
                        theta[1] + eta * (m1 - m0 - config.epsilon),
                    ];
                    state.multipliers = MultiplierState::ProxyLagrangian {
                        theta,
                        lambda: proxy_multipliers(theta, config.budget),
                    };
                }
                _ => skipped = true,
            }
        }
        MultiplierState::FairAlm { .. } => return fairalm_round(state, batch, config),
    }
    let log = finish_round(&mut state, batch, config, before, eta, mu_hard, skipped)?;
    Ok((state, log))
}

/// Per-epoch snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Surrogate risk on the full training set at the end of the epoch.
    pub train_risk: f64,
    pub test: MetricReport,
    pub lambdas: Vec<f64>,
    pub eta: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainProfile {
    pub method: Method,
    pub constraint: Constraint,
    pub epochs: Vec<EpochRecord>,
    pub rounds: Vec<RoundLog>,
}

pub const PROFILE_HEADER: &str = "epoch,train_risk,test_err,deo_fnr,deo_fpr,ddp,lambda,eta";

impl TrainProfile {
    pub fn skipped_duals(&self) -> usize {
        self.rounds.iter().filter(|r| r.dual_skipped).count()
    }

    /// The test gap matching the training constraint at each epoch.
    pub fn gap_series(&self) -> Vec<Option<f64>> {
        self.epochs.iter().map(|e| e.test.gap(self.constraint)).collect()
    }

    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("a profile has at least one epoch")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{PROFILE_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let lambdas: Vec<String> = e.lambdas.iter().map(f64::to_string).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.train_risk,
                opt(e.test.err),
                opt(e.test.deo_fnr),
                opt(e.test.deo_fpr),
                opt(e.test.ddp),
                lambdas.join(";"),
                e.eta
            )?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub predictor: Predictor,
    pub profile: TrainProfile,
}

/// Trains one model. Deterministic given `config.seed`: the seed fixes the
/// initial weights and the shuffle sequence.
pub fn train(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(DataError::Empty.into());
    }
    if config.method != Method::Unconstrained {
        train.require_cells(config.constraint)?;
    }
    if test.dim() != train.dim() {
        return Err(TrainError::Config(format!(
            "test set has {} features, training set {}",
            test.dim(),
            train.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainState::new(config, train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut rounds = Vec::new();
    let round_fn = match config.method {
        Method::FairAlm => fairalm_round,
        _ => baseline_round,
    };
    for epoch in 1..=config.epochs {
        state.epoch = epoch;
        order.shuffle(&mut rng);
        let shuffled: Vec<Sample> = order.iter().map(|&i| train.samples()[i].clone()).collect();
        for batch in shuffled.chunks(config.batch_size) {
            let (next, log) = round_fn(state, batch, config)?;
            state = next;
            rounds.push(log);
        }
        let train_risk = diffcore::estimates(&state.predictor, train.samples(), config.constraint)?.e_hat;
        let preds = state.predictor.predict_all(test)?;
        epochs.push(EpochRecord {
            epoch,
            train_risk,
            test: fairmetrics::evaluate(&preds, test)?,
            lambdas: state.multipliers.lambdas(),
            eta: state.eta,
            weights: state.predictor.weights().to_vec(),
        });
        log::trace!("{} epoch {epoch}: train risk {train_risk:.4}", config.method);
    }
    Ok(TrainOutcome {
        predictor: state.predictor,
        profile: TrainProfile {
            method: config.method,
            constraint: config.constraint,
            epochs,
            rounds,
        },
    })
}
