//! Differentiable predictors, logistic surrogates and their gradients.
//!
//! A [`Predictor`] maps a feature vector to a real margin; the hard
//! prediction is `margin > 0`. Every training objective in the crate is a
//! weighted sum of per-sample logistic losses `ℓ(margin, target)`, so one
//! gradient routine serves the error term, the group moments and the
//! cost-sensitive fits used to grow classifier pools.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Group, Sample};
use crate::Constraint;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("input has {found} features, predictor expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{architecture} on {dim} inputs needs {expected} weights, got {found}")]
    WeightLength {
        architecture: Architecture,
        dim: usize,
        expected: usize,
        found: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("moment of group {group} is undefined on this batch but has a nonzero coefficient")]
    UndefinedCell { group: Group },
    #[error("non-finite gradient component {component}")]
    NonFinite { component: usize },
    #[error("step size must be positive, got {0}")]
    Step(f64),
    #[error("{0} sample weights for {1} samples")]
    WeightCount(usize, usize),
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("unknown architecture `{0}` (expected linear or mlp[-N])")]
    UnknownArchitecture(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// `w · [x; 1]`.
    Linear,
    /// One tanh hidden layer: `w2 · tanh(W1 x + b1) + b2`.
    Mlp { hidden: usize },
}

impl Architecture {
    pub fn num_weights(self, dim: usize) -> usize {
        match self {
            Architecture::Linear => dim + 1,
            Architecture::Mlp { hidden } => hidden * dim + 2 * hidden + 1,
        }
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Linear
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp { hidden } => write!(f, "mlp-{hidden}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "linear" => Ok(Architecture::Linear),
            "mlp" => Ok(Architecture::Mlp {
                hidden: DEFAULT_HIDDEN,
            }),
            _ => s
                .strip_prefix("mlp-")
                .and_then(|h| h.parse().ok())
                .filter(|&h: &usize| h > 0)
                .map(|hidden| Architecture::Mlp { hidden })
                .ok_or_else(|| DiffError::UnknownArchitecture(s.to_string())),
        }
    }
}

/// Stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn signed(target: bool) -> f64 {
    if target {
        1.0
    } else {
        -1.0
    }
}

/// Logistic loss `log(1 + exp(−(2y−1)·margin))`: convex, non-negative,
/// `log 2` at zero margin.
pub fn surrogate_loss(margin: f64, target: bool) -> f64 {
    softplus(-signed(target) * margin)
}

/// Derivative of [`surrogate_loss`] with respect to the margin.
pub fn surrogate_loss_grad(margin: f64, target: bool) -> f64 {
    let sg = signed(target);
    -sg * sigmoid(-sg * margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    architecture: Architecture,
    dim: usize,
    seed: u64,
    weights: Vec<f64>,
}

impl Predictor {
    pub fn zeros(architecture: Architecture, dim: usize) -> Self {
        Predictor {
            architecture,
            dim,
            seed: 0,
            weights: vec![0.0; architecture.num_weights(dim)],
        }
    }

    /// Weights drawn uniformly from `±1/sqrt(fan_in)`, biases zero.
    pub fn init(architecture: Architecture, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; architecture.num_weights(dim)];
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let r = 1.0 / (fan_in.max(1) as f64).sqrt();
            for w in slice {
                *w = rng.random_range(-r..r);
            }
        };
        match architecture {
            Architecture::Linear => fill(&mut weights[..dim], dim),
            Architecture::Mlp { hidden } => {
                fill(&mut weights[..hidden * dim], dim);
                let w2 = hidden * dim + hidden;
                fill(&mut weights[w2..w2 + hidden], hidden);
            }
        }
        Predictor {
            architecture,
            dim,
            seed,
            weights,
        }
    }

    pub fn from_weights(
        architecture: Architecture,
        dim: usize,
        weights: Vec<f64>,
    ) -> Result<Self, DiffError> {
        let expected = architecture.num_weights(dim);
        if weights.len() != expected {
            return Err(DiffError::WeightLength {
                architecture,
                dim,
                expected,
                found: weights.len(),
            });
        }
        Ok(Predictor {
            architecture,
            dim,
            seed: 0,
            weights,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DiffError> {
        if x.len() != self.dim {
            return Err(DiffError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, DiffError> {
        self.check_dim(x)?;
        let mut hidden = vec![0.0; self.hidden_len()];
        Ok(self.forward(x, &mut hidden))
    }

    pub fn predict(&self, x: &[f64]) -> Result<bool, DiffError> {
        Ok(self.score(x)? > 0.0)
    }

    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<bool>, DiffError> {
        let mut hidden = vec![0.0; self.hidden_len()];
        data.samples()
            .iter()
            .map(|s| {
                self.check_dim(&s.features)?;
                Ok(self.forward(&s.features, &mut hidden) > 0.0)
            })
            .collect()
    }

    fn hidden_len(&self) -> usize {
        match self.architecture {
            Architecture::Linear => 0,
            Architecture::Mlp { hidden } => hidden,
        }
    }

    /// Margin of `x`; for the MLP, leaves the hidden activations in `act`.
    fn forward(&self, x: &[f64], act: &mut [f64]) -> f64 {
        let w = &self.weights;
        let d = self.dim;
        match self.architecture {
            Architecture::Linear => dot(&w[..d], x) + w[d],
            Architecture::Mlp { hidden } => {
                let b1 = hidden * d;
                let w2 = b1 + hidden;
                let mut m = w[w2 + hidden];
                for k in 0..hidden {
                    let a = (dot(&w[k * d..(k + 1) * d], x) + w[b1 + k]).tanh();
                    act[k] = a;
                    m += w[w2 + k] * a;
                }
                m
            }
        }
    }

    /// Adds `scale · ∂margin/∂w` at `x` into `out`, reusing the activations
    /// left by [`Predictor::forward`].
    fn add_margin_grad(&self, x: &[f64], act: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.dim;
        match self.architecture {
            Architecture::Linear => {
                for (o, xi) in out[..d].iter_mut().zip(x) {
                    *o += scale * xi;
                }
                out[d] += scale;
            }
            Architecture::Mlp { hidden } => {
                let b1 = hidden * d;
                let w2 = b1 + hidden;
                for k in 0..hidden {
                    let a = act[k];
                    out[w2 + k] += scale * a;
                    let dz = scale * self.weights[w2 + k] * (1.0 - a * a);
                    for (o, xi) in out[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *o += dz * xi;
                    }
                    out[b1 + k] += dz;
                }
                out[w2 + hidden] += scale;
            }
        }
    }

    /// Writes a one-line JSON header followed by the weights as
    /// little-endian `f64`.
    pub fn write_weights_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = WeightHeader {
            architecture: self.architecture.to_string(),
            dim: self.dim,
            seed: self.seed,
            len: self.weights.len(),
        };
        let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
        for v in &self.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_weights_from<R: BufRead>(mut r: R) -> Result<Self, DiffError> {
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| DiffError::Format(e.to_string()))?;
        let header: WeightHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| DiffError::Format(e.to_string()))?;
        let architecture: Architecture = header.architecture.parse()?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| DiffError::Format(e.to_string()))?;
        if bytes.len() != header.len * 8 {
            return Err(DiffError::Format(format!(
                "header declares {} weights, payload holds {} bytes",
                header.len,
                bytes.len()
            )));
        }
        let weights = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Predictor::from_weights(architecture, header.dim, weights)?.with_seed(header.seed))
    }

    pub fn write_weights(&self, path: impl AsRef<Path>) -> Result<(), DiffError> {
        let path = path.as_ref();
        let io = |source| DiffError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        self.write_weights_to(std::io::BufWriter::new(file))
            .map_err(io)
    }

    pub fn read_weights(path: impl AsRef<Path>) -> Result<Self, DiffError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| DiffError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_weights_from(std::io::BufReader::new(file))
    }
}

#[derive(Serialize, Deserialize)]
struct WeightHeader {
    architecture: String,
    dim: usize,
    seed: u64,
    len: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Surrogate risk and group moments of a predictor on a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateEstimates {
    pub e_hat: f64,
    /// `None` when the group's constraint cell is empty in the batch.
    pub mu_hat: [Option<f64>; 2],
    pub n: usize,
    pub cell_counts: [usize; 2],
}

impl SurrogateEstimates {
    /// `μ̂_s0 − μ̂_s1` when both moments are defined.
    pub fn gap(&self) -> Option<f64> {
        Some(self.mu_hat[0]? - self.mu_hat[1]?)
    }
}

/// Sizes of the two constraint cells in `batch`.
pub fn cell_counts(batch: &[Sample], constraint: Constraint) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for s in batch {
        if constraint.in_cell(s.label) {
            counts[s.group.index()] += 1;
        }
    }
    counts
}

pub fn estimates(
    p: &Predictor,
    batch: &[Sample],
    constraint: Constraint,
) -> Result<SurrogateEstimates, DiffError> {
    if batch.is_empty() {
        return Err(DiffError::EmptyBatch);
    }
    let mut act = vec![0.0; p.hidden_len()];
    let mut err = 0.0;
    let mut mu = [0.0; 2];
    let mut counts = [0usize; 2];
    for s in batch {
        p.check_dim(&s.features)?;
        let m = p.forward(&s.features, &mut act);
        err += surrogate_loss(m, s.label);
        if constraint.in_cell(s.label) {
            let g = s.group.index();
            mu[g] += surrogate_loss(m, constraint.moment_target(s.label));
            counts[g] += 1;
        }
    }
    let avg = |sum: f64, n: usize| (n > 0).then(|| sum / n as f64);
    Ok(SurrogateEstimates {
        e_hat: err / batch.len() as f64,
        mu_hat: [avg(mu[0], counts[0]), avg(mu[1], counts[1])],
        n: batch.len(),
        cell_counts: counts,
    })
}

/// Objective weights `c_e · ê + c_s0 · μ̂_s0 + c_s1 · μ̂_s1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub error: f64,
    pub s0: f64,
    pub s1: f64,
}

impl Coefficients {
    pub fn new(error: f64, s0: f64, s1: f64) -> Self {
        Coefficients { error, s0, s1 }
    }

    /// Plain surrogate risk.
    pub fn risk() -> Self {
        Coefficients::new(1.0, 0.0, 0.0)
    }

    pub fn group(&self, g: Group) -> f64 {
        match g {
            Group::S0 => self.s0,
            Group::S1 => self.s1,
        }
    }

    /// The objective value at `est`. Terms with a zero coefficient are
    /// skipped, so undefined moments are allowed there.
    pub fn combine(&self, est: &SurrogateEstimates) -> Result<f64, DiffError> {
        let mut v = self.error * est.e_hat;
        for g in Group::BOTH {
            let c = self.group(g);
            if c != 0.0 {
                let mu = est.mu_hat[g.index()].ok_or(DiffError::UndefinedCell { group: g })?;
                v += c * mu;
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Value and gradient of `Σ_i Σ_k w_ik · ℓ(margin_i, t_ik)` where `terms`
/// yields at most two `(weight, target)` pairs per sample. Zero weights are
/// skipped entirely.
fn accumulate<F>(p: &Predictor, batch: &[Sample], mut terms: F) -> Result<GradBundle, DiffError>
where
    F: FnMut(&Sample) -> [(f64, bool); 2],
{
    let mut grad = vec![0.0; p.weights.len()];
    let mut value = 0.0;
    let mut act = vec![0.0; p.hidden_len()];
    for s in batch {
        p.check_dim(&s.features)?;
        let ts = terms(s);
        if ts.iter().all(|t| t.0 == 0.0) {
            continue;
        }
        let m = p.forward(&s.features, &mut act);
        let mut k = 0.0;
        for (w, t) in ts {
            if w != 0.0 {
                value += w * surrogate_loss(m, t);
                k += w * surrogate_loss_grad(m, t);
            }
        }
        if k != 0.0 {
            p.add_margin_grad(&s.features, &act, k, &mut grad);
        }
    }
    Ok(GradBundle { value, grad })
}

/// Analytic gradient of `c_e · ê + c_s0 · μ̂_s0 + c_s1 · μ̂_s1` on `batch`.
pub fn grad(
    p: &Predictor,
    coeffs: Coefficients,
    batch: &[Sample],
    constraint: Constraint,
) -> Result<GradBundle, DiffError> {
    if batch.is_empty() {
        return Err(DiffError::EmptyBatch);
    }
    let counts = cell_counts(batch, constraint);
    for g in Group::BOTH {
        if coeffs.group(g) != 0.0 && counts[g.index()] == 0 {
            return Err(DiffError::UndefinedCell { group: g });
        }
    }
    let we = coeffs.error / batch.len() as f64;
    let wm = [
        if coeffs.s0 != 0.0 { coeffs.s0 / counts[0] as f64 } else { 0.0 },
        if coeffs.s1 != 0.0 { coeffs.s1 / counts[1] as f64 } else { 0.0 },
    ];
    accumulate(p, batch, |s| {
        let moment = if constraint.in_cell(s.label) {
            wm[s.group.index()]
        } else {
            0.0
        };
        [
            (we, s.label),
            (moment, constraint.moment_target(s.label)),
        ]
    })
}

/// Gradient of `Σ_i weights_i · ℓ(margin_i, targets_i)`.
pub fn weighted_grad(
    p: &Predictor,
    batch: &[Sample],
    weights: &[f64],
    targets: &[bool],
) -> Result<GradBundle, DiffError> {
    if weights.len() != batch.len() || targets.len() != batch.len() {
        return Err(DiffError::WeightCount(weights.len().min(targets.len()), batch.len()));
    }
    let mut i = 0;
    accumulate(p, batch, |_| {
        let t = [(weights[i], targets[i]), (0.0, false)];
        i += 1;
        t
    })
}

/// `w ← w − τ · grad`.
pub fn sgd_step(p: &Predictor, g: &GradBundle, tau: f64) -> Result<Predictor, DiffError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(DiffError::Step(tau));
    }
    if g.grad.len() != p.weights.len() {
        return Err(DiffError::WeightLength {
            architecture: p.architecture,
            dim: p.dim,
            expected: p.weights.len(),
            found: g.grad.len(),
        });
    }
    if let Some(component) = g.grad.iter().position(|v| !v.is_finite()) {
        return Err(DiffError::NonFinite { component });
    }
    let mut next = p.clone();
    for (w, gi) in next.weights.iter_mut().zip(&g.grad) {
        *w -= tau * gi;
    }
    Ok(next)
}
