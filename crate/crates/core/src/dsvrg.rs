//! Distributed SVRG with a rotating center, run over collection-point shards.
//!
//! A round is: the center broadcasts the global model, every collection
//! point returns its full local gradient, the center averages them, and the
//! designated collection point makes one variance-reduced pass over its
//! local samples before folding the result into the global model. The
//! center role then moves to the next collection point.
//!
//! Nothing is sent over a network; messages, gradient evaluations and FLOPS
//! are counted exactly as the cost model accounts for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shard is empty")]
    EmptyShard,
    #[error("weight vector has length {found}, data has {expected} features")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no collection point shards given")]
    NoShards,
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error("weights became non-finite in round {round}")]
    Diverged {
        round: usize,
        trace: Box<TrainingTrace>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub max_rounds: usize,
    /// FLOPS charged per gradient evaluation.
    pub tau: f64,
    /// Model dimension; must equal the feature count of the shards.
    pub omega: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            lambda: 1e-4,
            eta: 0.5,
            epsilon: 1e-2,
            max_rounds: 500,
            tau: 54.0,
            omega: 54,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return bad(format!("tau must be >= 1, got {}", self.tau));
        }
        if self.omega == 0 {
            return bad("omega must be at least 1".into());
        }
        Ok(())
    }
}

/// What one DSVRG run cost and how its gradient norm evolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rounds: usize,
    pub gradient_evals: u64,
    pub flops: f64,
    /// Transmitted parameters, in units of single weights or features.
    pub messages: u64,
    /// Squared norm of the averaged gradient at the model broadcast in each round.
    pub grad_norm_history: Vec<f64>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace always serialises")
    }

    pub fn final_grad_norm(&self) -> Option<f64> {
        self.grad_norm_history.last().copied()
    }
}

/// Global and per-collection-point weights of a run in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w_global: Vec<f64>,
    pub w_local: Vec<Vec<f64>>,
    pub h_avg: Vec<f64>,
    pub t: usize,
}

/// One labelled point.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + exp(-z))` without overflow.
#[inline]
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(z))`, the weight of a sample in the logistic gradient.
#[inline]
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn check_shard(shard: &LabeledDataset, w: &[f64]) -> Result<(), LearnerError> {
    if shard.is_empty() {
        return Err(LearnerError::EmptyShard);
    }
    if w.len() != shard.d() {
        return Err(LearnerError::DimensionMismatch {
            expected: shard.d(),
            found: w.len(),
        });
    }
    Ok(())
}

/// Mean logistic loss over the shard plus `(lambda / |shard|) * ||w||^2`.
pub fn logistic_loss(shard: &LabeledDataset, w: &[f64], lambda: f64) -> Result<f64, LearnerError> {
    check_shard(shard, w)?;
    let n = shard.len() as f64;
    let data: f64 = (0..shard.len())
        .map(|i| softplus_neg(shard.label(i) * dot(shard.row(i), w)))
        .sum();
    Ok(data / n + lambda / n * dot(w, w))
}

/// Exact gradient of [`logistic_loss`]. Adds `|shard|` to `evals`.
pub fn logistic_gradient(
    shard: &LabeledDataset,
    w: &[f64],
    lambda: f64,
    evals: &mut u64,
) -> Result<Vec<f64>, LearnerError> {
    check_shard(shard, w)?;
    let mut g = vec![0.0; w.len()];
    accumulate_gradient(shard, w, lambda, &mut g);
    *evals += shard.len() as u64;
    Ok(g)
}

fn accumulate_gradient(shard: &LabeledDataset, w: &[f64], lambda: f64, g: &mut [f64]) {
    g.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..shard.len() {
        let x = shard.row(i);
        let y = shard.label(i);
        let coef = -y * sigmoid_neg(y * dot(x, w));
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += coef * xj;
        }
    }
    let n = shard.len() as f64;
    let reg = 2.0 * lambda / n;
    for (gj, wj) in g.iter_mut().zip(w) {
        *gj = *gj / n + reg * wj;
    }
}

/// Gradient of one sample's share of the shard objective: its logistic term
/// plus the penalty weighted by `reg_weight` (which is `lambda / |shard|`),
/// so averaging over the shard recovers [`logistic_gradient`].
pub fn sample_gradient(sample: Sample<'_>, w: &[f64], reg_weight: f64) -> Vec<f64> {
    let coef = -sample.y * sigmoid_neg(sample.y * dot(sample.x, w));
    sample
        .x
        .iter()
        .zip(w)
        .map(|(xj, wj)| coef * xj + 2.0 * reg_weight * wj)
        .collect()
}

/// Variance-reduced step on the local weights:
/// `w_k - eta * (g(w_k, s) - g(w_global, s) + h_avg)`.
pub fn local_update(
    w_k: &[f64],
    w_global: &[f64],
    h_avg: &[f64],
    sample: Sample<'_>,
    eta: f64,
    reg_weight: f64,
    round: usize,
) -> Result<Vec<f64>, LearnerError> {
    for v in [w_global, h_avg, sample.x] {
        if v.len() != w_k.len() {
            return Err(LearnerError::DimensionMismatch {
                expected: w_k.len(),
                found: v.len(),
            });
        }
    }
    let mut w = w_k.to_vec();
    local_update_in_place(&mut w, w_global, h_avg, sample, eta, reg_weight);
    if w.iter().all(|v| v.is_finite()) {
        Ok(w)
    } else {
        Err(LearnerError::Diverged {
            round,
            trace: Box::new(TrainingTrace {
                rounds: round,
                gradient_evals: 0,
                flops: 0.0,
                messages: 0,
                grad_norm_history: Vec::new(),
                converged: false,
            }),
        })
    }
}

#[inline]
fn local_update_in_place(
    w: &mut [f64],
    w_global: &[f64],
    h_avg: &[f64],
    sample: Sample<'_>,
    eta: f64,
    reg_weight: f64,
) {
    let c_local = -sample.y * sigmoid_neg(sample.y * dot(sample.x, w));
    let c_global = -sample.y * sigmoid_neg(sample.y * dot(sample.x, w_global));
    let dc = c_local - c_global;
    for j in 0..w.len() {
        let reg = 2.0 * reg_weight * (w[j] - w_global[j]);
        w[j] -= eta * (dc * sample.x[j] + reg + h_avg[j]);
    }
}

/// Running average of the global model: `(w_new + t * w_global) / (t + 1)`.
pub fn global_update(w_new: &[f64], w_global: &[f64], t: usize) -> Vec<f64> {
    let t = t as f64;
    w_new
        .iter()
        .zip(w_global)
        .map(|(a, b)| (a + t * b) / (t + 1.0))
        .collect()
}

/// Counters and gradient norm recorded at the end of one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub grad_norm_sq: f64,
    /// Cumulative gradient evaluations after this round.
    pub gradient_evals: u64,
    /// Cumulative transmitted parameters after this round.
    pub messages: u64,
}

/// Step-by-step DSVRG driver. [`run_dsvrg`] wraps it for the common case;
/// sweeps use it directly to read several accuracy targets off one trajectory.
pub struct Dsvrg<'a> {
    shards: &'a [LabeledDataset],
    lambda: f64,
    eta: f64,
    omega: usize,
    state: ModelState,
    center: usize,
    grads: Vec<Vec<f64>>,
    records: Vec<RoundRecord>,
    gradient_evals: u64,
    messages: u64,
}

impl<'a> Dsvrg<'a> {
    /// The seed only picks which collection point holds the center role first.
    pub fn new(shards: &'a [LabeledDataset], cfg: &LearnerConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        if shards.is_empty() {
            return Err(LearnerError::NoShards);
        }
        let zero = vec![0.0; cfg.omega];
        for shard in shards {
            check_shard(shard, &zero)?;
        }
        let m1 = shards.len();
        let center = ChaCha20Rng::seed_from_u64(seed).gen_range(0..m1);
        Ok(Dsvrg {
            shards,
            lambda: cfg.lambda,
            eta: cfg.eta,
            omega: cfg.omega,
            state: ModelState {
                w_global: zero.clone(),
                w_local: vec![zero.clone(); m1],
                h_avg: zero.clone(),
                t: 0,
            },
            center,
            grads: vec![zero; m1],
            records: Vec::new(),
            gradient_evals: 0,
            messages: 0,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// Runs one full round and returns the squared gradient norm of the model
    /// that was broadcast at its start.
    pub fn step(&mut self) -> Result<f64, usize> {
        let m1 = self.shards.len();
        let t = self.state.t;
        // Broadcast of the global model, then the local gradients coming back.
        self.messages += 2 * (m1 as u64 - 1) * self.omega as u64;

        let w_global = &self.state.w_global;
        for (shard, g) in self.shards.iter().zip(self.grads.iter_mut()) {
            accumulate_gradient(shard, w_global, self.lambda, g);
            self.gradient_evals += shard.len() as u64;
        }
        // Fixed collection-point order keeps the reduction reproducible.
        let h = &mut self.state.h_avg;
        h.iter_mut().for_each(|v| *v = 0.0);
        for g in &self.grads {
            for (hj, gj) in h.iter_mut().zip(g) {
                *hj += gj;
            }
        }
        h.iter_mut().for_each(|v| *v /= m1 as f64);
        let grad_norm_sq = dot(h, h);

        let k = self.center;
        let shard = &self.shards[k];
        let reg_weight = self.lambda / shard.len() as f64;
        let w_k = &mut self.state.w_local[k];
        for i in 0..shard.len() {
            let s = Sample {
                x: shard.row(i),
                y: shard.label(i),
            };
            local_update_in_place(w_k, &self.state.w_global, &self.state.h_avg, s, self.eta, reg_weight);
        }
        self.gradient_evals += shard.len() as u64;
        if !w_k.iter().all(|v| v.is_finite()) {
            return Err(t);
        }
        self.state.w_global = global_update(w_k, &self.state.w_global, t);
        self.state.t += 1;
        self.center = (self.center + 1) % m1;

        self.records.push(RoundRecord {
            grad_norm_sq,
            gradient_evals: self.gradient_evals,
            messages: self.messages,
        });
        Ok(grad_norm_sq)
    }

    /// Steps until the recorded norm is at most `epsilon` or `max_rounds` rounds
    /// have run. Returns the round index of a divergence as the error.
    pub fn run_until(&mut self, epsilon: f64, max_rounds: usize) -> Result<bool, usize> {
        if self.records.iter().any(|r| r.grad_norm_sq <= epsilon) {
            return Ok(true);
        }
        while self.records.len() < max_rounds {
            if self.step()? <= epsilon {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Trace of the run as it would have stopped for target `epsilon`: up to the
    /// first round whose norm reached it, or every recorded round otherwise.
    pub fn trace_for(&self, epsilon: f64, tau: f64) -> TrainingTrace {
        let stop = self.records.iter().position(|r| r.grad_norm_sq <= epsilon);
        let rounds = stop.map_or(self.records.len(), |i| i + 1);
        let (gradient_evals, messages) = match rounds {
            0 => (0, 0),
            r => (self.records[r - 1].gradient_evals, self.records[r - 1].messages),
        };
        TrainingTrace {
            rounds,
            gradient_evals,
            flops: gradient_evals as f64 * tau,
            messages,
            grad_norm_history: self.records[..rounds].iter().map(|r| r.grad_norm_sq).collect(),
            converged: stop.is_some(),
        }
    }
}

/// Runs DSVRG until the squared norm of the averaged gradient at the
/// broadcast model is at most `cfg.epsilon`, or `cfg.max_rounds` rounds.
pub fn run_dsvrg(
    cp_shards: &[LabeledDataset],
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<TrainingTrace, LearnerError> {
    let mut engine = Dsvrg::new(cp_shards, cfg, seed)?;
    match engine.run_until(cfg.epsilon, cfg.max_rounds) {
        Ok(_) => Ok(engine.trace_for(cfg.epsilon, cfg.tau)),
        Err(round) => {
            let mut trace = engine.trace_for(cfg.epsilon, cfg.tau);
            trace.converged = false;
            Err(LearnerError::Diverged {
                round,
                trace: Box::new(trace),
            })
        }
    }
}
