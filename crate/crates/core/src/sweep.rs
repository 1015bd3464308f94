//! Empirical sweeps over aggregation levels and model sensitivity tables.
//!
//! Each replication draws a fresh device partition of the training set, then
//! every requested collection-point count regroups that partition and runs
//! DSVRG on it. One run per cell serves every accuracy target: it goes to the
//! tightest target and the looser ones are read off its trajectory.
//!
//! Cells are independent and run on the rayon pool; every cell derives its
//! own seed from the master seed, so thread scheduling never changes results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::cost::{self, CostBreakdown, SystemConfig};
use crate::data::{self, DataError, LabeledDataset, ShardSet};
use crate::dsvrg::{Dsvrg, LearnerConfig, LearnerError, TrainingTrace};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Cost(#[from] cost::CostError),
    #[error("invalid sweep settings: {0}")]
    Invalid(String),
    #[error("run stopped at the round cap without reaching the target accuracy")]
    NotConverged,
    #[error("no aggregation level produced a usable run at epsilon {0:e}")]
    NoUsableRuns(f64),
    #[error("sweep has no row for gamma = {0}")]
    MissingExtreme(f64),
}

/// Measured cost of one run: the trace's messages and FLOPS replace the
/// modelled traffic and compute, data movement is priced as in the model.
pub fn empirical_cost(
    trace: &TrainingTrace,
    gamma: f64,
    cfg: &SystemConfig,
    allow_capped: bool,
) -> Result<CostBreakdown, SweepError> {
    if !trace.converged && !allow_capped {
        return Err(SweepError::NotConverged);
    }
    Ok(CostBreakdown::assemble(
        trace.rounds as f64,
        trace.messages as f64,
        cost::data_traffic(gamma, cfg),
        cfg.theta,
        cfg.beta() * gamma.powf(cfg.alpha) * trace.flops,
    ))
}

/// Mean and 95% Student-t confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Estimate {
        let n = values.len();
        assert!(n > 0, "estimate of an empty sample");
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, ci95: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("degrees of freedom are positive")
            .inverse_cdf(0.975);
        Estimate {
            mean,
            ci95: t * (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub m1: usize,
    pub rounds: Estimate,
    pub cost_network: Estimate,
    pub cost_compute: Estimate,
    pub cost_total: Estimate,
    /// Mean number of points physically moved to collection points.
    pub moved_points_mean: f64,
    /// Replications that entered the estimates.
    pub replications: usize,
    pub diverged: usize,
    pub capped: usize,
}

/// A level none of whose replications produced a usable run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedLevel {
    pub gamma: f64,
    pub m1: usize,
    pub diverged: usize,
    pub capped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub epsilon: f64,
    /// Ordered by increasing gamma.
    pub rows: Vec<SweepRow>,
    pub dropped: Vec<DroppedLevel>,
    pub gamma_star: f64,
    pub m1_star: usize,
    /// Model optimum snapped to a feasible level.
    pub gamma_hat: f64,
    pub m1_hat: usize,
    /// Model optimum before snapping, clamped to `[1, m0]`.
    pub gamma_hat_continuous: f64,
    pub rounds_star: f64,
    pub rounds_hat: Option<f64>,
    pub cost_star: f64,
    pub cost_hat: Option<f64>,
    pub overhead_pct: Option<f64>,
    pub gain_vs_decentralised_pct: Option<f64>,
    pub gain_vs_centralised_pct: Option<f64>,
    pub failed_runs: usize,
    pub capped_runs: usize,
}

impl SweepResult {
    pub fn row_for_m1(&self, m1: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.m1 == m1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Collection-point counts to run; each realises `gamma = m0 / m1`.
    pub m1_levels: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub epsilons: Vec<f64>,
    /// Count runs that hit the round cap instead of excluding them.
    pub include_capped: bool,
}

/// SplitMix64 finaliser, used to derive independent per-cell seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const PARTITION_STREAM: u64 = 1;
const LEARNER_STREAM: u64 = 2;

/// Seed of the device partition used by replication `rep`.
pub fn partition_seed(master: u64, rep: usize) -> u64 {
    mix_seed(&[master, PARTITION_STREAM, rep as u64])
}

/// Seed of the DSVRG run at `m1` collection points in replication `rep`.
pub fn learner_seed(master: u64, m1: usize, rep: usize) -> u64 {
    mix_seed(&[master, LEARNER_STREAM, m1 as u64, rep as u64])
}

enum Outcome {
    Ok(CostBreakdown),
    Diverged,
    Capped,
}

struct Cell {
    m1: usize,
    moved: usize,
    outcomes: Vec<Outcome>,
}

fn validate(train: &LabeledDataset, system: &SystemConfig, learner: &LearnerConfig, spec: &SweepSpec) -> Result<(), SweepError> {
    system.validate()?;
    learner.validate()?;
    let invalid = |m: String| Err(SweepError::Invalid(m));
    if spec.replications == 0 {
        return invalid("replications must be at least 1".into());
    }
    if spec.m1_levels.is_empty() {
        return invalid("no aggregation levels requested".into());
    }
    if let Some(m1) = spec.m1_levels.iter().find(|m1| **m1 == 0 || **m1 > system.m0) {
        return invalid(format!("collection point count {m1} outside 1..={}", system.m0));
    }
    if spec.epsilons.is_empty() || spec.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return invalid(format!("epsilons must be non-empty and inside (0, 1): {:?}", spec.epsilons));
    }
    if learner.omega != train.d() {
        return invalid(format!("model dimension {} differs from {} features", learner.omega, train.d()));
    }
    Ok(())
}

/// Runs DSVRG at every requested level for every replication and returns one
/// result per accuracy target, in the order of `spec.epsilons`.
pub fn sweep_gamma(
    train: &LabeledDataset,
    system: &SystemConfig,
    learner: &LearnerConfig,
    spec: &SweepSpec,
) -> Result<Vec<SweepResult>, SweepError> {
    validate(train, system, learner, spec)?;
    let mut levels = spec.m1_levels.clone();
    levels.sort_unstable_by(|a, b| b.cmp(a));
    levels.dedup();
    let eps_min = spec.epsilons.iter().copied().fold(f64::INFINITY, f64::min);

    let partitions: Vec<ShardSet> = (0..spec.replications)
        .map(|rep| data::partition_poisson(train, system.m0, system.n0, partition_seed(spec.seed, rep)))
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, usize)> = (0..spec.replications)
        .flat_map(|rep| levels.iter().map(move |&m1| (rep, m1)))
        .collect();

    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(rep, m1)| -> Result<Cell, SweepError> {
            let groups = data::regroup_to(&partitions[rep], m1)?;
            let shards: Vec<LabeledDataset> = groups.shards.iter().map(|idx| train.subset(idx)).collect();
            let mut engine = Dsvrg::new(&shards, learner, learner_seed(spec.seed, m1, rep))?;
            let diverged_at = engine.run_until(eps_min, learner.max_rounds).err();
            let gamma = system.m0 as f64 / m1 as f64;
            let outcomes = spec
                .epsilons
                .iter()
                .map(|&eps| {
                    let trace = engine.trace_for(eps, learner.tau);
                    let cfg = SystemConfig { epsilon: eps, ..system.clone() };
                    if trace.converged {
                        Outcome::Ok(empirical_cost(&trace, gamma, &cfg, false).expect("converged"))
                    } else if diverged_at.is_some() {
                        Outcome::Diverged
                    } else if spec.include_capped {
                        Outcome::Ok(empirical_cost(&trace, gamma, &cfg, true).expect("override"))
                    } else {
                        Outcome::Capped
                    }
                })
                .collect();
            Ok(Cell {
                m1,
                moved: groups.total_moved(),
                outcomes,
            })
        })
        .collect::<Result<_, _>>()?;

    spec.epsilons
        .iter()
        .enumerate()
        .map(|(e, &eps)| aggregate(system, eps, &levels, &cells, e))
        .collect()
}

fn aggregate(system: &SystemConfig, eps: f64, levels: &[usize], cells: &[Cell], e: usize) -> Result<SweepResult, SweepError> {
    let m0 = system.m0 as f64;
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let (mut failed_runs, mut capped_runs) = (0, 0);
    // Levels are ordered by decreasing m1, i.e. increasing gamma.
    for &m1 in levels {
        let gamma = m0 / m1 as f64;
        let mine: Vec<&Cell> = cells.iter().filter(|c| c.m1 == m1).collect();
        let mut costs = Vec::new();
        let (mut diverged, mut capped) = (0, 0);
        for c in &mine {
            match &c.outcomes[e] {
                Outcome::Ok(b) => costs.push(*b),
                Outcome::Diverged => diverged += 1,
                Outcome::Capped => capped += 1,
            }
        }
        failed_runs += diverged;
        capped_runs += capped;
        if costs.is_empty() {
            dropped.push(DroppedLevel { gamma, m1, diverged, capped });
            continue;
        }
        let pick = |f: fn(&CostBreakdown) -> f64| Estimate::of(&costs.iter().map(f).collect::<Vec<_>>());
        rows.push(SweepRow {
            gamma,
            m1,
            rounds: pick(|b| b.rounds),
            cost_network: pick(|b| b.cost_network),
            cost_compute: pick(|b| b.cost_compute),
            cost_total: pick(|b| b.cost_total),
            moved_points_mean: mine.iter().map(|c| c.moved as f64).sum::<f64>() / mine.len() as f64,
            replications: costs.len(),
            diverged,
            capped,
        });
    }
    if rows.is_empty() {
        return Err(SweepError::NoUsableRuns(eps));
    }

    let star = rows
        .iter()
        .reduce(|best, r| if r.cost_total.mean < best.cost_total.mean { r } else { best })
        .expect("rows are non-empty");
    let model = cost::numeric_optimum(&SystemConfig { epsilon: eps, ..system.clone() });
    let hat = rows.iter().find(|r| r.m1 == model.m1_hat);
    let row_cost = |g: f64| rows.iter().find(|r| r.gamma == g).map(|r| r.cost_total.mean);
    let cost_hat = hat.map(|r| r.cost_total.mean);
    let (gain_dec, gain_cen) = match cost_hat {
        Some(c) => (
            row_cost(1.0).map(|c1| gain_pct(c1, c)),
            row_cost(m0).map(|cm| gain_pct(cm, c)),
        ),
        None => (None, None),
    };

    Ok(SweepResult {
        epsilon: eps,
        gamma_star: star.gamma,
        m1_star: star.m1,
        gamma_hat: model.gamma_snapped,
        m1_hat: model.m1_hat,
        gamma_hat_continuous: model.gamma_hat,
        rounds_star: star.rounds.mean,
        rounds_hat: hat.map(|r| r.rounds.mean),
        cost_star: star.cost_total.mean,
        cost_hat,
        overhead_pct: cost_hat.map(|c| 100.0 * (c - star.cost_total.mean) / star.cost_total.mean),
        gain_vs_decentralised_pct: gain_dec,
        gain_vs_centralised_pct: gain_cen,
        failed_runs,
        capped_runs,
        dropped,
        rows,
    })
}

/// Percentage saved by paying `c_hat` instead of `c_ref`.
pub fn gain_pct(c_ref: f64, c_hat: f64) -> f64 {
    100.0 * (c_ref - c_hat) / c_ref
}

/// Savings at the model optimum relative to full decentralisation and full
/// centralisation, in percent.
pub fn gain_vs_extremes(result: &SweepResult, m0: usize) -> Result<(f64, f64), SweepError> {
    let cost_at = |m1: usize, gamma: f64| {
        result
            .row_for_m1(m1)
            .map(|r| r.cost_total.mean)
            .ok_or(SweepError::MissingExtreme(gamma))
    };
    let c1 = cost_at(m0, 1.0)?;
    let cm = cost_at(1, m0 as f64)?;
    let ch = cost_at(result.m1_hat, result.gamma_hat)?;
    Ok((gain_pct(c1, ch), gain_pct(cm, ch)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    N0,
    M0,
    Mu,
    Alpha,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n0" => Ok(Axis::N0),
            "m0" => Ok(Axis::M0),
            "mu" => Ok(Axis::Mu),
            "alpha" => Ok(Axis::Alpha),
            other => Err(format!("unknown sensitivity axis {other:?}; expected n0, m0, mu or alpha")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub alpha: f64,
    pub gamma_hat: f64,
    pub m1_hat: usize,
    pub gamma_snapped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub value: f64,
    pub cells: Vec<SensitivityCell>,
}

pub const DEFAULT_ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

/// Model optimum as one parameter varies, for each compute-cost exponent in
/// `alphas`. On the `alpha` axis the value itself is the exponent.
pub fn sensitivity_sweep(
    base: &SystemConfig,
    axis: Axis,
    values: &[f64],
    alphas: &[f64],
) -> Result<Vec<SensitivityRow>, SweepError> {
    if values.is_empty() {
        return Err(SweepError::Invalid("no sensitivity values given".into()));
    }
    if axis != Axis::Alpha && alphas.is_empty() {
        return Err(SweepError::Invalid("no alpha values given".into()));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            match axis {
                Axis::N0 => cfg.n0 = value,
                Axis::M0 => {
                    if value.fract() != 0.0 || value < 1.0 {
                        return Err(SweepError::Invalid(format!("m0 must be a positive integer, got {value}")));
                    }
                    cfg.m0 = value as usize;
                }
                Axis::Mu => cfg.mu = value,
                Axis::Alpha => cfg.alpha = value,
            }
            let exponents: Vec<f64> = if axis == Axis::Alpha { vec![value] } else { alphas.to_vec() };
            let cells = exponents
                .into_iter()
                .map(|alpha| {
                    let c = SystemConfig { alpha, ..cfg.clone() };
                    c.validate()?;
                    let rep = cost::numeric_optimum(&c);
                    Ok(SensitivityCell {
                        alpha,
                        gamma_hat: rep.gamma_hat,
                        m1_hat: rep.m1_hat,
                        gamma_snapped: rep.gamma_snapped,
                    })
                })
                .collect::<Result<_, SweepError>>()?;
            Ok(SensitivityRow { value, cells })
        })
        .collect()
}
