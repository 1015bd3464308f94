//! Analytical cost of training at aggregation level `gamma`, and the level
//! that minimises it.
//!
//! With `m1 = m0 / gamma` collection points each holding `n1 = gamma * n0`
//! points, the model charges:
//!
//! * rounds `R = (1 + kappa / n1) * log2(1 / epsilon)`,
//! * algorithm traffic `C_A = 2 (m1 - 1) omega R`,
//! * data traffic `C_D = (m0 - m1) n0 d`,
//! * compute `P = tau n1 (m1 + 1) R`, priced at `beta gamma^alpha` per FLOP,
//!
//! for a total `C = theta (C_A + C_D) + beta gamma^alpha P`, `beta = theta mu`.
//! Rounds stay real-valued throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub m0: usize,
    pub n0: f64,
    pub d: f64,
    pub omega: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub theta: f64,
    pub mu: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl SystemConfig {
    /// 400 devices of 112 Covtype points each, kappa = 518, theta = 1,
    /// mu = 1e-4, linear compute cost and `tau = omega`.
    pub fn paper(epsilon: f64) -> SystemConfig {
        SystemConfig {
            m0: 400,
            n0: 112.0,
            d: 54.0,
            omega: 54.0,
            kappa: 518.0,
            epsilon,
            theta: 1.0,
            mu: 1e-4,
            alpha: 1.0,
            tau: 54.0,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |m: String| Err(CostError::InvalidConfig(m));
        let finite = [
            ("n0", self.n0),
            ("d", self.d),
            ("omega", self.omega),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("theta", self.theta),
            ("mu", self.mu),
            ("alpha", self.alpha),
            ("tau", self.tau),
        ];
        if let Some((k, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{k} must be finite, got {v}"));
        }
        if self.m0 < 1 {
            return bad("m0 must be at least 1".into());
        }
        for (k, v) in [("n0", self.n0), ("d", self.d), ("omega", self.omega), ("tau", self.tau)] {
            if v < 1.0 {
                return bad(format!("{k} must be at least 1, got {v}"));
            }
        }
        if self.kappa <= 0.0 {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.theta < 0.0 {
            return bad(format!("theta must be non-negative, got {}", self.theta));
        }
        if self.mu < 0.0 {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if self.alpha <= 0.0 {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        Ok(())
    }

    /// Cost of one FLOP.
    pub fn beta(&self) -> f64 {
        self.theta * self.mu
    }

    /// `log2(1 / epsilon)`.
    pub fn log_term(&self) -> f64 {
        -self.epsilon.log2()
    }

    pub fn m0f(&self) -> f64 {
        self.m0 as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub rounds: f64,
    pub traffic_algorithm: f64,
    pub traffic_data: f64,
    pub cost_network: f64,
    pub cost_compute: f64,
    pub cost_total: f64,
}

impl CostBreakdown {
    /// Assembles a breakdown so that the network and total identities hold exactly.
    pub fn assemble(rounds: f64, traffic_algorithm: f64, traffic_data: f64, theta: f64, cost_compute: f64) -> Self {
        let cost_network = theta * (traffic_algorithm + traffic_data);
        CostBreakdown {
            rounds,
            traffic_algorithm,
            traffic_data,
            cost_network,
            cost_compute,
            cost_total: cost_network + cost_compute,
        }
    }
}

pub fn rounds_model(gamma: f64, cfg: &SystemConfig) -> f64 {
    (1.0 + cfg.kappa / (gamma * cfg.n0)) * cfg.log_term()
}

pub fn traffic_per_round(m1: f64, omega: f64) -> f64 {
    2.0 * (m1 - 1.0) * omega
}

pub fn algorithm_traffic(gamma: f64, cfg: &SystemConfig) -> f64 {
    traffic_per_round(cfg.m0f() / gamma, cfg.omega) * rounds_model(gamma, cfg)
}

pub fn data_traffic(gamma: f64, cfg: &SystemConfig) -> f64 {
    (cfg.m0f() - cfg.m0f() / gamma) * cfg.n0 * cfg.d
}

/// FLOPS across all collection points: `tau n0 (m0 + gamma) R`.
pub fn compute_ops(gamma: f64, cfg: &SystemConfig) -> f64 {
    cfg.tau * cfg.n0 * (cfg.m0f() + gamma) * rounds_model(gamma, cfg)
}

pub fn compute_cost(gamma: f64, cfg: &SystemConfig) -> f64 {
    cfg.beta() * gamma.powf(cfg.alpha) * compute_ops(gamma, cfg)
}

pub fn total_cost(gamma: f64, cfg: &SystemConfig) -> CostBreakdown {
    CostBreakdown::assemble(
        rounds_model(gamma, cfg),
        algorithm_traffic(gamma, cfg),
        data_traffic(gamma, cfg),
        cfg.theta,
        compute_cost(gamma, cfg),
    )
}

/// Analytic `dC/dgamma`.
pub fn cost_derivative(gamma: f64, cfg: &SystemConfig) -> f64 {
    let m = cfg.m0f();
    let n = cfg.n0;
    let l = cfg.log_term();
    let r = rounds_model(gamma, cfg);
    let dr = -cfg.kappa * l / (gamma * gamma * n);
    let g2 = gamma * gamma;
    let d_algo = 2.0 * cfg.omega * (-m / g2 * r + (m / gamma - 1.0) * dr);
    let d_data = m * n * cfg.d / g2;
    let ga = gamma.powf(cfg.alpha);
    let d_p = cfg.alpha * gamma.powf(cfg.alpha - 1.0) * (m + gamma) * r + ga * r + ga * (m + gamma) * dr;
    cfg.theta * (d_algo + d_data) + cfg.beta() * cfg.tau * n * d_p
}

/// Network-only optimum for the free-computation case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gamma", rename_all = "snake_case")]
pub enum NetworkOptimum {
    Interior(f64),
    /// Non-positive denominator: network cost keeps falling as gamma grows.
    UpperBoundary,
}

impl NetworkOptimum {
    pub fn gamma(&self) -> Option<f64> {
        match self {
            NetworkOptimum::Interior(g) => Some(*g),
            NetworkOptimum::UpperBoundary => None,
        }
    }
}

/// Numerator and denominator of the closed-form network optimum.
pub fn closed_form_terms(cfg: &SystemConfig) -> (f64, f64) {
    let m = cfg.m0f();
    let n = cfg.n0;
    let l = cfg.log_term();
    let w = cfg.omega;
    let num = 4.0 * cfg.kappa * l * m * w;
    let den = cfg.d * m * n * n + 2.0 * cfg.kappa * l * w - 2.0 * l * m * n * w;
    (num, den)
}

/// Stationary point of `theta (C_A + C_D)`, unclamped.
pub fn closed_form_network_optimum(cfg: &SystemConfig) -> NetworkOptimum {
    let (num, den) = closed_form_terms(cfg);
    if den > 0.0 {
        NetworkOptimum::Interior(num / den)
    } else {
        NetworkOptimum::UpperBoundary
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumMethod {
    ClosedFormNetwork,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    None,
    Lower,
    Upper,
}

impl std::fmt::Display for Clamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Clamp::None => "none",
            Clamp::Lower => "lower",
            Clamp::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub gamma_unclamped: f64,
    pub gamma_hat: f64,
    pub m1_hat: usize,
    pub gamma_snapped: f64,
    pub cost_at_hat: f64,
    pub cost_at_snapped: f64,
    pub clamp: Clamp,
    pub method: OptimumMethod,
    /// Whether the coarse scan showed a single descent followed by an ascent.
    pub unimodal_scan: bool,
}

/// `n` points spaced evenly in log scale from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Every realisable level as `(m1, m0 / m1)`, from `m1 = m0` down to 1.
pub fn feasible_levels(m0: usize) -> Vec<(usize, f64)> {
    (1..=m0).rev().map(|m1| (m1, m0 as f64 / m1 as f64)).collect()
}

const SCAN_POINTS: usize = 64;

/// Range searched for the unclamped optimum.
pub fn search_domain(cfg: &SystemConfig) -> (f64, f64) {
    (1e-6, 1e3 * cfg.m0f().max(1.0))
}

struct Minimum {
    gamma: f64,
    unimodal: bool,
}

fn minimise(cfg: &SystemConfig, lo: f64, hi: f64) -> Minimum {
    let cost = |g: f64| total_cost(g, cfg).cost_total;
    let grid = log_spaced(lo, hi, SCAN_POINTS);
    let values: Vec<f64> = grid.iter().map(|&g| cost(g)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let flat = values.iter().all(|v| *v == values[0]);
    if flat {
        return Minimum {
            gamma: lo.max(1.0).min(hi),
            unimodal: true,
        };
    }
    let unimodal = values[..=best].windows(2).all(|w| w[1] <= w[0])
        && values[best..].windows(2).all(|w| w[1] >= w[0]);

    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(SCAN_POINTS - 1)];
    let g = golden_section_log(&cost, a, b);
    Minimum {
        gamma: polish(cfg, g, a, b),
        unimodal,
    }
}

/// Golden-section search on `ln(gamma)` over `[a, b]`.
fn golden_section_log(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (a.ln(), b.ln());
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    for _ in 0..200 {
        if hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1.exp());
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2.exp());
        }
    }
    ((lo + hi) / 2.0).exp()
}

/// Refines `g` by bisecting on the sign of the analytic derivative when the
/// bracket shows a descent followed by an ascent.
fn polish(cfg: &SystemConfig, g: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    if !(cost_derivative(lo, cfg) < 0.0 && cost_derivative(hi, cfg) > 0.0) {
        return g;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if cost_derivative(mid, cfg) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = (lo * hi).sqrt();
    // Keep whichever of the two estimates the cost itself prefers.
    if total_cost(mid, cfg).cost_total <= total_cost(g, cfg).cost_total {
        mid
    } else {
        g
    }
}

/// Cheaper of the two collection-point counts bracketing `m0 / gamma`;
/// a tie goes to the larger count.
pub fn snap(gamma: f64, cfg: &SystemConfig) -> (usize, f64) {
    let m0 = cfg.m0;
    let x = cfg.m0f() / gamma;
    let lo = (x.floor() as usize).clamp(1, m0);
    let hi = (x.ceil() as usize).clamp(1, m0);
    let at = |m1: usize| total_cost(cfg.m0f() / m1 as f64, cfg).cost_total;
    if at(lo) < at(hi) {
        (lo, cfg.m0f() / lo as f64)
    } else {
        (hi, cfg.m0f() / hi as f64)
    }
}

fn report(cfg: &SystemConfig, gamma_unclamped: f64, gamma_hat: f64, method: OptimumMethod, unimodal: bool) -> OptimumReport {
    let clamp = if gamma_unclamped < 1.0 {
        Clamp::Lower
    } else if gamma_unclamped > cfg.m0f() {
        Clamp::Upper
    } else {
        Clamp::None
    };
    let (m1_hat, gamma_snapped) = snap(gamma_hat, cfg);
    OptimumReport {
        gamma_unclamped,
        gamma_hat,
        m1_hat,
        gamma_snapped,
        cost_at_hat: total_cost(gamma_hat, cfg).cost_total,
        cost_at_snapped: total_cost(gamma_snapped, cfg).cost_total,
        clamp,
        method,
        unimodal_scan: unimodal,
    }
}

/// Minimises the total cost: the unconstrained optimum is located by a
/// log-spaced scan, golden-section refinement and derivative bisection, then
/// clamped to `[1, m0]` and snapped to an integer collection-point count.
pub fn numeric_optimum(cfg: &SystemConfig) -> OptimumReport {
    let (lo, hi) = search_domain(cfg);
    let free = minimise(cfg, lo, hi);
    let m0 = cfg.m0f();
    let mut gamma_hat = free.gamma.clamp(1.0, m0);
    if !free.unimodal && cfg.m0 > 1 {
        let inside = minimise(cfg, 1.0, m0).gamma.clamp(1.0, m0);
        let c_in = total_cost(inside, cfg).cost_total;
        let c_hat = total_cost(gamma_hat, cfg).cost_total;
        if c_in < c_hat * (1.0 - 1e-12) {
            gamma_hat = inside;
        }
    }
    report(cfg, free.gamma, gamma_hat, OptimumMethod::Numeric, free.unimodal)
}

/// Report built from the closed-form network optimum; `None` when the cost
/// includes computation or the optimum sits at the upper boundary.
pub fn closed_form_report(cfg: &SystemConfig) -> Option<OptimumReport> {
    if cfg.beta() != 0.0 {
        return None;
    }
    let g = closed_form_network_optimum(cfg).gamma()?;
    Some(report(cfg, g, g.clamp(1.0, cfg.m0f()), OptimumMethod::ClosedFormNetwork, true))
}

/// Sign of the central finite difference of the total cost at each level,
/// with step `1e-6 * gamma`.
pub fn derivative_sign_profile(cfg: &SystemConfig, gamma_grid: &[f64]) -> Vec<i8> {
    gamma_grid
        .iter()
        .map(|&g| {
            let h = 1e-6 * g;
            let diff = total_cost(g + h, cfg).cost_total - total_cost(g - h, cfg).cost_total;
            if diff > 0.0 {
                1
            } else if diff < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// `sqrt(n_points * d)`, a conventional stand-in for the condition number.
pub fn kappa_convention(n_points: f64, d: f64) -> f64 {
    (n_points * d).sqrt()
}

/// One row of a model cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gamma: f64,
    pub m1: usize,
    #[serde(flatten)]
    pub cost: CostBreakdown,
}

/// Model cost at every feasible level, from `m1 = m0` down to 1.
pub fn cost_curve(cfg: &SystemConfig) -> Vec<CurvePoint> {
    feasible_levels(cfg.m0)
        .into_iter()
        .map(|(m1, gamma)| CurvePoint {
            gamma,
            m1,
            cost: total_cost(gamma, cfg),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn rounds_examples() {
        let cfg = SystemConfig::paper(1e-5);
        let oracle = (1.0 + 518.0 / 224.0) * (1e5f64).log2();
        assert!(rel(rounds_model(2.0, &cfg), oracle) < 1e-14);
        assert!((rounds_model(2.0, &cfg) - 55.02).abs() < 0.005);

        let mut tiny = cfg.clone();
        tiny.kappa = 1e-300;
        assert!(rel(rounds_model(7.0, &tiny), (1e5f64).log2()) < 1e-14);

        let mut half = cfg.clone();
        half.epsilon = 0.5;
        assert!(rel(rounds_model(3.0, &half), 1.0 + 518.0 / 336.0) < 1e-14);
    }

    #[test]
    fn traffic_examples() {
        assert_eq!(traffic_per_round(1.0, 54.0), 0.0);
        assert_eq!(traffic_per_round(400.0, 54.0), 43092.0);
        assert_eq!(traffic_per_round(2.0, 1.0), 2.0);

        let cfg = SystemConfig::paper(1e-5);
        assert_eq!(algorithm_traffic(400.0, &cfg), 0.0);
        assert_eq!(data_traffic(1.0, &cfg), 0.0);
        assert_eq!(data_traffic(400.0, &cfg), 2_413_152.0);
        assert_eq!(data_traffic(2.0, &cfg), 1_209_600.0);
    }

    #[test]
    fn compute_examples() {
        let cfg = SystemConfig::paper(1e-5);
        let r2 = rounds_model(2.0, &cfg);
        let p = compute_ops(2.0, &cfg);
        assert!(rel(p, 54.0 * 112.0 * 402.0 * r2) < 1e-14);
        assert!(rel(p, 1.338e8) < 1e-3);
        // n1 (m1 + 1) = n0 (m0 + gamma)
        let n1m1 = 2.0 * 112.0 * (200.0 + 1.0);
        assert!(rel(p, 54.0 * n1m1 * r2) < 1e-14);

        let mut single = cfg.clone();
        single.m0 = 1;
        assert!(rel(compute_ops(1.0, &single), 54.0 * 112.0 * 2.0 * rounds_model(1.0, &single)) < 1e-14);

        let mut double = cfg.clone();
        double.tau *= 2.0;
        assert!(rel(compute_ops(5.0, &double), 2.0 * compute_ops(5.0, &cfg)) < 1e-14);

        let c1 = compute_cost(1.0, &cfg);
        let oracle = 1e-4 * 54.0 * 112.0 * 401.0 * rounds_model(1.0, &cfg);
        assert!(rel(c1, oracle) < 1e-14);
        assert!(rel(c1, 2.27e4) < 0.005, "{c1}");

        let mut free = cfg.clone();
        free.mu = 0.0;
        assert_eq!(compute_cost(3.0, &free), 0.0);

        let (mut a2, mut a05) = (cfg.clone(), cfg.clone());
        a2.alpha = 2.0;
        a05.alpha = 0.5;
        assert!(rel(compute_cost(4.0, &a2) / compute_cost(4.0, &a05), 8.0) < 1e-12);
    }

    #[test]
    fn total_examples() {
        let cfg = SystemConfig::paper(1e-5);
        let c = total_cost(2.0, &cfg);
        let oracle = 2.0 * 199.0 * 54.0 * rounds_model(2.0, &cfg)
            + 1_209_600.0
            + 1e-4 * 2.0 * 54.0 * 112.0 * 402.0 * rounds_model(2.0, &cfg);
        assert!(rel(c.cost_total, oracle) < 1e-12);
        assert!(rel(c.cost_total, 2.42e6) < 0.005);
        assert_eq!(c.cost_total, c.cost_network + c.cost_compute);

        let mut free = cfg.clone();
        free.mu = 0.0;
        free.theta = 2.5;
        let c = total_cost(1.0, &free);
        assert_eq!(c.cost_total, 2.5 * c.traffic_algorithm);
    }

    #[test]
    fn closed_form_examples() {
        let cfg = SystemConfig::paper(1e-5);
        let (num, den) = closed_form_terms(&cfg);
        assert!(rel(num, 7.434e8) < 1e-3, "{num}");
        assert!(rel(den, 1.915e8) < 1e-3, "{den}");
        let g = closed_form_network_optimum(&cfg).gamma().unwrap();
        assert!((g - 3.88).abs() < 0.01, "{g}");

        let mut thin = cfg.clone();
        thin.omega = 1e-9;
        let g = closed_form_network_optimum(&thin).gamma().unwrap();
        assert!(g < 1e-9);

        let mut wide = cfg.clone();
        wide.omega = 1e6;
        wide.d = 1.0;
        assert_eq!(closed_form_network_optimum(&wide), NetworkOptimum::UpperBoundary);
    }

    #[test]
    fn closed_form_is_a_stationary_point_of_network_cost() {
        let mut cfg = SystemConfig::paper(1e-5);
        cfg.mu = 0.0;
        let g = closed_form_network_optimum(&cfg).gamma().unwrap();
        assert!(cost_derivative(g, &cfg).abs() < 1e-6 * total_cost(g, &cfg).cost_total);
    }

    #[test]
    fn numeric_matches_closed_form_on_paper_config() {
        let mut cfg = SystemConfig::paper(1e-5);
        cfg.mu = 0.0;
        let rep = numeric_optimum(&cfg);
        let g = closed_form_network_optimum(&cfg).gamma().unwrap();
        assert!(rel(rep.gamma_unclamped, g) < 1e-9, "{} vs {g}", rep.gamma_unclamped);
        assert_eq!(rep.clamp, Clamp::None);
        assert_eq!(rep.method, OptimumMethod::Numeric);
        let cf = closed_form_report(&cfg).unwrap();
        assert_eq!(cf.method, OptimumMethod::ClosedFormNetwork);
        assert_eq!(cf.m1_hat, rep.m1_hat);
    }

    #[test]
    fn numeric_clamps() {
        let mut up = SystemConfig::paper(1e-12);
        up.omega = 1e5;
        up.mu = 0.0;
        let rep = numeric_optimum(&up);
        assert_eq!(rep.gamma_hat, 400.0);
        assert_eq!(rep.clamp, Clamp::Upper);
        assert_eq!(rep.m1_hat, 1);

        let mut down = SystemConfig::paper(1e-2);
        down.d = 1e4;
        down.omega = 1.0;
        let rep = numeric_optimum(&down);
        assert_eq!(rep.gamma_hat, 1.0);
        assert_eq!(rep.clamp, Clamp::Lower);
        assert_eq!(rep.m1_hat, 400);
    }

    #[test]
    fn flat_cost_prefers_decentralised() {
        let mut cfg = SystemConfig::paper(1e-3);
        cfg.theta = 0.0;
        cfg.mu = 0.0;
        let rep = numeric_optimum(&cfg);
        assert_eq!(rep.gamma_hat, 1.0);
        assert_eq!(rep.m1_hat, 400);
        let signs = derivative_sign_profile(&cfg, &log_spaced(1.0, 400.0, 50));
        assert!(signs.iter().all(|s| *s == 0));
    }

    #[test]
    fn report_is_self_consistent() {
        let cfg = SystemConfig::paper(1e-7);
        let rep = numeric_optimum(&cfg);
        assert_eq!(rep.cost_at_hat, total_cost(rep.gamma_hat, &cfg).cost_total);
        assert_eq!(rep.gamma_snapped, 400.0 / rep.m1_hat as f64);
        assert!(rep.unimodal_scan);
        let lo = (400.0 / rep.gamma_hat).floor() as usize;
        assert!(rep.m1_hat == lo || rep.m1_hat == lo + 1);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for alpha in [0.5, 1.0, 2.0] {
            let mut cfg = SystemConfig::paper(1e-4);
            cfg.alpha = alpha;
            cfg.mu = 1e-3;
            for g in [0.3, 1.0, 3.7, 50.0, 400.0] {
                let h = 1e-5 * g;
                let fd = (total_cost(g + h, &cfg).cost_total - total_cost(g - h, &cfg).cost_total) / (2.0 * h);
                let an = cost_derivative(g, &cfg);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "alpha={alpha} g={g}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn sign_profile_crosses_once_at_optimum() {
        let cfg = SystemConfig::paper(1e-5);
        let grid = log_spaced(1.0, 400.0, 1000);
        let signs = derivative_sign_profile(&cfg, &grid);
        let first_pos = signs.iter().position(|s| *s > 0).unwrap();
        assert!(signs[..first_pos].iter().all(|s| *s < 0));
        assert!(signs[first_pos..].iter().all(|s| *s > 0));
        let g = numeric_optimum(&cfg).gamma_unclamped;
        assert!(grid[first_pos - 1] <= g && g <= grid[first_pos]);
    }

    #[test]
    fn kappa_examples() {
        assert!((kappa_convention(44800.0, 54.0) - 1555.38).abs() < 0.01);
        assert_eq!(kappa_convention(1.0, 1.0), 1.0);
    }

    #[test]
    fn curve_covers_every_level() {
        let mut cfg = SystemConfig::paper(1e-5);
        cfg.m0 = 6;
        let curve = cost_curve(&cfg);
        assert_eq!(curve.len(), 6);
        assert_eq!(curve[0].m1, 6);
        assert_eq!(curve[0].gamma, 1.0);
        assert_eq!(curve[5].m1, 1);
        assert_eq!(curve[5].gamma, 6.0);
    }

    #[test]
    fn log_spaced_endpoints() {
        let g = log_spaced(1.0, 400.0, 1000);
        assert_eq!(g.len(), 1000);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[999], 400.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn validation_rejects_bad_fields() {
        assert!(SystemConfig::paper(1e-3).validate().is_ok());
        let mut c = SystemConfig::paper(1e-3);
        c.epsilon = 1.0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::paper(1e-3);
        c.m0 = 0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::paper(1e-3);
        c.kappa = 0.0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::paper(1e-3);
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        let mut c = SystemConfig::paper(1e-3);
        c.tau = f64::NAN;
        assert!(c.validate().is_err());
    }
}
