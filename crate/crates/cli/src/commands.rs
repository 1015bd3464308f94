//! The five workflows behind the `fogplan` subcommands. Every command writes
//! only inside its output directory and stamps it with the manifest, the tool
//! version and the effective seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use fogplan::cost::{self, NetworkOptimum, OptimumReport};
use fogplan::data::{self, LabeledDataset, Standardizer};
use fogplan::sweep::{self, Axis, SweepResult, SweepRow, SweepSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::LoadedManifest;

pub const VERSION_STAMP: &str = concat!("fogplan ", env!("CARGO_PKG_VERSION"), "\n");
pub const MANIFEST_COPY: &str = "manifest.toml";
pub const VERSION_FILE: &str = "VERSION";
pub const SEED_FILE: &str = "seed";
pub const OPTIMUM_FILE: &str = "optimum.json";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const GAINS_FILE: &str = "gains.csv";

/// Largest device count a sweep may use without `--long`.
pub const DESK_M0_LIMIT: usize = 100;

/// `1e-2`-style tag used in per-accuracy file names.
pub fn eps_tag(eps: f64) -> String {
    format!("{eps:e}")
}

pub fn curve_file(eps: f64) -> String {
    format!("curve_eps_{}.csv", eps_tag(eps))
}

pub fn sweep_file(eps: f64) -> String {
    format!("sweep_eps_{}.csv", eps_tag(eps))
}

pub fn plot_file(eps: f64) -> String {
    format!("plot_eps_{}.dat", eps_tag(eps))
}

/// A validated manifest bound to an output directory and effective seed.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub loaded: LoadedManifest,
    pub out: PathBuf,
    pub seed: u64,
    pub long: bool,
}

impl RunContext {
    pub fn new(manifest: &Path, out: Option<PathBuf>, seed: Option<u64>, long: bool) -> Result<RunContext, CliError> {
        let loaded = LoadedManifest::read(manifest)?;
        let out = out
            .or_else(|| loaded.manifest.out.as_ref().map(|o| loaded.dir.join(o)))
            .ok_or_else(|| CliError::Validation("no output directory: pass --out or set `out` in the manifest".into()))?;
        let seed = seed.unwrap_or(loaded.manifest.seed);
        Ok(RunContext { loaded, out, seed, long })
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&format!("cannot create {}", self.out.display()), e))?;
        write(&self.out.join(MANIFEST_COPY), self.loaded.text.as_bytes())?;
        write(&self.out.join(VERSION_FILE), VERSION_STAMP.as_bytes())?;
        write(&self.out.join(SEED_FILE), format!("{}\n", self.seed).as_bytes())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::MissingInput(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::MissingInput(format!("cannot read {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub gamma: f64,
    pub m1: usize,
    pub rounds: f64,
    pub traffic_algorithm: f64,
    pub traffic_data: f64,
    pub cost_network: f64,
    pub cost_compute: f64,
    pub cost_total: f64,
}

/// Writes the model cost at every feasible level, one file per accuracy.
pub fn cmd_curve(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    ctx.prepare_out()?;
    let man = &ctx.loaded.manifest;
    let mut written = Vec::new();
    for eps in man.epsilons() {
        let cfg = man.system(eps)?;
        let rows: Vec<CurveRow> = cost::cost_curve(&cfg)
            .into_iter()
            .map(|p| CurveRow {
                gamma: p.gamma,
                m1: p.m1,
                rounds: p.cost.rounds,
                traffic_algorithm: p.cost.traffic_algorithm,
                traffic_data: p.cost.traffic_data,
                cost_network: p.cost.cost_network,
                cost_compute: p.cost.cost_compute,
                cost_total: p.cost.cost_total,
            })
            .collect();
        let path = ctx.out.join(curve_file(eps));
        write_csv(&path, &rows)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumEntry {
    pub epsilon: f64,
    pub numeric: OptimumReport,
    /// Present only when computation is free.
    pub network_optimum: Option<NetworkOptimum>,
    pub closed_form: Option<OptimumReport>,
    /// Relative gap between the numeric and closed-form unclamped optima.
    pub closed_form_rel_gap: Option<f64>,
}

/// Solves for the optimal level at every accuracy; also writes the
/// sensitivity table when the manifest asks for one.
pub fn cmd_optimize(ctx: &RunContext) -> Result<Vec<OptimumEntry>, CliError> {
    ctx.prepare_out()?;
    let man = &ctx.loaded.manifest;
    let mut entries = Vec::new();
    for eps in man.epsilons() {
        let cfg = man.system(eps)?;
        let numeric = cost::numeric_optimum(&cfg);
        let free = cfg.beta() == 0.0;
        let network_optimum = free.then(|| cost::closed_form_network_optimum(&cfg));
        let closed_form = cost::closed_form_report(&cfg);
        let closed_form_rel_gap = closed_form
            .as_ref()
            .map(|c| ((numeric.gamma_unclamped - c.gamma_unclamped) / c.gamma_unclamped).abs());
        entries.push(OptimumEntry {
            epsilon: eps,
            numeric,
            network_optimum,
            closed_form,
            closed_form_rel_gap,
        });
    }
    write_json(&ctx.out.join(OPTIMUM_FILE), &entries)?;
    if man.sensitivity.is_some() {
        sensitivity_table(ctx)?;
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCsvRow {
    pub epsilon: f64,
    pub n0_block: Option<f64>,
    pub axis: Axis,
    pub value: f64,
    pub alpha: f64,
    pub gamma_hat: f64,
    pub m1_hat: usize,
    pub gamma_snapped: f64,
}

fn sensitivity_table(ctx: &RunContext) -> Result<Vec<SensitivityCsvRow>, CliError> {
    let man = &ctx.loaded.manifest;
    let section = man
        .sensitivity
        .as_ref()
        .ok_or_else(|| CliError::Validation("manifest has no [sensitivity] table".into()))?;
    let axis = man.axis()?.expect("section present");
    let blocks: Vec<Option<f64>> = if section.outer_n0.is_empty() {
        vec![None]
    } else {
        section.outer_n0.iter().copied().map(Some).collect()
    };
    let mut out = Vec::new();
    for eps in man.epsilons() {
        for &block in &blocks {
            let mut base = man.system(eps)?;
            if let Some(n0) = block {
                base.n0 = n0;
            }
            let rows = sweep::sensitivity_sweep(&base, axis, &section.values, &section.alphas)?;
            for row in rows {
                for cell in row.cells {
                    out.push(SensitivityCsvRow {
                        epsilon: eps,
                        n0_block: block,
                        axis,
                        value: row.value,
                        alpha: cell.alpha,
                        gamma_hat: cell.gamma_hat,
                        m1_hat: cell.m1_hat,
                        gamma_snapped: cell.gamma_snapped,
                    });
                }
            }
        }
    }
    write_csv(&ctx.out.join(SENSITIVITY_FILE), &out)?;
    Ok(out)
}

/// Model optimum as one parameter varies, for each compute-cost exponent.
pub fn cmd_sensitivity(ctx: &RunContext) -> Result<Vec<SensitivityCsvRow>, CliError> {
    ctx.prepare_out()?;
    sensitivity_table(ctx)
}

/// Loads, filters, splits and standardises the manifest's dataset and
/// returns the training part.
pub fn load_training_data(loaded: &LoadedManifest, seed: u64) -> Result<LabeledDataset, CliError> {
    let man = &loaded.manifest;
    let section = man
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::Validation("manifest has no [dataset] table".into()))?;
    let path = loaded.dataset_path().expect("section present");
    if !path.is_file() {
        return Err(CliError::MissingInput(format!("dataset not found: {}", path.display())));
    }
    let all = data::load_covtype(&path)?;
    let binary = data::filter_binary(&all, section.class_pos, section.class_neg)?;
    let (mut train, _test) = data::split_train_test(&binary, section.train_fraction, seed)?;
    if man.standardize {
        Standardizer::fit(&train).apply(&mut train);
    }
    if man.bias {
        train = train.with_bias_column();
    }
    Ok(train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub gamma: f64,
    pub m1: usize,
    pub replications: usize,
    pub diverged: usize,
    pub capped: usize,
    pub rounds_mean: f64,
    pub rounds_ci95: f64,
    pub cost_network_mean: f64,
    pub cost_network_ci95: f64,
    pub cost_compute_mean: f64,
    pub cost_compute_ci95: f64,
    pub cost_total_mean: f64,
    pub cost_total_ci95: f64,
    pub moved_points_mean: f64,
}

impl From<&SweepRow> for SweepCsvRow {
    fn from(r: &SweepRow) -> Self {
        SweepCsvRow {
            gamma: r.gamma,
            m1: r.m1,
            replications: r.replications,
            diverged: r.diverged,
            capped: r.capped,
            rounds_mean: r.rounds.mean,
            rounds_ci95: r.rounds.ci95,
            cost_network_mean: r.cost_network.mean,
            cost_network_ci95: r.cost_network.ci95,
            cost_compute_mean: r.cost_compute.mean,
            cost_compute_ci95: r.cost_compute.ci95,
            cost_total_mean: r.cost_total.mean,
            cost_total_ci95: r.cost_total.ci95,
            moved_points_mean: r.moved_points_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub epsilon: f64,
    pub gamma_star: f64,
    pub m1_star: usize,
    pub gamma_hat: f64,
    pub m1_hat: usize,
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
    pub dropped: Vec<sweep::DroppedLevel>,
}

impl From<&SweepResult> for SweepSummary {
    fn from(r: &SweepResult) -> Self {
        SweepSummary {
            epsilon: r.epsilon,
            gamma_star: r.gamma_star,
            m1_star: r.m1_star,
            gamma_hat: r.gamma_hat,
            m1_hat: r.m1_hat,
            gamma_hat_continuous: r.gamma_hat_continuous,
            rounds_star: r.rounds_star,
            rounds_hat: r.rounds_hat,
            cost_star: r.cost_star,
            cost_hat: r.cost_hat,
            overhead_pct: r.overhead_pct,
            gain_vs_decentralised_pct: r.gain_vs_decentralised_pct,
            gain_vs_centralised_pct: r.gain_vs_centralised_pct,
            failed_runs: r.failed_runs,
            capped_runs: r.capped_runs,
            dropped: r.dropped.clone(),
        }
    }
}

/// Full pipeline: load, filter, split, partition, sweep; then writes one
/// CSV and one plot file per accuracy plus a JSON summary.
pub fn cmd_sweep(ctx: &RunContext) -> Result<Vec<SweepResult>, CliError> {
    let man = &ctx.loaded.manifest;
    if (man.profile == "paper" || man.m0 > DESK_M0_LIMIT) && !ctx.long {
        return Err(CliError::Validation(format!(
            "profile {:?} with m0 = {} is a long-running sweep; pass --long to run it",
            man.profile, man.m0
        )));
    }
    let section = man
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("manifest has no [sweep] table".into()))?;
    let train = load_training_data(&ctx.loaded, ctx.seed)?;
    let epsilons = man.epsilons();
    let system = man.system(epsilons[0])?;
    let learner = man.learner()?;
    if train.d() != learner.omega {
        return Err(CliError::Validation(format!(
            "key `omega`: model size {} does not match the {} features of the prepared dataset",
            learner.omega,
            train.d()
        )));
    }
    let spec = SweepSpec {
        m1_levels: man.m1_levels()?,
        replications: section.replications,
        seed: ctx.seed,
        epsilons: epsilons.clone(),
        include_capped: section.include_capped,
    };
    let results = sweep::sweep_gamma(&train, &system, &learner, &spec)?;

    ctx.prepare_out()?;
    for r in &results {
        let rows: Vec<SweepCsvRow> = r.rows.iter().map(SweepCsvRow::from).collect();
        write_csv(&ctx.out.join(sweep_file(r.epsilon)), &rows)?;
        let mut plot = String::from("# gamma cost_total_mean\n");
        for row in &r.rows {
            plot.push_str(&format!("{} {}\n", row.gamma, row.cost_total.mean));
        }
        write(&ctx.out.join(plot_file(r.epsilon)), plot.as_bytes())?;
    }
    let summaries: Vec<SweepSummary> = results.iter().map(SweepSummary::from).collect();
    write_json(&ctx.out.join(SWEEP_SUMMARY_FILE), &summaries)?;

    let runs = spec.replications * spec.m1_levels.len();
    if let Some(r) = results.iter().find(|r| 2 * r.failed_runs > runs) {
        return Err(CliError::Runtime(format!(
            "{} of {runs} runs diverged at epsilon {:e}; lower eta",
            r.failed_runs, r.epsilon
        )));
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epsilon: f64,
    pub gamma_star: f64,
    pub gamma_hat: f64,
    pub rounds_star: f64,
    pub rounds_hat: Option<f64>,
    pub cost_star: f64,
    pub cost_hat: Option<f64>,
    pub overhead_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub epsilon: f64,
    pub cost_decentralised: Option<f64>,
    pub cost_hat: Option<f64>,
    pub cost_centralised: Option<f64>,
    pub gain_vs_decentralised_pct: Option<f64>,
    pub gain_vs_centralised_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub gains: Vec<GainRow>,
}

/// Lines of `a` missing from `b` (prefixed `-`) and of `b` missing from `a`
/// (prefixed `+`).
pub fn line_diff(a: &str, b: &str) -> String {
    let la: BTreeSet<&str> = a.lines().collect();
    let lb: BTreeSet<&str> = b.lines().collect();
    let mut out = String::new();
    for l in a.lines().filter(|l| !lb.contains(l)) {
        out.push_str(&format!("- {l}\n"));
    }
    for l in b.lines().filter(|l| !la.contains(l)) {
        out.push_str(&format!("+ {l}\n"));
    }
    out
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        (None, None) => true,
        _ => false,
    }
}

/// Joins a sweep directory with a model (optimize) directory produced from
/// the same manifest and seed into the validation and gain tables.
pub fn cmd_report(sweep_dir: &Path, model_dir: &Path, out: &Path) -> Result<Report, CliError> {
    let sweep_manifest = read_text(&sweep_dir.join(MANIFEST_COPY))?;
    let model_manifest = read_text(&model_dir.join(MANIFEST_COPY))?;
    let sweep_seed = read_text(&sweep_dir.join(SEED_FILE))?;
    let model_seed = read_text(&model_dir.join(SEED_FILE))?;
    if sweep_manifest != model_manifest || sweep_seed != model_seed {
        let mut msg = String::from("sweep and model artifacts come from different runs\n");
        msg.push_str(&line_diff(
            &format!("{sweep_manifest}\neffective seed: {sweep_seed}"),
            &format!("{model_manifest}\neffective seed: {model_seed}"),
        ));
        return Err(CliError::Validation(msg.trim_end().to_string()));
    }
    let loaded = LoadedManifest::parse(sweep_manifest.clone(), sweep_dir.to_path_buf())?;
    let m0 = loaded.manifest.m0;
    let optimum: Vec<OptimumEntry> = serde_json::from_str(&read_text(&model_dir.join(OPTIMUM_FILE))?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", model_dir.join(OPTIMUM_FILE).display())))?;
    let summaries: Vec<SweepSummary> = serde_json::from_str(&read_text(&sweep_dir.join(SWEEP_SUMMARY_FILE))?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", sweep_dir.join(SWEEP_SUMMARY_FILE).display())))?;

    let mut rows = Vec::new();
    let mut gains = Vec::new();
    for entry in &optimum {
        let eps = entry.epsilon;
        let csv_rows: Vec<SweepCsvRow> = read_csv(&sweep_dir.join(sweep_file(eps)))?;
        let star = csv_rows
            .iter()
            .reduce(|best, r| if r.cost_total_mean < best.cost_total_mean { r } else { best })
            .ok_or_else(|| CliError::Runtime(format!("sweep at epsilon {eps:e} has no rows")))?;
        let at = |m1: usize| csv_rows.iter().find(|r| r.m1 == m1);
        let hat = at(entry.numeric.m1_hat);
        let cost_hat = hat.map(|r| r.cost_total_mean);
        let c1 = at(m0).map(|r| r.cost_total_mean);
        let cm = at(1).map(|r| r.cost_total_mean);
        let gain = |c_ref: Option<f64>| Some(sweep::gain_pct(c_ref?, cost_hat?));
        let gain_row = GainRow {
            epsilon: eps,
            cost_decentralised: c1,
            cost_hat,
            cost_centralised: cm,
            gain_vs_decentralised_pct: gain(c1),
            gain_vs_centralised_pct: gain(cm),
        };
        if let Some(s) = summaries.iter().find(|s| s.epsilon == eps) {
            if s.m1_hat != entry.numeric.m1_hat
                || !close(s.gain_vs_decentralised_pct, gain_row.gain_vs_decentralised_pct)
                || !close(s.gain_vs_centralised_pct, gain_row.gain_vs_centralised_pct)
            {
                return Err(CliError::Runtime(format!(
                    "gain columns at epsilon {eps:e} disagree with the sweep summary"
                )));
            }
        }
        rows.push(ReportRow {
            epsilon: eps,
            gamma_star: star.gamma,
            gamma_hat: entry.numeric.gamma_snapped,
            rounds_star: star.rounds_mean,
            rounds_hat: hat.map(|r| r.rounds_mean),
            cost_star: star.cost_total_mean,
            cost_hat,
            overhead_pct: cost_hat.map(|c| 100.0 * (c - star.cost_total_mean) / star.cost_total_mean),
        });
        gains.push(gain_row);
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(&format!("cannot create {}", out.display()), e))?;
    write_csv(&out.join(REPORT_FILE), &rows)?;
    write_csv(&out.join(GAINS_FILE), &gains)?;
    Ok(Report { rows, gains })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>12} {:>12} {:>8}\n",
            "eps", "g*", "g^", "R(g*)", "R(g^)", "C(g*)", "C(g^)", "OH%"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>8} {:>8.3} {:>8.3} {:>8.1} {:>8} {:>12.4e} {:>12} {:>8}\n",
                eps_tag(r.epsilon),
                r.gamma_star,
                r.gamma_hat,
                r.rounds_star,
                opt(r.rounds_hat, 1),
                r.cost_star,
                r.cost_hat.map_or("-".into(), |c| format!("{c:.4e}")),
                opt(r.overhead_pct, 1),
            ));
        }
        s.push_str(&format!(
            "\n{:>8} {:>12} {:>12} {:>12} {:>10} {:>10}\n",
            "eps", "C(1)", "C(g^)", "C(m0)", "gain1%", "gainM%"
        ));
        for g in &self.gains {
            let e = |v: Option<f64>| v.map_or("-".into(), |c| format!("{c:.4e}"));
            s.push_str(&format!(
                "{:>8} {:>12} {:>12} {:>12} {:>10} {:>10}\n",
                eps_tag(g.epsilon),
                e(g.cost_decentralised),
                e(g.cost_hat),
                e(g.cost_centralised),
                opt(g.gain_vs_decentralised_pct, 2),
                opt(g.gain_vs_centralised_pct, 2),
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_tags() {
        assert_eq!(eps_tag(1e-2), "1e-2");
        assert_eq!(eps_tag(1e-7), "1e-7");
        assert_eq!(curve_file(1e-5), "curve_eps_1e-5.csv");
    }

    #[test]
    fn diff_lists_changed_lines() {
        let d = line_diff("a = 1\nb = 2\n", "a = 1\nb = 3\n");
        assert_eq!(d, "- b = 2\n+ b = 3\n");
        assert!(line_diff("x\n", "x\n").is_empty());
    }
}
