use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fogplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogplan")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn profiles() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles")
}

/// Small Covtype-format file with classes 3 and 7 separable on column 0.
fn tiny_covtype(dir: &Path) -> PathBuf {
    let mut text = String::new();
    for i in 0..400 {
        let class = if i % 3 == 0 { 7 } else { 3 };
        let mut row: Vec<String> = (0..54)
            .map(|j| format!("{}", ((i * 7 + j * 13) % 17) as f64 / 4.0))
            .collect();
        row[0] = format!("{}", if class == 3 { 1.0 } else { -1.0 } + (i % 5) as f64 * 0.3);
        row.push(class.to_string());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join("tiny.data");
    fs::write(&path, text).unwrap();
    path
}

fn small_manifest(dir: &Path, extra: &str) -> PathBuf {
    tiny_covtype(dir);
    let text = format!(
        r#"profile = "tiny"
m0 = 6
n0 = 20
kappa = "sqrt_nd"
epsilon = [1e-2, 1e-3]
mu = 1e-4
seed = 5
{extra}
[dataset]
path = "tiny.data"

[sweep]
grid = "all"
replications = 3
"#
    );
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_manifest_exits_3() {
    let o = fogplan(&["curve", "--manifest", "/nonexistent/m.toml", "--out", "/tmp/x"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn invalid_manifest_names_key_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("bad.toml");
    fs::write(&m, "profile = \"x\"\nm0 = 4\nn0 = 10\nkappa = 5\nepsilon = 2.0\nmu = 0\n").unwrap();
    let o = fogplan(&["optimize", "--manifest", s(&m), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
    assert_eq!(code(&fogplan(&["curve", "--bogus"])), 1);
}

#[test]
fn paper_curve_has_one_file_per_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("curve");
    let o = fogplan(&["curve", "--manifest", s(&profiles().join("paper.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for tag in ["1e-2", "1e-3", "1e-4", "1e-5", "1e-6", "1e-7"] {
        assert!(out.join(format!("curve_eps_{tag}.csv")).is_file(), "{tag}");
    }
    let text = fs::read_to_string(out.join("curve_eps_1e-5.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "gamma,m1,rounds,traffic_algorithm,traffic_data,cost_network,cost_compute,cost_total"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 400);
    let best = rows.iter().min_by(|a, b| a[7].total_cmp(&b[7])).unwrap();
    assert!(best[0] > 3.0 && best[0] < 5.0, "curve minimum at gamma {}", best[0]);
    assert_eq!(fs::read_to_string(out.join("manifest.toml")).unwrap(), fs::read_to_string(profiles().join("paper.toml")).unwrap());
    assert_eq!(fs::read_to_string(out.join("seed")).unwrap(), "42\n");
    assert!(fs::read_to_string(out.join("VERSION")).unwrap().starts_with("fogplan "));
}

#[test]
fn free_curve_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("free.toml");
    fs::write(&m, "profile = \"free\"\nm0 = 10\nn0 = 10\nkappa = 5\nepsilon = 1e-3\ntheta = 0\nmu = 0\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&fogplan(&["curve", "--manifest", s(&m), "--out", s(&out)])), 0);
    let text = fs::read_to_string(out.join("curve_eps_1e-3.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[7], "0.0", "{line}");
    }
}

#[test]
fn optimize_free_computation_cross_checks_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(profiles().join("paper.toml"))
        .unwrap()
        .replace("mu = 1e-4", "mu = 0.0")
        .replace("epsilon = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]", "epsilon = 1e-5");
    let m = tmp.path().join("m.toml");
    fs::write(&m, text).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&fogplan(&["optimize", "--manifest", s(&m), "--out", s(&out)])), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("optimum.json")).unwrap()).unwrap();
    let e = &json[0];
    let g = e["numeric"]["gamma_unclamped"].as_f64().unwrap();
    assert!((g - 3.88).abs() < 0.01, "{g}");
    assert_eq!(e["closed_form"]["method"], "closed_form_network");
    assert!(e["closed_form_rel_gap"].as_f64().unwrap() < 1e-6);
}

#[test]
fn clamp_demo_reports_lower_clamp() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = fogplan(&["optimize", "--manifest", s(&profiles().join("clamp_demo.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("optimum.json")).unwrap()).unwrap();
    assert_eq!(json[0]["numeric"]["gamma_hat"].as_f64().unwrap(), 1.0);
    assert_eq!(json[0]["numeric"]["clamp"], "lower");
}

#[test]
fn optimize_with_sensitivity_section_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = fogplan(&["optimize", "--manifest", s(&profiles().join("sensitivity_mu.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    assert!(text.starts_with("epsilon,n0_block,axis,value,alpha,gamma_hat,m1_hat,gamma_snapped"));
    assert_eq!(text.lines().count(), 1 + 5 * 8 * 3);
}

#[test]
fn sensitivity_command_on_every_shipped_axis() {
    for (file, rows) in [("sensitivity_n0.toml", 7 * 3), ("sensitivity_m0.toml", 9 * 3)] {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("o");
        let o = fogplan(&["sensitivity", "--manifest", s(&profiles().join(file)), "--out", s(&out)]);
        assert_eq!(code(&o), 0);
        assert_eq!(fs::read_to_string(out.join("sensitivity.csv")).unwrap().lines().count(), 1 + rows);
    }
}

#[test]
fn paper_sweep_requires_long() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fogplan(&["sweep", "--manifest", s(&profiles().join("paper.toml")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--long"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn sweep_without_dataset_exits_3_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), "");
    fs::remove_file(tmp.path().join("tiny.data")).unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&fogplan(&["sweep", "--manifest", s(&m), "--out", s(&out)])), 3);
    assert!(!out.exists());
}

#[test]
fn sweep_optimize_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), "");
    let (sw, model, rep) = (tmp.path().join("sweep"), tmp.path().join("model"), tmp.path().join("report"));
    let o = fogplan(&["sweep", "--manifest", s(&m), "--out", s(&sw)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sweep_eps_1e-2.csv", "sweep_eps_1e-3.csv", "plot_eps_1e-2.dat", "sweep_summary.json"] {
        assert!(sw.join(f).is_file(), "{f}");
    }
    assert_eq!(code(&fogplan(&["optimize", "--manifest", s(&m), "--out", s(&model)])), 0);
    let o = fogplan(&["report", "--sweep", s(&sw), "--model", s(&model), "--out", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(rep.join("report.csv")).unwrap();
    assert!(table.starts_with("epsilon,gamma_star,gamma_hat,rounds_star,rounds_hat,cost_star,cost_hat,overhead_pct"));
    assert_eq!(table.lines().count(), 3);
    let gains = fs::read_to_string(rep.join("gains.csv")).unwrap();
    assert_eq!(gains.lines().count(), 3);

    let other = tmp.path().join("model_other_seed");
    assert_eq!(code(&fogplan(&["optimize", "--manifest", s(&m), "--out", s(&other), "--seed", "6"])), 0);
    let o = fogplan(&["report", "--sweep", s(&sw), "--model", s(&other), "--out", s(&rep)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("- effective seed: 5") && err.contains("+ effective seed: 6"), "{err}");
}

#[test]
fn sweep_seed_override_changes_stamp() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), "");
    let out = tmp.path().join("o");
    assert_eq!(code(&fogplan(&["sweep", "--manifest", s(&m), "--out", s(&out), "--seed", "99"])), 0);
    assert_eq!(fs::read_to_string(out.join("seed")).unwrap(), "99\n");
}

#[test]
fn divergent_sweep_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), "eta = 1e300\n");
    assert_eq!(code(&fogplan(&["sweep", "--manifest", s(&m), "--out", s(&tmp.path().join("o"))])), 2);
}
