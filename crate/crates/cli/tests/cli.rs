use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stokeslab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn result(out: &Path) -> Value {
    serde_json::from_slice(&fs::read(out.join("result.json")).unwrap()).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr)
        .unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn check_weight_inside_range_is_finite() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check-weight", "--alpha", "2", "--q", "2", "--n", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert_eq!(r["verdict"], "finite");
    assert_eq!(r["alpha_in_analytic_range"], true);
    assert_eq!(r["analytic_alpha_range"]["upper"], 3.0);
    let stdout: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, r);
}

#[test]
fn check_weight_below_range_diverges() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check-weight", "--alpha", "-3"], dir.path());
    assert!(o.status.success());
    assert_eq!(result(dir.path())["verdict"], "diverging");
}

#[test]
fn manifest_lists_every_artifact_with_its_digest() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check-weight", "--alpha", "1", "--seed", "7"], dir.path());
    assert!(o.status.success());
    let m: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "check-weight");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["prng"].as_str().unwrap().contains("ChaCha8"));
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let files = m["artifacts"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["file"].as_str().unwrap()).collect();
    assert_eq!(names, ["result.json", "aq_report.json", "cubes.csv"]);
    for f in files {
        let bytes = fs::read(dir.path().join(f["file"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), format!("{:x}", Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
}

#[test]
fn csv_output_is_rfc4180() {
    let dir = TempDir::new().unwrap();
    assert!(run(&["check-weight", "--alpha", "0"], dir.path()).status.success());
    let text = fs::read_to_string(dir.path().join("cubes.csv")).unwrap();
    assert!(text.starts_with("center_x1,side,product\r\n"));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| r.len() == 3 && r[2].parse::<f64>().is_ok()));
}

#[test]
fn admissible_range_matches_formula() {
    let dir = TempDir::new().unwrap();
    assert!(run(&["admissible-range", "--q", "3", "--n", "4"], dir.path())
        .status
        .success());
    let r = result(dir.path());
    assert_eq!(r["alpha_range"]["lower"], -4.0);
    assert_eq!(r["alpha_range"]["upper"], 8.0);
}

#[test]
fn feasibility_point_and_scan() {
    let dir = TempDir::new().unwrap();
    assert!(run(&["feasibility", "--n", "5", "--q1", "4", "--q2", "3"], dir.path())
        .status
        .success());
    let r = result(dir.path());
    assert!((r["lower"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((r["upper"].as_f64().unwrap() - 25.0 / 24.0).abs() < 1e-12);

    let dir = TempDir::new().unwrap();
    assert!(run(&["feasibility", "--n", "3", "--step", "0.05"], dir.path())
        .status
        .success());
    let r = result(dir.path());
    assert_eq!(r["feasible_points"], 0);
    assert_eq!(r["points"], 39 * 29);
    assert!(dir.path().join("feasibility.csv").exists());
}

#[test]
fn decay_example_complies_with_bound() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &[
            "decay",
            "--p",
            "2",
            "--q",
            "6",
            "--s",
            "0",
            "--s0",
            "0",
            "--tmax",
            "64",
            "--samples",
            "3",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert!(r["max_bound_compliance"].as_f64().unwrap() <= 1.05);
    let csv = fs::read_to_string(dir.path().join("decay_00.csv")).unwrap();
    assert!(csv.starts_with("t,norm,predicted_envelope,ratio\r\n"));
    let footer = csv.lines().last().unwrap();
    let fit: Value = serde_json::from_str(footer.trim_start_matches("# ")).unwrap();
    assert!(fit["slope"].is_f64());
}

#[test]
fn solve_periodic_with_zero_forcing_is_zero() {
    let dir = TempDir::new().unwrap();
    let o = run(&["solve-periodic", "--eps", "0", "--points", "16"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert_eq!(r["residual"], 0.0);
    assert_eq!(r["max_l2"], 0.0);
    assert_eq!(r["iterations"], 1);
    let node = fs::read(dir.path().join("node_000.bin")).unwrap();
    let field = stokeslab::Field::read_binary(node.as_slice()).unwrap();
    assert_eq!(field.max_abs(), 0.0);
}

#[test]
fn periodic_runs_are_bit_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = [
        "periodicity-check",
        "--points",
        "16",
        "--half-extent",
        "8",
        "--nodes",
        "8",
        "--steps",
        "16",
    ];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    assert_eq!(
        fs::read(a.path().join("result.json")).unwrap(),
        fs::read(b.path().join("result.json")).unwrap()
    );
    let r = result(a.path());
    assert!(r["solution"]["residual"].as_f64().unwrap() <= 1e-8);
    assert!(r["periodicity_defect"].as_f64().unwrap() < 1e-3);
    let ma: Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let mb: Value = serde_json::from_slice(&fs::read(b.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
}

#[test]
fn seeded_corpus_runs_are_bit_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let args = ["maximal", "--points", "16", "--seed", "11", "--samples", "2"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    assert!(run(
        &["maximal", "--points", "16", "--seed", "12", "--samples", "2"],
        c.path()
    )
    .status
    .success());
    for f in ["result.json", "maximal.csv", "maximal_0.bin"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.path().join("maximal.csv")).unwrap(),
        fs::read(c.path().join("maximal.csv")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"subcommand": "check-weight", "alpha": -3, "per_decade": 3}"#).unwrap();
    let out = dir.path().join("a");
    assert!(run(&["check-weight", "--config", cfg.to_str().unwrap()], &out)
        .status
        .success());
    assert_eq!(result(&out)["alpha"], -3.0);
    assert_eq!(result(&out)["verdict"], "diverging");
    let out = dir.path().join("b");
    assert!(run(
        &["check-weight", "--config", cfg.to_str().unwrap(), "--alpha", "0"],
        &out
    )
    .status
    .success());
    assert_eq!(result(&out)["alpha"], 0.0);
    let m: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["per_decade"], 3);
}

#[test]
fn invalid_config_yields_error_json() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"alpha": 1, "bogus": 2}"#).unwrap();
    let o = run(&["check-weight", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("bogus"));

    fs::write(&cfg, r#"{"subcommand": "decay"}"#).unwrap();
    let o = run(
        &["check-weight", "--config", cfg.to_str().unwrap(), "--alpha", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["check-weight"], dir.path());
    assert_eq!(stderr_json(&o)["message"], "missing required parameter `alpha`");

    let o = run(&["check-weight", "--alpha", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");

    let o = run(&["check-weight", "--alpha", "1", "--threads", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn precondition_violations_are_reported_verbatim() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check-weight", "--alpha", "1", "--q", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "invalid_parameter");
    assert_eq!(
        e["message"],
        "invalid parameter `q` = 0.5: Lebesgue index must satisfy 1 < q < inf"
    );

    let o = run(&["decay", "--p", "2", "--q", "1.5"], dir.path());
    assert_eq!(stderr_json(&o)["error"], "invalid_parameter");

    let o = run(&["feasibility", "--n", "3", "--q1", "4", "--q2", "2"], dir.path());
    assert!(stderr_json(&o)["message"]
        .as_str()
        .unwrap()
        .contains("requires 1 < q1 < n"));
}

#[test]
fn bogovskii_test_keeps_support() {
    let dir = TempDir::new().unwrap();
    let o = run(&["bogovskii-test", "--points", "32"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert_eq!(r["support_contained"], true);
    assert!(r["relative_divergence_error"].as_f64().unwrap() < 1.0);

    let o = run(&["bogovskii-test", "--points", "30"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("grid point"));
}

#[test]
fn extension_leaves_far_field_unchanged() {
    let dir = TempDir::new().unwrap();
    let o = run(&["extend", "--points", "48", "--half-extent", "6"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert_eq!(r["unchanged_outside"], true);
    assert!(dir.path().join("extension.bin").exists());
}

#[test]
fn frac_integral_reports_hls_index() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &[
            "frac-integral",
            "--points",
            "16",
            "--lambda",
            "1",
            "--p",
            "2",
            "--samples",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let r = result(dir.path());
    assert!((r["q"].as_f64().unwrap() - 6.0).abs() < 1e-12);
    assert!(r["max_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn weighted_report_runs_small() {
    let dir = TempDir::new().unwrap();
    let o = run(
        &[
            "weighted-report",
            "--points",
            "16",
            "--half-extent",
            "8",
            "--nodes",
            "8",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result(dir.path());
    assert_eq!(r["report"]["q12"], 1.0);
    assert!(r["report"]["ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn every_subcommand_help_names_its_anchor() {
    for sub in [
        "check-weight",
        "admissible-range",
        "feasibility",
        "maximal",
        "decay",
        "frac-integral",
        "bogovskii-test",
        "extend",
        "solve-periodic",
        "periodicity-check",
        "weighted-report",
    ] {
        let o = Command::new(env!("CARGO_BIN_EXE_stokeslab"))
            .args([sub, "--help"])
            .output()
            .unwrap();
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.contains("Anchor:"), "{sub}");
        assert!(text.contains("--config") && text.contains("--seed"), "{sub}");
    }
}
