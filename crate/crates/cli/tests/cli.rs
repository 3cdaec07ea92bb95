use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn msms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msms")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = msms(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn reduced() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/reduced_2sensor.cfg")
        .to_str()
        .unwrap()
        .to_string()
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_str().unwrap().to_string()
}

fn rows(path: &str) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

/// Two scans, one sensor, one birth component per scan and sparse clutter:
/// few enough histories that generous sampling retains all of them.
const TINY: &str = r#"
scans = 2
dt = 1.0
sigma_a = 5.0
survival = 0.9
bounds = [[-50.0, 50.0], [-50.0, 50.0], [-50.0, 50.0]]
seed = 11

[[sensors]]
detection = 0.6
noise_sd = 20.0
clutter_rate = 1.0

[[births]]
existence = 0.4
mean = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
sd = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0]

[[objects]]
birth_scan = 1
birth_index = 1
state = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]

[tracker]
factor_keep = 100000
factor_iterations = 100000
factor_budget = 100000
chains = 1000
sweeps = 1000
keep = 100000
"#;

#[test]
fn simulate_track_evaluate_stats_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = reduced();
    let scans = ["--scans", "6", "--seed", "2"];
    ok(&[&scans[..], &["simulate", "--config", &cfg, "--out", &p(d, "sim")]].concat());
    for (name, extra) in [("smoother", vec![]), ("filter", vec!["--mode", "recursive", "--smooth", "off"])] {
        let (meas, out) = (p(d, "sim/measurements.csv"), p(d, name));
        let args = [
            &scans[..],
            &["track", "--config", &cfg, "--measurements", &meas, "--out", &out],
            &extra[..],
        ]
        .concat();
        ok(&args);
    }
    ok(&[
        "evaluate",
        "--truth",
        &p(d, "sim/truth.csv"),
        "--estimates",
        &p(d, "smoother/estimates.csv"),
        &p(d, "filter/estimates.csv"),
        "--out",
        &p(d, "eval"),
    ]);
    let errors = rows(&p(d, "eval/errors.csv"));
    for method in ["smoother", "filter"] {
        let per: Vec<_> = errors.iter().filter(|r| r[1] == method).collect();
        assert_eq!(per.len(), 6, "{method}");
        for r in per {
            let ospa: f64 = r[3].parse().unwrap();
            let ospa2: f64 = r[4].parse().unwrap();
            assert!((0.0..=100.0).contains(&ospa) && (0.0..=100.0).contains(&ospa2));
        }
    }
    ok(&["stats", "--posterior", &p(d, "smoother/posterior.json"), "--out", &p(d, "stats")]);
    let card: f64 = rows(&p(d, "stats/stats.csv"))
        .iter()
        .filter(|r| r[0] == "cardinality")
        .map(|r| r[3].parse::<f64>().unwrap())
        .sum();
    assert!((card - 1.0).abs() < 1e-9);
}

#[test]
fn malformed_config_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(reduced()).unwrap().replace("sigma_a = 5.0\n", "");
    let cfg = p(tmp.path(), "bad.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = msms(&["simulate", "--config", &cfg, "--out", &p(tmp.path(), "sim")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_a"));

    let text = std::fs::read_to_string(reduced()).unwrap().replace("detection = 0.3", "detection = 2.0");
    std::fs::write(&cfg, text).unwrap();
    let out = msms(&["simulate", "--config", &cfg, "--out", &p(tmp.path(), "sim")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detection"));
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = msms(&["stats", "--posterior", &p(tmp.path(), "absent.json"), "--out", &p(tmp.path(), "s")]);
    assert_eq!(out.status.code(), Some(4));
    let out = msms(&["--threads", "0", "stats", "--posterior", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn batch_and_recursive_agree_with_full_retention() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = p(d, "tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    ok(&["simulate", "--config", &cfg, "--out", &p(d, "sim")]);
    let meas = p(d, "sim/measurements.csv");
    ok(&["track", "--config", &cfg, "--measurements", &meas, "--out", &p(d, "batch")]);
    ok(&["track", "--config", &cfg, "--measurements", &meas, "--out", &p(d, "rec"), "--mode", "recursive"]);
    let batch = std::fs::read_to_string(p(d, "batch/posterior.json")).unwrap();
    let rec = std::fs::read_to_string(p(d, "rec/posterior.json")).unwrap();
    assert_eq!(batch, rec);
}

#[test]
fn single_component_posterior_gives_point_masses() {
    let tmp = TempDir::new().unwrap();
    let post = p(tmp.path(), "posterior.json");
    std::fs::write(
        &post,
        r#"{"k": 3, "sensors": 1, "components": [{"log_weight": -4.2,
            "history": [{"label": [1, 1], "assocs": [[0], [1], [0]]}, {"label": [2, 1], "assocs": [[2]]}],
            "labels": [{"label": [1, 1], "s": 1, "t": 3}, {"label": [2, 1], "s": 2, "t": 2}]}]}"#,
    )
    .unwrap();
    ok(&["stats", "--posterior", &post, "--out", &p(tmp.path(), "stats")]);
    let stats = rows(&p(tmp.path(), "stats/stats.csv"));
    let get = |stat: &str, time: &str| -> Vec<(String, String)> {
        stats
            .iter()
            .filter(|r| r[0] == stat && r[1] == time)
            .map(|r| (r[2].clone(), r[3].clone()))
            .collect()
    };
    let one = |v: &str| vec![(v.to_string(), "1.0".to_string())];
    assert_eq!(get("cardinality", ""), one("2"));
    assert_eq!(get("births", "1"), one("1"));
    assert_eq!(get("births", "2"), one("1"));
    assert_eq!(get("births", "3"), one("0"));
    assert_eq!(get("deaths", "2"), one("1"));
    assert_eq!(get("deaths", "3"), one("1"));
    let lengths = get("length", "");
    assert_eq!(lengths.len(), 2);
    assert!(lengths.iter().all(|(_, prob)| prob == "0.5"));
}

#[test]
fn identical_truth_and_estimates_have_zero_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = reduced();
    ok(&["--scans", "12", "simulate", "--config", &cfg, "--out", &p(d, "sim")]);
    let truth = std::fs::read_to_string(p(d, "sim/truth.csv")).unwrap();
    let mut lines = truth.lines();
    let mut est = format!("run_id,{}\n", lines.next().unwrap());
    for line in lines {
        est.push_str(&format!("0,{line}\n"));
    }
    let est_dir: PathBuf = d.join("same");
    std::fs::create_dir_all(&est_dir).unwrap();
    std::fs::write(est_dir.join("estimates.csv"), est).unwrap();
    ok(&[
        "evaluate",
        "--truth",
        &p(d, "sim/truth.csv"),
        "--estimates",
        &p(d, "same/estimates.csv"),
        "--out",
        &p(d, "eval"),
    ]);
    let errors = rows(&p(d, "eval/errors.csv"));
    assert_eq!(errors.len(), 12);
    for r in errors {
        assert_eq!(r[1], "same");
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
    }
}
