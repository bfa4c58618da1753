mod common;

use std::path::Path;
use std::process::{Command, Output};

use collusion_runner::results::{ResultSet, RECORDS_FILE};
use common::{tiny_config, untimed_jsonl};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_collusion-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// With Φ = 0, β = 1 and u⁰ = −2 each side is a plain logit market.
fn side_profit(p: f64, q: f64) -> f64 {
    p * (-p).exp() / ((-2.0f64).exp() + (-p).exp() + (-q).exp())
}

fn grid_argmax(f: impl Fn(f64) -> f64) -> f64 {
    (0..=60_000)
        .map(|i| i as f64 * 1e-4)
        .fold((f64::NEG_INFINITY, 0.0), |best, p| {
            let v = f(p);
            if v > best.0 {
                (v, p)
            } else {
                best
            }
        })
        .1
}

#[test]
fn solve_eq_matches_the_grid_oracle() {
    let o = lab(&["solve-eq"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let get = |k: &str, i: Option<usize>| match i {
        Some(i) => v[k][i].as_f64().unwrap(),
        None => v[k].as_f64().unwrap(),
    };

    let mut p_star = 1.0;
    for _ in 0..100 {
        let next = grid_argmax(|x| side_profit(x, p_star));
        if next == p_star {
            break;
        }
        p_star = next;
    }
    let p_coll = grid_argmax(|x| x * (-x).exp() / ((-2.0f64).exp() + 2.0 * (-x).exp()));
    let pi_star = 2.0 * side_profit(p_star, p_star);
    let pi_coll = 2.0 * p_coll * (-p_coll).exp() / ((-2.0f64).exp() + 2.0 * (-p_coll).exp());
    for side in 0..2 {
        assert!((get("p_star", Some(side)) - p_star).abs() < 1e-3);
        assert!((get("p_coll", Some(side)) - p_coll).abs() < 1e-3);
    }
    assert!((get("pi_star", None) - pi_star).abs() < 1e-3);
    assert!((get("pi_coll", None) - pi_coll).abs() < 1e-3);
    assert!(get("pi_coll", None) >= get("pi_star", None));
    assert_eq!(v["global_best_response"], true);

    let o = lab(&["solve-eq", "--phi", "1,0,0,1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["p_star"][0].as_f64().unwrap() - 1.04291).abs() < 1e-4);
    let o = lab(&["solve-eq", "--phi", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--phi"));
}

#[test]
fn config_errors_exit_with_code_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = write(
        tmp.path(),
        "missing.json",
        r#"{"schema_version": 1, "market": {"beta": [1, 1], "u0": [-2, -2], "phi": [0, 0, 0, 0]}}"#,
    );
    let o = lab(&["run", "--config", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("market: missing field `delta`"), "{}", stderr(&o));

    let unknown = write(
        tmp.path(),
        "unknown.json",
        &tiny_config(r#"{"axis": "delta", "values": [0.5], "spacing": 2}"#, 1, tmp.path()),
    );
    let o = lab(&["sweep", "--config", &unknown]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep"), "{}", stderr(&o));

    let o = lab(&["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"));

    let o = lab(&["run", "--config", tmp.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = lab(&["run", "--config", &missing, "--update-target", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn io_errors_exit_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(&["analyze", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = lab(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = lab(&["fit-additive", tmp.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn all_points_failing_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(r#"{"axis": "u0", "values": [30.0, 40.0]}"#, 1, tmp.path());
    let path = write(tmp.path(), "dead.json", &cfg);
    let o = lab(&["sweep", "--config", &path, "--quiet"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // the failure is still written down
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("points 2 = ok 0 + rejected 0 + skipped 2"), "{stdout}");
}

#[test]
fn run_and_sweep_write_reproducible_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(r#"{"axis": "delta", "values": [0.05, 0.6]}"#, 3, &tmp.path().join("a"));
    let path = write(tmp.path(), "exp.json", &cfg);

    let o = lab(&["sweep", "--config", &path, "--workers", "1", "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b_root = tmp.path().join("b");
    let o = lab(&["sweep", "--config", &path, "--workers", "8", "--quiet", "--out", b_root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let only_dir = |root: &Path| std::fs::read_dir(root).unwrap().next().unwrap().unwrap().path();
    let (a, b) = (only_dir(&tmp.path().join("a")), only_dir(&b_root));
    assert_eq!(a.file_name(), b.file_name());
    assert_eq!(untimed_jsonl(&a.join(RECORDS_FILE)), untimed_jsonl(&b.join(RECORDS_FILE)));

    // `run` keeps the base point only; overrides reach the records and the hash
    let c_root = tmp.path().join("c");
    let o = lab(&[
        "run", "--config", &path, "--quiet", "--out", c_root.to_str().unwrap(), "--seed", "5", "--update-target",
        "current-state",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = ResultSet::load(&only_dir(&c_root)).unwrap();
    assert_ne!(c.dir.file_name(), a.file_name());
    assert_eq!(c.points.len(), 1);
    assert!(c.config.sweep.is_none());
    assert!(c.records.iter().all(|r| r.seed == 5 && r.update_target.as_str() == "current-state"));

    let o = lab(&["analyze", a.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Metric,1-Sym,1-Asy,C2-4,C5-8,C9,NoCycle,All"));

    let joined = tmp.path().join("joined.csv");
    let o = lab(&["report", tmp.path().join("a").to_str().unwrap(), c.dir.to_str().unwrap(), "--out", joined.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&joined).unwrap().lines().count(), 1 + 2 + 1);
}

#[test]
fn template_is_a_valid_config() {
    for preset in ["desk", "full"] {
        let o = lab(&["template", "--preset", preset]);
        assert!(o.status.success());
        let cfg = collusion_runner::ExperimentConfig::from_json(&String::from_utf8_lossy(&o.stdout)).unwrap();
        assert_eq!(cfg.preset.as_str(), preset);
        cfg.resolve().unwrap();
    }
}
