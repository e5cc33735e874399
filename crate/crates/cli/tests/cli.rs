use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mvbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvbound"))
        .args(args)
        .env("MVBOUND_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn toy_csv(dir: &Path) -> PathBuf {
    // Two noisy blobs, label in the last column.
    let mut text = String::new();
    for i in 0..240 {
        let y = i % 2;
        let a = (i * 37 % 101) as f64 / 101.0;
        let b = (i * 59 % 97) as f64 / 97.0;
        let shift = if y == 1 { 0.6 } else { 0.0 };
        text.push_str(&format!("{:.4},{:.4},{y}\n", a + shift, b - shift));
    }
    let p = dir.join("toy.csv");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_tables_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_csv(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mvbound(&[
            "train",
            "--data",
            s(&data),
            "--hypotheses",
            "5",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["oob.table", "test.table", "summary.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let summary: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_hypotheses"], 5);
    assert_eq!(
        summary["n_train"].as_u64().unwrap() + summary["n_test"].as_u64().unwrap(),
        240
    );
}

#[test]
fn missing_file_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvbound(&["train", "--data", "/nonexistent/x.csv", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/x.csv"));
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(mvbound(&["bounds"]).status.code(), Some(2));
    assert_eq!(mvbound(&["no-such-command"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let data = toy_csv(dir.path());
    let o = mvbound(&["bounds", "--data", s(&data), "--delta", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_mvbound"))
        .args(["oracle-surface", "--resolution", "4"])
        .env("MVBOUND_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_report_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_csv(dir.path());
    let train = dir.path().join("t");
    let o = mvbound(&[
        "train",
        "--data",
        s(&data),
        "--hypotheses",
        "6",
        "--seed",
        "3",
        "--out",
        s(&train),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("r");
    let (oob, test) = (train.join("oob.table"), train.join("test.table"));
    let args = [
        "bounds",
        "--table",
        s(&oob),
        "--test-table",
        s(&test),
        "--mu-grid-size",
        "40",
        "--out",
        s(&out),
    ];
    let o = mvbound(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let r: Value = serde_json::from_str(&text).unwrap();
    let entries = r["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 8);
    for e in entries {
        for key in [
            "bound",
            "weighting",
            "report",
            "rho",
            "test_loss",
            "loss_ratio",
            "bound_over_tnd",
        ] {
            assert!(e.get(key).is_some(), "entry lacks {key}");
        }
        let rep = &e["report"];
        for key in [
            "name",
            "bound",
            "raw",
            "params",
            "kl_term",
            "union_factor",
            "terms",
        ] {
            assert!(rep.get(key).is_some(), "report lacks {key}");
        }
        let b = rep["bound"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&b));
    }
    let mut paths = Vec::new();
    key_paths(&r, "", &mut paths);
    paths.sort();
    paths.dedup();
    let golden =
        fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_keys.txt"))
            .unwrap();
    assert_eq!(paths.join("\n") + "\n", golden);
    for name in ["fo", "tnd", "cmutnd", "cotnd"] {
        let trace = fs::read_to_string(out.join(format!("trace_{name}.jsonl"))).unwrap();
        assert!(trace.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    }
    // Same inputs, same bytes, regardless of thread count.
    let o = Command::new(env!("CARGO_BIN_EXE_mvbound"))
        .args(&args[..args.len() - 2])
        .env("MVBOUND_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), text);
}

/// Key paths of a JSON value with array indices collapsed to `[]`. Term and
/// parameter maps are included, so the golden file pins the δ-accounting.
fn key_paths(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = format!("{prefix}.{k}");
                out.push(p.clone());
                key_paths(x, &p, out);
            }
        }
        Value::Array(a) => {
            for x in a {
                key_paths(x, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

#[test]
fn oracle_surface_rows() {
    let o = mvbound(&["oracle-surface", "--resolution", "40"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("g,t,ratio"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let (g, t, ratio) = (v[0], v[1], v[2]);
        assert!(ratio <= 1.0 + 1e-12);
        if t == 0.5 * g {
            assert!((ratio - 1.0).abs() <= 1e-12);
        }
        rows += 1;
    }
    let expected = (0..40)
        .map(|i| {
            let g = i as f64 / 80.0;
            (0..40)
                .filter(|&j| {
                    let t = j as f64 / 80.0;
                    t >= g * g && t <= g
                })
                .count()
        })
        .sum::<usize>();
    assert_eq!(rows, expected);
}

#[test]
fn bennett_surface_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sub/bennett.csv");
    let o = mvbound(&["bennett-surface", "--resolution", "10", "--out", s(&out)]);
    assert!(o.status.success());
    let text = fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,emp,variance,bennett,bernstein,ratio"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2 * 10 * 10);
    assert!(rows.iter().all(|r| r[5] <= 1.0 + 1e-12));
    assert!(rows.iter().any(|r| r[0] == 1000.0) && rows.iter().any(|r| r[0] == 10000.0));
}

#[test]
fn synth_matches_bundled_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.libsvm");
    assert!(mvbound(&["synth", "--out", s(&out)]).status.success());
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/synthetic3000.libsvm");
    assert_eq!(fs::read(out).unwrap(), fs::read(bundled).unwrap());
}
