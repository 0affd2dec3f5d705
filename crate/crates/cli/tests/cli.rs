use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn srx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srx"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesize the fixture specs into `dir` and return its manifest path.
fn synth_into(dir: &Path) -> PathBuf {
    let out = srx(&["synth", "--specs", s(&fixtures().join("specs")), "--out", s(dir), "--seed", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest.json")
}

fn two_problem_manifest(problems: &Path, at: &Path) -> PathBuf {
    let m = serde_json::json!({
        "problems": [
            problems.join("damped_oscillator/problem.json"),
            problems.join("stress_strain/problem.json"),
        ],
        "agent": {"iterations": 5}
    });
    let path = at.join("run.json");
    fs::write(&path, m.to_string()).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(str::to_string).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()));
    rows
}

fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_manifest_is_a_config_error() {
    let out = srx(&["discover", "--manifest", "/nonexistent/run.json", "--out", "/tmp/x", "--policy", "poly_ladder"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read manifest"));
}

#[test]
fn unknown_policy_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth_into(&tmp.path().join("p"));
    let out = srx(&["discover", "--manifest", s(&m), "--out", s(&tmp.path().join("o")), "--policy", "psychic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn discover_two_problems_with_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    synth_into(&tmp.path().join("p"));
    let run = two_problem_manifest(&tmp.path().join("p"), tmp.path());
    let out_dir = tmp.path().join("o");
    let out = srx(&["discover", "--manifest", s(&run), "--out", s(&out_dir), "--policy", "oracle_after_k:2", "--parallel", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&out_dir.join("summary.csv"));
    assert_eq!(rows.len(), 3);
    for name in ["id_acc_0.01", "ood_acc_0.01", "id_acc_0.001", "ood_acc_0.001", "symbolic_equivalent"] {
        let c = column(&rows, name);
        assert!(rows[1..].iter().all(|r| r[c] == "1"), "{name}: {rows:?}");
    }
    for p in ["damped_oscillator", "stress_strain"] {
        assert!(out_dir.join(p).join("run_0.json").is_file());
        assert!(out_dir.join(p).join("trajectory_0.jsonl").is_file());
    }

    // same seed, scripted backend: byte-identical outputs
    let again = tmp.path().join("o2");
    let out = srx(&["discover", "--manifest", s(&run), "--out", s(&again), "--policy", "oracle_after_k:2"]);
    assert!(out.status.success());
    assert_eq!(tree(&out_dir), tree(&again));
}

#[test]
fn repeats_keep_per_repeat_files() {
    let tmp = tempfile::tempdir().unwrap();
    synth_into(&tmp.path().join("p"));
    let run = two_problem_manifest(&tmp.path().join("p"), tmp.path());
    let out_dir = tmp.path().join("o");
    let out = srx(&[
        "discover", "--manifest", s(&run), "--out", s(&out_dir), "--policy", "poly_ladder:2", "--repeats", "3", "--tau", "0.05",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for r in 0..3 {
        assert!(out_dir.join("stress_strain").join(format!("run_{r}.json")).is_file());
    }
    let rows = read_csv(&out_dir.join("summary.csv"));
    assert_eq!(rows[1][column(&rows, "runs")], "3");
    assert!(rows[0].contains(&"id_acc_0.05".to_string()));
    assert_eq!(read_csv(&out_dir.join("summary_runs.csv")).len(), 1 + 2 * 3);
}

#[test]
fn synth_is_deterministic_and_rejects_blowup() {
    let tmp = tempfile::tempdir().unwrap();
    synth_into(&tmp.path().join("a"));
    synth_into(&tmp.path().join("b"));
    assert_eq!(tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    let report = read_csv(&tmp.path().join("a/synth_report.csv"));
    assert!(report[1..].iter().all(|r| r[3..] == ["4000", "500", "500"]));

    let out = srx(&["synth", "--specs", s(&fixtures().join("rejected")), "--out", s(&tmp.path().join("r"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("runaway: rejected"));
    assert!(!tmp.path().join("r/runaway").exists());
}

#[test]
fn score_rows() {
    let tmp = tempfile::tempdir().unwrap();
    synth_into(&tmp.path().join("p"));
    let preds = tmp.path().join("preds.txt");
    fs::write(
        &preds,
        "{\"id\": \"truth\", \"equation\": \"-params[0]*x - params[1]*v\"}\n\
         {\"id\": \"const\", \"equation\": \"params[0]\"}\n\
         {\"id\": \"broken\", \"equation\": \"params[0]*(x\"}\n",
    )
    .unwrap();
    let csv_path = tmp.path().join("scores.csv");
    let problem = tmp.path().join("p/damped_oscillator/problem.json");
    let out = srx(&["score", "--problem", s(&problem), "--predictions", s(&preds), "--out", s(&csv_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&csv_path);
    let (st, sym, acc) = (column(&rows, "status"), column(&rows, "symbolic"), column(&rows, "id_acc_0.01"));
    assert_eq!(rows[1][st], "ok");
    assert_eq!(rows[1][sym], "equivalent");
    assert_eq!(rows[1][acc], "1");
    assert_eq!(rows[2][st], "ok");
    assert_eq!(rows[2][sym], "not_equivalent");
    assert!(rows[2][column(&rows, "train_mape")].parse::<f64>().unwrap().is_finite());
    assert!(rows[3][st].starts_with("error:"));
}

#[test]
fn noise_sweep_rows_and_zero_sigma_matches_discover() {
    let tmp = tempfile::tempdir().unwrap();
    synth_into(&tmp.path().join("p"));
    let m = serde_json::json!({
        "problems": [tmp.path().join("p/stress_strain/problem.json")],
        "agent": {"iterations": 3}
    });
    let run = tmp.path().join("run.json");
    fs::write(&run, m.to_string()).unwrap();

    let out = srx(&["noise-sweep", "--manifest", s(&run), "--out", s(&tmp.path().join("n")), "--policy", "oracle_after_k", "--sigma", "-0.1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = srx(&[
        "noise-sweep", "--manifest", s(&run), "--out", s(&tmp.path().join("n")), "--policy", "oracle_after_k", "--sigma", "0", "--sigma", "0.01",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&tmp.path().join("n/noise_sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "0");
    assert_eq!(rows[2][0], "0.01");
    // noise makes the exact skeleton miss the termination threshold
    let mape = column(&rows, "train_mape");
    assert!(rows[2][mape].parse::<f64>().unwrap() > rows[1][mape].parse::<f64>().unwrap());

    let out = srx(&["discover", "--manifest", s(&run), "--out", s(&tmp.path().join("d")), "--policy", "oracle_after_k"]);
    assert!(out.status.success());
    assert_eq!(tree(&tmp.path().join("n/sigma_0")), tree(&tmp.path().join("d")));
}
