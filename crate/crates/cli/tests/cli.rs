use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn odyssey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odyssey"))
        .args(args)
        .env_remove("ODYSSEY_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = odyssey(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Self { _dir: dir, root };
        ok(&["generate", "--count", "1500", "--length", "64", "--seed", "3", "--normalize", "-o", s(&f.path("data.odsy"))]);
        ok(&[
            "generate", "--count", "12", "--length", "64", "--seed", "4", "--from", s(&f.path("data.odsy")), "--normalize", "-o",
            s(&f.path("queries.odsy")),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn generation_is_reproducible() {
    let f = Fixture::new();
    let again = f.path("again.odsy");
    ok(&["generate", "--count", "1500", "--length", "64", "--seed", "3", "--normalize", "-o", s(&again)]);
    assert_eq!(std::fs::read(f.path("data.odsy")).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn seed_env_overrides_flag() {
    let f = Fixture::new();
    let a = f.path("a.odsy");
    let b = f.path("b.odsy");
    ok(&["generate", "--count", "5", "--length", "8", "--seed", "1", "-o", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_odyssey"))
        .args(["generate", "--count", "5", "--length", "8", "--seed", "9", "-o", s(&b)])
        .env("ODYSSEY_SEED", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn single_node_run_matches_oracle() {
    let f = Fixture::new();
    let (data, queries) = (f.path("data.odsy"), f.path("queries.odsy"));
    ok(&["oracle", "--data", s(&data), "--queries", s(&queries), "-o", s(&f.path("oracle.csv"))]);
    ok(&[
        "run", "--data", s(&data), "--queries", s(&queries), "--leaf-capacity", "50", "--answers", s(&f.path("a.csv")),
        "--metrics", s(&f.path("m.json")),
    ]);
    let report = ok(&["report", "--answers", s(&f.path("a.csv")), "--expected", s(&f.path("oracle.csv")), "--metrics", s(&f.path("m.json"))]);
    assert!(report.contains("answers match"), "{report}");
    let header = std::fs::read_to_string(f.path("a.csv")).unwrap();
    assert!(header.starts_with("query_id,rank,distance,series_id"));
}

#[test]
fn repeated_simulated_runs_give_identical_answers() {
    let f = Fixture::new();
    let (data, queries) = (f.path("data.odsy"), f.path("queries.odsy"));
    for name in ["x", "y"] {
        ok(&[
            "run", "--data", s(&data), "--queries", s(&queries), "--nodes", "4", "--k", "2", "--scheduler", "predict-dn",
            "--partition", "density-aware", "--lambda", "30", "--workers", "2", "--leaf-capacity", "40", "--seed", "7",
            "--answers", s(&f.path(&format!("{name}.csv"))), "--metrics", s(&f.path(&format!("{name}.json"))),
        ]);
    }
    assert_eq!(std::fs::read(f.path("x.csv")).unwrap(), std::fs::read(f.path("y.csv")).unwrap());
    ok(&["oracle", "--data", s(&data), "--queries", s(&queries), "-o", s(&f.path("o.csv"))]);
    ok(&["report", "--answers", s(&f.path("x.csv")), "--expected", s(&f.path("o.csv"))]);
}

#[test]
fn knn_one_equals_one_nn_and_threads_work() {
    let f = Fixture::new();
    let (data, queries) = (f.path("data.odsy"), f.path("queries.odsy"));
    ok(&["oracle", "--data", s(&data), "--queries", s(&queries), "--mode", "knn:1", "-o", s(&f.path("k1.csv"))]);
    ok(&["oracle", "--data", s(&data), "--queries", s(&queries), "-o", s(&f.path("nn.csv"))]);
    assert_eq!(std::fs::read(f.path("k1.csv")).unwrap(), std::fs::read(f.path("nn.csv")).unwrap());
    ok(&["oracle", "--data", s(&data), "--queries", s(&queries), "--mode", "knn:5", "-o", s(&f.path("k5.csv"))]);
    ok(&[
        "run", "--data", s(&data), "--queries", s(&queries), "--mode", "knn:5", "--nodes", "2", "--transport", "threads",
        "--th", "16", "--leaf-capacity", "40", "--answers", s(&f.path("t.csv")), "--metrics", s(&f.path("t.json")),
    ]);
    ok(&["report", "--answers", s(&f.path("t.csv")), "--expected", s(&f.path("k5.csv"))]);
}

#[test]
fn dtw_mode_matches_oracle() {
    let f = Fixture::new();
    let (data, queries) = (f.path("data.odsy"), f.path("queries.odsy"));
    ok(&["oracle", "--data", s(&data), "--queries", s(&queries), "--mode", "dtw:10%", "-o", s(&f.path("o.csv"))]);
    ok(&[
        "run", "--data", s(&data), "--queries", s(&queries), "--mode", "dtw:10%", "--nodes", "2", "--k", "2",
        "--leaf-capacity", "40", "--answers", s(&f.path("a.csv")), "--metrics", s(&f.path("m.json")),
    ]);
    ok(&["report", "--answers", s(&f.path("a.csv")), "--expected", s(&f.path("o.csv"))]);
}

#[test]
fn calibrate_then_run_with_models() {
    let f = Fixture::new();
    let data = f.path("data.odsy");
    let out = ok(&["calibrate", "--data", s(&data), "--warmup", "20", "--leaf-capacity", "50", "-o", s(&f.path("models.json"))]);
    assert!(out.contains("time model"));
    let models: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.path("models.json")).unwrap()).unwrap();
    assert!(models["pq_size"]["M"].is_number());
    ok(&[
        "run", "--data", s(&data), "--queries", s(&f.path("queries.odsy")), "--models", s(&f.path("models.json")),
        "--scheduler", "predict-st", "--nodes", "2", "--answers", s(&f.path("a.csv")), "--metrics", s(&f.path("m.json")),
    ]);
}

#[test]
fn build_plan_reports_stored_series() {
    let f = Fixture::new();
    let out = ok(&[
        "build-plan", "--data", s(&f.path("data.odsy")), "--nodes", "4", "--k", "2", "--partition", "density-aware",
        "--lambda", "20", "-o", s(&f.path("plan.json")),
    ]);
    assert!(out.contains("stored series: 3000"), "{out}");
}

#[test]
fn invalid_configuration_lists_every_problem() {
    let f = Fixture::new();
    let out = odyssey(&[
        "run", "--data", s(&f.path("data.odsy")), "--queries", s(&f.path("queries.odsy")), "--nodes", "6", "--k", "4",
        "--n-send", "0", "--th", "8", "--answers", s(&f.path("a.csv")), "--metrics", s(&f.path("m.json")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("power of two") && err.contains("N_send"), "{err}");
}

#[test]
fn corrupt_dataset_is_rejected() {
    let f = Fixture::new();
    let bad = f.path("bad.odsy");
    let mut bytes = std::fs::read(f.path("data.odsy")).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&bad, bytes).unwrap();
    let out = odyssey(&["oracle", "--data", s(&bad), "--queries", s(&f.path("queries.odsy")), "-o", s(&f.path("o.csv"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt file"));
}

#[test]
fn generate_from_takes_the_source_length() {
    let f = Fixture::new();
    let data = f.path("data.odsy");
    let out = ok(&["generate", "--count", "5", "--from", s(&data), "--noise", "0.1", "-o", s(&f.path("q.odsy"))]);
    assert!(out.contains("5 series of length 64"), "{out}");
    let bad = odyssey(&["generate", "--count", "5", "--length", "32", "--from", s(&data), "-o", s(&f.path("x.odsy"))]);
    assert!(!bad.status.success());
    assert!(!odyssey(&["generate", "--count", "5", "-o", s(&f.path("y.odsy"))]).status.success());
}
