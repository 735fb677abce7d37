use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use vhcbm::bundle::{load_bundle, Manifest};
use vhcbm::report::RecordJson;

fn vhcbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vhcbm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = vhcbm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small bundle plus one quick run per mode, shared by the tests below.
struct Shared {
    _dir: tempfile::TempDir,
    bundle: PathBuf,
    active: PathBuf,
    random: PathBuf,
}

const QUICK: [&str; 10] = ["--initial", "12", "--step", "8", "--pool", "20", "--gp-epochs", "40", "--head-epochs", "20"];

fn shared() -> &'static Shared {
    static S: OnceLock<Shared> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let bundle = dir.path().join("bundle");
        ok(&["synth", "--spec", r#"{"n": 400, "d": 8}"#, "--out", path(&bundle), "--seed", "2"]);
        let mut runs = Vec::new();
        for mode in ["active", "random"] {
            let out = dir.path().join(mode);
            let mut args = vec!["run", "--bundle", path(&bundle), "--mode", mode, "--out", path(&out)];
            args.extend(QUICK);
            ok(&args);
            runs.push(out);
        }
        let random = runs.pop().unwrap();
        let active = runs.pop().unwrap();
        Shared { bundle, active, random, _dir: dir }
    })
}

fn records(dir: &Path, seed: u64) -> Vec<RecordJson> {
    fs::read_to_string(dir.join(format!("seed_{seed}.jsonl")))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_default_spec_writes_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let printed = ok(&["synth", "--out", path(dir.path())]);
    assert_eq!(printed.trim(), path(&dir.path().join("manifest.json")));
    let ds = load_bundle(dir.path()).unwrap();
    assert_eq!(ds.len(), 5000);
    assert_eq!(ds.schema().cardinalities(), vec![2, 2, 2, 3, 3]);
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"n": 200}"#;
    let checksum = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["synth", "--spec", spec, "--out", path(&out), "--seed", seed]);
        let m: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m.checksum
    };
    assert_eq!(checksum("a", "5"), checksum("b", "5"));
    assert_ne!(checksum("a", "5"), checksum("c", "6"));
}

#[test]
fn synth_rejects_invalid_specs() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [r#"{"n": 0}"#, r#"{"n": 10, "unknown": 1}"#, "{not json", r#"{"k": 2}"#] {
        let out = vhcbm(&["synth", "--spec", spec, "--out", path(dir.path())]);
        assert!(!out.status.success(), "{spec}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn synth_reads_a_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"cardinalities": [4], "n": 50, "d": 2}"#).unwrap();
    ok(&["synth", "--spec", path(&spec), "--out", path(&dir.path().join("b"))]);
    let ds = load_bundle(dir.path().join("b")).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.schema().width()), (50, 2, 4));
}

#[test]
fn run_writes_one_file_pair_per_seed() {
    let s = shared();
    for seed in 1..=3 {
        let recs = records(&s.active, seed);
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.seed == seed && r.mode == "active"));
        let csv = fs::read_to_string(s.active.join(format!("seed_{seed}_metrics.csv"))).unwrap();
        assert!(csv.starts_with("iteration,metric,value,seed\n"));
        assert_eq!(recs.last().unwrap().models.as_deref(), Some(format!("models/seed_{seed}/iter_5").as_str()));
        assert!(recs[..5].iter().all(|r| r.models.is_none()));
    }
    assert!(!s.active.join("seed_4.jsonl").exists());
}

#[test]
fn modes_spend_equal_budgets() {
    let s = shared();
    for seed in 1..=3 {
        let (a, r) = (records(&s.active, seed), records(&s.random, seed));
        let count = |rs: &[RecordJson]| rs.iter().map(|x| x.added.len()).sum::<usize>();
        assert_eq!(count(&a), count(&r));
        assert_eq!(count(&a), (12 + 5 * 8) * 5);
        assert!(a.iter().zip(&r).all(|(x, y)| x.cumulative_annotations == y.cumulative_annotations));
    }
}

#[test]
fn reruns_give_identical_csvs() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--bundle", path(&s.bundle), "--mode", "active", "--seeds", "2", "--out", path(dir.path())];
    args.extend(QUICK);
    args.extend(["--save-models", "none"]);
    ok(&args);
    let name = "seed_2_metrics.csv";
    assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(s.active.join(name)).unwrap());
    assert!(!dir.path().join("models").exists());
}

#[test]
fn run_prints_a_summary_table() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--bundle", path(&s.bundle), "--seeds", "1,2", "--iterations", "1", "--out", path(dir.path())];
    args.extend(QUICK);
    let table = ok(&args);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains("f1_c") && lines[0].contains("ecce_r"));
    assert!(lines[1].contains('±'));
}

#[test]
fn run_reports_missing_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let out = vhcbm(&["run", "--bundle", path(&dir.path().join("nope")), "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn run_reports_the_failing_seed() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let out = vhcbm(&["run", "--bundle", path(&s.bundle), "--seeds", "7", "--initial", "1000", "--out", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 7"));
}

#[test]
fn eval_matches_the_run_and_is_deterministic() {
    let s = shared();
    let models = s.active.join("models/seed_3/iter_5");
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let printed = ok(&["eval", "--bundle", path(&s.bundle), "--models", path(&models), "--out", path(&report)]);
    let again = ok(&["eval", "--bundle", path(&s.bundle), "--models", path(&models)]);
    assert_eq!(printed, again);
    assert_eq!(printed.trim(), fs::read_to_string(&report).unwrap().trim());
    let json: serde_json::Value = serde_json::from_str(&printed).unwrap();
    let recorded = serde_json::to_value(&records(&s.active, 3).last().unwrap().metrics).unwrap();
    assert_eq!(json, recorded);

    let other = ok(&["eval", "--bundle", path(&s.bundle), "--models", path(&models), "--seed", "99"]);
    let other: serde_json::Value = serde_json::from_str(&other).unwrap();
    assert_eq!(other["per_concept"].as_object().unwrap().len(), 5);
}

#[test]
fn eval_report_follows_the_published_schema() {
    let s = shared();
    let schema_text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/metric_report.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&schema_text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let printed = ok(&["eval", "--bundle", path(&s.bundle), "--models", path(&s.random.join("models/seed_1/iter_5"))]);
    let report: serde_json::Value = serde_json::from_str(&printed).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let mut broken = report.clone();
    broken.as_object_mut().unwrap().remove("f1_c");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn eval_reports_missing_models() {
    let s = shared();
    let dir = tempfile::tempdir().unwrap();
    let out = vhcbm(&["eval", "--bundle", path(&s.bundle), "--models", path(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("models.json"));
}

#[test]
fn converged_models_score_well_on_concepts() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("bundle");
    ok(&["synth", "--spec", r#"{"n": 1000}"#, "--out", path(&bundle), "--seed", "4"]);
    let out = dir.path().join("run");
    ok(&[
        "run", "--bundle", path(&bundle), "--seeds", "4", "--out", path(&out), "--iterations", "2", "--initial", "40",
        "--step", "40", "--gp-epochs", "200", "--gp-lr", "0.015",
    ]);
    let printed = ok(&["eval", "--bundle", path(&bundle), "--models", path(&out.join("models/seed_4/iter_2"))]);
    let report: serde_json::Value = serde_json::from_str(&printed).unwrap();
    let f1 = report["f1_c"].as_f64().unwrap();
    assert!(f1 >= 0.9, "F1(C) {f1}");
}
