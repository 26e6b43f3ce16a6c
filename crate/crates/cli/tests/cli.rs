use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hep2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hep2")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_GRID: [&str; 4] = ["--grid-c", "1000,100000", "--grid-gamma", "0.005,0.05"];

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&hep2(&[])), 2);
    assert_eq!(code(&hep2(&["evaluate", "--framework", "ovo", "--out", "x"])), 2);
    let o = hep2(&["evaluate", "--phantoms", "3", "--framework", "ovo", "--resolver", "score", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("resolver"));
    let o = hep2(&["extract", "--dataset", "/definitely/not/here", "--out", "x"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&hep2(&["evaluate", "--phantoms", "3", "--framework", "svm", "--out", "x"])), 2);
    assert_eq!(code(&hep2(&["selftest", "--only", "11"])), 2);
    assert_eq!(code(&hep2(&["--help"])), 0);
}

#[test]
fn unreadable_replay_manifest_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("run.json");
    fs::write(&bad, "{\"format\": \"something-else\", \"version\": 1}").unwrap();
    assert_eq!(code(&hep2(&["replay", p(&bad)])), 1);
}

#[test]
fn dataset_round_trip_through_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = hep2(&["phantom-gen", "--phantoms", "8", "--phantom-seed", "3", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let gt = fs::read_to_string(data.join("gt.csv")).unwrap();
    assert_eq!(gt.lines().count(), 1 + 6 * 8);

    let feats = dir.path().join("features");
    assert_eq!(code(&hep2(&["extract", "--dataset", p(&data), "--out", p(&feats)])), 0);
    for kind in ["cs", "texture", "combined"] {
        let csv = fs::read_to_string(feats.join(format!("features_{kind}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 48, "{kind}");
        assert!(csv.starts_with("id,label,"));
    }

    let train = dir.path().join("train");
    let mut args = vec!["train", "--dataset", p(&data), "--framework", "ovr", "--resolver", "pairwise"];
    args.extend(SMALL_GRID);
    args.extend(["--out", p(&train)]);
    let o = hep2(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(train.join("model").join("model.json").is_file());
    assert!(train.join("test_report.csv").is_file());

    let scored = dir.path().join("scored");
    let o = hep2(&[
        "evaluate",
        "--dataset",
        p(&data),
        "--model",
        p(&train.join("model")),
        "--test-intermediates-only",
        "--out",
        p(&scored),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(scored.join("report.txt")).unwrap();
    assert!(report.contains("ovr+pairwise"));
}

#[test]
fn compare_writes_reports_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let mut args = vec![
        "compare",
        "--phantoms",
        "8",
        "--phantom-seed",
        "4",
        "--frameworks",
        "ovo,ovr+score,rf",
        "--seeds",
        "1,2",
    ];
    args.extend(SMALL_GRID);
    args.extend(["--out", p(&out)]);
    let o = hep2(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("comparison.txt")).unwrap();
    for name in ["ovo", "ovr+score", "rf"] {
        assert!(table.contains(name), "{name} missing from\n{table}");
    }
    assert!(out.join("report_ovr_score.csv").is_file());

    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["format"], "hep2-run");
    assert_eq!(run["config"]["plan"]["seeds"], serde_json::json!([1, 2]));
    assert_eq!(run["config"]["source"]["phantom_seed"], 4);

    let again = dir.path().join("again");
    let o = hep2(&["replay", p(&out.join("run.json")), "--out", p(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["comparison.csv", "report_ovo.csv", "report_rf.csv"] {
        assert_eq!(
            fs::read(out.join(file)).unwrap(),
            fs::read(again.join(file)).unwrap(),
            "{file} differs after replay"
        );
    }
}

#[test]
fn intermediate_filter_changes_the_evaluated_set() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &[&str], out: &Path| {
        let mut args = vec!["evaluate", "--phantoms", "8", "--framework", "ovo", "--seeds", "5"];
        args.extend(SMALL_GRID);
        args.extend(extra);
        args.extend(["--out", p(out)]);
        let o = hep2(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join("report.csv")).unwrap()
    };
    let all = run(&[], &dir.path().join("all"));
    let inter = run(&["--test-intermediates-only"], &dir.path().join("inter"));
    assert_ne!(all, inter);
}
