use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
format_version = 1
seed = 3

[synth]
test_samples = 400

[synth.dataset]
kind = "two_moons3d"
n = 400

[train]
epochs = 2
batch_size = 64
hidden = [16]
feature_dim = 8
"#;

fn mavias(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mavias"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mavias(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

fn full_run(dir: &Path) -> String {
    let c = ["--config", "run.toml"];
    ok(dir, &[&c[..], &["synth"]].concat());
    ok(dir, &[&c[..], &["discover"]].concat());
    ok(
        dir,
        &[
            &c[..],
            &[
                "train",
                "--mode",
                "vanilla",
                "--checkpoint",
                "run/vanilla.json",
            ],
        ]
        .concat(),
    );
    ok(dir, &[&c[..], &["train"]].concat());
    ok(
        dir,
        &[
            &c[..],
            &["eval", "--reference-checkpoint", "run/vanilla.json"],
        ]
        .concat(),
    )
}

const OUTPUTS: [&str; 11] = [
    "data/train.jsonl",
    "data/test.jsonl",
    "data/meta.json",
    "discovery/train.tags.jsonl",
    "discovery/test.embeddings.jsonl",
    "discovery/report.json",
    "run/vanilla.json",
    "run/checkpoint.json",
    "run/metrics.csv",
    "run/eval.json",
    "run/eval_groups.csv",
];

#[test]
fn end_to_end_is_bit_reproducible() {
    let a = setup();
    let b = setup();
    let table_a = full_run(a.path());
    let table_b = full_run(b.path());
    assert_eq!(table_a, table_b);
    for f in OUTPUTS {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    for f in ["synth", "discover"] {
        let dir = if f == "synth" { "data" } else { "discovery" };
        assert!(a
            .path()
            .join(dir)
            .join(format!("{f}.resolved.toml"))
            .is_file());
    }
    assert!(a.path().join("run/eval.resolved.toml").is_file());
}

#[test]
fn eval_prints_one_row_per_open_set_group() {
    let d = setup();
    let table = full_run(d.path());
    let rows: Vec<&str> = table
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("worst-group"))
        .collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(rows[0].starts_with("upper moon:no-bias"));
    assert!(rows[3].starts_with("lower moon:bias"));
    let csv = std::fs::read_to_string(d.path().join("run/eval_groups.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn missing_input_exits_2_naming_the_path() {
    let d = setup();
    let out = mavias(d.path(), &["--config", "run.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("meta.json"), "{err}");

    let out = mavias(d.path(), &["eval", "--checkpoint", "nowhere/ck.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/ck.json"));

    let out = mavias(d.path(), &["--config", "absent.toml", "synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.toml"));
}

#[test]
fn invalid_hyperparameters_exit_2() {
    let d = setup();
    ok(d.path(), &["--config", "run.toml", "synth"]);
    ok(d.path(), &["--config", "run.toml", "discover"]);
    for args in [
        &["train", "--lambda", "1.5"][..],
        &["train", "--lambda", "0"],
        &["train", "--alpha", "1.0"],
        &["train", "--mode", "vanilla", "--alpha", "0.1"],
        &["train", "--epochs", "0"],
    ] {
        let out = mavias(d.path(), &[&["--config", "run.toml"][..], args].concat());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!d.path().join("run/checkpoint.json").exists());
}

#[test]
fn malformed_config_exits_2() {
    let d = setup();
    std::fs::write(
        d.path().join("bad.toml"),
        "format_version = 1\n[train]\nepoch = 3\n",
    )
    .unwrap();
    let out = mavias(d.path(), &["--config", "bad.toml", "config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn config_command_prints_resolved_overrides() {
    let d = setup();
    let text = ok(
        d.path(),
        &["--config", "run.toml", "--seed", "11", "config"],
    );
    assert!(text.contains("seed = 11"), "{text}");
    assert!(text.contains("n = 400"));
}

#[test]
fn diagnose_reports_both_modes() {
    let d = setup();
    full_run(d.path());
    let m = ok(d.path(), &["--config", "run.toml", "diagnose"]);
    assert!(m.contains("ratio"), "{m}");
    assert!(m.contains("upper moon:high z"));
    let v = ok(
        d.path(),
        &[
            "--config",
            "run.toml",
            "diagnose",
            "--checkpoint",
            "run/vanilla.json",
        ],
    );
    assert!(v.contains("not applicable"), "{v}");
}
