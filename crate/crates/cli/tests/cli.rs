use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hiflow");

fn hiflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small but complete pipeline config: tiny VAE and TMDiT, a few steps.
const TINY: &str = r#"
seed = 5

[paths]
corpus = "data/corpus.bin"
vae = "vae/vae.ckpt"
tmdit = "tmdit/tmdit.ckpt"

[data]
n_per_program = 6
programs = ["jump", "raise_arm", "walk_forward"]
frames_min = 32
frames_max = 32

[schedule]
scales = [0.3333333333333333, 0.6666666666666666, 1.0]

[vae]
hidden = 8
latent_dim = 4

[tmdit]
model_dim = 32
n_blocks = 2
n_separate = 1
n_heads = 2
ffn_dim = 64
latent_dim = 4
latent_frames = 8

[train_vae]
steps = 3
batch_size = 4
frames = 32

[train_tmdit]
steps = 3
batch_size = 4
frames = 32

[sample]
prompts = ["a person jumps up", "someone walks straight ahead"]
count = 2
steps_per_stage = [2]
frames = 32
batch_size = 3

[diagnose]
seeds = 2
steps_per_stage = [3]
frames = 8

[inspect]
frames = 18
"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    dir
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

#[test]
fn help_lists_every_flag() {
    let dir = setup();
    let top = hiflow(dir.path(), &["--help"]);
    ok(&top);
    let text = stdout(&top);
    for flag in ["--config", "--seed", "--set", "--out"] {
        assert!(text.contains(flag), "{flag} missing from help:\n{text}");
    }
    for cmd in [
        "gen-data",
        "train-vae",
        "train-tmdit",
        "sample",
        "eval",
        "diagnose",
        "retention",
        "inspect-schedule",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let sample = stdout(&hiflow(dir.path(), &["sample", "--help"]));
    for flag in ["--config", "--seed", "--set", "--out", "--prompt", "--prompt-file"] {
        assert!(sample.contains(flag), "{flag} missing from sample help");
    }
}

#[test]
fn unknown_flags_and_commands_fail_fast() {
    let dir = setup();
    for args in [
        &["inspect-schedule", "--config", "run.toml", "--bogus"][..],
        &["frobnicate"][..],
        &[][..],
    ] {
        let o = hiflow(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(hiflow(dir.path(), &["inspect-schedule"]).status.code(), Some(2));
    assert_eq!(
        hiflow(dir.path(), &["inspect-schedule", "--config", "run.toml", "--set", "novalue"]).status.code(),
        Some(2)
    );
}

#[test]
fn inspect_schedule_prints_stage_lengths() {
    let dir = setup();
    let o = hiflow(dir.path(), &["inspect-schedule", "--config", "run.toml"]);
    ok(&o);
    let text = stdout(&o);
    let lengths: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(lengths, ["6", "12", "18"]);
    assert!(text.starts_with("k\tscale\tt_start\tt_end\tframes\n1\t0.333333\t0.000000\t0.333333\t6\n"));
    assert!(!dir.path().join("out").exists(), "inspect-schedule writes nothing without --out");
    let o = hiflow(dir.path(), &["inspect-schedule", "--config", "run.toml", "--set", "inspect.frames=9"]);
    assert!(stdout(&o).ends_with("\t9\n"));
}

#[test]
fn config_problems_have_distinct_exit_codes() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(hiflow(p, &["gen-data", "--config", "missing.toml"]).status.code(), Some(4));
    fs::write(p.join("broken.toml"), "seed = [").unwrap();
    assert_eq!(hiflow(p, &["gen-data", "--config", "broken.toml"]).status.code(), Some(3));
    fs::write(p.join("typo.toml"), "seed = 1\n[dataa]\nn = 1\n").unwrap();
    assert_eq!(hiflow(p, &["gen-data", "--config", "typo.toml"]).status.code(), Some(3));
    fs::write(p.join("noseed.toml"), "[data]\nn_per_program = 2\n").unwrap();
    let o = hiflow(p, &["gen-data", "--config", "noseed.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("seed"));
    fs::write(p.join("noschedule.toml"), "seed = 1\n").unwrap();
    assert_eq!(hiflow(p, &["inspect-schedule", "--config", "noschedule.toml"]).status.code(), Some(3));
    let o = hiflow(p, &["inspect-schedule", "--config", "run.toml", "--set", "schedule.scales=[0.5, 0.4, 1.0]"]);
    assert_eq!(o.status.code(), Some(3));
    // missing checkpoint
    let o = hiflow(p, &["sample", "--config", "run.toml", "--out", "s"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

fn file(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn pipeline_end_to_end() {
    let dir = setup();
    let p = dir.path();
    let cfg = ["--config", "run.toml"];
    let run = |cmd: &str, out: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend(cfg);
        args.extend(["--out", out]);
        args.extend(extra);
        let o = hiflow(p, &args);
        ok(&o);
        o
    };
    run("gen-data", "data", &[]);
    assert_eq!(file(p, "data/config.toml"), TINY.as_bytes(), "config copied verbatim");
    run("train-vae", "vae", &[]);
    let metrics = String::from_utf8(file(p, "vae/vae_metrics.tsv")).unwrap();
    assert!(metrics.starts_with("step\tloss\trecon\tkl\taug\tlr\n"));
    assert_eq!(metrics.lines().count(), 4);
    run("train-tmdit", "tmdit", &[]);
    assert!(file(p, "tmdit/tmdit_metrics.tsv").starts_with(b"step\tloss\ttarget_energy\tlr\n"));

    let first = run("sample", "s1", &[]);
    run("sample", "s2", &[]);
    assert!(stdout(&first).contains("wrote 4 motions"));
    for f in ["samples.bin", "trajectory.tsv", "config.toml"] {
        assert_eq!(file(p, &format!("s1/{f}")), file(p, &format!("s2/{f}")), "{f} differs between runs");
    }
    let traj = String::from_utf8(file(p, "s1/trajectory.tsv")).unwrap();
    // two batches (3 + 1 prompts), 3 stages x 2 steps + 2 transitions each
    assert_eq!(traj.lines().count(), 1 + 2 * 8);
    run("sample", "s3", &["--seed", "6"]);
    assert_ne!(file(p, "s1/samples.bin"), file(p, "s3/samples.bin"));
    assert_eq!(file(p, "s3/overrides.txt"), b"--seed 6\n");

    run("sample", "s4", &["--prompt", "a person jumps up"]);
    assert!(stdout(&hiflow(p, &["sample", "--config", "run.toml", "--out", "s4", "--prompt", "a person jumps up"]))
        .contains("wrote 2 motions"));
    let o = hiflow(p, &["sample", "--config", "run.toml", "--out", "s5", "--prompt", "a person flies away"]);
    assert_eq!(o.status.code(), Some(5), "out-of-vocabulary prompt is a runtime error");

    run("sample", "gen", &["--set", "sample.from_split=\"test\""]);
    let o = run("eval", "ev", &["--set", "paths.samples=\"gen/samples.bin\""]);
    assert!(stdout(&o).contains("frechet\t"));
    assert!(stdout(&o).contains("accuracy\t"));
    assert!(file(p, "ev/frechet_by_label.tsv").starts_with(b"sample_label\treference_label\tfrechet\n"));

    let o = run("diagnose", "diag", &[]);
    assert!(stdout(&o).contains("0 draws after init, bitwise repeatable: true"), "{}", stdout(&o));
    let table = String::from_utf8(file(p, "diag/diagnostic.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 + 1);
    // a configured but missing checkpoint is an i/o error
    let o = hiflow(p, &["diagnose", "--config", "run.toml", "--set", "paths.tmdit=\"nope.ckpt\""]);
    assert_eq!(o.status.code(), Some(4));
    // without one the diagnostic uses a seeded untrained network
    fs::write(p.join("bare.toml"), TINY.replace("tmdit = \"tmdit/tmdit.ckpt\"\n", "")).unwrap();
    let o = hiflow(p, &["diagnose", "--config", "bare.toml", "--out", "diag2"]);
    ok(&o);
    assert!(stdout(&o).contains("bitwise repeatable: true"));
}

#[test]
fn ground_truth_eval_and_retention() {
    let dir = setup();
    let p = dir.path();
    let set = ["--set", "data.n_per_program=60", "--set", "data.frames_min=64", "--set", "data.frames_max=64"];
    let mut args = vec!["gen-data", "--config", "run.toml", "--out", "data"];
    args.extend(set);
    ok(&hiflow(p, &args));
    let o = hiflow(p, &["eval", "--config", "run.toml", "--out", "ev"]);
    ok(&o);
    let report = stdout(&o);
    let value = |key: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key}\t")))
            .unwrap_or_else(|| panic!("{key} missing:\n{report}"))
            .parse()
            .unwrap()
    };
    assert_eq!(value("accuracy"), 1.0);
    // halves of the same split are far closer to each other than programs
    // are to one another
    let halves = value("frechet");
    let matrix = String::from_utf8(file(p, "ev/frechet_by_label.tsv")).unwrap();
    let cross: Vec<f64> = matrix
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|c| c[0] != c[1])
        .map(|c| c[2].parse().unwrap())
        .collect();
    let min_cross = cross.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(halves < 0.1 * min_cross, "halves {halves} vs cross-program {min_cross}");

    let o = hiflow(p, &["retention", "--config", "run.toml", "--out", "ret"]);
    ok(&o);
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("1.000\t") && rows[0].ends_with("\t1.000000"));
}
