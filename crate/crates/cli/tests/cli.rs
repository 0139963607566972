//! End-to-end checks of the installed binary: every subcommand, the exit-code
//! contract, and byte-level determinism of artifacts.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csi_ada::ingest::{encode_record_stream, read_sample};
use csi_ada::synth::{default_domain_params, generate_stream};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csi-ada"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(output: &Output, want: i32) {
    let got = output.status.code().expect("no signal");
    assert_eq!(
        got,
        want,
        "exit {got}, expected {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

const TINY_CONFIG: &str = "model = cnn\nprofile = reduced\nsynth_domains = 4\n\
                           synth_per_domain = 8\nholdout = 1\nseed = 7\nrho_grid = 0.1,1\n\
                           k = 2\nt_adv = 3\nt_min = 5\nbatch = 8\nlr = 0.01\n";

fn synth_reduced(dir: &Path, domains: &str, per_domain: &str) {
    let out = run(&[
        "synth",
        "--domains",
        domains,
        "--per-domain",
        per_domain,
        "--profile",
        "reduced",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
}

#[test]
fn synth_reduced_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    synth_reduced(dir.path(), "3", "4");
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    assert_eq!(names[0], "d000_s000.csiw");
    assert_eq!(names[11], "d002_s003.csiw");

    let sample = read_sample(fs::File::open(dir.path().join(&names[0])).unwrap()).unwrap();
    assert_eq!(sample.data().shape(), &[10, 6]);
}

#[test]
fn synth_full_profile_produces_canonical_samples() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--domains",
        "1",
        "--per-domain",
        "2",
        "--profile",
        "full",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let sample =
        read_sample(fs::File::open(dir.path().join("d000_s000.csiw")).unwrap()).unwrap();
    assert_eq!(sample.data().shape(), &[500, 60]);
}

#[test]
fn records_roundtrip_through_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let records_dir = dir.path().join("records");
    let out = run(&[
        "synth",
        "--domains",
        "1",
        "--per-domain",
        "1",
        "--fall-fraction",
        "1",
        "--format",
        "records",
        "--out",
        records_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let stream = records_dir.join("d000_s000_l1.csir");
    assert!(stream.is_file());
    let sample_path = dir.path().join("ingested.csiw");
    let out = run(&[
        "ingest",
        "--in",
        stream.to_str().unwrap(),
        "--out",
        sample_path.to_str().unwrap(),
        "--label",
        "1",
        "--domain-id",
        "3",
    ]);
    assert_code(&out, 0);

    let sample = read_sample(fs::File::open(&sample_path).unwrap()).unwrap();
    assert_eq!(sample.data().shape(), &[500, 60]);
    assert_eq!(sample.label(), 1);
    assert_eq!(sample.domain_id(), 3);
}

#[test]
fn ingest_rejects_multi_window_stream_at_single_path() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("long.csir");
    let records = generate_stream(&default_domain_params(0), 0, 25.0, 1);
    fs::write(&stream, encode_record_stream(&records)).unwrap();

    let single = dir.path().join("sample.csiw");
    let out = run(&[
        "ingest",
        "--in",
        stream.to_str().unwrap(),
        "--out",
        single.to_str().unwrap(),
        "--label",
        "0",
        "--domain-id",
        "0",
    ]);
    assert_code(&out, 1);

    let prefix = dir.path().join("win");
    let out = run(&[
        "ingest",
        "--in",
        stream.to_str().unwrap(),
        "--out",
        prefix.to_str().unwrap(),
        "--label",
        "0",
        "--domain-id",
        "0",
    ]);
    assert_code(&out, 0);
    assert!(dir.path().join("win_w000.csiw").is_file());
    assert!(dir.path().join("win_w001.csiw").is_file());
}

#[test]
fn train_is_deterministic_and_eval_reads_its_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.cfg");
    fs::write(&config, TINY_CONFIG).unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
        assert!(String::from_utf8_lossy(&out.stdout).contains("selected"));
    }
    for name in ["report.txt", "report.jsonl", "checkpoint_0.adaw", "telemetry_0.txt"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let data = dir.path().join("data");
    synth_reduced(&data, "2", "4");
    let eval_out = dir.path().join("eval.txt");
    let out = run(&[
        "eval",
        "--checkpoint-dir",
        out_a.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = fs::read_to_string(&eval_out).unwrap();
    assert!(text.contains("checkpoint_0"), "{text}");
}

#[test]
fn report_pretty_prints_and_renders_heatmaps() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.cfg");
    fs::write(&config, TINY_CONFIG).unwrap();
    let out_dir = dir.path().join("run");
    assert_code(
        &run(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]),
        0,
    );

    let jsonl = out_dir.join("report.jsonl");
    let out = run(&["report", "--report", jsonl.to_str().unwrap()]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"accuracy\""), "{stdout}");

    let data = dir.path().join("data");
    synth_reduced(&data, "1", "1");
    let ppm = dir.path().join("sample.ppm");
    let out = run(&[
        "report",
        "--heatmap-sample",
        data.join("d000_s000.csiw").to_str().unwrap(),
        "--heatmap-out",
        ppm.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let bytes = fs::read(&ppm).unwrap();
    assert!(bytes.starts_with(b"P6\n"), "not a binary pixmap");
}

#[test]
fn gradcheck_passes_and_prints_every_op() {
    let out = run(&["gradcheck", "--seeds", "2"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for op in ["conv2d", "maxpool2d", "dense", "relu", "lstm_cell", "softmax_cross_entropy"] {
        assert!(stdout.contains(op), "missing {op} in:\n{stdout}");
    }
    assert!(stdout.contains("all "), "{stdout}");
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let out = run(&["train", "--config", "/nonexistent.cfg", "--out", "/tmp/x"]);
    assert_code(&out, 2);

    let bad_config = dir.path().join("bad.cfg");
    fs::write(&bad_config, "model = cnn\nno_such_key = 1\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        bad_config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let corrupt = dir.path().join("corrupt.csir");
    fs::write(&corrupt, b"CSIRjunk").unwrap();
    let out = run(&[
        "ingest",
        "--in",
        corrupt.to_str().unwrap(),
        "--out",
        dir.path().join("s.csiw").to_str().unwrap(),
        "--label",
        "0",
        "--domain-id",
        "0",
    ]);
    assert_code(&out, 1);

    let out = run(&["synth", "--per-domain", "0", "--out", dir.path().to_str().unwrap()]);
    assert_code(&out, 1);

    let out = run(&["definitely-not-a-subcommand"]);
    assert_code(&out, 2);
}
