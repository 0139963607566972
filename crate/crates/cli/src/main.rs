//! Command-line surface for the toolkit.
//!
//! Exit codes: 0 success, 1 validation or assertion failure (bad input data,
//! failed gradient checks, degenerate datasets), 2 configuration or IO error.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process;

use clap::{Parser, Subcommand, ValueEnum};

use csi_ada::autodiff::{grad_check_suite, CheckpointError, GradCheckReport};
use csi_ada::harness::{self, HarnessError};
use csi_ada::ingest::{self, IngestError};
use csi_ada::models::{self, CnnConfig, LstmConfig, ModelConfig, ModelError};
use csi_ada::synth;

#[derive(Parser)]
#[command(
    name = "csi-ada",
    about = "WiFi CSI fall detection: synthesis, ingestion, adversarially augmented training, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthFormat {
    /// Preprocessed sample matrices (`.csiw`).
    Samples,
    /// Raw record streams (`.csir`), to be fed through `ingest`.
    Records,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Full,
    Reduced,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic record streams or sample files.
    Synth {
        #[arg(long, default_value_t = 10)]
        domains: u16,
        #[arg(long, default_value_t = 12)]
        per_domain: usize,
        #[arg(long, default_value_t = 0.5)]
        fall_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SynthFormat::Samples)]
        format: SynthFormat,
        /// Sample dimensions: `full` is 500×60 via the stream pipeline,
        /// `reduced` is a small matrix for quick experiments.
        #[arg(long, value_enum, default_value_t = Profile::Full)]
        profile: Profile,
        /// Rows of a reduced sample.
        #[arg(long, default_value_t = 10)]
        rows: usize,
        /// Columns of a reduced sample.
        #[arg(long, default_value_t = 6)]
        cols: usize,
        /// Time span of a reduced sample in seconds.
        #[arg(long, default_value_t = 2.0)]
        duration_s: f64,
    },
    /// Convert a raw record stream into preprocessed sample files.
    Ingest {
        /// Input `.csir` stream.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path: a `.csiw` file for a single window, otherwise a
        /// prefix that expands to `<prefix>_w<k>.csiw`.
        #[arg(long)]
        out: PathBuf,
        /// Label for every produced sample (0 = no fall, 1 = fall).
        #[arg(long)]
        label: u8,
        #[arg(long)]
        domain_id: u16,
    },
    /// Run a leave-one-domain-out experiment from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for reports, telemetry, and checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved checkpoints on a sample directory.
    Eval {
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Directory of `.csiw` samples.
        #[arg(long)]
        data: PathBuf,
        /// Output report file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient checks and report each op.
    Gradcheck {
        /// Number of seeds per op.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Pretty-print a report and/or render a sample heatmap.
    Report {
        /// A `report.jsonl` or `report.txt` produced by `train` or `eval`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Sample file to render as a grayscale portable pixmap.
        #[arg(long, requires = "heatmap_out")]
        heatmap_sample: Option<PathBuf>,
        #[arg(long, requires = "heatmap_sample")]
        heatmap_out: Option<PathBuf>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    fail(2, format!("{}: {e}", path.display()))
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Failure {
        let code = if matches!(e, IngestError::Io(_)) { 2 } else { 1 };
        fail(code, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Failure {
        let code = match &e {
            ModelError::Io(_) | ModelError::Checkpoint(CheckpointError::Io(_)) => 2,
            _ => 1,
        };
        fail(code, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Failure {
        let code = match &e {
            HarnessError::Config { .. } | HarnessError::Io { .. } => 2,
            HarnessError::Ingest(IngestError::Io(_)) => 2,
            HarnessError::Model(ModelError::Io(_)) => 2,
            HarnessError::Model(ModelError::Checkpoint(CheckpointError::Io(_))) => 2,
            _ => 1,
        };
        fail(code, e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli.command) {
        eprintln!("error: {}", f.message);
        process::exit(f.code);
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth {
            domains,
            per_domain,
            fall_fraction,
            seed,
            out,
            format,
            profile,
            rows,
            cols,
            duration_s,
        } => cmd_synth(
            domains,
            per_domain,
            fall_fraction,
            seed,
            &out,
            format,
            profile,
            rows,
            cols,
            duration_s,
        ),
        Command::Ingest {
            input,
            out,
            label,
            domain_id,
        } => cmd_ingest(&input, &out, label, domain_id),
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Eval {
            checkpoint_dir,
            data,
            out,
        } => cmd_eval(&checkpoint_dir, &data, &out),
        Command::Gradcheck { seeds } => cmd_gradcheck(seeds),
        Command::Report {
            report,
            heatmap_sample,
            heatmap_out,
        } => cmd_report(report.as_deref(), heatmap_sample.as_deref(), heatmap_out.as_deref()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    domains: u16,
    per_domain: usize,
    fall_fraction: f64,
    seed: u64,
    out: &Path,
    format: SynthFormat,
    profile: Profile,
    rows: usize,
    cols: usize,
    duration_s: f64,
) -> Result<(), Failure> {
    if domains == 0 || per_domain == 0 {
        return Err(fail(1, "need at least one domain and one sample per domain"));
    }
    let params: Vec<_> = (0..domains).map(synth::default_domain_params).collect();
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;

    match format {
        SynthFormat::Records => {
            for (d, p) in params.iter().enumerate() {
                for j in 0..per_domain {
                    let label = synth::label_for(j, per_domain, fall_fraction);
                    let stream_seed = synth::derive_seed(seed, &[d as u64, j as u64]);
                    let records = synth::generate_stream(
                        p,
                        label,
                        ingest::WINDOW_SECS as f64,
                        stream_seed,
                    );
                    let path = out.join(format!("d{d:03}_s{j:03}_l{label}.csir"));
                    fs::write(&path, ingest::encode_record_stream(&records))
                        .map_err(|e| io_failure(&path, e))?;
                }
            }
            println!(
                "wrote {} record streams to {}",
                domains as usize * per_domain,
                out.display()
            );
        }
        SynthFormat::Samples => {
            let samples = match profile {
                Profile::Full => {
                    synth::generate_dataset(&params, per_domain, fall_fraction, seed)
                }
                Profile::Reduced => synth::generate_matrix_dataset(
                    &params,
                    per_domain,
                    fall_fraction,
                    rows,
                    cols,
                    duration_s,
                    seed,
                ),
            }
            .map_err(|e| fail(1, e.to_string()))?;
            for (i, sample) in samples.iter().enumerate() {
                let path = out.join(format!(
                    "d{:03}_s{:03}.csiw",
                    sample.domain_id(),
                    i % per_domain
                ));
                let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
                ingest::write_sample(BufWriter::new(file), sample)?;
            }
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
    }
    Ok(())
}

fn cmd_ingest(input: &Path, out: &Path, label: u8, domain_id: u16) -> Result<(), Failure> {
    let bytes = fs::read(input).map_err(|e| io_failure(input, e))?;
    let records = ingest::parse_record_stream(&bytes)?;
    let windows = ingest::build_windows(&records, ingest::RATE_HZ)?;
    if windows.is_empty() {
        return Err(fail(1, "stream too short for a single window"));
    }

    let single_file = out.extension().is_some_and(|e| e == "csiw");
    if single_file && windows.len() != 1 {
        return Err(fail(
            1,
            format!(
                "stream yields {} windows; pass a prefix instead of a .csiw path",
                windows.len()
            ),
        ));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    for (k, window) in windows.iter().enumerate() {
        let matrix = ingest::downsample(window, ingest::DOWNSAMPLE_FACTOR)?;
        let sample = ingest::Sample::new(matrix, label, domain_id)?;
        let path = if single_file {
            out.to_path_buf()
        } else {
            out.with_file_name(format!(
                "{}_w{k:03}.csiw",
                out.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
            ))
        };
        let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        ingest::write_sample(BufWriter::new(file), &sample)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(config: &Path, out: &Path) -> Result<(), Failure> {
    let report = harness::run_experiment(config, out)?;
    print!("{}", harness::report_text(&report));
    println!("outputs written to {}", out.display());
    Ok(())
}

fn cmd_eval(checkpoint_dir: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(checkpoint_dir)
        .map_err(|e| io_failure(checkpoint_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "adaw"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(fail(1, format!("no .adaw checkpoints in {}", checkpoint_dir.display())));
    }
    let mut states = Vec::with_capacity(paths.len());
    for path in &paths {
        let (state, _) = models::load_model(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        states.push((name, state));
    }
    let samples = harness::load_samples_dir(data)?;
    let eval = harness::evaluate_checkpoints(&states, &samples)?;
    let text = harness::checkpoint_eval_text(&eval);
    fs::write(out, &text).map_err(|e| io_failure(out, e))?;
    print!("{text}");
    Ok(())
}

fn gradcheck_line(report: &GradCheckReport) -> String {
    format!(
        "{:<24} seed={} coords={:<4} skipped={:<3} max_rel_error={:.3e} tolerance={:.0e} {}",
        report.op,
        report.seed,
        report.coords,
        report.skipped,
        report.max_rel_error,
        report.tolerance,
        if report.passed() { "ok" } else { "FAIL" }
    )
}

fn cmd_gradcheck(seeds: u64) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(fail(2, "need at least one seed"));
    }
    let seed_list: Vec<u64> = (1..=seeds).collect();
    let mut reports = grad_check_suite(&seed_list);
    for config in [
        ModelConfig::Cnn(CnnConfig::reduced()),
        ModelConfig::Lstm(LstmConfig::reduced()),
    ] {
        for seed in &seed_list {
            reports.push(
                models::embed_input_grad_check(config, *seed)
                    .map_err(|e| fail(1, e.to_string()))?,
            );
        }
    }
    let mut failures = 0;
    for report in &reports {
        println!("{}", gradcheck_line(report));
        if !report.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(fail(1, format!("{failures} of {} checks failed", reports.len())));
    }
    println!("all {} checks passed", reports.len());
    Ok(())
}

fn cmd_report(
    report: Option<&Path>,
    heatmap_sample: Option<&Path>,
    heatmap_out: Option<&Path>,
) -> Result<(), Failure> {
    if report.is_none() && heatmap_sample.is_none() {
        return Err(fail(2, "nothing to do: pass --report and/or --heatmap-sample"));
    }
    if let Some(path) = report {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        match parse_jsonl(&text) {
            Some(values) => {
                for v in values {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&v).expect("values re-serialize")
                    );
                }
            }
            None => print!("{text}"),
        }
    }
    if let (Some(sample_path), Some(out_path)) = (heatmap_sample, heatmap_out) {
        let file = fs::File::open(sample_path).map_err(|e| io_failure(sample_path, e))?;
        let sample = ingest::read_sample(BufReader::new(file))?;
        let out = fs::File::create(out_path).map_err(|e| io_failure(out_path, e))?;
        harness::write_heatmap_ppm(BufWriter::new(out), sample.data())
            .map_err(|e| io_failure(out_path, e))?;
        println!(
            "wrote {}×{} heatmap to {}",
            sample.rows(),
            sample.cols(),
            out_path.display()
        );
    }
    Ok(())
}

fn parse_jsonl(text: &str) -> Option<Vec<serde_json::Value>> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return None;
    }
    lines.iter().map(|l| serde_json::from_str(l).ok()).collect()
}
