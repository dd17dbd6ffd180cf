use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mtl_core::harness::{bench_weighting, output_dir, run_experiment, ExperimentConfig};
use mtl_core::taskdata::synth_gaussian;

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "mtl", about = "Compare multi-task loss weighting schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of fine classes.
        #[arg(long)]
        fine: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.35)]
        spread: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment matrix described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Time the weight computations and print a CSV report.
    Bench {
        #[arg(long)]
        tasks: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen {
            seed,
            fine,
            per_class,
            dim,
            spread,
            out,
        } => {
            let ds = match synth_gaussian(seed, fine, per_class, dim, spread) {
                Ok(ds) => ds,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let mut buf = Vec::new();
            ds.write_csv(&mut buf).expect("write to memory");
            if let Err(e) = fs::write(&out, buf) {
                return fail(EXIT_CONFIG, format!("{}: {e}", out.display()));
            }
            println!(
                "wrote {}: m={} d={} C_fine={}",
                out.display(),
                ds.len(),
                ds.dim(),
                ds.n_fine
            );
            ExitCode::SUCCESS
        }
        Command::Run { config, out, jobs } => {
            let raw = match fs::read_to_string(&config) {
                Ok(raw) => raw,
                Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", config.display())),
            };
            let cfg = match ExperimentConfig::from_json(&raw) {
                Ok(cfg) => cfg,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let dir = match output_dir(&cfg, out) {
                Ok(dir) => dir,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let summary = match run_experiment(&cfg, &raw, &dir, jobs) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            for (spec, err) in summary.failures() {
                eprintln!("run {} failed: {err}", spec.file_stem());
            }
            print!("{}", summary.table.to_markdown());
            if summary.all_failed() {
                return fail(EXIT_ALL_FAILED, "every run failed");
            }
            ExitCode::SUCCESS
        }
        Command::Bench { tasks, iters, seed } => match bench_weighting(tasks, iters, seed) {
            Ok(report) => {
                print!("{}", report.to_csv());
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_CONFIG, e),
        },
    }
}
