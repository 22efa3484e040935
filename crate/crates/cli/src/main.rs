use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zsbench_cli::config::BenchmarkConfig;
use zsbench_cli::report::{render, ReportFormat};
use zsbench_cli::runner::{parse_records, render_records, run_benchmark};
use zsbench_core::io::save_dataset;
use zsbench_core::splitgen::{audit_overlap, make_synthetic, PretrainClassList, SyntheticConfig};
use zsbench_core::SplitSpec;

/// Zero-shot learning benchmark: train methods, score them, rank them.
#[derive(Parser)]
#[command(name = "zsbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the benchmark described by a config file.
    Run {
        /// Path to the benchmark config (JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Render results produced by `run`.
    Report {
        /// Path to a results.json file.
        #[arg(long)]
        input: PathBuf,
        /// Output format.
        #[arg(long, value_parser = parse_format)]
        format: ReportFormat,
    },
    /// Check a split for pretraining leakage and class overlap.
    Audit {
        /// Path to a splits.json file.
        #[arg(long)]
        split: PathBuf,
        /// Class names, one per line; line i names class id i.
        #[arg(long)]
        names: PathBuf,
        /// Pretraining class list, one name per line.
        #[arg(long)]
        pretrain: PathBuf,
    },
    /// Generate a synthetic dataset and write it to a directory.
    Synth {
        /// Path to a synthetic dataset config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Directory to write features/labels/embeddings/split into.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    match s {
        "table" => Ok(ReportFormat::Table),
        "ranks" => Ok(ReportFormat::Ranks),
        "raw" => Ok(ReportFormat::Raw),
        _ => Err(format!("unknown format {s:?} (expected table, ranks, or raw)")),
    }
}

const EXIT_OK: u8 = 0;
const EXIT_FAILURES: u8 = 1;
const EXIT_BAD_INPUT: u8 = 2;

fn read_text(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>, String> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

fn cmd_run(config_path: &Path) -> u8 {
    let text = match read_text(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let cfg = match BenchmarkConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let outcome = match run_benchmark(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    if let Err(e) = fs::create_dir_all(&cfg.output_dir) {
        eprintln!("config error: creating {}: {e}", cfg.output_dir.display());
        return EXIT_BAD_INPUT;
    }
    let out_path = cfg.output_dir.join("results.json");
    if let Err(e) = fs::write(&out_path, render_records(&outcome.records)) {
        eprintln!("config error: writing {}: {e}", out_path.display());
        return EXIT_BAD_INPUT;
    }
    println!("wrote {} ({} records)", out_path.display(), outcome.records.len());
    for failure in &outcome.failures {
        eprintln!("cell failed: {failure}");
    }
    if outcome.failures.is_empty() {
        EXIT_OK
    } else {
        eprintln!("{} cell failure(s)", outcome.failures.len());
        EXIT_FAILURES
    }
}

fn cmd_report(input: &Path, format: ReportFormat) -> u8 {
    let text = match read_text(input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let records = match parse_records(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    match render(&records, format) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BAD_INPUT
        }
    }
}

fn cmd_audit(split_path: &Path, names_path: &Path, pretrain_path: &Path) -> u8 {
    let split: SplitSpec = match read_text(split_path).and_then(|t| {
        serde_json::from_str(&t).map_err(|e| format!("parsing {}: {e}", split_path.display()))
    }) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let names = match read_lines(names_path) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let pretrain = match PretrainClassList::load(pretrain_path) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    match audit_overlap(&split, &names, &pretrain) {
        Ok(violations) if violations.is_empty() => {
            println!("no violations");
            EXIT_OK
        }
        Ok(violations) => {
            for v in &violations {
                println!("{v}");
            }
            eprintln!("{} violation(s)", violations.len());
            EXIT_FAILURES
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BAD_INPUT
        }
    }
}

fn cmd_synth(config_path: &Path, out_dir: &Path) -> u8 {
    let cfg: SyntheticConfig = match read_text(config_path).and_then(|t| {
        serde_json::from_str(&t).map_err(|e| format!("parsing {}: {e}", config_path.display()))
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let bundle = match make_synthetic(&cfg) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    if let Err(e) = save_dataset(&bundle, out_dir) {
        eprintln!("error: {e}");
        return EXIT_FAILURES;
    }
    println!(
        "wrote dataset to {} ({} images, {} classes)",
        out_dir.display(),
        bundle.n_images(),
        bundle.class_embeddings().n_classes()
    );
    EXIT_OK
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Report { input, format } => cmd_report(input, *format),
        Command::Audit { split, names, pretrain } => cmd_audit(split, names, pretrain),
        Command::Synth { config, out } => cmd_synth(config, out),
    };
    ExitCode::from(code)
}
