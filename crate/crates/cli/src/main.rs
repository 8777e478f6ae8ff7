//! `voxreport`: synthesis, ROI prompting, metric batches, and template
//! reports over VVL1 volumes.
//!
//! Exit codes are part of the interface: 0 success, 2 input or format
//! problem (also used when individual batch rows fail), 3 synthesis
//! failure, 4 bad mode arguments (missing anomaly mask or prompts, unknown
//! structure names).

mod ops;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ops::{ReportArgs, RoiArgs, SegMetricsArgs, SynthArgs, TextMetricsArgs};

#[derive(Parser)]
#[command(name = "voxreport", version, about = "Volumetric lesion synthesis, ROI prompts, segmentation and text metrics, and template-based reporting")]
struct Cli {
    /// Master seed; all randomness in a run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Grow seeded synthetic lesions inside an atlas-labelled volume.
    Synth(SynthArgs),
    /// Derive regional prompts from an anomaly mask.
    Roi(RoiArgs),
    /// Score prediction/ground-truth mask pairs listed in a manifest.
    SegMetrics(SegMetricsArgs),
    /// Score candidate report lines against references.
    TextMetrics(TextMetricsArgs),
    /// Produce a report with the deterministic stub describer.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level.filter()).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let outcome = match &cli.command {
        Command::Synth(args) => ops::cmd_synth(args, cli.seed),
        Command::Roi(args) => ops::cmd_roi(args),
        Command::SegMetrics(args) => ops::cmd_seg_metrics(args),
        Command::TextMetrics(args) => ops::cmd_text_metrics(args),
        Command::Report(args) => ops::cmd_report(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
