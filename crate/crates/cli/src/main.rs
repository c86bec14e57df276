//! `s2c`: command-line front end for the screen-to-camera link simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use s2c_core::cnn::weights::load_weights;
use s2c_core::config::Settings;
use s2c_core::dataset::ExperimentId;
use s2c_core::harness::{
    benchmark_all, ensure_dataset, eval_experiment, link_text, run_experiment,
    run_link_benchmark, write_snapshot,
};

#[derive(Parser)]
#[command(name = "s2c", version, about = "Screen-to-camera visible-light link simulator")]
struct Cli {
    /// Master seed; overrides the config file's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Flat key=value config file; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for datasets, weights and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render, distort, split and index the four-class image dataset.
    GenerateDataset,
    /// Train the classifier for one experiment and persist weights + curves.
    Train {
        #[arg(long, value_enum)]
        experiment: Experiment,
    },
    /// Evaluate saved weights on an experiment's test split.
    Eval {
        #[arg(long, value_enum)]
        experiment: Experiment,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Simulate the asynchronous link end to end with a trained model.
    SimulateLink {
        /// Trained overhead-detection (ex3) weights.
        #[arg(long)]
        weights: PathBuf,
        /// Text to transmit; defaults to seeded text filling
        /// `link_data_frames` frames.
        #[arg(long)]
        text: Option<String>,
    },
    /// Run all three experiments, the macro average, and the link benchmark.
    BenchmarkAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Ex1,
    Ex2,
    Ex3,
}

impl From<Experiment> for ExperimentId {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Ex1 => ExperimentId::Ex1,
            Experiment::Ex2 => ExperimentId::Ex2,
            Experiment::Ex3 => ExperimentId::Ex3,
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut settings = Settings::load(cli.config.as_deref()).context("loading config")?;
    if let Some(seed) = cli.seed {
        settings.seed = seed;
    }
    settings.codec.validate().context("codec config")?;
    settings.link.validate().context("link config")?;
    std::fs::create_dir_all(&cli.out).context("creating output directory")?;

    match cli.command {
        Command::GenerateDataset => {
            let manifest = ensure_dataset(&settings, &cli.out)?;
            write_snapshot(&manifest.root, &settings)?;
            let counts = manifest.split_counts();
            println!(
                "dataset: {} records ({}) at {}",
                manifest.records.len(),
                counts
                    .iter()
                    .map(|(tag, n)| format!("{tag}={n}"))
                    .collect::<Vec<_>>()
                    .join(", "),
                manifest.root.display()
            );
        }
        Command::Train { experiment } => {
            let id: ExperimentId = experiment.into();
            let (report, _) = run_experiment(id, &settings, &cli.out)?;
            let m = report.metrics;
            println!(
                "{}: precision {:.4}, recall {:.4}, f1 {:.4}, accuracy {:.4} ({:.2} ms/image)",
                id.name(),
                m.precision,
                m.recall,
                m.f1,
                m.accuracy,
                report.mean_inference_ms
            );
            println!("artifacts: {}", cli.out.join(id.name()).display());
        }
        Command::Eval { experiment, weights } => {
            let id: ExperimentId = experiment.into();
            let report = eval_experiment(id, &settings, &weights, &cli.out)?;
            let m = report.metrics;
            println!(
                "{} (eval): precision {:.4}, recall {:.4}, f1 {:.4}, accuracy {:.4}",
                id.name(),
                m.precision,
                m.recall,
                m.f1,
                m.accuracy
            );
        }
        Command::SimulateLink { weights, text } => {
            let model = load_weights(&weights).context("loading weights")?;
            let text = text.unwrap_or_else(|| link_text(&settings, settings.link_data_frames));
            let report = run_link_benchmark(&settings, &model, &text, &cli.out)?;
            println!(
                "link: locked={}, overhead at {:?}, {} bits recovered, {} bit errors, \
                 T {:.3} ms, T_cnn {:.3} ms, gain {:.4}",
                report.locked,
                report.detected_overhead_indices,
                report.recovered_bits.len(),
                report.bit_errors.map(|e| e.to_string()).unwrap_or_else(|| "?".into()),
                report.t_full_s * 1e3,
                report.t_cnn_s * 1e3,
                report.gain
            );
        }
        Command::BenchmarkAll => {
            let (reports, average, sync) = benchmark_all(&settings, &cli.out)?;
            for r in &reports {
                println!(
                    "{}: precision {:.4}, recall {:.4}, f1 {:.4}, accuracy {:.4}",
                    r.id.name(),
                    r.metrics.precision,
                    r.metrics.recall,
                    r.metrics.f1,
                    r.metrics.accuracy
                );
            }
            println!(
                "average: precision {:.4}, recall {:.4}, f1 {:.4}, accuracy {:.4}",
                average.precision, average.recall, average.f1, average.accuracy
            );
            println!(
                "link: locked={}, bit errors {}, gain {:.4}",
                sync.locked,
                sync.bit_errors.map(|e| e.to_string()).unwrap_or_else(|| "?".into()),
                sync.gain
            );
            println!("summary: {}", cli.out.join("summary.csv").display());
        }
    }
    Ok(())
}
