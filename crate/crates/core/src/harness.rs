//! Experiment orchestration: dataset caching, the three training
//! experiments, the end-to-end link benchmark, and report emission.
//!
//! Output layout under the chosen root:
//!
//! ```text
//! out/
//!   datasets/<hash>/        cached images + manifest.csv + spec.txt
//!   ex1|ex2|ex3/            weights.bin curves.csv report.csv timing.csv snapshot.cfg
//!   link/                   captures/ sync_report.csv snapshot.cfg
//!   summary.csv             per-experiment metrics plus the macro average
//! ```
//!
//! Everything except the `timing.csv` files and the timing columns
//! (`seconds`, `T_ms`, `T_cnn_ms`, `gain`) is a pure function of the
//! settings snapshot and reproduces byte-identically.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::{BitsError, Bitstream};
use crate::channel::{build_schedule, capture_stream, write_captures, ChannelError};
use crate::cnn::model::{Model, ModelError, ModelSpec};
use crate::cnn::train::{predict_set, train, TrainError, TrainReport};
use crate::cnn::weights::{load_weights, save_weights, WeightsError};
use crate::codec::{segment_stream, CodecError, FrameKind};
use crate::config::Settings;
use crate::dataset::{
    generate_dataset, split_dataset, DatasetError, DatasetManifest, DatasetSpec, ExperimentId,
    ExperimentSpec, Split,
};
use crate::metrics::{confusion, macro_average, metrics, ConfusionMatrix, Metrics, MetricsError};
use crate::seeds;
use crate::sync::{align_and_recover, dedup_stream, detect_overhead_with, SyncError, SyncReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub train_report: TrainReport,
    pub mean_inference_ms: f64,
    pub seed: u64,
}

/// The dataset spec implied by the settings: all four classes.
pub fn dataset_spec(settings: &Settings) -> DatasetSpec {
    DatasetSpec {
        per_class_count: settings.per_class_count,
        classes: FrameKind::ALL.to_vec(),
        augment: settings.augment.clone(),
        seed: settings.seed,
        codec: settings.codec.clone(),
    }
}

/// Cache directory for the dataset implied by the settings, keyed by a
/// content hash of the generation spec, split fractions and split seed.
pub fn dataset_cache_dir(out_root: &Path, settings: &Settings) -> PathBuf {
    let spec = dataset_spec(settings);
    let key = format!(
        "{}fractions=({},{},{})\nsplit_seed={}\n",
        spec.canonical_string(),
        settings.fractions.0,
        settings.fractions.1,
        settings.fractions.2,
        settings.seed
    );
    let digest = Sha256::digest(key.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    out_root.join("datasets").join(hex)
}

/// Returns the cached split dataset for these settings, generating it on
/// first use.
pub fn ensure_dataset(settings: &Settings, out_root: &Path) -> Result<DatasetManifest, HarnessError> {
    let dir = dataset_cache_dir(out_root, settings);
    if dir.join("manifest.csv").exists() {
        return Ok(DatasetManifest::load(&dir)?);
    }
    let spec = dataset_spec(settings);
    let manifest = generate_dataset(&spec, &dir)?;
    let split = split_dataset(&manifest, settings.fractions, settings.seed)?;
    split.save()?;
    std::fs::write(dir.join("spec.txt"), spec.canonical_string())?;
    Ok(split)
}

/// The classifier architecture for these settings' frame size.
pub fn model_spec(settings: &Settings) -> ModelSpec {
    ModelSpec {
        input_height: settings.codec.frame_px,
        input_width: settings.codec.frame_px,
        ..ModelSpec::default()
    }
}

/// Writes `snapshot.cfg` with every effective setting; replaying it with the
/// same command reproduces the run's deterministic outputs byte-identically.
pub fn write_snapshot(dir: &Path, settings: &Settings) -> Result<(), HarnessError> {
    std::fs::write(dir.join("snapshot.cfg"), settings.snapshot())?;
    Ok(())
}

/// Generates (or reuses) the dataset, trains the experiment's model,
/// evaluates the test split, and persists weights, curves, metrics and the
/// config snapshot under `out_root/<experiment>/`.
pub fn run_experiment(
    id: ExperimentId,
    settings: &Settings,
    out_root: &Path,
) -> Result<(ExperimentReport, Model), HarnessError> {
    let manifest = ensure_dataset(settings, out_root)?;
    let experiment = ExperimentSpec::for_id(id);
    let (model, train_report) = train(&model_spec(settings), &manifest, &experiment, &settings.train_config())?;

    let (report, total_s) = {
        let started = Instant::now();
        let report = evaluate_test_split(id, &model, &manifest, &experiment, settings, &train_report)?;
        (report, started.elapsed().as_secs_f64())
    };

    let dir = out_root.join(id.name());
    std::fs::create_dir_all(&dir)?;
    save_weights(&model, &dir.join("weights.bin"))?;
    let mut curves = BufWriter::new(File::create(dir.join("curves.csv"))?);
    train_report.write_csv(&mut curves)?;
    curves.flush()?;
    write_report_csv(&dir.join("report.csv"), std::slice::from_ref(&report), None)?;
    let mut timing = BufWriter::new(File::create(dir.join("timing.csv"))?);
    writeln!(timing, "mean_inference_ms,eval_seconds")?;
    writeln!(timing, "{:.4},{:.3}", report.mean_inference_ms, total_s)?;
    timing.flush()?;
    write_snapshot(&dir, settings)?;
    Ok((report, model))
}

/// Confusion and metrics of a trained model on the test split, with the
/// amortized per-image inference time.
pub fn evaluate_test_split(
    id: ExperimentId,
    model: &Model,
    manifest: &DatasetManifest,
    experiment: &ExperimentSpec,
    settings: &Settings,
    train_report: &TrainReport,
) -> Result<ExperimentReport, HarnessError> {
    let test_set = manifest.load_split(experiment, Split::Test)?;
    let started = Instant::now();
    let probs = predict_set(model, &test_set, settings.batch_size)?;
    let mean_inference_ms = if test_set.is_empty() {
        0.0
    } else {
        started.elapsed().as_secs_f64() * 1e3 / test_set.len() as f64
    };
    let predictions: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let labels: Vec<bool> = test_set.labels().iter().map(|&y| y == 1.0).collect();
    let cm = confusion(&labels, &predictions)?;
    Ok(ExperimentReport {
        id,
        metrics: metrics(&cm)?,
        confusion: cm,
        train_report: train_report.clone(),
        mean_inference_ms,
        seed: settings.seed,
    })
}

/// Evaluates previously trained weights on the test split without training.
pub fn eval_experiment(
    id: ExperimentId,
    settings: &Settings,
    weights_path: &Path,
    out_root: &Path,
) -> Result<ExperimentReport, HarnessError> {
    let manifest = ensure_dataset(settings, out_root)?;
    let experiment = ExperimentSpec::for_id(id);
    let model = load_weights(weights_path)?;
    let report = evaluate_test_split(
        id,
        &model,
        &manifest,
        &experiment,
        settings,
        &TrainReport::default(),
    )?;
    let dir = out_root.join(id.name());
    std::fs::create_dir_all(&dir)?;
    write_report_csv(&dir.join("eval_report.csv"), std::slice::from_ref(&report), None)?;
    write_snapshot(&dir, settings)?;
    Ok(report)
}

/// Writes per-experiment metric rows, optionally followed by an average row.
pub fn write_report_csv(
    path: &Path,
    reports: &[ExperimentReport],
    average: Option<&Metrics>,
) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "experiment,precision,recall,f1,accuracy,degenerate,tp,fp,fn,tn,seed")?;
    for r in reports {
        writeln!(
            w,
            "{},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{},{}",
            r.id.name(),
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.f1,
            r.metrics.accuracy,
            r.metrics.degenerate,
            r.confusion.true_pos,
            r.confusion.false_pos,
            r.confusion.false_neg,
            r.confusion.true_neg,
            r.seed
        )?;
    }
    if let Some(avg) = average {
        writeln!(
            w,
            "average,{:.4},{:.4},{:.4},{:.4},{},,,,,",
            avg.precision, avg.recall, avg.f1, avg.accuracy, avg.degenerate
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Deterministic printable text that fills exactly `data_frames` frames.
pub fn link_text(settings: &Settings, data_frames: usize) -> String {
    let capacity = settings.codec.capacity(FrameKind::DataQr1);
    let chars = data_frames * capacity / 8;
    let mut rng =
        ChaCha8Rng::seed_from_u64(seeds::derive(settings.seed, seeds::stream::LINK_TEXT, 0));
    (0..chars).map(|_| (32 + rng.gen_range(0..95u8)) as char).collect()
}

/// Runs the full receive chain over a simulated link: schedule, capture,
/// dedup, classify, lock, recover. Captures and the sync report are
/// persisted under `out_root/link/`.
pub fn run_link_benchmark(
    settings: &Settings,
    model: &Model,
    text: &str,
    out_root: &Path,
) -> Result<SyncReport, HarnessError> {
    let bits = Bitstream::from_text(text)?;
    let capacity = settings.codec.capacity(FrameKind::DataQr1);
    let payloads = segment_stream(&bits, capacity, FrameKind::DataQr1)?;
    let schedule = build_schedule(&payloads, &settings.link, &settings.codec, settings.seed)?;
    let captures =
        capture_stream(&schedule, &settings.link_channel(), settings.link.cam_fps, settings.seed)?;

    let dir = out_root.join("link");
    std::fs::create_dir_all(&dir)?;
    write_captures(&dir.join("captures"), &captures)?;

    let deduped = dedup_stream(&captures, settings.dedup_threshold);

    // Classify once, measuring per-frame inference time.
    let started = Instant::now();
    let probs: Vec<f32> = deduped
        .iter()
        .map(|c| model.predict_image(&c.image))
        .collect::<Result<_, _>>()?;
    let t_cnn_s = if deduped.is_empty() {
        0.0
    } else {
        started.elapsed().as_secs_f64() / deduped.len() as f64
    };
    let mut next = probs.iter();
    let overhead_indices = detect_overhead_with(&deduped, |_| *next.next().expect("one prob per frame"));

    let report = align_and_recover(&deduped, &overhead_indices, &settings.codec, bits.len(), Some(&bits));
    // Full per-frame cost = classify + decode + bookkeeping; classification
    // alone is what overhead frames pay.
    let t_full_s = report.t_full_s + t_cnn_s;
    let report = if t_full_s > 0.0 { report.with_timing(t_full_s, t_cnn_s)? } else { report };

    let mut csv = BufWriter::new(File::create(dir.join("sync_report.csv"))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;
    write_snapshot(&dir, settings)?;
    Ok(report)
}

/// Runs all three experiments plus the link benchmark; writes `summary.csv`
/// with the macro average. Returns the per-experiment reports, the average,
/// and the sync report.
pub fn benchmark_all(
    settings: &Settings,
    out_root: &Path,
) -> Result<(Vec<ExperimentReport>, Metrics, SyncReport), HarnessError> {
    let mut reports = Vec::new();
    let mut ex3_model = None;
    for id in ExperimentId::ALL {
        let (report, model) = run_experiment(id, settings, out_root)?;
        reports.push(report);
        if id == ExperimentId::Ex3 {
            ex3_model = Some(model);
        }
    }
    let all: Vec<Metrics> = reports.iter().map(|r| r.metrics).collect();
    let average = macro_average(&all)?;
    write_report_csv(&out_root.join("summary.csv"), &reports, Some(&average))?;
    write_snapshot(out_root, settings)?;
    let model = ex3_model.expect("Ex3 always runs");
    let text = link_text(settings, settings.link_data_frames);
    let sync = run_link_benchmark(settings, &model, &text, out_root)?;
    Ok((reports, average, sync))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_tracks_spec_changes() {
        let root = Path::new("/tmp/out");
        let a = dataset_cache_dir(root, &Settings::default());
        let mut other = Settings::default();
        other.per_class_count += 1;
        let b = dataset_cache_dir(root, &other);
        assert_ne!(a, b);
        assert_eq!(a, dataset_cache_dir(root, &Settings::default()));
    }

    #[test]
    fn link_text_is_deterministic_and_fills_frames() {
        let settings = Settings::default();
        let text = link_text(&settings, 20);
        assert_eq!(text, link_text(&settings, 20));
        assert_eq!(text.len(), 20 * 382 / 8);
        assert!(text.chars().all(|c| (' '..='~').contains(&c)));
    }
}
