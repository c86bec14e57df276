//! End-to-end screen-to-camera visible-light link simulator.
//!
//! A display shows barcode-style frames; a camera samples them at its own
//! rate; a small from-scratch CNN classifies each captured frame so the
//! receiver can identify payloads, reject foreign barcodes, and lock onto
//! periodic overhead frames for synchronization.
//!
//! Modules:
//! * [`codec`] — bitstream to cell-grid frame images and back
//! * [`channel`] — display schedule, distortions, camera sampling
//! * [`dataset`] — labelled image generation, splits, loading
//! * [`cnn`] — tensors, the six-layer model, backprop, Adam, training
//! * [`sync`] — dedup, overhead detection, stream recovery, system gain
//! * [`metrics`] — confusion-derived scores
//! * [`harness`] — experiment orchestration and report emission

pub mod bits;
pub mod channel;
pub mod cnn;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod seeds;
pub mod sync;

pub use bits::Bitstream;
pub use channel::{
    build_schedule, capture_stream, distort, sample_rx, CapturedFrame, ChannelParams, LinkConfig,
    TxSchedule,
};
pub use cnn::{Model, ModelSpec, Tensor, TrainConfig, TrainReport};
pub use codec::{
    decode_frame, encode_frame, frames_for_text, make_overhead_frame, segment_stream, CodecConfig,
    FrameKind, FramePayload,
};
pub use config::Settings;
pub use dataset::{
    generate_dataset, load_batch, split_dataset, DatasetManifest, DatasetSpec, ExperimentId,
    ExperimentSpec, Split,
};
pub use harness::{benchmark_all, run_experiment, run_link_benchmark, ExperimentReport};
pub use image::FrameImage;
pub use metrics::{confusion, macro_average, metrics, ConfusionMatrix, Metrics};
pub use sync::{align_and_recover, dedup_stream, detect_overhead, system_gain, SyncReport};
