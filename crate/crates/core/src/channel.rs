//! Asynchronous screen-to-camera channel simulation.
//!
//! The transmitter displays frames back to back at `tx_data_fps` while the
//! camera samples at its own `cam_fps`, so each displayed frame is captured
//! many times (or, for fast transmitters, skipped). A capture integrates a
//! rectangular exposure window: when the window straddles a frame boundary
//! the two neighboring frames are blended by their overlap fractions. Each
//! captured image then passes through a photometric/geometric distortion
//! pipeline (rotate, crop, blur, brightness, additive Gaussian noise), all
//! driven by an explicit seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::codec::{encode_frame, make_overhead_frame, CodecConfig, CodecError, FrameKind, FramePayload};
use crate::image::{FrameImage, ImageError};
use crate::seeds;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("capture time {time_s} s outside schedule span [{start_s}, {end_s}) s")]
    OutOfStream { time_s: f64, start_s: f64, end_s: f64 },
    #[error("schedule has no entries")]
    EmptySchedule,
    #[error("invalid channel parameters: {reason}")]
    BadParams { reason: String },
    #[error("invalid link config: {reason}")]
    BadLink { reason: String },
    #[error("capture index file: {reason}")]
    IndexFormat { reason: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Physical link parameters (display, camera, cadence).
///
/// Distance, tilt and rotation angles are recorded for provenance but do not
/// act on the simulation; image-level distortions are configured separately
/// in [`ChannelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    pub tx_refresh_hz: f64,
    pub tx_data_fps: f64,
    pub cam_fps: f64,
    pub distance_cm: f64,
    pub tilt_deg: f64,
    pub rotation_deg: f64,
    /// Data frames between consecutive overhead frames.
    pub overhead_period: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            tx_refresh_hz: 120.0,
            tx_data_fps: 0.75,
            cam_fps: 60.0,
            distance_cm: 20.0,
            tilt_deg: 0.0,
            rotation_deg: 0.0,
            overhead_period: 10,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.tx_refresh_hz <= 0.0 || self.tx_data_fps <= 0.0 || self.cam_fps <= 0.0 {
            return Err(ChannelError::BadLink { reason: "all rates must be positive".into() });
        }
        if self.overhead_period == 0 {
            return Err(ChannelError::BadLink { reason: "overhead_period must be >= 1".into() });
        }
        Ok(())
    }

    /// Data-frame display period F in seconds.
    pub fn frame_period_s(&self) -> f64 {
        1.0 / self.tx_data_fps
    }
}

/// Distortion and sampling parameters of the capture path.
///
/// Ranges are sampled uniformly per image; a degenerate range pins the value.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Additive Gaussian noise std-dev on [0,1] intensities.
    pub noise_sigma: f32,
    pub blur_sigma_range: (f32, f32),
    pub rotation_range_deg: (f32, f32),
    /// Side-length fraction kept by the random crop, in (0, 1].
    pub crop_fraction_range: (f32, f32),
    pub brightness_delta_range: (f32, f32),
    /// Camera exposure window in seconds (rectangular pulse).
    pub exposure_s: f64,
    /// Samples per camera period (Q); 1 means one capture per camera tick.
    pub oversampling: u32,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            noise_sigma: 0.02,
            blur_sigma_range: (0.0, 0.0),
            rotation_range_deg: (0.0, 0.0),
            crop_fraction_range: (1.0, 1.0),
            brightness_delta_range: (0.0, 0.0),
            exposure_s: 1.0 / 120.0,
            oversampling: 1,
        }
    }
}

impl ChannelParams {
    /// A channel that passes images through untouched.
    pub fn identity() -> Self {
        Self { noise_sigma: 0.0, ..Self::default() }
    }

    /// Training-set augmentation defaults: mild rotation, crop, blur,
    /// brightness and sensor noise.
    pub fn augmentation_defaults() -> Self {
        Self {
            noise_sigma: 0.02,
            blur_sigma_range: (0.0, 1.2),
            rotation_range_deg: (-15.0, 15.0),
            crop_fraction_range: (0.8, 1.0),
            brightness_delta_range: (-0.1, 0.1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |reason: String| Err(ChannelError::BadParams { reason });
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma must be non-negative".into());
        }
        for (name, (lo, hi)) in [
            ("blur_sigma_range", self.blur_sigma_range),
            ("rotation_range_deg", self.rotation_range_deg),
            ("crop_fraction_range", self.crop_fraction_range),
            ("brightness_delta_range", self.brightness_delta_range),
        ] {
            if lo > hi || lo.is_nan() || hi.is_nan() {
                return bad(format!("{name} ({lo}, {hi}) is not a valid range"));
            }
        }
        let (clo, chi) = self.crop_fraction_range;
        if clo <= 0.0 || chi > 1.0 {
            return bad(format!("crop fractions ({clo}, {chi}) must lie in (0, 1]"));
        }
        if self.blur_sigma_range.0 < 0.0 {
            return bad("blur sigma must be non-negative".into());
        }
        if self.exposure_s < 0.0 {
            return bad("exposure must be non-negative".into());
        }
        if self.oversampling == 0 {
            return bad("oversampling must be >= 1".into());
        }
        Ok(())
    }
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Applies the distortion pipeline: rotate, crop-and-resize, Gaussian blur,
/// brightness shift, additive Gaussian noise. Pure function of
/// `(img, params, seed)`.
pub fn distort(img: &FrameImage, params: &ChannelParams, seed: u64) -> FrameImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draw all scalar parameters up front so the stream layout is fixed.
    let angle_deg = sample_range(&mut rng, params.rotation_range_deg);
    let crop_fraction = sample_range(&mut rng, params.crop_fraction_range);
    let blur_sigma = sample_range(&mut rng, params.blur_sigma_range);
    let brightness = sample_range(&mut rng, params.brightness_delta_range);

    let mut out = img.clone();
    if angle_deg != 0.0 {
        out = rotate_bilinear(&out, angle_deg as f64);
    }
    if crop_fraction < 1.0 {
        out = crop_and_resize(&out, crop_fraction, &mut rng);
    }
    if blur_sigma > 0.0 {
        out = gaussian_blur(&out, blur_sigma);
    }
    if brightness != 0.0 {
        for p in out.pixels_mut() {
            *p = (*p + brightness).clamp(0.0, 1.0);
        }
    }
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, params.noise_sigma).expect("sigma validated");
        for p in out.pixels_mut() {
            *p = (*p + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    out
}

/// Rotation about the image center with bilinear resampling; pixels sampled
/// from outside the source are white.
fn rotate_bilinear(img: &FrameImage, angle_deg: f64) -> FrameImage {
    let (w, h) = (img.width(), img.height());
    let theta = angle_deg.to_radians();
    let (sin_t, cos_t) = theta.sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Inverse map: rotate the output coordinate by -theta.
            let sx = cx + dx * cos_t + dy * sin_t;
            let sy = cy - dx * sin_t + dy * cos_t;
            pixels.push(bilinear_sample(img, sx, sy));
        }
    }
    FrameImage::from_pixels(w, h, pixels).expect("resampled pixels stay in range")
}

fn bilinear_sample(img: &FrameImage, x: f64, y: f64) -> f32 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
        return 1.0; // white background fill
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
}

/// Crops a random window of `fraction` of each side and resizes it back to
/// the original dimensions (corner-aligned bilinear).
fn crop_and_resize<R: Rng>(img: &FrameImage, fraction: f32, rng: &mut R) -> FrameImage {
    let (w, h) = (img.width(), img.height());
    let cw = ((w as f32 * fraction).round() as usize).clamp(1, w);
    let ch = ((h as f32 * fraction).round() as usize).clamp(1, h);
    let ox = rng.gen_range(0..=w - cw);
    let oy = rng.gen_range(0..=h - ch);
    if cw == w && ch == h {
        return img.clone();
    }
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = if h > 1 { oy as f64 + y as f64 * (ch - 1) as f64 / (h - 1) as f64 } else { oy as f64 };
        for x in 0..w {
            let sx =
                if w > 1 { ox as f64 + x as f64 * (cw - 1) as f64 / (w - 1) as f64 } else { ox as f64 };
            pixels.push(bilinear_sample(img, sx, sy));
        }
    }
    FrameImage::from_pixels(w, h, pixels).expect("resampled pixels stay in range")
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`, edge-clamped.
fn gaussian_blur(img: &FrameImage, sigma: f32) -> FrameImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    let denom = 2.0 * sigma * sigma;
    for i in -radius..=radius {
        kernel.push((-((i * i) as f32) / denom).exp());
    }
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let (w, h) = (img.width(), img.height());
    let src = img.pixels();
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += k * src[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
    FrameImage::from_pixels(w, h, out).expect("blurred pixels stay in range")
}

/// One display slot in the transmission schedule.
#[derive(Debug, Clone)]
pub struct TxEntry {
    pub image: FrameImage,
    pub kind: FrameKind,
    /// Nominal start time `t_b + k * F` in seconds.
    pub start_s: f64,
    pub duration_s: f64,
}

/// The timed sequence of displayed frames.
///
/// Entry `k` is displayed over `[t_b + t_0 + k*F, t_b + t_0 + (k+1)*F)`:
/// the receiver-unknown arrival offset `t_0` shifts the whole stream against
/// the camera's sampling phase.
#[derive(Debug, Clone)]
pub struct TxSchedule {
    pub entries: Vec<TxEntry>,
    /// Stream start time t_b in seconds.
    pub stream_start_s: f64,
    /// Arrival offset t_0 in [0, F), unknown to the receiver.
    pub arrival_offset_s: f64,
}

impl TxSchedule {
    /// Display span `[start, end)` in absolute camera time.
    pub fn span(&self) -> (f64, f64) {
        let start = self.stream_start_s + self.arrival_offset_s;
        let len: f64 = self.entries.iter().map(|e| e.duration_s).sum();
        (start, start + len)
    }

    pub fn frame_period_s(&self) -> f64 {
        self.entries.first().map(|e| e.duration_s).unwrap_or(0.0)
    }
}

/// Builds the display schedule: an overhead frame at stream start and before
/// every subsequent group of `overhead_period` data frames, all timed
/// contiguously at `F = 1 / tx_data_fps`. The arrival offset `t_0` is drawn
/// uniformly from `[0, F)`.
pub fn build_schedule(
    payloads: &[FramePayload],
    link: &LinkConfig,
    codec: &CodecConfig,
    seed: u64,
) -> Result<TxSchedule, ChannelError> {
    link.validate()?;
    if payloads.is_empty() {
        return Err(ChannelError::EmptySchedule);
    }
    let period = link.frame_period_s();
    let overhead = make_overhead_frame(codec);
    let mut entries = Vec::new();
    let push = |image: FrameImage, kind: FrameKind, entries: &mut Vec<TxEntry>| {
        let start_s = entries.len() as f64 * period;
        entries.push(TxEntry { image, kind, start_s, duration_s: period });
    };
    for (i, payload) in payloads.iter().enumerate() {
        if i % link.overhead_period == 0 {
            push(overhead.clone(), FrameKind::Overhead, &mut entries);
        }
        push(encode_frame(payload, codec)?, payload.kind, &mut entries);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::SCHEDULE, 0));
    let arrival_offset_s = rng.gen_range(0.0..period);
    Ok(TxSchedule { entries, stream_start_s: 0.0, arrival_offset_s })
}

/// The camera's view of one sample instant.
#[derive(Debug, Clone)]
pub struct CapturedFrame {
    pub image: FrameImage,
    pub capture_time_s: f64,
    /// Index of the schedule entry contributing most to this capture
    /// (ground truth for tests).
    pub tx_index_truth: usize,
    pub kind_truth: FrameKind,
    /// Weight of the dominant frame when the exposure straddles a boundary;
    /// 1.0 when a single frame fills the window.
    pub blend_alpha: f32,
    /// Seed used for this capture's distortion.
    pub seed: u64,
}

/// Samples the receiver at tick `n`: capture time `t = n / (cam_fps * Q)`.
/// The rectangular exposure window selects the displayed frame; a window
/// straddling a boundary yields `alpha * frame_k + (1 - alpha) * frame_k+1`
/// with `alpha` the overlap fraction. Distortion is then applied with a seed
/// derived from `(seed, n)`.
pub fn sample_rx(
    schedule: &TxSchedule,
    params: &ChannelParams,
    n: u64,
    cam_fps: f64,
    seed: u64,
) -> Result<CapturedFrame, ChannelError> {
    params.validate()?;
    if schedule.entries.is_empty() {
        return Err(ChannelError::EmptySchedule);
    }
    let t = n as f64 / (cam_fps * params.oversampling as f64);
    let (start, end) = schedule.span();
    if t < start || t >= end {
        return Err(ChannelError::OutOfStream { time_s: t, start_s: start, end_s: end });
    }
    let period = schedule.frame_period_s();
    let count = schedule.entries.len();
    let window = (t, t + params.exposure_s);

    // Overlap of the exposure window with each displayed interval.
    let first = (((window.0 - start) / period).floor() as usize).min(count - 1);
    let last = (((window.1 - start) / period).floor() as usize).min(count - 1);
    let mut overlaps: Vec<(usize, f64)> = Vec::with_capacity(2);
    for k in first..=last {
        let k_start = start + k as f64 * period;
        let lo = window.0.max(k_start);
        let hi = window.1.min(k_start + period);
        if hi > lo || params.exposure_s == 0.0 {
            overlaps.push((k, (hi - lo).max(0.0)));
        }
    }
    if overlaps.is_empty() {
        // Zero-length exposure exactly at a boundary.
        overlaps.push((first, 0.0));
    }

    let (image, blend_alpha, tx_index_truth) = if overlaps.len() == 1 {
        let k = overlaps[0].0;
        (schedule.entries[k].image.clone(), 1.0f32, k)
    } else {
        let (k, o_k) = overlaps[0];
        let (_, o_next) = overlaps[1];
        let alpha = (o_k / (o_k + o_next)) as f32;
        let blended = schedule.entries[k].image.blend(&schedule.entries[k + 1].image, alpha);
        let dominant = if alpha >= 0.5 { k } else { k + 1 };
        (blended, alpha, dominant)
    };

    let capture_seed = seeds::derive(seed, seeds::stream::CAPTURE, n);
    Ok(CapturedFrame {
        image: distort(&image, params, capture_seed),
        capture_time_s: t,
        tx_index_truth,
        kind_truth: schedule.entries[tx_index_truth].kind,
        blend_alpha,
        seed: capture_seed,
    })
}

/// Captures every camera tick across the schedule span, in time order.
pub fn capture_stream(
    schedule: &TxSchedule,
    params: &ChannelParams,
    cam_fps: f64,
    seed: u64,
) -> Result<Vec<CapturedFrame>, ChannelError> {
    params.validate()?;
    if schedule.entries.is_empty() {
        return Err(ChannelError::EmptySchedule);
    }
    let rate = cam_fps * params.oversampling as f64;
    let (start, end) = schedule.span();
    let first = (start * rate).ceil() as u64;
    let mut captures = Vec::new();
    for n in first.. {
        if n as f64 / rate >= end {
            break;
        }
        captures.push(sample_rx(schedule, params, n, cam_fps, seed)?);
    }
    Ok(captures)
}

/// Persists a captured stream as numbered PGM files plus a CSV index.
pub fn write_captures(dir: &Path, captures: &[CapturedFrame]) -> Result<(), ChannelError> {
    std::fs::create_dir_all(dir)?;
    let mut index = BufWriter::new(File::create(dir.join("index.csv"))?);
    writeln!(index, "sample_index,capture_time_s,tx_index_truth,kind_truth,blend_alpha,seed")?;
    for (i, cap) in captures.iter().enumerate() {
        let name = format!("capture_{i:06}.pgm");
        cap.image.save_pgm(&dir.join(&name))?;
        writeln!(
            index,
            "{i},{:.9},{},{},{:.6},{}",
            cap.capture_time_s,
            cap.tx_index_truth,
            cap.kind_truth.name(),
            cap.blend_alpha,
            cap.seed
        )?;
    }
    index.flush()?;
    Ok(())
}

/// Loads a captured stream previously written by [`write_captures`].
pub fn read_captures(dir: &Path) -> Result<Vec<CapturedFrame>, ChannelError> {
    let file = BufReader::new(File::open(dir.join("index.csv"))?);
    let mut captures = Vec::new();
    for (line_no, line) in file.lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(ChannelError::IndexFormat {
                reason: format!("line {} has {} fields, expected 6", line_no + 1, fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, ChannelError> {
            s.parse().map_err(|_| ChannelError::IndexFormat {
                reason: format!("bad {what} {s:?} on line {}", line_no + 1),
            })
        };
        let sample_index: usize = fields[0].parse().map_err(|_| ChannelError::IndexFormat {
            reason: format!("bad sample index on line {}", line_no + 1),
        })?;
        let kind = FrameKind::from_name(fields[3]).ok_or_else(|| ChannelError::IndexFormat {
            reason: format!("unknown kind {:?} on line {}", fields[3], line_no + 1),
        })?;
        let image = FrameImage::load_pgm(&dir.join(format!("capture_{sample_index:06}.pgm")))?;
        captures.push(CapturedFrame {
            image,
            capture_time_s: parse(fields[1], "capture time")?,
            tx_index_truth: fields[2].parse().map_err(|_| ChannelError::IndexFormat {
                reason: format!("bad tx index on line {}", line_no + 1),
            })?,
            kind_truth: kind,
            blend_alpha: parse(fields[4], "blend alpha")? as f32,
            seed: fields[5].parse().map_err(|_| ChannelError::IndexFormat {
                reason: format!("bad seed on line {}", line_no + 1),
            })?,
        });
    }
    Ok(captures)
}
