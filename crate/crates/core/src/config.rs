//! Flat key=value configuration files.
//!
//! Every key has a default; a config file only lists overrides. A settings
//! snapshot writes every effective key, so replaying a snapshot reproduces
//! the run bit-identically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::channel::{ChannelParams, LinkConfig};
use crate::cnn::train::TrainConfig;
use crate::codec::CodecConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {key:?}")]
    UnknownKey { key: String },
    #[error("key {key}: cannot parse {value:?} as {want}")]
    BadValue { key: String, value: String, want: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const KNOWN_KEYS: &[&str] = &[
    "frame_px",
    "grid_cells",
    "finder_size",
    "quiet_zone",
    "tx_refresh_hz",
    "tx_data_fps",
    "cam_fps",
    "distance_cm",
    "tilt_deg",
    "rotation_deg",
    "overhead_period",
    "exposure_s",
    "oversampling",
    "aug_rotation_min_deg",
    "aug_rotation_max_deg",
    "aug_crop_min",
    "aug_crop_max",
    "aug_blur_sigma_min",
    "aug_blur_sigma_max",
    "aug_brightness_delta",
    "aug_noise_sigma",
    "link_noise_sigma",
    "per_class_count",
    "train_fraction",
    "val_fraction",
    "test_fraction",
    "epochs",
    "batch_size",
    "learning_rate",
    "seed",
    "dedup_threshold",
    "link_data_frames",
];

/// Raw parsed key=value pairs.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { key });
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T, want: &'static str) -> Result<T, ConfigError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.clone(),
                want,
            }),
        }
    }
}

/// Every tunable of the system, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub codec: CodecConfig,
    pub link: LinkConfig,
    /// Augmentation channel used for dataset generation.
    pub augment: ChannelParams,
    /// Noise applied on the simulated link (geometry left untouched).
    pub link_noise_sigma: f32,
    pub per_class_count: usize,
    pub fractions: (f64, f64, f64),
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub dedup_threshold: f32,
    pub link_data_frames: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            codec: CodecConfig::default(),
            link: LinkConfig::default(),
            augment: ChannelParams::augmentation_defaults(),
            link_noise_sigma: 0.02,
            per_class_count: 1000,
            fractions: (0.60, 0.15, 0.25),
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 7,
            dedup_threshold: crate::sync::DEFAULT_DEDUP_THRESHOLD,
            link_data_frames: 20,
        }
    }
}

impl Settings {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self, ConfigError> {
        let d = Settings::default();
        let codec = CodecConfig {
            frame_px: cfg.get("frame_px", d.codec.frame_px, "usize")?,
            grid_cells: cfg.get("grid_cells", d.codec.grid_cells, "usize")?,
            finder_size: cfg.get("finder_size", d.codec.finder_size, "usize")?,
            quiet_zone: cfg.get("quiet_zone", d.codec.quiet_zone, "usize")?,
        };
        let link = LinkConfig {
            tx_refresh_hz: cfg.get("tx_refresh_hz", d.link.tx_refresh_hz, "f64")?,
            tx_data_fps: cfg.get("tx_data_fps", d.link.tx_data_fps, "f64")?,
            cam_fps: cfg.get("cam_fps", d.link.cam_fps, "f64")?,
            distance_cm: cfg.get("distance_cm", d.link.distance_cm, "f64")?,
            tilt_deg: cfg.get("tilt_deg", d.link.tilt_deg, "f64")?,
            rotation_deg: cfg.get("rotation_deg", d.link.rotation_deg, "f64")?,
            overhead_period: cfg.get("overhead_period", d.link.overhead_period, "usize")?,
        };
        let augment = ChannelParams {
            noise_sigma: cfg.get("aug_noise_sigma", d.augment.noise_sigma, "f32")?,
            blur_sigma_range: (
                cfg.get("aug_blur_sigma_min", d.augment.blur_sigma_range.0, "f32")?,
                cfg.get("aug_blur_sigma_max", d.augment.blur_sigma_range.1, "f32")?,
            ),
            rotation_range_deg: (
                cfg.get("aug_rotation_min_deg", d.augment.rotation_range_deg.0, "f32")?,
                cfg.get("aug_rotation_max_deg", d.augment.rotation_range_deg.1, "f32")?,
            ),
            crop_fraction_range: (
                cfg.get("aug_crop_min", d.augment.crop_fraction_range.0, "f32")?,
                cfg.get("aug_crop_max", d.augment.crop_fraction_range.1, "f32")?,
            ),
            brightness_delta_range: {
                let delta = cfg.get("aug_brightness_delta", d.augment.brightness_delta_range.1, "f32")?;
                (-delta, delta)
            },
            exposure_s: cfg.get("exposure_s", d.augment.exposure_s, "f64")?,
            oversampling: cfg.get("oversampling", d.augment.oversampling, "u32")?,
        };
        Ok(Self {
            codec,
            link,
            augment,
            link_noise_sigma: cfg.get("link_noise_sigma", d.link_noise_sigma, "f32")?,
            per_class_count: cfg.get("per_class_count", d.per_class_count, "usize")?,
            fractions: (
                cfg.get("train_fraction", d.fractions.0, "f64")?,
                cfg.get("val_fraction", d.fractions.1, "f64")?,
                cfg.get("test_fraction", d.fractions.2, "f64")?,
            ),
            epochs: cfg.get("epochs", d.epochs, "usize")?,
            batch_size: cfg.get("batch_size", d.batch_size, "usize")?,
            learning_rate: cfg.get("learning_rate", d.learning_rate, "f32")?,
            seed: cfg.get("seed", d.seed, "u64")?,
            dedup_threshold: cfg.get("dedup_threshold", d.dedup_threshold, "f32")?,
            link_data_frames: cfg.get("link_data_frames", d.link_data_frames, "usize")?,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::from_config(&ConfigFile::from_file(p)?),
            None => Ok(Self::default()),
        }
    }

    /// Channel parameters of the simulated link: default-noise only, the
    /// camera's exposure and oversampling carried over from the settings.
    pub fn link_channel(&self) -> ChannelParams {
        ChannelParams {
            noise_sigma: self.link_noise_sigma,
            exposure_s: self.augment.exposure_s,
            oversampling: self.augment.oversampling,
            ..ChannelParams::identity()
        }
    }

    /// Training configuration derived from these settings.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lr: self.learning_rate,
        }
    }

    /// Renders every effective key; parsing this text reproduces `self`.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frame_px={}", self.codec.frame_px);
        let _ = writeln!(s, "grid_cells={}", self.codec.grid_cells);
        let _ = writeln!(s, "finder_size={}", self.codec.finder_size);
        let _ = writeln!(s, "quiet_zone={}", self.codec.quiet_zone);
        let _ = writeln!(s, "tx_refresh_hz={}", self.link.tx_refresh_hz);
        let _ = writeln!(s, "tx_data_fps={}", self.link.tx_data_fps);
        let _ = writeln!(s, "cam_fps={}", self.link.cam_fps);
        let _ = writeln!(s, "distance_cm={}", self.link.distance_cm);
        let _ = writeln!(s, "tilt_deg={}", self.link.tilt_deg);
        let _ = writeln!(s, "rotation_deg={}", self.link.rotation_deg);
        let _ = writeln!(s, "overhead_period={}", self.link.overhead_period);
        let _ = writeln!(s, "exposure_s={}", self.augment.exposure_s);
        let _ = writeln!(s, "oversampling={}", self.augment.oversampling);
        let _ = writeln!(s, "aug_rotation_min_deg={}", self.augment.rotation_range_deg.0);
        let _ = writeln!(s, "aug_rotation_max_deg={}", self.augment.rotation_range_deg.1);
        let _ = writeln!(s, "aug_crop_min={}", self.augment.crop_fraction_range.0);
        let _ = writeln!(s, "aug_crop_max={}", self.augment.crop_fraction_range.1);
        let _ = writeln!(s, "aug_blur_sigma_min={}", self.augment.blur_sigma_range.0);
        let _ = writeln!(s, "aug_blur_sigma_max={}", self.augment.blur_sigma_range.1);
        let _ = writeln!(s, "aug_brightness_delta={}", self.augment.brightness_delta_range.1);
        let _ = writeln!(s, "aug_noise_sigma={}", self.augment.noise_sigma);
        let _ = writeln!(s, "link_noise_sigma={}", self.link_noise_sigma);
        let _ = writeln!(s, "per_class_count={}", self.per_class_count);
        let _ = writeln!(s, "train_fraction={}", self.fractions.0);
        let _ = writeln!(s, "val_fraction={}", self.fractions.1);
        let _ = writeln!(s, "test_fraction={}", self.fractions.2);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "dedup_threshold={}", self.dedup_threshold);
        let _ = writeln!(s, "link_data_frames={}", self.link_data_frames);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let settings = Settings::load(None).unwrap();
        assert_eq!(settings, Settings::default());
        assert_eq!(settings.codec.frame_px, 100);
        assert_eq!(settings.link.cam_fps, 60.0);
        assert_eq!(settings.epochs, 20);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = ConfigFile::parse("# comment\nseed=42\n\nepochs = 3\n").unwrap();
        let settings = Settings::from_config(&cfg).unwrap();
        assert_eq!(settings.seed, 42);
        assert_eq!(settings.epochs, 3);
        assert_eq!(settings.batch_size, 32);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut settings = Settings { seed: 1234, per_class_count: 17, ..Settings::default() };
        settings.augment.rotation_range_deg = (-5.0, 5.0);
        let parsed =
            Settings::from_config(&ConfigFile::parse(&settings.snapshot()).unwrap()).unwrap();
        assert_eq!(parsed, settings);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            ConfigFile::parse("no_such_key=1"),
            Err(ConfigError::UnknownKey { .. })
        ));
        let cfg = ConfigFile::parse("epochs=three").unwrap();
        assert!(matches!(Settings::from_config(&cfg), Err(ConfigError::BadValue { .. })));
        assert!(matches!(
            ConfigFile::parse("just a line"),
            Err(ConfigError::Syntax { .. })
        ));
    }
}
