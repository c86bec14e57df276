//! Labelled image dataset generation, persistence, splitting and loading.
//!
//! Each class renders one base frame (its fixed text, or the sync codeword
//! for overhead frames) and derives `per_class_count` distorted variants with
//! per-image seeds, written as PGM files plus a CSV manifest. Splitting is a
//! seeded, stratified-by-class shuffle.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{distort, ChannelParams};
use crate::cnn::tensor::{Tensor, TensorError};
use crate::codec::{base_frame, CodecConfig, FrameKind};
use crate::image::{FrameImage, ImageError};
use crate::seeds;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset spec: {reason}")]
    BadSpec { reason: String },
    #[error("split fractions {fractions:?} must be non-negative and sum to 1")]
    BadFractions { fractions: (f64, f64, f64) },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest parse: {reason}")]
    Parse { reason: String },
    #[error("record {id} has class {kind:?}, which experiment {experiment} does not map")]
    LabelMap { id: usize, kind: FrameKind, experiment: &'static str },
    #[error("record index {index} out of bounds ({len} records)")]
    BadIndex { index: usize, len: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What to generate: classes, counts, augmentation and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub per_class_count: usize,
    pub classes: Vec<FrameKind>,
    pub augment: ChannelParams,
    pub seed: u64,
    pub codec: CodecConfig,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.per_class_count == 0 {
            return Err(DatasetError::BadSpec { reason: "per_class_count must be >= 1".into() });
        }
        if self.classes.len() < 2 {
            return Err(DatasetError::BadSpec { reason: "need at least 2 classes".into() });
        }
        let mut seen = std::collections::HashSet::new();
        if !self.classes.iter().all(|k| seen.insert(*k)) {
            return Err(DatasetError::BadSpec { reason: "duplicate class".into() });
        }
        Ok(())
    }

    /// Canonical key=value rendering; the content hash of this string keys
    /// the dataset cache.
    pub fn canonical_string(&self) -> String {
        let classes: Vec<&str> = self.classes.iter().map(|k| k.name()).collect();
        format!(
            "per_class_count={}\nclasses={}\nseed={}\n\
             codec.frame_px={}\ncodec.grid_cells={}\ncodec.finder_size={}\ncodec.quiet_zone={}\n\
             aug.noise_sigma={}\naug.blur=({},{})\naug.rotation=({},{})\naug.crop=({},{})\naug.brightness=({},{})\n",
            self.per_class_count,
            classes.join("+"),
            self.seed,
            self.codec.frame_px,
            self.codec.grid_cells,
            self.codec.finder_size,
            self.codec.quiet_zone,
            self.augment.noise_sigma,
            self.augment.blur_sigma_range.0,
            self.augment.blur_sigma_range.1,
            self.augment.rotation_range_deg.0,
            self.augment.rotation_range_deg.1,
            self.augment.crop_fraction_range.0,
            self.augment.crop_fraction_range.1,
            self.augment.brightness_delta_range.0,
            self.augment.brightness_delta_range.1,
        )
    }
}

/// Which split a record landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Unassigned,
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Unassigned => "none",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Split> {
        [Split::Unassigned, Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|s| s.tag() == tag)
    }
}

/// One image in the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: usize,
    /// Path relative to the manifest's directory.
    pub rel_path: String,
    pub kind: FrameKind,
    pub seed: u64,
    pub split: Split,
}

/// The dataset index: records plus the directory they live under.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<DatasetRecord>,
}

impl DatasetManifest {
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn save(&self) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(self.manifest_path())?);
        writeln!(w, "id,path,kind,seed,split")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.id, r.rel_path, r.kind.name(), r.seed, r.split.tag())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let path = root.join("manifest.csv");
        let file = BufReader::new(File::open(&path)?);
        let mut records = Vec::new();
        for (line_no, line) in file.lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(DatasetError::Parse {
                    reason: format!("line {}: {} fields, expected 5", line_no + 1, fields.len()),
                });
            }
            let bad = |what: &str| DatasetError::Parse {
                reason: format!("line {}: bad {what}", line_no + 1),
            };
            records.push(DatasetRecord {
                id: fields[0].parse().map_err(|_| bad("id"))?,
                rel_path: fields[1].to_string(),
                kind: FrameKind::from_name(fields[2]).ok_or_else(|| bad("kind"))?,
                seed: fields[3].parse().map_err(|_| bad("seed"))?,
                split: Split::from_tag(fields[4]).ok_or_else(|| bad("split"))?,
            });
        }
        Ok(Self { root: root.to_path_buf(), records })
    }

    pub fn split_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.split.tag()).or_insert(0) += 1;
        }
        counts
    }

    /// Indices of records in `split` whose class the experiment maps.
    pub fn indices_for(&self, experiment: &ExperimentSpec, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split && experiment.classes().contains(&r.kind))
            .map(|(i, _)| i)
            .collect()
    }

    /// Loads all images of one split (for the experiment's classes) into
    /// memory as a labeled set.
    pub fn load_split(&self, experiment: &ExperimentSpec, split: Split) -> Result<LabeledSet, DatasetError> {
        let indices = self.indices_for(experiment, split);
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut dims = None;
        for &i in &indices {
            let r = &self.records[i];
            let img = FrameImage::load_pgm(&self.root.join(&r.rel_path))?;
            let got = (img.height(), img.width());
            let expected = *dims.get_or_insert(got);
            if got != expected {
                return Err(DatasetError::Parse {
                    reason: format!("record {} is {got:?}, set is {expected:?}", r.id),
                });
            }
            images.push(img.pixels().to_vec());
            labels.push(experiment.label_for(r.kind).ok_or(DatasetError::LabelMap {
                id: r.id,
                kind: r.kind,
                experiment: experiment.id.name(),
            })?);
        }
        let (height, width) = dims.unwrap_or((0, 0));
        Ok(LabeledSet { height, width, images, labels })
    }
}

/// Images of one split held in memory, with binary labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub height: usize,
    pub width: usize,
    images: Vec<Vec<f32>>,
    labels: Vec<f32>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    /// Assembles the chosen records into a B×1×H×W batch plus B×1 labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor), DatasetError> {
        let mut data = Vec::with_capacity(indices.len() * self.height * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self.images.get(i).ok_or(DatasetError::BadIndex { index: i, len: self.len() })?;
            data.extend_from_slice(img);
            labels.push(self.labels[i]);
        }
        let batch = Tensor::from_vec(&[indices.len(), 1, self.height, self.width], data)?;
        let labels = Tensor::from_vec(&[indices.len(), 1], labels)?;
        Ok((batch, labels))
    }
}

/// The three binary experiments: which classes count as 1 and which as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    Ex1,
    Ex2,
    Ex3,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 3] = [ExperimentId::Ex1, ExperimentId::Ex2, ExperimentId::Ex3];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Ex1 => "ex1",
            ExperimentId::Ex2 => "ex2",
            ExperimentId::Ex3 => "ex3",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name.to_ascii_lowercase())
    }
}

/// Binary label map of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub positive: Vec<FrameKind>,
    pub negative: Vec<FrameKind>,
}

impl ExperimentSpec {
    /// Payload classification: first data class against the second.
    pub fn ex1() -> Self {
        Self {
            id: ExperimentId::Ex1,
            positive: vec![FrameKind::DataQr1],
            negative: vec![FrameKind::DataQr2],
        }
    }

    /// Data-frame detection: QR data classes against the ASCII class.
    pub fn ex2() -> Self {
        Self {
            id: ExperimentId::Ex2,
            positive: vec![FrameKind::DataQr1, FrameKind::DataQr2],
            negative: vec![FrameKind::Ascii],
        }
    }

    /// Overhead detection: data classes against the overhead class.
    pub fn ex3() -> Self {
        Self {
            id: ExperimentId::Ex3,
            positive: vec![FrameKind::DataQr1, FrameKind::DataQr2],
            negative: vec![FrameKind::Overhead],
        }
    }

    pub fn for_id(id: ExperimentId) -> Self {
        match id {
            ExperimentId::Ex1 => Self::ex1(),
            ExperimentId::Ex2 => Self::ex2(),
            ExperimentId::Ex3 => Self::ex3(),
        }
    }

    pub fn classes(&self) -> Vec<FrameKind> {
        self.positive.iter().chain(&self.negative).copied().collect()
    }

    /// 1.0 for positive classes, 0.0 for negative, None outside the map.
    pub fn label_for(&self, kind: FrameKind) -> Option<f32> {
        if self.positive.contains(&kind) {
            Some(1.0)
        } else if self.negative.contains(&kind) {
            Some(0.0)
        } else {
            None
        }
    }
}

/// Renders and distorts every class's variants, writes PGMs under
/// `out_dir/images/<class>/`, and returns the manifest (also saved to disk).
/// Byte-identical for identical specs.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    spec.validate()?;
    spec.augment.validate().map_err(|e| DatasetError::BadSpec { reason: e.to_string() })?;
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::with_capacity(spec.classes.len() * spec.per_class_count);
    let mut id = 0usize;
    for (class_idx, &kind) in spec.classes.iter().enumerate() {
        let class_dir = out_dir.join("images").join(kind.name());
        std::fs::create_dir_all(&class_dir)?;
        let base = base_frame(kind, &spec.codec);
        for i in 0..spec.per_class_count {
            let image_seed = seeds::derive(
                spec.seed,
                seeds::stream::DATASET,
                (class_idx * spec.per_class_count + i) as u64,
            );
            let img = distort(&base, &spec.augment, image_seed);
            let rel_path = format!("images/{}/{}_{:05}.pgm", kind.name(), kind.name(), i);
            img.save_pgm(&out_dir.join(&rel_path))?;
            records.push(DatasetRecord { id, rel_path, kind, seed: image_seed, split: Split::Unassigned });
            id += 1;
        }
    }
    let manifest = DatasetManifest { root: out_dir.to_path_buf(), records };
    manifest.save()?;
    Ok(manifest)
}

/// Assigns train/val/test tags with a seeded shuffle, stratified by class:
/// within each class the proportions are exact up to rounding (largest
/// remainder). Returns a new manifest; the input order is preserved.
pub fn split_dataset(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetManifest, DatasetError> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions { fractions });
    }
    if manifest.records.is_empty() {
        return Err(DatasetError::EmptyManifest);
    }
    let mut by_class: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.kind.name()).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (class_idx, (_, mut indices)) in by_class.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::SPLIT, class_idx as u64));
        indices.shuffle(&mut rng);
        let n = indices.len();
        let counts = apportion(n, &[ft, fv, fs]);
        let (n_train, n_val) = (counts[0], counts[1]);
        for (rank, &rec_idx) in indices.iter().enumerate() {
            out.records[rec_idx].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Largest-remainder apportionment of `n` items over fractional targets.
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = fractions
        .iter()
        .enumerate()
        .map(|(i, f)| (i, f * n as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..n - assigned {
        counts[remainders[k % remainders.len()].0] += 1;
    }
    counts
}

/// Loads selected records as a batch: pixels scaled to [0,1], labels from the
/// experiment's map. Records outside the experiment's classes are an error.
pub fn load_batch(
    manifest: &DatasetManifest,
    indices: &[usize],
    experiment: &ExperimentSpec,
) -> Result<(Tensor, Tensor), DatasetError> {
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(indices.len());
    let mut dims = None;
    for &i in indices {
        let r = manifest
            .records
            .get(i)
            .ok_or(DatasetError::BadIndex { index: i, len: manifest.records.len() })?;
        let label = experiment.label_for(r.kind).ok_or(DatasetError::LabelMap {
            id: r.id,
            kind: r.kind,
            experiment: experiment.id.name(),
        })?;
        let img = FrameImage::load_pgm(&manifest.root.join(&r.rel_path))?;
        let got = (img.height(), img.width());
        let expected = *dims.get_or_insert(got);
        if got != expected {
            return Err(DatasetError::Parse {
                reason: format!("record {} is {got:?}, batch is {expected:?}", r.id),
            });
        }
        data.extend_from_slice(img.pixels());
        labels.push(label);
    }
    let (h, w) = dims.unwrap_or((0, 0));
    let batch = Tensor::from_vec(&[indices.len(), 1, h, w], data)?;
    let labels = Tensor::from_vec(&[indices.len(), 1], labels)?;
    Ok((batch, labels))
}
