//! Weight-file serialization.
//!
//! Layout: magic `S2CW`, format version u16, tensor count u16, then per
//! tensor a rank byte, one u32 extent per axis, and the raw little-endian
//! f32 data. Total size is therefore the descriptor header plus exactly
//! four bytes per parameter.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::model::{Model, ModelSpec};
use super::tensor::Tensor;

pub const WEIGHTS_MAGIC: [u8; 4] = *b"S2CW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("weight file: {reason}")]
    Format { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err<T>(reason: impl Into<String>) -> Result<T, WeightsError> {
    Err(WeightsError::Format { reason: reason.into() })
}

/// Writes the model's eight parameter tensors in serialization order.
pub fn save_weights(model: &Model, path: &Path) -> Result<(), WeightsError> {
    let mut w = BufWriter::new(File::create(path)?);
    let tensors = model.tensors();
    w.write_all(&WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u16).to_le_bytes())?;
    for t in tensors {
        w.write_all(&[t.rank() as u8])?;
        for &extent in t.shape() {
            w.write_all(&(extent as u32).to_le_bytes())?;
        }
        for &value in t.data() {
            w.write_all(&value.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a weight file back into a model, rejecting unknown magic/version,
/// truncation, and any shape set that does not form a valid layer chain.
pub fn load_weights(path: &Path) -> Result<Model, WeightsError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let take = |pos: &mut usize, n: usize| -> Result<&[u8], WeightsError> {
        let slice = bytes.get(*pos..*pos + n);
        *pos += n;
        slice.ok_or(WeightsError::Format { reason: "file truncated".into() })
    };

    if take(&mut pos, 4)? != WEIGHTS_MAGIC {
        return format_err("bad magic");
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return format_err(format!("unsupported version {version}"));
    }
    let count = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if count != 8 {
        return format_err(format!("expected 8 tensors, found {count}"));
    }

    let mut tensors = Vec::with_capacity(8);
    for _ in 0..8 {
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let extent = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            if extent == 0 {
                return format_err("zero extent");
            }
            shape.push(extent);
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut pos, len * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::from_vec(&shape, data).expect("length follows from shape"));
    }
    if pos != bytes.len() {
        return format_err(format!("{} trailing bytes", bytes.len() - pos));
    }

    model_from_tensors(tensors)
}

fn model_from_tensors(mut tensors: Vec<Tensor>) -> Result<Model, WeightsError> {
    let d2b = tensors.pop().unwrap();
    let d2w = tensors.pop().unwrap();
    let d1b = tensors.pop().unwrap();
    let d1w = tensors.pop().unwrap();
    let c2b = tensors.pop().unwrap();
    let c2k = tensors.pop().unwrap();
    let c1b = tensors.pop().unwrap();
    let c1k = tensors.pop().unwrap();

    let c1 = c1k.shape();
    if c1k.rank() != 4 || c1[1] != 1 || c1[2] != 3 || c1[3] != 3 {
        return format_err(format!("conv1 kernels have shape {c1:?}"));
    }
    let conv1_filters = c1[0];
    let c2 = c2k.shape();
    if c2k.rank() != 4 || c2[1] != conv1_filters || c2[2] != 3 || c2[3] != 3 {
        return format_err(format!("conv2 kernels have shape {c2:?}"));
    }
    let conv2_filters = c2[0];
    if c1b.shape() != [conv1_filters] || c2b.shape() != [conv2_filters] {
        return format_err("conv bias shapes do not match filter counts");
    }
    let d1 = d1w.shape();
    if d1w.rank() != 2 {
        return format_err(format!("dense1 weights have shape {d1:?}"));
    }
    let (dense_units, flat) = (d1[0], d1[1]);
    if d1b.shape() != [dense_units] {
        return format_err("dense1 bias shape mismatch");
    }
    if d2w.shape() != [1, dense_units] || d2b.shape() != [1] {
        return format_err("output layer shape mismatch");
    }
    // Recover the square input size from the flattened feature count.
    if flat % conv2_filters != 0 {
        return format_err("flattened features not divisible by conv2 filters");
    }
    let plane = flat / conv2_filters;
    let side = (plane as f64).sqrt().round() as usize;
    if side * side != plane {
        return format_err("flattened features do not form a square pool output");
    }
    let input_side = side * 2 + 4;
    let spec = ModelSpec {
        input_height: input_side,
        input_width: input_side,
        conv1_filters,
        conv2_filters,
        dense_units,
    };
    spec.validate().map_err(|e| WeightsError::Format { reason: e.to_string() })?;
    Ok(Model {
        spec,
        conv1: super::model::ConvLayer { kernels: c1k, bias: c1b },
        conv2: super::model::ConvLayer { kernels: c2k, bias: c2b },
        dense1: super::model::DenseLayer { weights: d1w, bias: d1b },
        dense2: super::model::DenseLayer { weights: d2w, bias: d2b },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::model::ModelSpec;
    use crate::cnn::tensor::Tensor;

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_weights(&model, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(model, loaded);
        let batch = Tensor::from_vec(&[1, 1, 8, 8], vec![0.3; 64]).unwrap();
        assert_eq!(
            model.forward(&batch).unwrap().0.data(),
            loaded.forward(&batch).unwrap().0.data()
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_weights(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_weights(&cut), Err(WeightsError::Format { .. })));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(load_weights(&path), Err(WeightsError::Format { .. })));
    }

    #[test]
    fn file_size_is_header_plus_parameters() {
        let spec = ModelSpec::reduced();
        let model = Model::init(spec, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        save_weights(&model, &path).unwrap();
        let descriptor: usize = model.tensors().iter().map(|t| 1 + 4 * t.rank()).sum();
        let expected = 8 + descriptor + 4 * model.parameter_count();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expected);
    }
}
