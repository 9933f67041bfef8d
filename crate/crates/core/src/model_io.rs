//! Model files ("SQNM").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SQNM" | u16 version | u16 layer count | input shape
//! per layer: u8 kind | u8 kind_tag (0 none, 1 CONV, 2 FC)
//!            | weight shape | raw f32 weights | bias shape | raw f32 biases
//! shape:     u8 rank | u32 extent per axis   (rank 0 = no tensor)
//! ```
//!
//! Weights are stored as 32-bit floats. Loading widens them exactly, so
//! `save(load(f)) == f` byte-for-byte; a model whose parameters are already
//! representable in 32 bits (anything that came from a file, or a fresh toy
//! model) round-trips bit-exactly through save/load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{KindTag, Layer, NetworkModel};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"SQNM";
pub const MODEL_VERSION: u16 = 1;

const KIND_DENSE: u8 = 1;
const KIND_CONV2D: u8 = 2;
const KIND_RELU: u8 = 3;
const KIND_MAXPOOL2X2: u8 = 4;
const KIND_FLATTEN: u8 = 5;

fn write_shape(w: &mut impl Write, shape: &[usize]) -> Result<()> {
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_shape(r: &mut impl Read, context: &str) -> Result<Vec<usize>> {
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank)
        .map_err(|_| Error::TruncatedFile(context.to_string()))?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::TruncatedFile(context.to_string()))?;
        shape.push(u32::from_le_bytes(buf) as usize);
    }
    Ok(shape)
}

fn write_tensor<S: Real>(w: &mut impl Write, t: &Tensor<S>) -> Result<()> {
    write_shape(w, t.shape())?;
    for &v in t.data() {
        w.write_all(&v.to_stored().to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<S: Real>(r: &mut impl Read, context: &str) -> Result<Tensor<S>> {
    let shape = read_shape(r, context)?;
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 4];
    for _ in 0..len {
        r.read_exact(&mut buf)
            .map_err(|_| Error::TruncatedFile(context.to_string()))?;
        data.push(S::from_stored(f32::from_le_bytes(buf)));
    }
    Tensor::new(shape, data)
}

/// Write a model; returns the byte count. Parameters are rounded to 32-bit
/// floats on the way out.
pub fn save_model<S: Real>(model: &NetworkModel<S>, path: &Path) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(model.layers().len() as u16).to_le_bytes())?;
    write_shape(&mut w, model.input_shape())?;
    for layer in model.layers() {
        let kind = match layer {
            Layer::Dense { .. } => KIND_DENSE,
            Layer::Conv2d { .. } => KIND_CONV2D,
            Layer::Relu => KIND_RELU,
            Layer::MaxPool2x2 => KIND_MAXPOOL2X2,
            Layer::Flatten => KIND_FLATTEN,
        };
        let tag = layer.kind_tag().map_or(0, KindTag::as_byte);
        w.write_all(&[kind, tag])?;
        match (layer.weights(), layer.bias()) {
            (Some(weights), Some(bias)) => {
                write_tensor(&mut w, weights)?;
                write_tensor(&mut w, bias)?;
            }
            _ => {
                w.write_all(&[0u8])?; // weight rank 0
                w.write_all(&[0u8])?; // bias rank 0
            }
        }
    }
    w.flush()?;
    Ok(std::fs::metadata(path)?.len())
}

pub fn load_model<S: Real>(path: &Path) -> Result<NetworkModel<S>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::TruncatedFile(path.display().to_string()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: "model (SQNM)",
            context: path.display().to_string(),
        });
    }
    let mut buf2 = [0u8; 2];
    r.read_exact(&mut buf2)
        .map_err(|_| Error::TruncatedFile(path.display().to_string()))?;
    let version = u16::from_le_bytes(buf2);
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "model",
            version,
        });
    }
    r.read_exact(&mut buf2)
        .map_err(|_| Error::TruncatedFile(path.display().to_string()))?;
    let layer_count = u16::from_le_bytes(buf2) as usize;
    let input_shape = read_shape(&mut r, "model input shape")?;

    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let mut head = [0u8; 2];
        r.read_exact(&mut head)
            .map_err(|_| Error::TruncatedFile(format!("layer {i} header")))?;
        let [kind, tag] = head;
        let layer = match kind {
            KIND_DENSE | KIND_CONV2D => {
                let weights = read_tensor(&mut r, "layer weights")?;
                let bias = read_tensor(&mut r, "layer bias")?;
                let layer = if kind == KIND_DENSE {
                    Layer::dense(weights, bias)?
                } else {
                    Layer::conv2d(weights, bias)?
                };
                let expect = layer.kind_tag().map_or(0, KindTag::as_byte);
                if tag != expect {
                    return Err(Error::InvalidModel(format!(
                        "layer {i}: kind_tag byte {tag} does not match layer kind {}",
                        layer.kind_name()
                    )));
                }
                layer
            }
            KIND_RELU | KIND_MAXPOOL2X2 | KIND_FLATTEN => {
                let w = read_shape(&mut r, "layer weights")?;
                let b = read_shape(&mut r, "layer bias")?;
                if !w.is_empty() || !b.is_empty() || tag != 0 {
                    return Err(Error::InvalidModel(format!(
                        "layer {i}: activation layer carries parameters or a kind_tag"
                    )));
                }
                match kind {
                    KIND_RELU => Layer::Relu,
                    KIND_MAXPOOL2X2 => Layer::MaxPool2x2,
                    _ => Layer::Flatten,
                }
            }
            other => {
                return Err(Error::InvalidModel(format!(
                    "layer {i}: unknown kind byte {other}"
                )))
            }
        };
        layers.push(layer);
    }

    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(Error::InvalidModel("trailing bytes after last layer".into()));
    }
    NetworkModel::new(layers, input_shape)
}

/// Header-level summary of a model file.
#[derive(Debug, Clone)]
pub struct ModelInfo {
    pub layer_count: usize,
    pub input_shape: Vec<usize>,
    /// kind name, kind_tag, weight count, bias count per layer.
    pub layers: Vec<(String, Option<KindTag>, usize, usize)>,
    pub payload_bytes: u64,
    pub file_bytes: u64,
}

impl ModelInfo {
    pub fn payload_kb(&self) -> f64 {
        self.payload_bytes as f64 / crate::BYTES_PER_KB as f64
    }
}

pub fn model_info<S: Real>(model: &NetworkModel<S>, file_bytes: u64) -> ModelInfo {
    ModelInfo {
        layer_count: model.layers().len(),
        input_shape: model.input_shape().to_vec(),
        layers: model
            .layers()
            .iter()
            .map(|l| {
                (
                    l.kind_name().to_string(),
                    l.kind_tag(),
                    l.weights().map_or(0, Tensor::len),
                    l.bias().map_or(0, Tensor::len),
                )
            })
            .collect(),
        payload_bytes: model.parameter_payload_bytes(),
        file_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{lenet_shaped, toy_dense_model};

    #[test]
    fn round_trip_is_identity_on_fresh_models() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sqnm");
        for model in [toy_dense_model(3), lenet_shaped::<f64>(4, 8)] {
            save_model(&model, &path).unwrap();
            let restored = load_model::<f64>(&path).unwrap();
            assert_eq!(restored, model);
        }
    }

    #[test]
    fn saved_bytes_are_idempotent() {
        // Even when in-memory weights are not representable in 32 bits, a
        // second save of the loaded model reproduces the same file.
        let dir = tempfile::tempdir().unwrap();
        let mut model = toy_dense_model(3);
        model
            .layer_mut(0)
            .weights_mut()
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 1.0e-12);
        let a = dir.path().join("a.sqnm");
        let b = dir.path().join("b.sqnm");
        save_model(&model, &a).unwrap();
        save_model(&load_model::<f64>(&a).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn corrupted_magic_is_not_a_model_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sqnm");
        save_model(&toy_dense_model(1), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_file_is_reported_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sqnm");
        save_model(&toy_dense_model(1), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::TruncatedFile(_))
        ));
    }

    #[test]
    fn shape_inconsistency_is_reported_distinctly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sqnm");
        save_model(&toy_dense_model(1), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Rewrite the stored input shape (u32 after magic+version+count+rank)
        // so the first dense layer no longer composes.
        let off = 4 + 2 + 2 + 1;
        bytes[off..off + 4].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
