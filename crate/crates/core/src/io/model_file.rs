//! Quantized model file.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "RSNNQNT\0"
//! 8       4     format version, u32 LE (currently 1)
//! 12      4     manifest length M, u32 LE
//! 16      8     blob section length B, u64 LE
//! 24      M     manifest, UTF-8 TOML
//! 24+M    B     blobs
//! ```
//!
//! The manifest names every blob by `(offset, len)` relative to the start of
//! the blob section. Blobs are laid out back to back in manifest order with no
//! gaps: per convolution its weights (signed bytes, logical `(out, in/g, k, k)`
//! order) then its biases (`i32` LE), then the classifier weights and biases.
//! The file must end exactly at the end of the blob section.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_resnet10, ConvLayerSpec, FcLayerSpec, LayerRole, NetworkConfig, QuantizedModel};
use crate::sim::ArrayPlan;
use crate::tensor::{IntTensor, QuantParams};

pub const MAGIC: [u8; 8] = *b"RSNNQNT\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;
const FORMAT: &str = "rsnn-model";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct InputEntry {
    bits: u32,
    exponent: i32,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    role: LayerRole,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    weight_bits: u32,
    weight_exponent: i32,
    acc_exponent: i32,
    threshold: i32,
    weights: BlobRef,
    bias: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct FcEntry {
    name: String,
    features: usize,
    classes: usize,
    weight_bits: u32,
    weight_exponent: i32,
    pool_area: usize,
    weights: BlobRef,
    bias: BlobRef,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    network: NetworkConfig,
    input: InputEntry,
    arrays: ArrayPlan,
    layers: Vec<LayerEntry>,
    fc: FcEntry,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptFile(msg.into())
}

struct BlobWriter(Vec<u8>);

impl BlobWriter {
    fn bytes(&mut self, values: &[i32]) -> BlobRef {
        let offset = self.0.len() as u64;
        self.0.extend(values.iter().map(|&v| v as i8 as u8));
        BlobRef { offset, len: values.len() as u64 }
    }

    fn words(&mut self, values: &[i32]) -> BlobRef {
        let offset = self.0.len() as u64;
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        BlobRef { offset, len: 4 * values.len() as u64 }
    }
}

pub fn save_model(model: &QuantizedModel) -> Result<Vec<u8>> {
    let mut blobs = BlobWriter(Vec::new());
    let mut layers = Vec::with_capacity(model.convs.len());
    for c in &model.convs {
        let p = c.weights.params();
        if p.bits() > 8 {
            return Err(Error::InvalidConfig(format!("{}: model files hold 8-bit weights", c.name())));
        }
        let weights = blobs.bytes(c.weights.values());
        let bias = blobs.words(&c.bias);
        let s = &c.shape;
        layers.push(LayerEntry {
            name: s.name.clone(),
            role: s.role,
            in_channels: s.in_channels,
            out_channels: s.out_channels,
            kernel: s.kernel,
            stride: s.stride,
            padding: s.padding,
            groups: s.groups,
            weight_bits: p.bits(),
            weight_exponent: p.exponent(),
            acc_exponent: c.acc_exponent,
            threshold: c.threshold_q,
            weights,
            bias,
        });
    }
    let fp = model.fc.weights.params();
    if fp.bits() > 8 {
        return Err(Error::InvalidConfig("model files hold 8-bit weights".into()));
    }
    let fc = FcEntry {
        name: model.fc.shape.name.clone(),
        features: model.fc.features(),
        classes: model.fc.classes(),
        weight_bits: fp.bits(),
        weight_exponent: fp.exponent(),
        pool_area: model.fc.pool_area,
        weights: blobs.bytes(model.fc.weights.values()),
        bias: blobs.words(&model.fc.bias),
    };
    let manifest = Manifest {
        format: FORMAT.into(),
        network: model.config.clone(),
        input: InputEntry { bits: model.input_params.bits(), exponent: model.input_params.exponent() },
        arrays: model.arrays,
        layers,
        fc,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let blobs = blobs.0;
    let mut out = Vec::with_capacity(HEADER_LEN + text.len() + blobs.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&(blobs.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&blobs);
    Ok(out)
}

struct BlobReader<'a> {
    blobs: &'a [u8],
    cursor: u64,
}

impl BlobReader<'_> {
    fn take(&mut self, r: BlobRef, want: usize, what: &str) -> Result<&[u8]> {
        if r.offset != self.cursor {
            return Err(corrupt(format!("{what}: blob at {} but expected {}", r.offset, self.cursor)));
        }
        if r.len != want as u64 {
            return Err(corrupt(format!("{what}: blob of {} bytes, shape needs {want}", r.len)));
        }
        let end = r.offset.checked_add(r.len).filter(|&e| e <= self.blobs.len() as u64);
        let end = end.ok_or_else(|| corrupt(format!("{what}: blob runs past the end of the file")))?;
        self.cursor = end;
        Ok(&self.blobs[r.offset as usize..end as usize])
    }

    fn bytes(&mut self, r: BlobRef, n: usize, what: &str) -> Result<Vec<i32>> {
        Ok(self.take(r, n, what)?.iter().map(|&b| b as i8 as i32).collect())
    }

    fn words(&mut self, r: BlobRef, n: usize, what: &str) -> Result<Vec<i32>> {
        let raw = self.take(r, 4 * n, what)?;
        Ok(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn load_model(bytes: &[u8]) -> Result<QuantizedModel> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unknown format version {version}")));
    }
    let manifest_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as u64;
    let blob_len = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = (HEADER_LEN as u64).checked_add(manifest_len).and_then(|n| n.checked_add(blob_len));
    if expected != Some(bytes.len() as u64) {
        return Err(corrupt(format!(
            "header declares {manifest_len} manifest and {blob_len} blob bytes, file holds {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let manifest_end = HEADER_LEN + manifest_len as usize;
    let text = std::str::from_utf8(&bytes[HEADER_LEN..manifest_end]).map_err(|_| corrupt("manifest is not UTF-8"))?;
    let m: Manifest = toml::from_str(text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(corrupt(format!("manifest format {:?}", m.format)));
    }

    let graph = build_resnet10(&m.network).map_err(|e| corrupt(format!("network: {e}")))?;
    let mut reader = BlobReader { blobs: &bytes[manifest_end..], cursor: 0 };
    let shapes: Vec<_> = graph.conv_layers().cloned().collect();
    if shapes.len() != m.layers.len() {
        return Err(corrupt(format!("{} layers for a {}-convolution network", m.layers.len(), shapes.len())));
    }
    let mut convs = Vec::with_capacity(shapes.len());
    for (shape, e) in shapes.into_iter().zip(&m.layers) {
        let declared = (&e.name, e.role, e.in_channels, e.out_channels, e.kernel, e.stride, e.padding, e.groups);
        let actual = (
            &shape.name,
            shape.role,
            shape.in_channels,
            shape.out_channels,
            shape.kernel,
            shape.stride,
            shape.padding,
            shape.groups,
        );
        if declared != actual {
            return Err(corrupt(format!("layer {} does not match the network topology", e.name)));
        }
        let params = QuantParams::new(e.weight_bits, e.weight_exponent).map_err(|err| corrupt(err.to_string()))?;
        let w = reader.bytes(e.weights, shape.param_count(), &e.name)?;
        let b = reader.words(e.bias, shape.out_channels, &e.name)?;
        let weights = IntTensor::new(shape.weight_shape(), w, params).map_err(|err| corrupt(err.to_string()))?;
        convs.push(ConvLayerSpec::new(shape, weights, b, e.acc_exponent, e.threshold)?);
    }
    let fc_shape = graph.fc().expect("classifier").clone();
    if (m.fc.features, m.fc.classes) != (fc_shape.in_channels, fc_shape.out_channels) {
        return Err(corrupt("classifier dimensions do not match the network"));
    }
    let fparams = QuantParams::new(m.fc.weight_bits, m.fc.weight_exponent).map_err(|e| corrupt(e.to_string()))?;
    let fw = reader.bytes(m.fc.weights, m.fc.features * m.fc.classes, "fc")?;
    let fb = reader.words(m.fc.bias, m.fc.classes, "fc")?;
    if reader.cursor != blob_len {
        return Err(corrupt(format!("{} trailing blob bytes", blob_len - reader.cursor)));
    }
    let fweights = IntTensor::new(vec![m.fc.classes, m.fc.features], fw, fparams).map_err(|e| corrupt(e.to_string()))?;
    let fc = FcLayerSpec::new(fc_shape, fweights, fb, m.fc.pool_area)?;
    let input = QuantParams::new(m.input.bits, m.input.exponent).map_err(|e| corrupt(e.to_string()))?;
    QuantizedModel::new(m.network, input, convs, fc, m.arrays).map_err(|e| corrupt(format!("model: {e}")))
}

pub fn read_model(path: impl AsRef<std::path::Path>) -> Result<QuantizedModel> {
    load_model(&std::fs::read(path)?)
}

pub fn write_model(path: impl AsRef<std::path::Path>, model: &QuantizedModel) -> Result<()> {
    std::fs::write(path, save_model(model)?)?;
    Ok(())
}
