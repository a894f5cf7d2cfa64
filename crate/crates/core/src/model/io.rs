//! Model files.
//!
//! Layout, all little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `PCMODEL\0`                          |
//! | 4     | `u32` format version                      |
//! | 8     | `u64` header length `L`                   |
//! | L     | UTF-8 JSON header                         |
//! | ...   | `f64` arrays, in the header's array order |
//!
//! The header lists the layers with their hyperparameters (Jacobi `α`,
//! `β`, degree `N`, bin count `K` for temporal layers), the bin size and
//! reference bin size in microseconds, the emission mode, and every
//! array's name and shape. Discrete bases are not stored; they are
//! regenerated on load.

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{SpatialLayout, SpatialWeights};
use crate::kernels::{KernelCoefficients, KernelDims, KernelLayout};
use crate::planner::ContractionPath;
use crate::polybasis::JacobiParams;

use super::{
    temporal_basis, ChannelAffine, EmissionMode, GroupNorm, InputGeometry, Layer, ModelSpec, Pointwise, SkipSum,
    SpatialConv, TemporalConv,
};

pub const MODEL_MAGIC: [u8; 8] = *b"PCMODEL\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    bin_size_us: u64,
    reference_bin_size_us: u64,
    input: InputGeometry,
    emission: EmissionMode,
    layers: Vec<LayerHeader>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerHeader {
    TemporalConv {
        layout: KernelLayout,
        in_channels: usize,
        out_channels: usize,
        alpha: f64,
        beta: f64,
        degree: usize,
        num_bins: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    SpatialConv {
        layout: SpatialLayout,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    GroupNorm {
        channels: usize,
        groups: usize,
        eps: f64,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    GlobalAvgPool2d,
    PointwiseHead {
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    },
    Upsample2x,
    SkipSum {
        source: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        projection: Option<[usize; 2]>,
    },
    CenternetHead {
        num_classes: usize,
    },
}

fn entry(i: usize, what: &str, shape: Vec<usize>) -> ArrayEntry {
    ArrayEntry { name: format!("layer{i}.{what}"), shape }
}

/// Arrays a layer header implies, in storage order.
fn expected_arrays(i: usize, h: &LayerHeader) -> Vec<ArrayEntry> {
    match *h {
        LayerHeader::TemporalConv { layout, in_channels, out_channels, degree, .. } => {
            let shape = match layout {
                KernelLayout::Full => vec![out_channels, in_channels, degree + 1],
                KernelLayout::Depthwise => vec![in_channels, degree + 1],
            };
            vec![entry(i, "gamma", shape)]
        }
        LayerHeader::SpatialConv { layout, in_channels, out_channels, .. } => {
            let shape = match layout {
                SpatialLayout::Full => vec![out_channels, in_channels, 3, 3],
                SpatialLayout::Depthwise => vec![in_channels, 3, 3],
                SpatialLayout::Pointwise => vec![out_channels, in_channels],
            };
            vec![entry(i, "weights", shape)]
        }
        LayerHeader::GroupNorm { channels, .. } | LayerHeader::BatchNorm { channels } => {
            vec![entry(i, "scale", vec![channels]), entry(i, "shift", vec![channels])]
        }
        LayerHeader::PointwiseHead { in_channels, out_channels, bias } => {
            let mut v = vec![entry(i, "weights", vec![out_channels, in_channels])];
            if bias {
                v.push(entry(i, "bias", vec![out_channels]));
            }
            v
        }
        LayerHeader::SkipSum { projection: Some([cin, cout]), .. } => {
            vec![entry(i, "projection", vec![cout, cin])]
        }
        _ => vec![],
    }
}

fn describe(layer: &Layer, arrays: &mut Vec<Vec<f64>>) -> LayerHeader {
    match layer {
        Layer::TemporalConv(tc) => {
            let p = tc.basis().params();
            arrays.push(tc.coeffs().gamma().to_vec());
            LayerHeader::TemporalConv {
                layout: tc.layout(),
                in_channels: tc.in_channels(),
                out_channels: tc.out_channels(),
                alpha: p.alpha,
                beta: p.beta,
                degree: p.degree,
                num_bins: tc.num_taps(),
                path: tc.path().map(ToString::to_string),
            }
        }
        Layer::SpatialConv(s) => {
            arrays.push(s.weights.data().to_vec());
            LayerHeader::SpatialConv {
                layout: s.weights.layout(),
                in_channels: s.weights.in_channels(),
                out_channels: s.weights.out_channels(),
                stride: s.stride,
            }
        }
        Layer::GroupNorm(g) => {
            arrays.push(g.scale.clone());
            arrays.push(g.shift.clone());
            LayerHeader::GroupNorm { channels: g.scale.len(), groups: g.groups, eps: g.eps }
        }
        Layer::BatchNorm(b) => {
            arrays.push(b.scale.clone());
            arrays.push(b.shift.clone());
            LayerHeader::BatchNorm { channels: b.scale.len() }
        }
        Layer::Relu => LayerHeader::Relu,
        Layer::GlobalAvgPool2D => LayerHeader::GlobalAvgPool2d,
        Layer::PointwiseHead(p) => {
            arrays.push(p.weights.clone());
            if let Some(b) = &p.bias {
                arrays.push(b.clone());
            }
            LayerHeader::PointwiseHead {
                in_channels: p.in_channels,
                out_channels: p.out_channels,
                bias: p.bias.is_some(),
            }
        }
        Layer::Upsample2x => LayerHeader::Upsample2x,
        Layer::SkipSum(s) => {
            if let Some(p) = &s.projection {
                arrays.push(p.weights.clone());
            }
            LayerHeader::SkipSum {
                source: s.source,
                projection: s.projection.as_ref().map(|p| [p.in_channels, p.out_channels]),
            }
        }
        Layer::CenterNetHead { num_classes } => LayerHeader::CenternetHead { num_classes: *num_classes },
    }
}

pub fn save_model(spec: &ModelSpec) -> Result<Vec<u8>> {
    let mut arrays = Vec::new();
    let mut layers = Vec::new();
    let mut entries = Vec::new();
    for (i, layer) in spec.layers().iter().enumerate() {
        let h = describe(layer, &mut arrays);
        entries.extend(expected_arrays(i, &h));
        layers.push(h);
    }
    let header = Header {
        bin_size_us: spec.bin_size_us(),
        reference_bin_size_us: spec.reference_bin_size_us(),
        input: spec.input(),
        emission: spec.emission(),
        layers,
        arrays: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
    let n_values: usize = arrays.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * n_values);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for a in &arrays {
        let start = out.len();
        out.resize(start + 8 * a.len(), 0);
        LittleEndian::write_f64_into(a, &mut out[start..]);
    }
    Ok(out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Parse("model file is truncated".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Parse("array too large".into()))?)?;
        let mut v = vec![0.0; n];
        LittleEndian::read_f64_into(bytes, &mut v);
        Ok(v)
    }
}

fn layer_error(i: usize, kind: &str, e: Error) -> Error {
    Error::Shape(format!("layer {i} ({kind}): {e}"))
}

fn build_layer(
    i: usize,
    h: &LayerHeader,
    arrays: &mut impl Iterator<Item = Vec<f64>>,
    header: &Header,
) -> Result<Layer> {
    layer_from_header(h, arrays, header).map_err(|e| layer_error(i, layer_kind(h), e))
}

fn layer_from_header(h: &LayerHeader, arrays: &mut impl Iterator<Item = Vec<f64>>, header: &Header) -> Result<Layer> {
    let mut next = || arrays.next().expect("array count checked against the header");
    Ok(match *h {
        LayerHeader::TemporalConv { layout, in_channels, out_channels, alpha, beta, degree, num_bins, ref path } => {
            let params = JacobiParams::new(alpha, beta, degree)?;
            let dims = match layout {
                KernelLayout::Full => KernelDims::new(out_channels, in_channels, degree + 1),
                KernelLayout::Depthwise => {
                    if in_channels != out_channels {
                        return Err(Error::Shape("depthwise layer with unequal channels".into()));
                    }
                    KernelDims::depthwise(in_channels, degree + 1)
                }
            };
            let coeffs = KernelCoefficients::new(layout, dims, next())?;
            let basis = temporal_basis(params, num_bins, header.bin_size_us, header.reference_bin_size_us)?;
            let path = path.as_deref().map(ContractionPath::parse).transpose()?;
            Layer::TemporalConv(TemporalConv::new(coeffs, basis)?.with_path(path)?)
        }
        LayerHeader::SpatialConv { layout, in_channels, out_channels, stride } => Layer::SpatialConv(SpatialConv::new(
            SpatialWeights::new(layout, in_channels, out_channels, next())?,
            stride,
        )?),
        LayerHeader::GroupNorm { groups, eps, .. } => {
            Layer::GroupNorm(GroupNorm { groups, scale: next(), shift: next(), eps })
        }
        LayerHeader::BatchNorm { .. } => Layer::BatchNorm(ChannelAffine { scale: next(), shift: next() }),
        LayerHeader::Relu => Layer::Relu,
        LayerHeader::GlobalAvgPool2d => Layer::GlobalAvgPool2D,
        LayerHeader::PointwiseHead { in_channels, out_channels, bias } => {
            let weights = next();
            let bias = bias.then(&mut next);
            Layer::PointwiseHead(Pointwise::new(in_channels, out_channels, weights, bias)?)
        }
        LayerHeader::Upsample2x => Layer::Upsample2x,
        LayerHeader::SkipSum { source, projection } => {
            let projection = match projection {
                Some([cin, cout]) => Some(Pointwise::new(cin, cout, next(), None)?),
                None => None,
            };
            Layer::SkipSum(SkipSum { source, projection })
        }
        LayerHeader::CenternetHead { num_classes } => Layer::CenterNetHead { num_classes },
    })
}

fn layer_kind(h: &LayerHeader) -> &'static str {
    match h {
        LayerHeader::TemporalConv { .. } => "temporal_conv",
        LayerHeader::SpatialConv { .. } => "spatial_conv",
        LayerHeader::GroupNorm { .. } => "group_norm",
        LayerHeader::BatchNorm { .. } => "batch_norm",
        LayerHeader::Relu => "relu",
        LayerHeader::GlobalAvgPool2d => "global_avg_pool2d",
        LayerHeader::PointwiseHead { .. } => "pointwise_head",
        LayerHeader::Upsample2x => "upsample2x",
        LayerHeader::SkipSum { .. } => "skip_sum",
        LayerHeader::CenternetHead { .. } => "centernet_head",
    }
}

pub fn load_model(bytes: &[u8]) -> Result<ModelSpec> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(Error::Parse("not a model file (bad magic)".into()));
    }
    let version = LittleEndian::read_u32(r.take(4)?);
    if version != MODEL_VERSION {
        return Err(Error::Parse(format!("model file version {version} is not supported (expected {MODEL_VERSION})")));
    }
    let len = LittleEndian::read_u64(r.take(8)?);
    let len = usize::try_from(len).map_err(|_| Error::Parse("header length overflows".into()))?;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Parse(format!("model header: {e}")))?;

    let mut expected = Vec::new();
    for (i, h) in header.layers.iter().enumerate() {
        expected.extend(expected_arrays(i, h));
    }
    if expected.len() != header.arrays.len() {
        return Err(Error::Parse(format!(
            "header lists {} arrays, its layers need {}",
            header.arrays.len(),
            expected.len()
        )));
    }
    for (want, got) in expected.iter().zip(&header.arrays) {
        if want != got {
            let layer = want.name.split('.').next().unwrap_or_default();
            return Err(Error::Shape(format!(
                "{layer}: array {} declared {:?}, layer implies {} {:?}",
                got.name, got.shape, want.name, want.shape
            )));
        }
    }
    let mut arrays = Vec::with_capacity(expected.len());
    for e in &expected {
        arrays.push(r.values(e.shape.iter().product())?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!("{} trailing bytes after the arrays", bytes.len() - r.pos)));
    }
    let mut it = arrays.into_iter();
    let layers = header
        .layers
        .iter()
        .enumerate()
        .map(|(i, h)| build_layer(i, h, &mut it, &header))
        .collect::<Result<Vec<_>>>()?;
    ModelSpec::from_parts(header.input, header.bin_size_us, header.reference_bin_size_us, header.emission, layers)
}
