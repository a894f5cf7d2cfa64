//! Declarative spatiotemporal networks.
//!
//! A [`ModelSpec`] is an ordered list of layers acting on `(C, T, H, W)`
//! activations. Temporal layers are causal valid-type convolutions whose
//! kernels come from a Jacobi basis; everything else acts frame by frame.
//! The same spec runs offline over a whole tensor ([`forward_offline`]) or
//! one frame at a time with ring buffers ([`StreamState`]).

mod cost;
mod decode;
mod forward;
mod io;
mod ops;
pub mod presets;
mod stream;

pub use cost::{cost_report, CostReport, LayerCost};
pub use decode::{decode_centernet, majority_filter, DecodeOptions, Detection};
pub use forward::{forward_offline, forward_offline_with, Padding};
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use ops::{gamma_gradient, temporal_forward};
pub use stream::{resample_model, warmup_latency, StreamState};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::exec::{spatial_out_extent, SpatialLayout, SpatialWeights};
use crate::kernels::{KernelCoefficients, KernelLayout};
use crate::planner::ContractionPath;
use crate::polybasis::{discrete_basis_with_reference, DiscreteBasis, JacobiParams};

/// Microseconds to seconds.
pub(crate) fn seconds(us: u64) -> f64 {
    us as f64 / 1e6
}

/// When a stream starts producing outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    /// Emit only once every temporal layer has seen `K` real inputs.
    #[default]
    Strict,
    /// Treat unseen frames as zeros and emit from the first frame.
    ZeroPadded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputGeometry {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }
}

/// Discretizes `params` at `num_bins` bins of `bin_size_us`, remembering
/// the bin size the model was originally built for.
pub fn temporal_basis(
    params: JacobiParams,
    num_bins: usize,
    bin_size_us: u64,
    reference_us: u64,
) -> Result<DiscreteBasis> {
    discrete_basis_with_reference(params, num_bins, seconds(bin_size_us), seconds(reference_us))
}

/// Temporal convolution with polynomial kernels. Without a contraction
/// path the kernel is materialized and applied directly; with one, the
/// layer runs as the three-operand einsum `input · γ · M(P̄)` along it.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConv {
    coeffs: KernelCoefficients,
    basis: DiscreteBasis,
    path: Option<ContractionPath>,
}

impl TemporalConv {
    pub fn new(coeffs: KernelCoefficients, basis: DiscreteBasis) -> Result<Self> {
        if coeffs.dims().basis_size != basis.basis_size() {
            return Err(shape(format!(
                "coefficients have {} basis terms, basis has {}",
                coeffs.dims().basis_size,
                basis.basis_size()
            )));
        }
        Ok(Self { coeffs, basis, path: None })
    }

    pub fn with_path(mut self, path: Option<ContractionPath>) -> Result<Self> {
        if let Some(p) = &path {
            p.validate(3)?;
        }
        self.path = path;
        Ok(self)
    }

    pub fn coeffs(&self) -> &KernelCoefficients {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut KernelCoefficients {
        &mut self.coeffs
    }

    pub fn basis(&self) -> &DiscreteBasis {
        &self.basis
    }

    pub fn path(&self) -> Option<&ContractionPath> {
        self.path.as_ref()
    }

    pub fn layout(&self) -> KernelLayout {
        self.coeffs.layout()
    }

    pub fn num_taps(&self) -> usize {
        self.basis.num_bins()
    }

    pub fn in_channels(&self) -> usize {
        self.coeffs.dims().in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.coeffs.dims().out_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialConv {
    pub weights: SpatialWeights,
    pub stride: usize,
}

impl SpatialConv {
    pub fn new(weights: SpatialWeights, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(invalid("stride must be at least 1"));
        }
        Ok(Self { weights, stride })
    }
}

/// Per-frame group normalization followed by a per-channel affine.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub groups: usize,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub eps: f64,
}

/// Folded batch normalization: `y = scale · x + shift` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// 1x1 channel mixing, `weights` laid out `(out, in)`, optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Pointwise {
    pub fn new(in_channels: usize, out_channels: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(invalid("pointwise layer needs non-zero channel counts"));
        }
        if weights.len() != in_channels * out_channels {
            return Err(shape(format!(
                "pointwise {in_channels}->{out_channels} needs {} weights, got {}",
                in_channels * out_channels,
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(shape(format!("bias has {} entries for {out_channels} outputs", b.len())));
            }
        }
        Ok(Self { in_channels, out_channels, weights, bias })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// Adds an earlier activation (index into the activation list, 0 being the
/// model input). Leading source frames are dropped to match the current
/// frame count, then an optional pointwise projection matches channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipSum {
    pub source: usize,
    pub projection: Option<Pointwise>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    TemporalConv(TemporalConv),
    SpatialConv(SpatialConv),
    GroupNorm(GroupNorm),
    BatchNorm(ChannelAffine),
    Relu,
    GlobalAvgPool2D,
    PointwiseHead(Pointwise),
    Upsample2x,
    SkipSum(SkipSum),
    /// Marks a detection output: `num_classes` heatmap logits followed by
    /// box height, width and centre offsets x, y.
    CenterNetHead {
        num_classes: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::TemporalConv(_) => "temporal_conv",
            Layer::SpatialConv(_) => "spatial_conv",
            Layer::GroupNorm(_) => "group_norm",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool2D => "global_avg_pool2d",
            Layer::PointwiseHead(_) => "pointwise_head",
            Layer::Upsample2x => "upsample2x",
            Layer::SkipSum(_) => "skip_sum",
            Layer::CenterNetHead { .. } => "centernet_head",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::TemporalConv(t) => t.coeffs.param_count(),
            Layer::SpatialConv(s) => s.weights.data().len(),
            Layer::GroupNorm(g) => g.scale.len() + g.shift.len(),
            Layer::BatchNorm(b) => b.scale.len() + b.shift.len(),
            Layer::PointwiseHead(p) => p.param_count(),
            Layer::SkipSum(s) => s.projection.as_ref().map_or(0, Pointwise::param_count),
            Layer::Relu | Layer::GlobalAvgPool2D | Layer::Upsample2x | Layer::CenterNetHead { .. } => 0,
        }
    }
}

/// Shape of an activation. `lag` is the number of leading frames consumed
/// by valid temporal convolutions so far, so a `T`-frame input yields
/// `T - lag` frames here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActShape {
    pub channels: usize,
    pub lag: usize,
    pub height: usize,
    pub width: usize,
}

/// Validated network: layers compose, temporal layers share the global
/// bin size.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input: InputGeometry,
    bin_size_us: u64,
    reference_bin_size_us: u64,
    emission: EmissionMode,
    layers: Vec<Layer>,
    shapes: Vec<ActShape>,
}

impl ModelSpec {
    pub fn new(input: InputGeometry, bin_size_us: u64, layers: Vec<Layer>) -> Result<Self> {
        Self::from_parts(input, bin_size_us, bin_size_us, EmissionMode::default(), layers)
    }

    pub(crate) fn from_parts(
        input: InputGeometry,
        bin_size_us: u64,
        reference_bin_size_us: u64,
        emission: EmissionMode,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if bin_size_us == 0 || reference_bin_size_us == 0 {
            return Err(invalid("bin size must be positive"));
        }
        if input.channels == 0 || input.height == 0 || input.width == 0 {
            return Err(invalid(format!("input geometry must be non-zero: {input:?}")));
        }
        let shapes = infer_shapes(input, bin_size_us, reference_bin_size_us, &layers)?;
        Ok(Self { input, bin_size_us, reference_bin_size_us, emission, layers, shapes })
    }

    pub fn with_emission(mut self, emission: EmissionMode) -> Self {
        self.emission = emission;
        self
    }

    /// Sets (or clears) the contraction path of temporal layer `index`.
    pub fn with_temporal_path(mut self, index: usize, path: Option<ContractionPath>) -> Result<Self> {
        match self.layers.get_mut(index) {
            Some(Layer::TemporalConv(t)) => {
                *t = t.clone().with_path(path)?;
                Ok(self)
            }
            _ => Err(Error::OutOfRange(format!("layer {index} is not a temporal convolution"))),
        }
    }

    pub fn input(&self) -> InputGeometry {
        self.input
    }

    pub fn bin_size_us(&self) -> u64 {
        self.bin_size_us
    }

    /// Bin size in seconds.
    pub fn bin_size(&self) -> f64 {
        seconds(self.bin_size_us)
    }

    pub fn reference_bin_size_us(&self) -> u64 {
        self.reference_bin_size_us
    }

    /// Factor applied to binned inputs after resampling,
    /// `Δτ_reference / Δτ`; 1 for a model at its original rate.
    pub fn input_scale(&self) -> f64 {
        self.reference_bin_size_us as f64 / self.bin_size_us as f64
    }

    pub fn emission(&self) -> EmissionMode {
        self.emission
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activation shapes, `layers().len() + 1` entries starting with the
    /// input.
    pub fn shapes(&self) -> &[ActShape] {
        &self.shapes
    }

    pub fn output_shape(&self) -> ActShape {
        *self.shapes.last().expect("shapes include the input")
    }

    /// Frames consumed by all valid temporal layers, `Σ (K - 1)`.
    pub fn temporal_lag(&self) -> usize {
        self.output_shape().lag
    }

    pub fn min_input_frames(&self) -> usize {
        self.temporal_lag() + 1
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn temporal_layers(&self) -> impl Iterator<Item = (usize, &TemporalConv)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::TemporalConv(t) => Some((i, t)),
            _ => None,
        })
    }
}

fn layer_err(i: usize, layer: &Layer, msg: impl std::fmt::Display) -> Error {
    shape(format!("layer {i} ({}): {msg}", layer.kind()))
}

fn same_rate(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn infer_shapes(input: InputGeometry, bin_us: u64, reference_us: u64, layers: &[Layer]) -> Result<Vec<ActShape>> {
    let mut shapes = vec![ActShape { channels: input.channels, lag: 0, height: input.height, width: input.width }];
    for (i, layer) in layers.iter().enumerate() {
        let cur = shapes[i];
        let c = cur.channels;
        let err = |msg: String| layer_err(i, layer, msg);
        let need_channels = |expected: usize| {
            if expected != c {
                Err(err(format!("expects {expected} input channels, receives {c}")))
            } else {
                Ok(())
            }
        };
        let next = match layer {
            Layer::TemporalConv(t) => {
                need_channels(t.in_channels())?;
                if !same_rate(t.basis.bin_size(), seconds(bin_us)) {
                    return Err(err(format!(
                        "bin size {} s differs from the model's {} s",
                        t.basis.bin_size(),
                        seconds(bin_us)
                    )));
                }
                if !same_rate(t.basis.reference_bin_size(), seconds(reference_us)) {
                    return Err(err("reference bin size differs from the model's".into()));
                }
                ActShape { channels: t.out_channels(), lag: cur.lag + t.num_taps() - 1, ..cur }
            }
            Layer::SpatialConv(s) => {
                need_channels(s.weights.in_channels())?;
                ActShape {
                    channels: s.weights.out_channels(),
                    height: spatial_out_extent(cur.height, s.stride),
                    width: spatial_out_extent(cur.width, s.stride),
                    ..cur
                }
            }
            Layer::GroupNorm(g) => {
                if g.scale.len() != c || g.shift.len() != c {
                    return Err(err(format!("affine has {} entries for {c} channels", g.scale.len())));
                }
                if g.groups == 0 || c % g.groups != 0 {
                    return Err(err(format!("{c} channels do not split into {} groups", g.groups)));
                }
                if g.eps.is_nan() || g.eps <= 0.0 {
                    return Err(err("eps must be positive".into()));
                }
                cur
            }
            Layer::BatchNorm(b) => {
                if b.scale.len() != c || b.shift.len() != c {
                    return Err(err(format!("affine has {} entries for {c} channels", b.scale.len())));
                }
                cur
            }
            Layer::CenterNetHead { num_classes } => {
                if c != num_classes + 4 {
                    return Err(err(format!("{num_classes} classes need {} channels, got {c}", num_classes + 4)));
                }
                cur
            }
            Layer::Relu => cur,
            Layer::GlobalAvgPool2D => ActShape { height: 1, width: 1, ..cur },
            Layer::PointwiseHead(p) => {
                need_channels(p.in_channels)?;
                ActShape { channels: p.out_channels, ..cur }
            }
            Layer::Upsample2x => ActShape { height: cur.height * 2, width: cur.width * 2, ..cur },
            Layer::SkipSum(s) => {
                if s.source > i {
                    return Err(err(format!("source activation {} is not computed yet", s.source)));
                }
                let src = shapes[s.source];
                if (src.height, src.width) != (cur.height, cur.width) {
                    return Err(err(format!(
                        "source is {}x{}, current activation is {}x{}",
                        src.height, src.width, cur.height, cur.width
                    )));
                }
                if src.lag > cur.lag {
                    return Err(err("source activation has fewer frames than the current one".into()));
                }
                match &s.projection {
                    Some(p) => {
                        if p.in_channels != src.channels || p.out_channels != c {
                            return Err(err(format!(
                                "projection {}->{} cannot map {} source channels onto {c}",
                                p.in_channels, p.out_channels, src.channels
                            )));
                        }
                    }
                    None if src.channels != c => {
                        return Err(err(format!("source has {} channels, current has {c}", src.channels)));
                    }
                    None => {}
                }
                cur
            }
        };
        shapes.push(next);
    }
    Ok(shapes)
}

/// Convenience for building spatial layers.
pub fn spatial(
    layout: SpatialLayout,
    in_channels: usize,
    out_channels: usize,
    data: Vec<f64>,
    stride: usize,
) -> Result<Layer> {
    Ok(Layer::SpatialConv(SpatialConv::new(SpatialWeights::new(layout, in_channels, out_channels, data)?, stride)?))
}
