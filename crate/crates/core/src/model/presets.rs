//! Deterministically initialized reference networks.
//!
//! Weights are random (seeded ChaCha8), not trained; the presets exist to
//! exercise shapes, streaming and cost accounting.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::exec::{SpatialLayout, SpatialWeights};
use crate::kernels::{KernelCoefficients, KernelDims, KernelLayout};
use crate::polybasis::JacobiParams;

use super::{
    temporal_basis, ChannelAffine, GroupNorm, InputGeometry, Layer, ModelSpec, Pointwise, SkipSum, SpatialConv,
    TemporalConv,
};

/// Jacobi parameters used by every preset temporal layer.
pub const DEFAULT_ALPHA: f64 = -0.25;
pub const DEFAULT_BETA: f64 = -0.25;
pub const DEFAULT_DEGREE: usize = 4;
/// Groups of the per-frame group normalization after temporal layers.
pub const NORM_GROUPS: usize = 4;

/// Appends layers while tracking the running activation shape.
pub struct NetBuilder {
    input: InputGeometry,
    bin_size_us: u64,
    params: JacobiParams,
    rng: ChaCha8Rng,
    layers: Vec<Layer>,
    channels: usize,
    height: usize,
    width: usize,
}

impl NetBuilder {
    pub fn new(input: InputGeometry, bin_size_us: u64, seed: u64) -> Result<Self> {
        Ok(Self {
            input,
            bin_size_us,
            params: JacobiParams::new(DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_DEGREE)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            layers: Vec::new(),
            channels: input.channels,
            height: input.height,
            width: input.width,
        })
    }

    pub fn with_params(mut self, params: JacobiParams) -> Self {
        self.params = params;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Index of the current activation, for skip connections.
    pub fn mark(&self) -> usize {
        self.layers.len()
    }

    fn uniform(&mut self, n: usize, fan_in: usize) -> Vec<f64> {
        let s = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| self.rng.gen_range(-s..=s)).collect()
    }

    pub fn temporal(&mut self, layout: KernelLayout, out: usize, num_bins: usize) -> Result<&mut Self> {
        let nb = self.params.basis_size();
        let c = self.channels;
        let dims = match layout {
            KernelLayout::Full => KernelDims::new(out, c, nb),
            KernelLayout::Depthwise => {
                if out != c {
                    return Err(invalid("depthwise temporal layer keeps the channel count"));
                }
                KernelDims::depthwise(c, nb)
            }
        };
        let fan_in = match layout {
            KernelLayout::Full => c * nb,
            KernelLayout::Depthwise => nb,
        };
        let gamma = self.uniform(dims.kernel_count(layout) * nb, fan_in);
        let coeffs = KernelCoefficients::new(layout, dims, gamma)?;
        let basis = temporal_basis(self.params, num_bins, self.bin_size_us, self.bin_size_us)?;
        self.layers.push(Layer::TemporalConv(TemporalConv::new(coeffs, basis)?));
        self.channels = out;
        Ok(self)
    }

    pub fn spatial(&mut self, layout: SpatialLayout, out: usize, stride: usize) -> Result<&mut Self> {
        let c = self.channels;
        let n = SpatialWeights::expected_len(layout, c, out);
        let fan_in = match layout {
            SpatialLayout::Full => 9 * c,
            SpatialLayout::Depthwise => 9,
            SpatialLayout::Pointwise => c,
        };
        let data = self.uniform(n, fan_in);
        self.layers.push(Layer::SpatialConv(SpatialConv::new(SpatialWeights::new(layout, c, out, data)?, stride)?));
        self.channels = out;
        self.height = (self.height - 1) / stride + 1;
        self.width = (self.width - 1) / stride + 1;
        Ok(self)
    }

    fn affine(&mut self) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels;
        let scale = (0..c).map(|_| self.rng.gen_range(0.5..=1.5)).collect();
        let shift = (0..c).map(|_| self.rng.gen_range(-0.1..=0.1)).collect();
        (scale, shift)
    }

    pub fn group_norm(&mut self, groups: usize) -> &mut Self {
        let (scale, shift) = self.affine();
        self.layers.push(Layer::GroupNorm(GroupNorm { groups, scale, shift, eps: 1e-5 }));
        self
    }

    pub fn batch_norm(&mut self) -> &mut Self {
        let (scale, shift) = self.affine();
        self.layers.push(Layer::BatchNorm(ChannelAffine { scale, shift }));
        self
    }

    pub fn relu(&mut self) -> &mut Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn global_pool(&mut self) -> &mut Self {
        self.layers.push(Layer::GlobalAvgPool2D);
        self.height = 1;
        self.width = 1;
        self
    }

    pub fn pointwise_head(&mut self, out: usize, bias: bool) -> Result<&mut Self> {
        let c = self.channels;
        let weights = self.uniform(c * out, c);
        let bias = bias.then(|| self.uniform(out, c));
        self.layers.push(Layer::PointwiseHead(Pointwise::new(c, out, weights, bias)?));
        self.channels = out;
        Ok(self)
    }

    pub fn upsample(&mut self) -> &mut Self {
        self.layers.push(Layer::Upsample2x);
        self.height *= 2;
        self.width *= 2;
        self
    }

    /// Skip connection from activation `source`, projected from
    /// `source_channels` when that differs from the current width.
    pub fn skip(&mut self, source: usize, source_channels: usize) -> Result<&mut Self> {
        let c = self.channels;
        let projection = if source_channels != c {
            Some(Pointwise::new(source_channels, c, self.uniform(source_channels * c, source_channels), None)?)
        } else {
            None
        };
        self.layers.push(Layer::SkipSum(SkipSum { source, projection }));
        Ok(self)
    }

    pub fn centernet(&mut self, num_classes: usize) -> &mut Self {
        self.layers.push(Layer::CenterNetHead { num_classes });
        self
    }

    /// Temporal layer, group norm, ReLU, spatial 3x3, batch norm, ReLU.
    /// A depthwise-separable block factorizes both convolutions into a
    /// depthwise stage and a pointwise stage.
    pub fn block(
        &mut self,
        separable: bool,
        mid: usize,
        out: usize,
        num_bins: usize,
        stride: usize,
    ) -> Result<&mut Self> {
        if separable {
            let c = self.channels;
            self.temporal(KernelLayout::Depthwise, c, num_bins)?;
            self.spatial(SpatialLayout::Pointwise, mid, 1)?;
        } else {
            self.temporal(KernelLayout::Full, mid, num_bins)?;
        }
        self.group_norm(NORM_GROUPS.min(mid)).relu();
        self.spatial_stage(separable, out, stride)
    }

    /// Spatial 3x3 stage of a block, with batch norm and ReLU.
    pub fn spatial_stage(&mut self, separable: bool, out: usize, stride: usize) -> Result<&mut Self> {
        if separable {
            let c = self.channels;
            self.spatial(SpatialLayout::Depthwise, c, stride)?.relu();
            self.spatial(SpatialLayout::Pointwise, out, 1)?;
        } else {
            self.spatial(SpatialLayout::Full, out, stride)?;
        }
        self.batch_norm().relu();
        Ok(self)
    }

    /// Residual 2D block: depthwise 3x3, pointwise expanding 4x, pointwise
    /// back down, each followed by batch norm, ReLU between; the input is
    /// added back at the end.
    pub fn bottleneck(&mut self) -> Result<&mut Self> {
        let c = self.channels;
        let start = self.mark();
        self.spatial(SpatialLayout::Depthwise, c, 1)?.batch_norm().relu();
        self.spatial(SpatialLayout::Pointwise, 4 * c, 1)?.batch_norm().relu();
        self.spatial(SpatialLayout::Pointwise, c, 1)?.batch_norm();
        self.skip(start, c)
    }

    pub fn build(self) -> Result<ModelSpec> {
        ModelSpec::new(self.input, self.bin_size_us, self.layers)
    }
}

/// Hourglass detector for 160x320 two-polarity input at 10 ms bins, with
/// a 7-class CenterNet head on a 40x80 grid.
///
/// Encoder: a full block (2 -> 16 -> 32, stride 2), a residual
/// bottleneck, separable blocks 32 -> 48 -> 64 and 64 -> 80 -> 96 (stride
/// 2 each, a bottleneck after the first), then separable spatial stages
/// 96 -> 128 and 128 -> 256 (stride 2). Decoder: three rounds of 2x
/// upsampling, a projected skip from the encoder activation at the same
/// resolution, and a separable 256 -> 256 spatial stage. Head: a
/// separable block 256 -> 256 -> 128 whose temporal layer has a single
/// bin, then a biased pointwise layer to `7 + 4` outputs.
pub fn prophesee_detector(seed: u64) -> Result<ModelSpec> {
    let mut b = NetBuilder::new(InputGeometry::new(2, 160, 320), 10_000, seed)?;
    b.block(false, 16, 32, 10, 2)?;
    b.bottleneck()?;
    b.block(true, 48, 64, 10, 2)?;
    b.bottleneck()?;
    let s40 = (b.mark(), b.channels());
    b.block(true, 80, 96, 10, 2)?;
    let s20 = (b.mark(), b.channels());
    b.spatial_stage(true, 128, 2)?;
    let s10 = (b.mark(), b.channels());
    b.spatial_stage(true, 256, 2)?;
    for (source, channels) in [s10, s20, s40] {
        b.upsample();
        b.skip(source, channels)?;
        b.spatial_stage(true, 256, 1)?;
    }
    b.block(true, 256, 128, 1, 1)?;
    b.pointwise_head(11, true)?;
    b.centernet(7);
    b.build()
}

/// Five-block gesture classifier: global pooling and a two-layer
/// pointwise MLP on top of the backbone.
pub fn gesture_classifier(
    seed: u64,
    height: usize,
    width: usize,
    num_bins: usize,
    num_classes: usize,
) -> Result<ModelSpec> {
    let mut b = NetBuilder::new(InputGeometry::new(2, height, width), 10_000, seed)?;
    b.block(false, 8, 16, num_bins, 2)?;
    b.block(true, 16, 16, num_bins, 2)?;
    b.block(true, 16, 32, num_bins, 2)?;
    b.block(true, 32, 32, num_bins, 1)?;
    b.block(true, 32, 32, num_bins, 1)?;
    b.global_pool();
    b.pointwise_head(32, true)?.relu();
    b.pointwise_head(num_classes, true)?;
    b.build()
}

/// Randomly shaped stack of `blocks` spatiotemporal blocks (full or
/// separable, stride 1 or 2, 4 or 8 channels), occasionally with a
/// residual connection.
pub fn random_blocks(
    seed: u64,
    blocks: usize,
    num_bins: usize,
    input: InputGeometry,
    bin_size_us: u64,
) -> Result<ModelSpec> {
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut b = NetBuilder::new(input, bin_size_us, seed)?;
    for _ in 0..blocks {
        let separable = pick.gen_bool(0.5);
        let mid = if separable { 4 } else { [4, 8][pick.gen_range(0..2)] };
        let out = [4, 8][pick.gen_range(0..2)];
        let stride = if b.height > 2 && pick.gen_bool(0.3) { 2 } else { 1 };
        let residual = stride == 1 && out == b.channels() && pick.gen_bool(0.5);
        let start = (b.mark(), b.channels());
        b.block(separable, mid, out, num_bins, stride)?;
        if residual {
            b.skip(start.0, start.1)?;
        }
    }
    b.build()
}

/// Purely linear two-block model (no norms or activations):
/// temporal 2 -> c, spatial 3x3, temporal c -> c, pointwise c -> 2.
pub fn linear_two_block(
    seed: u64,
    num_bins: usize,
    bin_size_us: u64,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ModelSpec> {
    let mut b = NetBuilder::new(InputGeometry::new(2, height, width), bin_size_us, seed)?;
    b.temporal(KernelLayout::Full, channels, num_bins)?;
    b.spatial(SpatialLayout::Full, channels, 1)?;
    b.temporal(KernelLayout::Full, channels, num_bins)?;
    b.spatial(SpatialLayout::Pointwise, 2, 1)?;
    b.build()
}

/// A single full temporal layer `in -> out`.
pub fn single_temporal(
    seed: u64,
    in_channels: usize,
    out_channels: usize,
    num_bins: usize,
    bin_size_us: u64,
    geometry: (usize, usize),
) -> Result<ModelSpec> {
    let mut b = NetBuilder::new(InputGeometry::new(in_channels, geometry.0, geometry.1), bin_size_us, seed)?;
    b.temporal(KernelLayout::Full, out_channels, num_bins)?;
    b.build()
}

/// `layers` temporal layers of `num_bins` bins with ReLU in between.
pub fn temporal_stack(
    seed: u64,
    layers: usize,
    num_bins: usize,
    channels: usize,
    bin_size_us: u64,
    geometry: (usize, usize),
) -> Result<ModelSpec> {
    let mut b = NetBuilder::new(InputGeometry::new(channels, geometry.0, geometry.1), bin_size_us, seed)?;
    for i in 0..layers {
        if i > 0 {
            b.relu();
        }
        b.temporal(KernelLayout::Full, channels, num_bins)?;
    }
    b.build()
}
