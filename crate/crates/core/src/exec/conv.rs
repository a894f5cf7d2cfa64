//! Direct temporal and spatial convolutions on `(C, T, H, W)` volumes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::kernels::{DiscreteKernel, KernelLayout};
use crate::planner::ConvMode;
use crate::tensor::DenseTensor;

/// Causal valid temporal convolution, applied independently at every
/// pixel. Output frame `t'` uses input frames `t' .. t' + K`, the last of
/// which meets the most recent tap.
pub fn temporal_conv(input: &DenseTensor, kernel: &DiscreteKernel) -> Result<DenseTensor> {
    temporal_conv_mode(input, kernel, ConvMode::Valid)
}

/// Temporal convolution in either mode; same mode prepends `K - 1` zero
/// frames.
pub fn temporal_conv_mode(input: &DenseTensor, kernel: &DiscreteKernel, mode: ConvMode) -> Result<DenseTensor> {
    let (c, t, h, w) = input.dims4()?;
    let k = kernel.num_taps();
    if c != kernel.in_channels() {
        return Err(shape(format!("input has {c} channels, kernel expects {}", kernel.in_channels())));
    }
    let (t_out, pad) = match mode {
        ConvMode::Valid => {
            if t < k {
                return Err(invalid(format!("{t} frames are fewer than the {k} kernel taps")));
            }
            (t - k + 1, 0)
        }
        ConvMode::Same => (t, k - 1),
    };
    let plane = h * w;
    let d_out = kernel.out_channels();
    let mut out = vec![0.0; d_out * t_out * plane];
    let src = input.data();
    let mut accumulate = |d: usize, ci: usize, taps: &[f64]| {
        for tp in 0..t_out {
            let dst = &mut out[(d * t_out + tp) * plane..(d * t_out + tp + 1) * plane];
            for (j, &tap) in taps.iter().enumerate() {
                let pos = tp + j;
                if pos < pad {
                    continue;
                }
                let ti = pos - pad;
                let s = &src[(ci * t + ti) * plane..(ci * t + ti + 1) * plane];
                for (o, v) in dst.iter_mut().zip(s) {
                    *o += tap * v;
                }
            }
        }
    };
    match kernel.layout() {
        KernelLayout::Full => {
            for d in 0..d_out {
                for ci in 0..c {
                    accumulate(d, ci, kernel.taps(d * c + ci));
                }
            }
        }
        KernelLayout::Depthwise => {
            for ci in 0..c {
                accumulate(ci, ci, kernel.taps(ci));
            }
        }
    }
    DenseTensor::volume(d_out, t_out, h, w, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialLayout {
    /// 3x3 kernel per (output, input) channel pair, `(D, C, 3, 3)`.
    Full,
    /// 3x3 kernel per channel, `(C, 3, 3)`.
    Depthwise,
    /// 1x1 channel mixing, `(D, C)`.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    layout: SpatialLayout,
    in_channels: usize,
    out_channels: usize,
    data: Vec<f64>,
}

impl SpatialWeights {
    pub fn new(layout: SpatialLayout, in_channels: usize, out_channels: usize, data: Vec<f64>) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(invalid("spatial convolution needs non-zero channel counts"));
        }
        if layout == SpatialLayout::Depthwise && in_channels != out_channels {
            return Err(invalid(format!(
                "depthwise spatial convolution maps {in_channels} to {out_channels} channels"
            )));
        }
        let expected = Self::expected_len(layout, in_channels, out_channels);
        if data.len() != expected {
            return Err(shape(format!(
                "{layout:?} {in_channels}->{out_channels} needs {expected} weights, got {}",
                data.len()
            )));
        }
        Ok(Self { layout, in_channels, out_channels, data })
    }

    pub fn expected_len(layout: SpatialLayout, in_channels: usize, out_channels: usize) -> usize {
        match layout {
            SpatialLayout::Full => out_channels * in_channels * 9,
            SpatialLayout::Depthwise => in_channels * 9,
            SpatialLayout::Pointwise => out_channels * in_channels,
        }
    }

    pub fn layout(&self) -> SpatialLayout {
        self.layout
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> u64 {
        self.data.len() as u64
    }
}

/// Output extent of a spatial axis: zero padding keeps the extent at
/// stride 1, and stride 2 samples the top-left aligned grid.
pub fn spatial_out_extent(extent: usize, stride: usize) -> usize {
    (extent - 1) / stride + 1
}

/// Per-frame 2D convolution; frames are independent.
pub fn spatial_conv2d(input: &DenseTensor, weights: &SpatialWeights, stride: usize) -> Result<DenseTensor> {
    let (c, t, h, w) = input.dims4()?;
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    if c != weights.in_channels {
        return Err(shape(format!("input has {c} channels, spatial weights expect {}", weights.in_channels)));
    }
    let (ho, wo) = (spatial_out_extent(h, stride), spatial_out_extent(w, stride));
    let d = weights.out_channels;
    let mut out = vec![0.0; d * t * ho * wo];
    let src = input.data();
    let wd = &weights.data;
    // 3x3 accumulate of input channel `ci` into output channel `co`
    let mut conv3 = |co: usize, ci: usize, k: &[f64]| {
        for ti in 0..t {
            let s = &src[(ci * t + ti) * h * w..(ci * t + ti + 1) * h * w];
            let o = &mut out[(co * t + ti) * ho * wo..(co * t + ti + 1) * ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += k[ky * 3 + kx] * s[iy as usize * w + ix as usize];
                        }
                    }
                    o[oy * wo + ox] += acc;
                }
            }
        }
    };
    match weights.layout {
        SpatialLayout::Full => {
            for co in 0..d {
                for ci in 0..c {
                    let base = (co * c + ci) * 9;
                    conv3(co, ci, &wd[base..base + 9]);
                }
            }
        }
        SpatialLayout::Depthwise => {
            for ci in 0..c {
                conv3(ci, ci, &wd[ci * 9..ci * 9 + 9]);
            }
        }
        SpatialLayout::Pointwise => {
            for co in 0..d {
                for ci in 0..c {
                    let wv = wd[co * c + ci];
                    for ti in 0..t {
                        let s = &src[(ci * t + ti) * h * w..(ci * t + ti + 1) * h * w];
                        let o = &mut out[(co * t + ti) * ho * wo..(co * t + ti + 1) * ho * wo];
                        for oy in 0..ho {
                            for ox in 0..wo {
                                o[oy * wo + ox] += wv * s[oy * stride * w + ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    DenseTensor::volume(d, t, ho, wo, out)
}
