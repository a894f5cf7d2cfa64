//! Layer evaluation on `(C, T, H, W)` activations.

use crate::error::{shape, Result};
use crate::exec::{execute_path, spatial_conv2d, temporal_conv_mode, ConvOperator};
use crate::kernels::{materialize, KernelLayout};
use crate::planner::{parse_expr, sizes_from, ConvMode, ConvPair, EinsumExpr};
use crate::tensor::{DenseTensor, Label};

use super::{ChannelAffine, GroupNorm, Layer, Pointwise, TemporalConv};

/// Einsum form of a temporal layer over a `(C, frames, h, w)` input:
/// `ctyx,dcn,nt't->dt'yx` for full kernels, `ctyx,cn,nt't->ct'yx` for
/// depthwise ones.
pub(crate) fn temporal_expr(
    tc: &TemporalConv,
    frames: usize,
    h: usize,
    w: usize,
    mode: ConvMode,
) -> Result<EinsumExpr> {
    let dims = tc.coeffs.dims();
    let spec = match tc.layout() {
        KernelLayout::Full => "ctyx,dcn,nt't->dt'yx",
        KernelLayout::Depthwise => "ctyx,cn,nt't->ct'yx",
    };
    let sizes = sizes_from([
        ("c", dims.in_channels),
        ("d", dims.out_channels),
        ("n", dims.basis_size),
        ("t", frames),
        ("y", h),
        ("x", w),
    ]);
    parse_expr(spec, &sizes, vec![ConvPair::new("t", "t'", tc.num_taps())], mode)
}

fn gamma_tensor(tc: &TemporalConv) -> Result<DenseTensor> {
    let dims = tc.coeffs.dims();
    let (labels, shape) = match tc.layout() {
        KernelLayout::Full => (vec!["d", "c", "n"], vec![dims.out_channels, dims.in_channels, dims.basis_size]),
        KernelLayout::Depthwise => (vec!["c", "n"], vec![dims.in_channels, dims.basis_size]),
    };
    DenseTensor::new(labels.into_iter().map(Label::from).collect(), shape, tc.coeffs.gamma().to_vec())
}

/// Runs a temporal layer, along its contraction path when it has one.
pub fn temporal_forward(tc: &TemporalConv, input: &DenseTensor, mode: ConvMode) -> Result<DenseTensor> {
    let Some(path) = &tc.path else {
        return temporal_conv_mode(input, &materialize(&tc.coeffs, &tc.basis)?, mode);
    };
    let (c, t, h, w) = input.dims4()?;
    if c != tc.in_channels() {
        return Err(shape(format!("input has {c} channels, temporal layer expects {}", tc.in_channels())));
    }
    let expr = temporal_expr(tc, t, h, w, mode)?;
    let op = ConvOperator::from_basis(&tc.basis, "n".into(), "t".into(), "t'".into(), t, mode)?;
    let operands = vec![input.clone().into(), gamma_tensor(tc)?.into(), op.into()];
    let out = execute_path(&expr, operands, path, false)?.output;
    let (d, t_out) = (out.shape()[0], out.shape()[1]);
    DenseTensor::volume(d, t_out, h, w, out.into_data())
}

/// Gradient of `Σ grad_output · y` with respect to the layer's
/// coefficients, laid out like `γ`. The layer is linear in `γ`, so each
/// entry is the output-gradient inner product with the input filtered by
/// one basis row.
pub fn gamma_gradient(tc: &TemporalConv, input: &DenseTensor, grad_output: &DenseTensor) -> Result<Vec<f64>> {
    let (c, t, h, w) = input.dims4()?;
    let k = tc.num_taps();
    let dims = tc.coeffs.dims();
    if c != dims.in_channels || t < k {
        return Err(shape("input does not fit the temporal layer"));
    }
    let t_out = t - k + 1;
    let plane = h * w;
    let (gd, gt, gh, gw) = grad_output.dims4()?;
    if (gd, gt, gh, gw) != (dims.out_channels, t_out, h, w) {
        return Err(shape(format!(
            "output gradient is {:?}, layer output is {:?}",
            (gd, gt, gh, gw),
            (dims.out_channels, t_out, h, w)
        )));
    }
    let nb = dims.basis_size;
    let u = input.data();
    let g = grad_output.data();
    // filtered[c][n][t'][p]
    let mut filtered = vec![0.0; c * nb * t_out * plane];
    for ci in 0..c {
        for n in 0..nb {
            let row = tc.basis.row(n);
            for tp in 0..t_out {
                let dst = &mut filtered[((ci * nb + n) * t_out + tp) * plane..][..plane];
                for (j, &p) in row.iter().enumerate() {
                    let src = &u[(ci * t + tp + j) * plane..][..plane];
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o += p * v;
                    }
                }
            }
        }
    }
    let dot = |d: usize, ci: usize, n: usize| -> f64 {
        let f = &filtered[(ci * nb + n) * t_out * plane..][..t_out * plane];
        let gg = &g[d * t_out * plane..][..t_out * plane];
        f.iter().zip(gg).map(|(a, b)| a * b).sum()
    };
    let mut out = Vec::with_capacity(tc.coeffs.gamma().len());
    match tc.layout() {
        KernelLayout::Full => {
            for d in 0..dims.out_channels {
                for ci in 0..c {
                    for n in 0..nb {
                        out.push(dot(d, ci, n));
                    }
                }
            }
        }
        KernelLayout::Depthwise => {
            for ci in 0..c {
                for n in 0..nb {
                    out.push(dot(ci, ci, n));
                }
            }
        }
    }
    Ok(out)
}

fn group_norm(x: &DenseTensor, gn: &GroupNorm) -> Result<DenseTensor> {
    let (c, t, h, w) = x.dims4()?;
    let plane = h * w;
    let per = c / gn.groups;
    let mut out = x.clone();
    let data = out.data_mut();
    for ti in 0..t {
        for g in 0..gn.groups {
            let chans = g * per..(g + 1) * per;
            let n = (per * plane) as f64;
            let mut mean = 0.0;
            for ci in chans.clone() {
                mean += data[(ci * t + ti) * plane..][..plane].iter().sum::<f64>();
            }
            mean /= n;
            let mut var = 0.0;
            for ci in chans.clone() {
                var += data[(ci * t + ti) * plane..][..plane].iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            var /= n;
            let inv = 1.0 / (var + gn.eps).sqrt();
            for ci in chans {
                let (s, b) = (gn.scale[ci], gn.shift[ci]);
                for v in &mut data[(ci * t + ti) * plane..][..plane] {
                    *v = (*v - mean) * inv * s + b;
                }
            }
        }
    }
    Ok(out)
}

fn channel_affine(x: &DenseTensor, bn: &ChannelAffine) -> Result<DenseTensor> {
    let (c, t, h, w) = x.dims4()?;
    let block = t * h * w;
    let mut out = x.clone();
    for ci in 0..c {
        for v in &mut out.data_mut()[ci * block..][..block] {
            *v = *v * bn.scale[ci] + bn.shift[ci];
        }
    }
    Ok(out)
}

fn pointwise(x: &DenseTensor, p: &Pointwise) -> Result<DenseTensor> {
    let (c, t, h, w) = x.dims4()?;
    if c != p.in_channels {
        return Err(shape(format!("pointwise layer expects {} channels, got {c}", p.in_channels)));
    }
    let block = t * h * w;
    let src = x.data();
    let mut out = vec![0.0; p.out_channels * block];
    for o in 0..p.out_channels {
        let dst = &mut out[o * block..][..block];
        if let Some(b) = &p.bias {
            dst.fill(b[o]);
        }
        for i in 0..c {
            let wv = p.weights[o * c + i];
            for (d, s) in dst.iter_mut().zip(&src[i * block..][..block]) {
                *d += wv * s;
            }
        }
    }
    DenseTensor::volume(p.out_channels, t, h, w, out)
}

fn global_avg_pool(x: &DenseTensor) -> Result<DenseTensor> {
    let (c, t, h, w) = x.dims4()?;
    let plane = h * w;
    let data = x.data().chunks_exact(plane).map(|frame| frame.iter().sum::<f64>() / plane as f64).collect();
    DenseTensor::volume(c, t, 1, 1, data)
}

fn upsample2x(x: &DenseTensor) -> Result<DenseTensor> {
    let (c, t, h, w) = x.dims4()?;
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![0.0; c * t * h2 * w2];
    for (f, dst) in out.chunks_exact_mut(h2 * w2).enumerate() {
        let s = &src[f * h * w..][..h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = s[(y / 2) * w + xx / 2];
            }
        }
    }
    DenseTensor::volume(c, t, h2, w2, out)
}

/// Keeps the last `frames` frames of every channel.
pub(crate) fn last_frames(x: &DenseTensor, frames: usize) -> Result<DenseTensor> {
    let (c, t, h, w) = x.dims4()?;
    if frames == t {
        return Ok(x.clone());
    }
    if frames > t {
        return Err(shape(format!("cannot keep {frames} of {t} frames")));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(c * frames * plane);
    for ci in 0..c {
        out.extend_from_slice(&x.data()[(ci * t + t - frames) * plane..(ci * t + t) * plane]);
    }
    DenseTensor::volume(c, frames, h, w, out)
}

/// Every layer except temporal convolutions. `skip` is the source
/// activation of a skip connection.
pub(crate) fn apply_framewise(layer: &Layer, x: &DenseTensor, skip: Option<&DenseTensor>) -> Result<DenseTensor> {
    match layer {
        Layer::TemporalConv(_) => unreachable!("temporal layers keep state and are applied by the caller"),
        Layer::SpatialConv(s) => spatial_conv2d(x, &s.weights, s.stride),
        Layer::GroupNorm(g) => group_norm(x, g),
        Layer::BatchNorm(b) => channel_affine(x, b),
        Layer::Relu => {
            let mut out = x.clone();
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            Ok(out)
        }
        Layer::GlobalAvgPool2D => global_avg_pool(x),
        Layer::PointwiseHead(p) => pointwise(x, p),
        Layer::Upsample2x => upsample2x(x),
        Layer::SkipSum(s) => {
            let src = skip.expect("skip source supplied by caller");
            let frames = x.dims4()?.1;
            let mut src = last_frames(src, frames)?;
            if let Some(p) = &s.projection {
                src = pointwise(&src, p)?;
            }
            let mut out = x.clone();
            for (o, v) in out.data_mut().iter_mut().zip(src.data()) {
                *o += v;
            }
            Ok(out)
        }
        Layer::CenterNetHead { .. } => Ok(x.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_norm_normalizes_each_frame() {
        let x = DenseTensor::volume(2, 2, 1, 2, vec![1.0, 3.0, 10.0, 10.0, 5.0, 7.0, 10.0, 10.0]).unwrap();
        let gn = GroupNorm { groups: 2, scale: vec![1.0, 2.0], shift: vec![0.0, 1.0], eps: 1e-12 };
        let y = group_norm(&x, &gn).unwrap();
        let d = y.data();
        assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
        // constant frame: shift only
        assert!((d[2]).abs() < 1e-9);
        assert!((d[4] + 1.0).abs() < 1e-9 && (d[5] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn upsample_and_pool() {
        let x = DenseTensor::volume(1, 1, 1, 2, vec![1.0, 2.0]).unwrap();
        let u = upsample2x(&x).unwrap();
        assert_eq!(u.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(global_avg_pool(&u).unwrap().data(), &[1.5]);
    }

    #[test]
    fn truncation_keeps_latest() {
        let x = DenseTensor::volume(2, 3, 1, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(last_frames(&x, 1).unwrap().data(), &[2.0, 5.0]);
    }
}
