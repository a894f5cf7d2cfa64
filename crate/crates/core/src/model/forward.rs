use std::collections::BTreeSet;

use crate::error::{invalid, shape, Result};
use crate::planner::ConvMode;
use crate::tensor::DenseTensor;

use super::ops::{apply_framewise, temporal_forward};
use super::{Layer, ModelSpec};

/// How temporal layers treat the start of the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Valid convolutions; every temporal layer drops `K - 1` frames.
    #[default]
    Valid,
    /// Every temporal layer sees `K - 1` zero frames before its input, so
    /// the output has one frame per input frame.
    Causal,
}

/// Runs the whole network over a `(C, T, H, W)` input.
pub fn forward_offline(spec: &ModelSpec, input: &DenseTensor) -> Result<DenseTensor> {
    forward_offline_with(spec, input, Padding::Valid)
}

pub fn forward_offline_with(spec: &ModelSpec, input: &DenseTensor, padding: Padding) -> Result<DenseTensor> {
    let (c, t, h, w) = input.dims4()?;
    let g = spec.input();
    if (c, h, w) != (g.channels, g.height, g.width) {
        return Err(shape(format!("input is {c}x{h}x{w}, model expects {}x{}x{}", g.channels, g.height, g.width)));
    }
    let needed = match padding {
        Padding::Valid => spec.min_input_frames(),
        Padding::Causal => 1,
    };
    if t < needed {
        return Err(invalid(format!("{t} input frames, the model needs at least {needed}")));
    }
    let mode = match padding {
        Padding::Valid => ConvMode::Valid,
        Padding::Causal => ConvMode::Same,
    };
    let sources: BTreeSet<usize> = spec
        .layers()
        .iter()
        .filter_map(|l| match l {
            Layer::SkipSum(s) => Some(s.source),
            _ => None,
        })
        .collect();
    let mut kept: Vec<(usize, DenseTensor)> = Vec::new();
    let mut x = input.clone();
    for (i, layer) in spec.layers().iter().enumerate() {
        if sources.contains(&i) {
            kept.push((i, x.clone()));
        }
        x = match layer {
            Layer::TemporalConv(tc) => temporal_forward(tc, &x, mode)?,
            Layer::SkipSum(s) => {
                let src = kept.iter().find(|(k, _)| *k == s.source).map(|(_, v)| v);
                apply_framewise(layer, &x, src)?
            }
            _ => apply_framewise(layer, &x, None)?,
        };
    }
    Ok(x)
}
