use crate::error::Result;
use crate::planner::{optimal_path, ContractionPath, ConvMode, Objective};

use super::ops::temporal_expr;
use super::{Layer, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub index: usize,
    pub kind: &'static str,
    pub params: u64,
    /// Multiply-accumulates per emitted output frame.
    pub macs: u64,
    /// Contraction path chosen for temporal layers.
    pub path: Option<ContractionPath>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub parameters: u64,
    pub macs_per_frame: u64,
    /// `macs_per_frame / Δτ`.
    pub macs_per_second: f64,
    pub frames_per_second: f64,
    pub layers: Vec<LayerCost>,
}

/// Parameters and steady-state multiply-accumulates per emitted frame.
///
/// A temporal layer producing one frame contracts `K` input frames; its
/// cost is the planner's estimate for the path that `objective` prefers,
/// with `t = K` and `t' = 1`. Spatial and pointwise layers cost their
/// weights times output pixels; normalization, activations, pooling,
/// upsampling and sums are not counted as MACs.
pub fn cost_report(spec: &ModelSpec, objective: Objective) -> Result<CostReport> {
    let shapes = spec.shapes();
    let mut layers = Vec::with_capacity(spec.layers().len());
    for (i, layer) in spec.layers().iter().enumerate() {
        let (input, output) = (shapes[i], shapes[i + 1]);
        let out_pixels = (output.height * output.width) as u64;
        let mut path = None;
        let macs = match layer {
            Layer::TemporalConv(tc) => {
                let expr = temporal_expr(tc, tc.num_taps(), input.height, input.width, ConvMode::Valid)?;
                let (p, cost) = optimal_path(&expr, objective)?;
                path = Some(p);
                cost.total_compute
            }
            Layer::SpatialConv(s) => s.weights.macs_per_pixel() * out_pixels,
            Layer::PointwiseHead(p) => (p.in_channels * p.out_channels) as u64 * out_pixels,
            Layer::SkipSum(s) => {
                s.projection.as_ref().map_or(0, |p| (p.in_channels * p.out_channels) as u64 * out_pixels)
            }
            _ => 0,
        };
        layers.push(LayerCost { index: i, kind: layer.kind(), params: layer.param_count() as u64, macs, path });
    }
    let parameters = layers.iter().map(|l| l.params).sum();
    let macs_per_frame: u64 = layers.iter().map(|l| l.macs).sum();
    let fps = 1.0 / spec.bin_size();
    Ok(CostReport {
        parameters,
        macs_per_frame,
        macs_per_second: macs_per_frame as f64 * fps,
        frames_per_second: fps,
        layers,
    })
}
