use crate::error::{invalid, shape, Result};
use crate::exec::temporal_conv;
use crate::kernels::{materialize, DiscreteKernel};
use crate::planner::ConvMode;
use crate::tensor::DenseTensor;

use super::ops::{apply_framewise, temporal_forward};
use super::{temporal_basis, EmissionMode, Layer, ModelSpec, TemporalConv};

/// Last `K` input frames of one temporal layer, oldest overwritten first.
#[derive(Debug, Clone)]
struct Ring {
    slots: Vec<Vec<f64>>,
    head: usize,
    seen: u64,
}

impl Ring {
    fn new(k: usize, frame_len: usize) -> Self {
        Self { slots: vec![vec![0.0; frame_len]; k], head: 0, seen: 0 }
    }

    fn push(&mut self, frame: &[f64]) {
        self.slots[self.head].copy_from_slice(frame);
        self.head = (self.head + 1) % self.slots.len();
        self.seen += 1;
    }

    /// `(C, K, H, W)` window, oldest frame first.
    fn window(&self, c: usize, h: usize, w: usize) -> Result<DenseTensor> {
        let k = self.slots.len();
        let plane = h * w;
        let mut data = vec![0.0; c * k * plane];
        for j in 0..k {
            let slot = &self.slots[(self.head + j) % k];
            for ci in 0..c {
                data[(ci * k + j) * plane..][..plane].copy_from_slice(&slot[ci * plane..][..plane]);
            }
        }
        DenseTensor::volume(c, k, h, w, data)
    }
}

/// Ring buffers for one stream. Buffers start at zero; in strict mode a
/// temporal layer forwards nothing until it has received `K` frames.
#[derive(Debug, Clone)]
pub struct StreamState {
    mode: EmissionMode,
    rings: Vec<Option<Ring>>,
    kernels: Vec<Option<DiscreteKernel>>,
    steps: u64,
    bin_size_us: u64,
}

impl StreamState {
    /// Zero-initialized state using the model's emission mode.
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        Self::with_mode(spec, spec.emission())
    }

    pub fn with_mode(spec: &ModelSpec, mode: EmissionMode) -> Result<Self> {
        let shapes = spec.shapes();
        let mut rings = Vec::with_capacity(spec.layers().len());
        let mut kernels = Vec::with_capacity(spec.layers().len());
        for (i, layer) in spec.layers().iter().enumerate() {
            match layer {
                Layer::TemporalConv(tc) => {
                    let s = shapes[i];
                    rings.push(Some(Ring::new(tc.num_taps(), s.channels * s.height * s.width)));
                    kernels.push(match tc.path() {
                        None => Some(materialize(tc.coeffs(), tc.basis())?),
                        Some(_) => None,
                    });
                }
                _ => {
                    rings.push(None);
                    kernels.push(None);
                }
            }
        }
        Ok(Self { mode, rings, kernels, steps: 0, bin_size_us: spec.bin_size_us() })
    }

    pub fn mode(&self) -> EmissionMode {
        self.mode
    }

    /// Frames pushed so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Stream time in seconds at the end of the last pushed frame.
    pub fn time(&self) -> f64 {
        super::seconds(self.steps * self.bin_size_us)
    }

    /// Buffer capacities, one per temporal layer.
    pub fn capacities(&self) -> Vec<usize> {
        self.rings.iter().flatten().map(|r| r.slots.len()).collect()
    }

    /// Pushes one `(C, 1, H, W)` frame. Returns the network output frame,
    /// or `None` while a strict-mode layer is still filling.
    pub fn step(&mut self, spec: &ModelSpec, frame: &DenseTensor) -> Result<Option<DenseTensor>> {
        let (c, t, h, w) = frame.dims4()?;
        let g = spec.input();
        if (c, t, h, w) != (g.channels, 1, g.height, g.width) {
            return Err(shape(format!(
                "frame is {c}x{t}x{h}x{w}, model expects {}x1x{}x{}",
                g.channels, g.height, g.width
            )));
        }
        if self.rings.len() != spec.layers().len() {
            return Err(invalid("stream state was built for another model"));
        }
        self.steps += 1;
        let mut acts: Vec<DenseTensor> = Vec::with_capacity(spec.layers().len() + 1);
        acts.push(frame.clone());
        for (i, layer) in spec.layers().iter().enumerate() {
            let x = &acts[i];
            let y = match layer {
                Layer::TemporalConv(tc) => {
                    let ring = self.rings[i].as_mut().expect("temporal layers own a ring");
                    ring.push(x.data());
                    if self.mode == EmissionMode::Strict && ring.seen < tc.num_taps() as u64 {
                        return Ok(None);
                    }
                    let (ci, _, hh, ww) = x.dims4()?;
                    let window = ring.window(ci, hh, ww)?;
                    match &self.kernels[i] {
                        Some(k) => temporal_conv(&window, k)?,
                        None => temporal_forward(tc, &window, ConvMode::Valid)?,
                    }
                }
                Layer::SkipSum(s) => apply_framewise(layer, x, Some(&acts[s.source]))?,
                _ => apply_framewise(layer, x, None)?,
            };
            acts.push(y);
        }
        Ok(acts.pop())
    }

    /// Feeds every frame of a `(C, T, H, W)` tensor in order.
    pub fn run(&mut self, spec: &ModelSpec, input: &DenseTensor) -> Result<Vec<Option<DenseTensor>>> {
        let (c, t, h, w) = input.dims4()?;
        let plane = h * w;
        (0..t)
            .map(|ti| {
                let mut data = Vec::with_capacity(c * plane);
                for ci in 0..c {
                    data.extend_from_slice(&input.data()[(ci * t + ti) * plane..][..plane]);
                }
                self.step(spec, &DenseTensor::volume(c, 1, h, w, data)?)
            })
            .collect()
    }
}

/// Time before a strict stream emits its first output, `Σ (K - 1) · Δτ`,
/// in seconds.
pub fn warmup_latency(spec: &ModelSpec) -> f64 {
    super::seconds(spec.temporal_lag() as u64 * spec.bin_size_us())
}

/// Re-targets every temporal layer to bin size `new_bin_us`, keeping its
/// physical window: `K' = round(K · Δτ / Δτ')`. Coefficients are kept and
/// bases are re-discretized; the model records its original bin size so
/// inputs can be rescaled by [`ModelSpec::input_scale`].
pub fn resample_model(spec: &ModelSpec, new_bin_us: u64) -> Result<ModelSpec> {
    if new_bin_us == 0 {
        return Err(invalid("bin size must be positive"));
    }
    if new_bin_us == spec.bin_size_us() {
        return Ok(spec.clone());
    }
    let old = spec.bin_size_us() as u128;
    let new = new_bin_us as u128;
    let mut layers = Vec::with_capacity(spec.layers().len());
    for (i, layer) in spec.layers().iter().enumerate() {
        layers.push(match layer {
            Layer::TemporalConv(tc) => {
                let k = tc.num_taps() as u128;
                // round half up
                let k_new = ((2 * k * old + new) / (2 * new)) as usize;
                if k_new == 0 {
                    return Err(invalid(format!(
                        "layer {i}: a {k}-bin window at {old} us cannot be resampled to {new} us bins"
                    )));
                }
                let basis = temporal_basis(*tc.basis().params(), k_new, new_bin_us, spec.reference_bin_size_us())?;
                let path = tc.path().cloned();
                Layer::TemporalConv(TemporalConv::new(tc.coeffs().clone(), basis)?.with_path(path)?)
            }
            other => other.clone(),
        });
    }
    ModelSpec::from_parts(spec.input(), new_bin_us, spec.reference_bin_size_us(), spec.emission(), layers)
}
