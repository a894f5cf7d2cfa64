//! Polynomial kernel coefficients and their materialization into discrete
//! temporal kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::polybasis::DiscreteBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelLayout {
    /// One kernel per (output, input) channel pair.
    Full,
    /// One kernel per channel; input and output channels do not mix.
    Depthwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelDims {
    pub out_channels: usize,
    pub in_channels: usize,
    /// `N + 1`.
    pub basis_size: usize,
}

impl KernelDims {
    pub fn new(out_channels: usize, in_channels: usize, basis_size: usize) -> Self {
        Self { out_channels, in_channels, basis_size }
    }

    pub fn depthwise(channels: usize, basis_size: usize) -> Self {
        Self::new(channels, channels, basis_size)
    }

    fn validate(&self, layout: KernelLayout) -> Result<()> {
        if self.out_channels == 0 || self.in_channels == 0 || self.basis_size == 0 {
            return Err(invalid(format!("kernel dimensions must be non-zero: {self:?}")));
        }
        if layout == KernelLayout::Depthwise && self.out_channels != self.in_channels {
            return Err(invalid(format!(
                "depthwise kernels need equal in/out channels, got {} -> {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// Number of independent kernels (channel pairs or channels).
    pub fn kernel_count(&self, layout: KernelLayout) -> usize {
        match layout {
            KernelLayout::Full => self.out_channels * self.in_channels,
            KernelLayout::Depthwise => self.in_channels,
        }
    }
}

/// Coefficients `γ`, stored `(d, c, n)` row-major for full layout and
/// `(c, n)` for depthwise.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCoefficients {
    layout: KernelLayout,
    dims: KernelDims,
    gamma: Vec<f64>,
}

impl KernelCoefficients {
    pub fn new(layout: KernelLayout, dims: KernelDims, gamma: Vec<f64>) -> Result<Self> {
        dims.validate(layout)?;
        let expected = dims.kernel_count(layout) * dims.basis_size;
        if gamma.len() != expected {
            return Err(shape(format!(
                "{} coefficients supplied, {expected} required for {layout:?} {dims:?}",
                gamma.len()
            )));
        }
        Ok(Self { layout, dims, gamma })
    }

    pub fn zeros(layout: KernelLayout, dims: KernelDims) -> Result<Self> {
        dims.validate(layout)?;
        let n = dims.kernel_count(layout) * dims.basis_size;
        Self::new(layout, dims, vec![0.0; n])
    }

    pub fn layout(&self) -> KernelLayout {
        self.layout
    }

    pub fn dims(&self) -> KernelDims {
        self.dims
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_mut(&mut self) -> &mut [f64] {
        &mut self.gamma
    }

    /// Flat offset of coefficient `n` of kernel `k` (channel pair index
    /// `d * C + c`, or channel `c` for depthwise).
    pub fn offset(&self, kernel: usize, n: usize) -> usize {
        kernel * self.dims.basis_size + n
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len()
    }
}

/// Discrete kernel taps `k̄`, `(d, c, j)` or `(c, j)`, oldest tap first.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    layout: KernelLayout,
    out_channels: usize,
    in_channels: usize,
    num_taps: usize,
    bin_size: f64,
    values: Vec<f64>,
}

impl DiscreteKernel {
    pub fn new(
        layout: KernelLayout,
        out_channels: usize,
        in_channels: usize,
        num_taps: usize,
        bin_size: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let kernels = match layout {
            KernelLayout::Full => out_channels * in_channels,
            KernelLayout::Depthwise => {
                if out_channels != in_channels {
                    return Err(invalid("depthwise kernels need equal in/out channels"));
                }
                in_channels
            }
        };
        if num_taps == 0 {
            return Err(invalid("a kernel needs at least one tap"));
        }
        if values.len() != kernels * num_taps {
            return Err(shape(format!("{} taps supplied, {} required", values.len(), kernels * num_taps)));
        }
        Ok(Self { layout, out_channels, in_channels, num_taps, bin_size, values })
    }

    pub fn layout(&self) -> KernelLayout {
        self.layout
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_taps(&self) -> usize {
        self.num_taps
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Taps of kernel `k` (pair index `d * C + c`, or channel for depthwise).
    pub fn taps(&self, kernel: usize) -> &[f64] {
        &self.values[kernel * self.num_taps..(kernel + 1) * self.num_taps]
    }
}

/// `k̄[d][c][j] = Σ_n γ[d][c][n] · P̄[n][j]`.
pub fn materialize(gamma: &KernelCoefficients, db: &DiscreteBasis) -> Result<DiscreteKernel> {
    let nb = gamma.dims.basis_size;
    if nb != db.basis_size() {
        return Err(shape(format!("coefficients have {nb} basis terms, discrete basis has {}", db.basis_size())));
    }
    let taps = db.num_bins();
    let kernels = gamma.dims.kernel_count(gamma.layout);
    let mut values = vec![0.0; kernels * taps];
    for k in 0..kernels {
        let coeffs = &gamma.gamma[k * nb..(k + 1) * nb];
        let out = &mut values[k * taps..(k + 1) * taps];
        for (n, &g) in coeffs.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(db.row(n)) {
                *o += g * p;
            }
        }
    }
    DiscreteKernel::new(gamma.layout, gamma.dims.out_channels, gamma.dims.in_channels, taps, db.bin_size(), values)
}

/// Deterministic uniform initialization in `[-s, s]`, with
/// `s = 1 / sqrt(C (N + 1))` for full kernels and `1 / sqrt(N + 1)` for
/// depthwise kernels.
pub fn init_coefficients(layout: KernelLayout, dims: KernelDims, seed: u64) -> Result<KernelCoefficients> {
    dims.validate(layout)?;
    let fan_in = match layout {
        KernelLayout::Full => dims.in_channels * dims.basis_size,
        KernelLayout::Depthwise => dims.basis_size,
    };
    let scale = 1.0 / (fan_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.kernel_count(layout) * dims.basis_size;
    let gamma = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
    KernelCoefficients::new(layout, dims, gamma)
}

/// Ratio of explicit taps to polynomial coefficients, `K / (N + 1)`.
pub fn compression_ratio(gamma: &KernelCoefficients, num_taps: usize) -> f64 {
    num_taps as f64 / gamma.dims.basis_size as f64
}
