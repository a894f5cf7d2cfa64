use crate::error::{shape, Result};
use crate::planner::ConvMode;
use crate::polybasis::DiscreteBasis;
use crate::tensor::{DenseTensor, Label};

/// A banded causal Toeplitz operator over a time pair `(t, t')`, stored as
/// `K` taps per batch element and never expanded to a `t' x t` matrix.
///
/// Entry `M[.., t', t]` is `taps[.., t - t' + offset]` when that tap index
/// lies in `0..K`, and zero otherwise, where `offset` is `0` in valid mode
/// and `K - 1` in same mode. Tap `K - 1` multiplies the most recent input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOperator {
    batch_labels: Vec<Label>,
    batch_shape: Vec<usize>,
    input_label: Label,
    output_label: Label,
    input_len: usize,
    kernel: usize,
    mode: ConvMode,
    taps: Vec<f64>,
}

impl ConvOperator {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        batch_labels: Vec<Label>,
        batch_shape: Vec<usize>,
        input_label: Label,
        output_label: Label,
        input_len: usize,
        kernel: usize,
        mode: ConvMode,
        taps: Vec<f64>,
    ) -> Result<Self> {
        if batch_labels.len() != batch_shape.len() {
            return Err(shape("batch labels and extents differ in length"));
        }
        if kernel == 0 {
            return Err(shape("convolution operator needs at least one tap"));
        }
        if mode == ConvMode::Valid && kernel > input_len {
            return Err(shape(format!("valid convolution with {kernel} taps over {input_len} inputs")));
        }
        let expected = batch_shape.iter().product::<usize>() * kernel;
        if taps.len() != expected {
            return Err(shape(format!("{} taps supplied, {expected} required", taps.len())));
        }
        Ok(Self { batch_labels, batch_shape, input_label, output_label, input_len, kernel, mode, taps })
    }

    /// One operator row per basis polynomial, batch label `basis_label`.
    pub fn from_basis(
        db: &DiscreteBasis,
        basis_label: Label,
        input_label: Label,
        output_label: Label,
        input_len: usize,
        mode: ConvMode,
    ) -> Result<Self> {
        let taps = db.rows().iter().flatten().copied().collect();
        Self::new(
            vec![basis_label],
            vec![db.basis_size()],
            input_label,
            output_label,
            input_len,
            db.num_bins(),
            mode,
            taps,
        )
    }

    pub fn batch_labels(&self) -> &[Label] {
        &self.batch_labels
    }

    pub fn batch_shape(&self) -> &[usize] {
        &self.batch_shape
    }

    pub fn input_label(&self) -> &Label {
        &self.input_label
    }

    pub fn output_label(&self) -> &Label {
        &self.output_label
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        match self.mode {
            ConvMode::Valid => self.input_len - self.kernel + 1,
            ConvMode::Same => self.input_len,
        }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub(crate) fn offset(&self) -> usize {
        match self.mode {
            ConvMode::Valid => 0,
            ConvMode::Same => self.kernel - 1,
        }
    }

    /// Labels in einsum order: batch labels, then `t'`, then `t`.
    pub fn labels(&self) -> Vec<Label> {
        let mut l = self.batch_labels.clone();
        l.push(self.output_label.clone());
        l.push(self.input_label.clone());
        l
    }

    /// The taps as a dense tensor with an extra trailing tap label.
    pub(crate) fn taps_tensor(&self, tap_label: &Label) -> DenseTensor {
        let mut labels = self.batch_labels.clone();
        labels.push(tap_label.clone());
        let mut shape = self.batch_shape.clone();
        shape.push(self.kernel);
        DenseTensor::new(labels, shape, self.taps.clone()).expect("taps are consistent")
    }

    pub(crate) fn with_taps(&self, batch_labels: Vec<Label>, batch_shape: Vec<usize>, taps: Vec<f64>) -> Result<Self> {
        Self::new(
            batch_labels,
            batch_shape,
            self.input_label.clone(),
            self.output_label.clone(),
            self.input_len,
            self.kernel,
            self.mode,
            taps,
        )
    }

    /// Expands to the dense `(batch.., t', t)` matrix form.
    pub fn to_dense(&self) -> DenseTensor {
        let (n_out, n_in, k, off) = (self.output_len(), self.input_len, self.kernel, self.offset());
        let batch: usize = self.batch_shape.iter().product();
        let mut data = vec![0.0; batch * n_out * n_in];
        for b in 0..batch {
            for tp in 0..n_out {
                for j in 0..k {
                    let t = tp + j;
                    if t >= off && t - off < n_in {
                        data[(b * n_out + tp) * n_in + t - off] = self.taps[b * k + j];
                    }
                }
            }
        }
        let mut shape = self.batch_shape.clone();
        shape.push(n_out);
        shape.push(n_in);
        DenseTensor::new(self.labels(), shape, data).expect("consistent operator")
    }
}
