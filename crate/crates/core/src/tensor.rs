//! Labeled dense tensors.

use std::fmt;

use crate::error::{shape, Error, Result};

/// An einsum index label: one character, optionally primed (`t'`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Splits a compact label string such as `"nt't"` into labels.
    pub fn parse_list(s: &str) -> Result<Vec<Label>> {
        let mut out: Vec<Label> = Vec::new();
        for ch in s.chars() {
            if ch == '\'' {
                match out.last_mut() {
                    Some(last) => last.0.push('\''),
                    None => return Err(Error::Parse(format!("dangling prime in {s:?}"))),
                }
            } else if ch.is_alphabetic() {
                out.push(Label(ch.to_string()));
            } else {
                return Err(Error::Parse(format!("invalid label character {ch:?} in {s:?}")));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

pub fn labels_to_string(labels: &[Label]) -> String {
    labels.iter().map(|l| l.as_str()).collect()
}

/// Row-major real tensor whose axes carry labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    labels: Vec<Label>,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(labels: Vec<Label>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(shape_err(format!("{} labels for a rank-{} tensor", labels.len(), shape.len())));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(shape_err(format!("repeated label {l} in one tensor")));
            }
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(shape_err(format!("data length {} does not match extents {:?}", data.len(), shape)));
        }
        Ok(Self { labels, shape, data })
    }

    pub fn zeros(labels: Vec<Label>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(labels, shape, vec![0.0; n])
    }

    /// A `(C, T, H, W)` activation volume labeled `c, t, y, x`.
    pub fn volume(c: usize, t: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec!["c".into(), "t".into(), "y".into(), "x".into()], vec![c, t, h, w], data)
    }

    pub fn volume_zeros(c: usize, t: usize, h: usize, w: usize) -> Self {
        Self::volume(c, t, h, w, vec![0.0; c * t * h * w]).expect("consistent extents")
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn position(&self, label: &Label) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn extent(&self, label: &Label) -> Option<usize> {
        self.position(label).map(|i| self.shape[i])
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_for(&self.shape)
    }

    /// `(C, T, H, W)` of a rank-4 volume.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [c, t, h, w] => Ok((c, t, h, w)),
            _ => Err(shape_err(format!("expected a (C, T, H, W) volume, got extents {:?}", self.shape))),
        }
    }

    /// Transposes to the given label order.
    pub fn permuted(&self, order: &[Label]) -> Result<DenseTensor> {
        if order.len() != self.labels.len() {
            return Err(shape_err("permutation must name every axis once"));
        }
        let src_pos: Vec<usize> = order
            .iter()
            .map(|l| self.position(l).ok_or_else(|| shape_err(format!("label {l} not present"))))
            .collect::<Result<_>>()?;
        if order == self.labels.as_slice() {
            return Ok(self.clone());
        }
        let new_shape: Vec<usize> = src_pos.iter().map(|&p| self.shape[p]).collect();
        let src_strides = self.strides();
        let mapped: Vec<usize> = src_pos.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        for_each_index(&new_shape, |idx| {
            let off: usize = idx.iter().zip(&mapped).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
        });
        DenseTensor::new(order.to_vec(), new_shape, data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    shape(msg)
}

pub(crate) fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Visits every multi-index of `shape` in row-major order (last axis
/// fastest).
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut axis = shape.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Largest elementwise difference relative to `max(1, max |b|)`.
pub fn relative_max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
