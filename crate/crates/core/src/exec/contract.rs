//! Pairwise contraction and path execution with exact MAC counting.

use std::collections::BTreeMap;

use crate::error::{shape, Error, Result};
use crate::planner::{intermediate_labels, ContractionPath, EinsumExpr};
use crate::tensor::{strides_for, DenseTensor, Label};

use super::operator::ConvOperator;

/// An einsum operand: a dense tensor or a structured convolution operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Dense(DenseTensor),
    Conv(ConvOperator),
}

impl Operand {
    pub fn labels(&self) -> Vec<Label> {
        match self {
            Operand::Dense(t) => t.labels().to_vec(),
            Operand::Conv(c) => c.labels(),
        }
    }

    /// Dense form; convolution operators are expanded to matrices.
    pub fn into_dense(self) -> DenseTensor {
        match self {
            Operand::Dense(t) => t,
            Operand::Conv(c) => c.to_dense(),
        }
    }

    fn extents(&self) -> Vec<(Label, usize)> {
        match self {
            Operand::Dense(t) => t.labels().iter().cloned().zip(t.shape().iter().copied()).collect(),
            Operand::Conv(c) => {
                let mut v: Vec<(Label, usize)> =
                    c.batch_labels().iter().cloned().zip(c.batch_shape().iter().copied()).collect();
                v.push((c.output_label().clone(), c.output_len()));
                v.push((c.input_label().clone(), c.input_len()));
                v
            }
        }
    }
}

impl From<DenseTensor> for Operand {
    fn from(t: DenseTensor) -> Self {
        Operand::Dense(t)
    }
}

impl From<ConvOperator> for Operand {
    fn from(c: ConvOperator) -> Self {
        Operand::Conv(c)
    }
}

fn tap_label() -> Label {
    Label::new("#tap")
}

fn union_labels<'a>(groups: impl IntoIterator<Item = &'a [Label]>) -> Vec<Label> {
    let mut out: Vec<Label> = Vec::new();
    for g in groups {
        for l in g {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
    }
    out
}

fn extent_map(groups: &[&DenseTensor]) -> Result<BTreeMap<Label, usize>> {
    let mut map = BTreeMap::new();
    for t in groups {
        for (l, &e) in t.labels().iter().zip(t.shape()) {
            if let Some(&prev) = map.get(l) {
                if prev != e {
                    return Err(shape(format!("label {l} has extents {prev} and {e}")));
                }
            } else {
                map.insert(l.clone(), e);
            }
        }
    }
    Ok(map)
}

/// Strides of `t` laid over the axes of `axes` (zero where absent).
fn mapped_strides(t_labels: &[Label], t_shape: &[usize], axes: &[Label]) -> Vec<usize> {
    let strides = strides_for(t_shape);
    axes.iter().map(|l| t_labels.iter().position(|x| x == l).map_or(0, |p| strides[p])).collect()
}

/// Generic dense contraction `out[keep] += a · b` over the union of all
/// labels, innermost label fastest. Labels present only in `keep` are
/// broadcast and need an entry in `extra`. Returns the MAC count.
pub(crate) fn contract_dense(
    a: &DenseTensor,
    b: &DenseTensor,
    keep: &[Label],
    extra: &BTreeMap<Label, usize>,
) -> Result<(DenseTensor, u64)> {
    let mut sizes = extent_map(&[a, b])?;
    for l in keep {
        if !sizes.contains_key(l) {
            let e = extra.get(l).ok_or_else(|| shape(format!("no extent for output label {l}")))?;
            sizes.insert(l.clone(), *e);
        }
    }
    let axes = union_labels([a.labels(), b.labels(), keep]);
    let ext: Vec<usize> = axes.iter().map(|l| sizes[l]).collect();
    let out_shape: Vec<usize> = keep.iter().map(|l| sizes[l]).collect();
    let sa = mapped_strides(a.labels(), a.shape(), &axes);
    let sb = mapped_strides(b.labels(), b.shape(), &axes);
    let so = mapped_strides(keep, &out_shape, &axes);
    let mut out = vec![0.0; out_shape.iter().product()];
    let total: u64 = ext.iter().map(|&e| e as u64).product();
    if total > 0 {
        let (ad, bd) = (a.data(), b.data());
        let rank = axes.len();
        let mut idx = vec![0usize; rank];
        let (mut oa, mut ob, mut oo) = (0usize, 0usize, 0usize);
        'outer: loop {
            out[oo] += ad[oa] * bd[ob];
            let mut axis = rank;
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                idx[axis] += 1;
                oa += sa[axis];
                ob += sb[axis];
                oo += so[axis];
                if idx[axis] < ext[axis] {
                    break;
                }
                let back = ext[axis];
                oa -= sa[axis] * back;
                ob -= sb[axis] * back;
                oo -= so[axis] * back;
                idx[axis] = 0;
            }
        }
    }
    Ok((DenseTensor::new(keep.to_vec(), out_shape, out)?, total))
}

/// Shared loop structure of a sliding convolution between a dense operand
/// holding `t` and a convolution operator: visits every
/// `(outer index, t', tap)` with the matching input time (or `None` inside
/// causal zero padding).
struct Sliding {
    axes: Vec<Label>,
    ext: Vec<usize>,
    n_out: usize,
    n_in: usize,
    k: usize,
    off: usize,
}

impl Sliding {
    fn new(u: &DenseTensor, m: &ConvOperator, keep: &[Label]) -> Result<Self> {
        let t = m.input_label();
        let tp = m.output_label();
        let n_in = u.extent(t).ok_or_else(|| shape(format!("operand lacks convolution input label {t}")))?;
        if n_in != m.input_len() {
            return Err(shape(format!("input length {n_in} does not match operator length {}", m.input_len())));
        }
        if u.labels().contains(tp) {
            return Err(Error::Unsupported(format!("operand already holds {tp}")));
        }
        if keep.contains(t) {
            return Err(Error::Unsupported(format!("convolution result would keep both {t} and {tp}")));
        }
        let taps = m.taps_tensor(&tap_label());
        let mut sizes = extent_map(&[u, &taps])?;
        let pair = [t.clone(), tp.clone()];
        let axes: Vec<Label> =
            union_labels([u.labels(), m.batch_labels(), keep]).into_iter().filter(|l| !pair.contains(l)).collect();
        let mut ext = Vec::with_capacity(axes.len());
        for l in &axes {
            ext.push(*sizes.entry(l.clone()).or_insert(0usize));
            if *ext.last().unwrap() == 0 {
                return Err(shape(format!("no extent for label {l}")));
            }
        }
        Ok(Self { axes, ext, n_out: m.output_len(), n_in, k: m.kernel(), off: m.offset() })
    }

    fn macs(&self) -> u64 {
        self.ext.iter().map(|&e| e as u64).product::<u64>() * self.n_out as u64 * self.k as u64
    }

    /// Calls `f(u_off, tap_off, y_off, input_valid)` for every MAC, with
    /// offsets into the dense operand, the taps and the `(keep)` result.
    fn run(
        &self,
        u: &DenseTensor,
        m: &ConvOperator,
        keep: &[Label],
        keep_shape: &[usize],
        mut f: impl FnMut(usize, usize, usize, bool),
    ) {
        let t = m.input_label();
        let tp = m.output_label();
        let su = mapped_strides(u.labels(), u.shape(), &self.axes);
        let mut tl = m.batch_labels().to_vec();
        tl.push(tap_label());
        let mut tshape = m.batch_shape().to_vec();
        tshape.push(self.k);
        let sm = mapped_strides(&tl, &tshape, &self.axes);
        let sy = mapped_strides(keep, keep_shape, &self.axes);
        let u_t = strides_for(u.shape())[u.position(t).unwrap()];
        let y_t = keep.iter().position(|l| l == tp).map_or(0, |p| strides_for(keep_shape)[p]);
        crate::tensor::for_each_index(&self.ext, |idx| {
            let bu: usize = idx.iter().zip(&su).map(|(i, s)| i * s).sum();
            let bm: usize = idx.iter().zip(&sm).map(|(i, s)| i * s).sum();
            let by: usize = idx.iter().zip(&sy).map(|(i, s)| i * s).sum();
            for out_t in 0..self.n_out {
                for j in 0..self.k {
                    let pos = out_t + j;
                    let valid = pos >= self.off && pos - self.off < self.n_in;
                    let in_t = if valid { pos - self.off } else { 0 };
                    f(bu + in_t * u_t, bm + j, by + out_t * y_t, valid);
                }
            }
        });
    }
}

fn sliding_forward(u: &DenseTensor, m: &ConvOperator, keep: &[Label]) -> Result<(DenseTensor, u64)> {
    let plan = Sliding::new(u, m, keep)?;
    let keep_shape: Vec<usize> =
        keep.iter()
            .map(|l| {
                if l == m.output_label() {
                    plan.n_out
                } else {
                    plan.ext[plan.axes.iter().position(|a| a == l).unwrap()]
                }
            })
            .collect();
    let mut out = vec![0.0; keep_shape.iter().product()];
    let (ud, md) = (u.data(), m.taps());
    plan.run(u, m, keep, &keep_shape, |iu, im, iy, valid| {
        let x = if valid { ud[iu] } else { 0.0 };
        out[iy] += md[im] * x;
    });
    Ok((DenseTensor::new(keep.to_vec(), keep_shape, out)?, plan.macs()))
}

fn kernel_forward(a: &DenseTensor, m: &ConvOperator, keep: &[Label]) -> Result<(ConvOperator, u64)> {
    let pair = [m.input_label().clone(), m.output_label().clone()];
    if !(keep.contains(&pair[0]) && keep.contains(&pair[1])) {
        return Err(Error::Unsupported(format!(
            "contraction would sum over the convolution pair ({}, {})",
            pair[0], pair[1]
        )));
    }
    let mut batch: Vec<Label> = keep.iter().filter(|l| !pair.contains(l)).cloned().collect();
    let (tensor, macs) = {
        let mut out_labels = batch.clone();
        out_labels.push(tap_label());
        contract_dense(a, &m.taps_tensor(&tap_label()), &out_labels, &BTreeMap::new())?
    };
    let batch_shape = tensor.shape()[..batch.len()].to_vec();
    let op = m.with_taps(std::mem::take(&mut batch), batch_shape, tensor.into_data())?;
    Ok((op, macs))
}

/// Contracts two operands, keeping `keep`. A dense operand holding `t`
/// against a convolution operator is a sliding dot product; a dense
/// operand without the time pair against an operator produces a new
/// operator (kernel generation). Returns the result and its MAC count.
pub fn contract_pair(a: &Operand, b: &Operand, keep: &[Label]) -> Result<(Operand, u64)> {
    match (a, b) {
        (Operand::Dense(x), Operand::Dense(y)) => {
            let (t, n) = contract_dense(x, y, keep, &BTreeMap::new())?;
            Ok((Operand::Dense(t), n))
        }
        (Operand::Dense(x), Operand::Conv(m)) | (Operand::Conv(m), Operand::Dense(x)) => {
            if x.labels().contains(m.input_label()) {
                let (t, n) = sliding_forward(x, m, keep)?;
                Ok((Operand::Dense(t), n))
            } else if x.labels().contains(m.output_label()) {
                Err(Error::Unsupported(format!("operand holds {} without {}", m.output_label(), m.input_label())))
            } else {
                let (op, n) = kernel_forward(x, m, keep)?;
                Ok((Operand::Conv(op), n))
            }
        }
        (Operand::Conv(_), Operand::Conv(_)) => Err(Error::Unsupported("contracting two convolution operators".into())),
    }
}

fn check_operands(expr: &EinsumExpr, operands: &[Operand]) -> Result<()> {
    if operands.len() != expr.num_operands() {
        return Err(shape(format!("expression has {} operands, {} supplied", expr.num_operands(), operands.len())));
    }
    for (k, (op, labels)) in operands.iter().zip(expr.operands()).enumerate() {
        let got = op.labels();
        if got.len() != labels.len() || !labels.iter().all(|l| got.contains(l)) {
            return Err(shape(format!(
                "operand {k} has labels {:?}, expression expects {:?}",
                got.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
                labels.iter().map(|l| l.as_str()).collect::<Vec<_>>()
            )));
        }
        for (l, e) in op.extents() {
            if expr.size(&l) != e {
                return Err(shape(format!("operand {k}: label {l} has extent {e}, expression says {}", expr.size(&l))));
            }
        }
        if let Operand::Conv(c) = op {
            let pair = expr
                .pair_in(labels)
                .ok_or_else(|| shape(format!("operand {k} is a convolution operator but no pair matches")))?;
            if pair.kernel != c.kernel() || expr.mode() != c.mode() {
                return Err(shape(format!("operand {k}: operator kernel/mode differ from the expression")));
            }
        } else if expr.pair_in(labels).is_some() {
            return Err(Error::Unsupported(format!("operand {k} holds a convolution pair but is dense")));
        }
    }
    Ok(())
}

/// Output of [`execute_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub output: DenseTensor,
    /// Exact multiply-accumulate count, when counting was requested.
    pub macs: Option<u64>,
}

struct Trace {
    steps: Vec<(usize, usize, usize, Vec<Label>)>,
    tensors: Vec<Operand>,
    macs: u64,
    root: usize,
}

fn forward(expr: &EinsumExpr, operands: Vec<Operand>, path: &ContractionPath) -> Result<Trace> {
    check_operands(expr, &operands)?;
    path.validate(expr.num_operands())?;
    let mut tensors = operands;
    let mut live: Vec<usize> = (0..tensors.len()).collect();
    let mut steps = Vec::new();
    let mut macs = 0u64;
    for &(i, j) in path.steps() {
        let live_labels: Vec<Vec<Label>> = live.iter().map(|&id| tensors[id].labels()).collect();
        let keep = intermediate_labels(&live_labels, (i, j), expr);
        let (ia, ib) = (live[i], live[j]);
        let (res, n) = contract_pair(&tensors[ia], &tensors[ib], &keep)?;
        macs += n;
        let id = tensors.len();
        tensors.push(res);
        steps.push((ia, ib, id, keep));
        live.remove(j);
        live.remove(i);
        live.push(id);
    }
    Ok(Trace { steps, root: live[0], tensors, macs })
}

fn finish(expr: &EinsumExpr, result: Operand) -> Result<DenseTensor> {
    let dense = result.into_dense();
    if dense.labels().len() == expr.output().len() && expr.output().iter().all(|l| dense.labels().contains(l)) {
        return dense.permuted(expr.output());
    }
    // single-operand reduction
    let one = DenseTensor::new(vec![], vec![], vec![1.0])?;
    let (t, _) = contract_dense(&dense, &one, expr.output(), &BTreeMap::new())?;
    Ok(t)
}

/// Folds [`contract_pair`] over `path`. The result is laid out in the
/// expression's output label order.
pub fn execute_path(
    expr: &EinsumExpr,
    operands: Vec<Operand>,
    path: &ContractionPath,
    count: bool,
) -> Result<Execution> {
    let mut trace = forward(expr, operands, path)?;
    let result = trace.tensors.swap_remove(trace.root);
    Ok(Execution { output: finish(expr, result)?, macs: count.then_some(trace.macs) })
}

/// Reverse-mode pass over `path`: gradients of `<grad_output, y>` with
/// respect to every operand (operator gradients are per-tap), plus the
/// MAC counts of the forward and backward passes.
pub fn execute_path_adjoint(
    expr: &EinsumExpr,
    operands: Vec<Operand>,
    path: &ContractionPath,
    grad_output: &DenseTensor,
) -> Result<(Vec<Operand>, u64, u64)> {
    let n_inputs = operands.len();
    let trace = forward(expr, operands, path)?;
    let root_labels = trace.tensors[trace.root].labels();
    if matches!(trace.tensors[trace.root], Operand::Conv(_)) || trace.steps.is_empty() {
        return Err(Error::Unsupported("adjoint pass needs at least one step and a dense result".into()));
    }
    let mut grads: Vec<Option<Operand>> = vec![None; trace.tensors.len()];
    grads[trace.root] = Some(Operand::Dense(grad_output.permuted(&root_labels)?));
    let mut backward_macs = 0u64;
    for (ia, ib, id, keep) in trace.steps.iter().rev() {
        let g = grads[*id].take().expect("every intermediate is consumed once");
        let (a, b) = (&trace.tensors[*ia], &trace.tensors[*ib]);
        let (ga, gb, n) = pair_adjoint(a, b, keep, &g)?;
        backward_macs += n;
        grads[*ia] = Some(ga);
        grads[*ib] = Some(gb);
    }
    let out = grads.into_iter().take(n_inputs).map(|g| g.expect("inputs receive gradients")).collect();
    Ok((out, trace.macs, backward_macs))
}

fn pair_adjoint(a: &Operand, b: &Operand, keep: &[Label], g: &Operand) -> Result<(Operand, Operand, u64)> {
    match (a, b, g) {
        (Operand::Dense(x), Operand::Dense(y), Operand::Dense(gy)) => {
            let extra = extent_map(&[x, y])?;
            let (gx, n1) = contract_dense(gy, y, x.labels(), &extra)?;
            let (gyy, n2) = contract_dense(gy, x, y.labels(), &extra)?;
            Ok((gx.into(), gyy.into(), n1 + n2))
        }
        (Operand::Dense(x), Operand::Conv(m), _) => {
            let (gx, gm, n) = conv_adjoint(x, m, keep, g)?;
            Ok((gx.into(), gm.into(), n))
        }
        (Operand::Conv(m), Operand::Dense(x), _) => {
            let (gx, gm, n) = conv_adjoint(x, m, keep, g)?;
            Ok((gm.into(), gx.into(), n))
        }
        _ => Err(Error::Unsupported("adjoint of this operand combination".into())),
    }
}

fn conv_adjoint(
    x: &DenseTensor,
    m: &ConvOperator,
    keep: &[Label],
    g: &Operand,
) -> Result<(DenseTensor, ConvOperator, u64)> {
    match g {
        Operand::Dense(gy) => {
            // sliding convolution: transpose it for x, correlate for the taps
            let plan = Sliding::new(x, m, keep)?;
            let mut gx = vec![0.0; x.len()];
            let mut gm = vec![0.0; m.taps().len()];
            let (xd, md, gd) = (x.data(), m.taps(), gy.data());
            plan.run(x, m, keep, gy.shape(), |iu, im, iy, valid| {
                if valid {
                    gx[iu] += md[im] * gd[iy];
                }
            });
            plan.run(x, m, keep, gy.shape(), |iu, im, iy, valid| {
                let v = if valid { xd[iu] } else { 0.0 };
                gm[im] += gd[iy] * v;
            });
            let gx = DenseTensor::new(x.labels().to_vec(), x.shape().to_vec(), gx)?;
            let gm = m.with_taps(m.batch_labels().to_vec(), m.batch_shape().to_vec(), gm)?;
            Ok((gx, gm, 2 * plan.macs()))
        }
        Operand::Conv(gk) => {
            // kernel generation: result taps are a dense contraction
            let tap = tap_label();
            let g_taps = gk.taps_tensor(&tap);
            let m_taps = m.taps_tensor(&tap);
            let extra = extent_map(&[x, &m_taps])?;
            let (gx, n1) = contract_dense(&g_taps, &m_taps, x.labels(), &extra)?;
            let mut m_labels = m.batch_labels().to_vec();
            m_labels.push(tap);
            let (gm, n2) = contract_dense(&g_taps, x, &m_labels, &extra)?;
            let gm = m.with_taps(m.batch_labels().to_vec(), m.batch_shape().to_vec(), gm.into_data())?;
            Ok((gx, gm, n1 + n2))
        }
    }
}
