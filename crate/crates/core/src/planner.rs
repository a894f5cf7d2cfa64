//! Einsum expressions, exhaustive contraction-path enumeration and
//! convolution-aware cost estimates.
//!
//! Costs follow two base rules. Storing an intermediate costs the product
//! of its label extents; computing it costs the product of the extents of
//! every label involved in the pairwise contraction, each counted once.
//! The final contraction produces the output and costs no extra memory.
//!
//! Declared convolution pairs `(t, t')` with kernel extent `N_τ` modify
//! both rules. Any tensor holding both `t` and `t'` is a banded Toeplitz
//! operator and stores `N_τ` values along the pair instead of
//! `N_t · N_t'`. A contraction between an operand holding `t` alone and an
//! operand holding the pair is a sliding convolution and costs
//! `N_t' · N_τ` (valid) or `N_t · N_τ` (same) along the pair; any other
//! contraction touching the pair costs `N_τ` along it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{labels_to_string, Label};

/// Largest operand count accepted by exhaustive enumeration.
pub const MAX_OPERANDS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    /// Outputs only where the kernel fully overlaps past inputs.
    #[default]
    Valid,
    /// Causal zero padding; output length equals input length.
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvPair {
    /// Input time label (`t`).
    pub input: Label,
    /// Output time label (`t'`).
    pub output: Label,
    /// Kernel extent `N_τ`.
    pub kernel: usize,
}

impl ConvPair {
    pub fn new(input: impl Into<Label>, output: impl Into<Label>, kernel: usize) -> Self {
        Self { input: input.into(), output: output.into(), kernel }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EinsumExpr {
    operands: Vec<Vec<Label>>,
    output: Vec<Label>,
    sizes: BTreeMap<Label, usize>,
    conv_pairs: Vec<ConvPair>,
    mode: ConvMode,
}

impl EinsumExpr {
    pub fn operands(&self) -> &[Vec<Label>] {
        &self.operands
    }

    pub fn output(&self) -> &[Label] {
        &self.output
    }

    pub fn sizes(&self) -> &BTreeMap<Label, usize> {
        &self.sizes
    }

    pub fn size(&self, label: &Label) -> usize {
        self.sizes[label]
    }

    pub fn conv_pairs(&self) -> &[ConvPair] {
        &self.conv_pairs
    }

    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    pub fn num_operands(&self) -> usize {
        self.operands.len()
    }

    /// `"cxyt,dnc,nt't->dxyt'"`.
    pub fn spec_string(&self) -> String {
        let ops: Vec<String> = self.operands.iter().map(|o| labels_to_string(o)).collect();
        format!("{}->{}", ops.join(","), labels_to_string(&self.output))
    }

    /// The convolution pair held entirely by `labels`, if any.
    pub fn pair_in<'a>(&'a self, labels: &[Label]) -> Option<&'a ConvPair> {
        self.conv_pairs.iter().find(|p| labels.contains(&p.input) && labels.contains(&p.output))
    }

    /// Stored size of a tensor with these labels under the Toeplitz rule.
    pub fn tensor_size(&self, labels: &[Label]) -> u64 {
        let mut skip: Vec<&Label> = Vec::new();
        let mut size: u64 = 1;
        for pair in &self.conv_pairs {
            if labels.contains(&pair.input) && labels.contains(&pair.output) {
                skip.push(&pair.input);
                skip.push(&pair.output);
                size = size.saturating_mul(pair.kernel as u64);
            }
        }
        for l in labels {
            if !skip.contains(&l) {
                size = size.saturating_mul(self.sizes[l] as u64);
            }
        }
        size
    }
}

/// Parses `"labels,labels,...->labels"`. Labels are single letters,
/// optionally primed (`t'`). The size of a convolution output label may be
/// omitted; it is derived from the input size, kernel extent and mode.
pub fn parse_expr(
    spec: &str,
    sizes: &BTreeMap<Label, usize>,
    conv_pairs: Vec<ConvPair>,
    mode: ConvMode,
) -> Result<EinsumExpr> {
    let spec: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
    let (lhs, rhs) = spec.split_once("->").ok_or_else(|| Error::Parse(format!("expression {spec:?} lacks '->'")))?;
    if rhs.contains("->") {
        return Err(Error::Parse(format!("expression {spec:?} has several '->'")));
    }
    if lhs.is_empty() {
        return Err(Error::Parse("expression has no operands".into()));
    }
    let operands: Vec<Vec<Label>> =
        lhs.split(',')
            .map(|s| {
                if s.is_empty() {
                    Err(Error::Parse(format!("empty operand in {spec:?}")))
                } else {
                    Label::parse_list(s)
                }
            })
            .collect::<Result<_>>()?;
    let output = Label::parse_list(rhs)?;

    for (i, labels) in operands.iter().chain(std::iter::once(&output)).enumerate() {
        for (k, l) in labels.iter().enumerate() {
            if labels[..k].contains(l) {
                return Err(Error::Parse(format!("label {l} repeated within term {i} of {spec:?}")));
            }
        }
    }
    for l in &output {
        if !operands.iter().any(|o| o.contains(l)) {
            return Err(Error::Parse(format!("output label {l} does not appear in any operand")));
        }
    }

    let mut sizes = sizes.clone();
    for (k, pair) in conv_pairs.iter().enumerate() {
        if pair.kernel == 0 {
            return Err(invalid("convolution kernel extent must be at least 1"));
        }
        if pair.input == pair.output {
            return Err(invalid("convolution pair needs two distinct labels"));
        }
        for other in &conv_pairs[..k] {
            for l in [&pair.input, &pair.output] {
                if *l == other.input || *l == other.output {
                    return Err(invalid(format!("label {l} belongs to two convolution pairs")));
                }
            }
        }
        for l in [&pair.input, &pair.output] {
            if !operands.iter().any(|o| o.contains(l)) {
                return Err(Error::Parse(format!("convolution label {l} does not appear in any operand")));
            }
        }
        for o in &operands {
            if o.contains(&pair.output) && !o.contains(&pair.input) {
                return Err(Error::Unsupported(format!(
                    "convolution output label {} may only appear with {} in an operand",
                    pair.output, pair.input
                )));
            }
        }
        let n_in = *sizes.get(&pair.input).ok_or_else(|| invalid(format!("no size given for label {}", pair.input)))?;
        let derived = match mode {
            ConvMode::Valid => {
                if pair.kernel > n_in {
                    return Err(invalid(format!(
                        "kernel extent {} exceeds {} = {n_in} in valid mode",
                        pair.kernel, pair.input
                    )));
                }
                n_in - pair.kernel + 1
            }
            ConvMode::Same => n_in,
        };
        match sizes.get(&pair.output) {
            Some(&given) if given != derived => {
                return Err(invalid(format!(
                    "size of {} is {given} but the convolution yields {derived}",
                    pair.output
                )));
            }
            _ => {
                sizes.insert(pair.output.clone(), derived);
            }
        }
    }

    for labels in &operands {
        for l in labels {
            match sizes.get(l) {
                None => return Err(invalid(format!("no size given for label {l}"))),
                Some(0) => return Err(invalid(format!("label {l} has zero extent"))),
                _ => {}
            }
        }
    }
    // drop sizes for labels that are not used
    sizes.retain(|l, _| operands.iter().any(|o| o.contains(l)));

    Ok(EinsumExpr { operands, output, sizes, conv_pairs, mode })
}

/// Ordered pairwise merges. Each step removes operands `i < j` from the
/// live list and appends their contraction at the end.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContractionPath(pub Vec<(usize, usize)>);

impl ContractionPath {
    pub fn steps(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn validate(&self, num_operands: usize) -> Result<()> {
        if self.0.len() + 1 != num_operands.max(1) {
            return Err(invalid(format!(
                "a path over {num_operands} operands needs {} steps, got {}",
                num_operands.saturating_sub(1),
                self.0.len()
            )));
        }
        let mut live = num_operands;
        for &(i, j) in &self.0 {
            if !(i < j && j < live) {
                return Err(invalid(format!("step ({i},{j}) is not valid with {live} live operands")));
            }
            live -= 1;
        }
        Ok(())
    }

    /// Parses `"(0,1)(0,1)"`; the empty string is the zero-step path.
    pub fn parse(s: &str) -> Result<Self> {
        let mut steps = Vec::new();
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        for part in s.split(')').filter(|p| !p.is_empty()) {
            let inner = part.strip_prefix('(').ok_or_else(|| Error::Parse(format!("malformed path step {part:?}")))?;
            let (a, b) = inner.split_once(',').ok_or_else(|| Error::Parse(format!("malformed path step {part:?}")))?;
            let a = a.parse().map_err(|_| Error::Parse(format!("bad index {a:?}")))?;
            let b = b.parse().map_err(|_| Error::Parse(format!("bad index {b:?}")))?;
            steps.push((a, b));
        }
        Ok(Self(steps))
    }
}

impl fmt::Display for ContractionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for (i, j) in &self.0 {
            write!(f, "({i},{j})")?;
        }
        Ok(())
    }
}

/// Extra memory (reals stored for intermediates) and total compute
/// (multiply-accumulates).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, PartialOrd, Ord, Hash)]
pub struct CostEstimate {
    pub extra_memory: u64,
    pub total_compute: u64,
}

impl std::ops::Add for CostEstimate {
    type Output = CostEstimate;

    fn add(self, rhs: Self) -> Self {
        CostEstimate {
            extra_memory: self.extra_memory.saturating_add(rhs.extra_memory),
            total_compute: self.total_compute.saturating_add(rhs.total_compute),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Memory,
    Compute,
}

impl Objective {
    fn key(self, c: &CostEstimate) -> (u64, u64) {
        match self {
            Objective::Memory => (c.extra_memory, c.total_compute),
            Objective::Compute => (c.total_compute, c.extra_memory),
        }
    }
}

/// Every distinct sequence of pairwise merges on the shrinking operand
/// list, in lexicographic order.
pub fn enumerate_paths(expr: &EinsumExpr) -> Result<Vec<ContractionPath>> {
    let n = expr.num_operands();
    if n > MAX_OPERANDS {
        return Err(invalid(format!("exhaustive enumeration supports at most {MAX_OPERANDS} operands, got {n}")));
    }
    fn rec(live: usize, prefix: &mut Vec<(usize, usize)>, out: &mut Vec<ContractionPath>) {
        if live <= 1 {
            out.push(ContractionPath(prefix.clone()));
            return;
        }
        for i in 0..live {
            for j in i + 1..live {
                prefix.push((i, j));
                rec(live - 1, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(n, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Labels that survive contracting `live[i]` with `live[j]`: those needed
/// by the output or by any other live operand. The last merge yields the
/// output labels in output order.
pub fn intermediate_labels(live: &[Vec<Label>], pair: (usize, usize), expr: &EinsumExpr) -> Vec<Label> {
    let (i, j) = pair;
    if live.len() == 2 {
        return expr.output.clone();
    }
    let mut keep = Vec::new();
    for l in live[i].iter().chain(&live[j]) {
        if keep.contains(l) {
            continue;
        }
        let needed = expr.output.contains(l) || live.iter().enumerate().any(|(k, o)| k != i && k != j && o.contains(l));
        if needed {
            keep.push(l.clone());
        }
    }
    keep
}

/// Compute cost of contracting operands with labels `a` and `b`.
pub fn pair_compute(a: &[Label], b: &[Label], expr: &EinsumExpr) -> u64 {
    let mut involved: Vec<&Label> = a.iter().collect();
    for l in b {
        if !involved.contains(&l) {
            involved.push(l);
        }
    }
    let mut cost: u64 = 1;
    let mut skip: Vec<&Label> = Vec::new();
    for pair in &expr.conv_pairs {
        if !(involved.contains(&&pair.input) && involved.contains(&&pair.output)) {
            continue;
        }
        skip.push(&pair.input);
        skip.push(&pair.output);
        let holds_pair = |o: &[Label]| o.contains(&pair.input) && o.contains(&pair.output);
        let holds_input_only = |o: &[Label]| o.contains(&pair.input) && !o.contains(&pair.output);
        let sliding = (holds_pair(a) && holds_input_only(b)) || (holds_pair(b) && holds_input_only(a));
        let factor = if sliding {
            let outputs = match expr.mode {
                ConvMode::Valid => expr.sizes[&pair.output],
                ConvMode::Same => expr.sizes[&pair.input],
            };
            outputs as u64 * pair.kernel as u64
        } else {
            pair.kernel as u64
        };
        cost = cost.saturating_mul(factor);
    }
    for l in involved {
        if !skip.contains(&l) {
            cost = cost.saturating_mul(expr.sizes[l] as u64);
        }
    }
    cost
}

/// Cost of one merge step on the live operand list.
pub fn step_cost(live: &[Vec<Label>], pair: (usize, usize), expr: &EinsumExpr) -> Result<(Vec<Label>, CostEstimate)> {
    let (i, j) = pair;
    if !(i < j && j < live.len()) {
        return Err(invalid(format!("merge ({i},{j}) is not valid with {} live operands", live.len())));
    }
    let keep = intermediate_labels(live, pair, expr);
    let extra_memory = if live.len() == 2 { 0 } else { expr.tensor_size(&keep) };
    let total_compute = pair_compute(&live[i], &live[j], expr);
    Ok((keep, CostEstimate { extra_memory, total_compute }))
}

/// Applies one merge to the live list, returning the new list.
pub fn apply_step(live: &[Vec<Label>], pair: (usize, usize), keep: Vec<Label>) -> Vec<Vec<Label>> {
    let mut next: Vec<Vec<Label>> =
        live.iter().enumerate().filter(|(k, _)| *k != pair.0 && *k != pair.1).map(|(_, o)| o.clone()).collect();
    next.push(keep);
    next
}

/// Sum of step costs along `path`.
pub fn path_cost(expr: &EinsumExpr, path: &ContractionPath) -> Result<CostEstimate> {
    path.validate(expr.num_operands())?;
    let mut live = expr.operands.clone();
    let mut total = CostEstimate::default();
    for &step in path.steps() {
        let (keep, cost) = step_cost(&live, step, expr)?;
        total = total + cost;
        live = apply_step(&live, step, keep);
    }
    Ok(total)
}

/// Labels of every intermediate along `path`, final output last.
pub fn path_intermediates(expr: &EinsumExpr, path: &ContractionPath) -> Result<Vec<Vec<Label>>> {
    path.validate(expr.num_operands())?;
    let mut live = expr.operands.clone();
    let mut out = Vec::new();
    for &step in path.steps() {
        let keep = intermediate_labels(&live, step, expr);
        out.push(keep.clone());
        live = apply_step(&live, step, keep);
    }
    Ok(out)
}

/// Largest tensor other than the final output that is resident at any
/// point of `path` (inputs included), sized with the Toeplitz rule.
pub fn peak_tensor_size(expr: &EinsumExpr, path: &ContractionPath) -> Result<u64> {
    let inter = path_intermediates(expr, path)?;
    let non_final = inter.len().saturating_sub(1);
    Ok(expr.operands.iter().chain(&inter[..non_final]).map(|l| expr.tensor_size(l)).max().unwrap_or(0))
}

/// All paths with their costs, sorted by `objective`, then by the other
/// objective, then lexicographically.
pub fn ranked_paths(expr: &EinsumExpr, objective: Objective) -> Result<Vec<(ContractionPath, CostEstimate)>> {
    let mut rows =
        enumerate_paths(expr)?.into_iter().map(|p| path_cost(expr, &p).map(|c| (p, c))).collect::<Result<Vec<_>>>()?;
    rows.sort_by(|(pa, ca), (pb, cb)| objective.key(ca).cmp(&objective.key(cb)).then_with(|| pa.cmp(pb)));
    Ok(rows)
}

/// The cheapest path under `objective`.
pub fn optimal_path(expr: &EinsumExpr, objective: Objective) -> Result<(ContractionPath, CostEstimate)> {
    ranked_paths(expr, objective)?.into_iter().next().ok_or_else(|| invalid("expression has no contraction path"))
}

/// Builds a size map from `(label, extent)` pairs.
pub fn sizes_from<'a>(pairs: impl IntoIterator<Item = (&'a str, usize)>) -> BTreeMap<Label, usize> {
    pairs.into_iter().map(|(l, n)| (Label::from(l), n)).collect()
}
