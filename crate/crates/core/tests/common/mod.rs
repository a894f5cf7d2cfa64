//! Reference implementations used as test oracles. None of these share
//! code with the library: polynomials come from the explicit Jacobi sum,
//! quadrature nodes from Newton iteration on the Legendre recurrence, and
//! tensor operations are plain nested loops.
#![allow(dead_code)]

use std::collections::BTreeMap;

use polyconv::events::EventRecord;
use polyconv::tensor::{DenseTensor, Label};
use rand::Rng;

/// Generalized binomial coefficient `C(a, k)` for real `a`.
fn binom(a: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (a - i as f64) / (i + 1) as f64)
}

/// `P_n^{(α,β)}(x) = Σ_s C(n+α, n-s) C(n+β, s) ((x-1)/2)^s ((x+1)/2)^(n-s)`.
pub fn jacobi_explicit(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    let (a, b) = ((x - 1.0) / 2.0, (x + 1.0) / 2.0);
    (0..=n)
        .map(|s| binom(n as f64 + alpha, n - s) * binom(n as f64 + beta, s) * a.powi(s as i32) * b.powi((n - s) as i32))
        .sum()
}

/// [`jacobi_explicit`] with the binomial products computed once, for
/// oracles that evaluate one degree many times.
pub fn jacobi_explicit_fn(n: usize, alpha: f64, beta: f64) -> impl Fn(f64) -> f64 {
    let c: Vec<f64> = (0..=n).map(|s| binom(n as f64 + alpha, n - s) * binom(n as f64 + beta, s)).collect();
    move |x| {
        let (a, b) = ((x - 1.0) / 2.0, (x + 1.0) / 2.0);
        c.iter().enumerate().map(|(s, cs)| cs * a.powi(s as i32) * b.powi((n - s) as i32)).sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for i in 0..order {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre over `[a, b]` with uniform panels.
pub fn composite_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, order: usize, panels: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total += wi * f(lo + (xi + 1.0) * h / 2.0) * h / 2.0;
        }
    }
    total
}

/// `∫_{-1}^{1} f(τ) (1-τ)^α (1+τ)^β dτ`. Each half of the interval is split
/// into panels that shrink geometrically towards the endpoint, so the
/// endpoint singularity is resolved by ordinary Gauss–Legendre panels.
pub fn weighted_integral(f: impl Fn(f64) -> f64, alpha: f64, beta: f64) -> f64 {
    let (x, w) = gauss_legendre(16);
    // integrand in terms of the distance s from the right / left endpoint,
    // so the singular factor is evaluated without cancellation
    let right = |s: f64| f(1.0 - s) * s.powf(alpha) * (2.0 - s).powf(beta);
    let left = |s: f64| f(-1.0 + s) * (2.0 - s).powf(alpha) * s.powf(beta);
    let panel = |g: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
        x.iter().zip(&w).map(|(xi, wi)| wi * g(lo + (xi + 1.0) * (hi - lo) / 2.0) * (hi - lo) / 2.0).sum()
    };
    let mut total = 0.0;
    // panels [2^-(k+1), 2^-k]; the neglected tail is O(2^-100 (1 + α))
    for k in 0..100 {
        let (far, near) = (0.5f64.powi(k), 0.5f64.powi(k + 1));
        total += panel(&right, near, far);
        total += panel(&left, near, far);
    }
    total
}

/// Einsum by enumerating every label assignment.
pub fn naive_einsum(operands: &[DenseTensor], output: &[Label]) -> DenseTensor {
    let mut sizes: BTreeMap<Label, usize> = BTreeMap::new();
    for op in operands {
        for (l, &n) in op.labels().iter().zip(op.shape()) {
            sizes.insert(l.clone(), n);
        }
    }
    let labels: Vec<Label> = sizes.keys().cloned().collect();
    let extents: Vec<usize> = labels.iter().map(|l| sizes[l]).collect();
    let out_shape: Vec<usize> = output.iter().map(|l| sizes[l]).collect();
    let mut out = vec![0.0; out_shape.iter().product()];
    // (assignment slot, stride) pairs addressing a tensor's flat data
    let addressing = |tensor_labels: &[Label], shape: &[usize]| -> Vec<(usize, usize)> {
        let mut stride = 1;
        let mut v: Vec<(usize, usize)> = tensor_labels
            .iter()
            .zip(shape)
            .rev()
            .map(|(l, &n)| {
                let slot = labels.iter().position(|x| x == l).unwrap();
                let e = (slot, stride);
                stride *= n;
                e
            })
            .collect();
        v.reverse();
        v
    };
    let ops: Vec<Vec<(usize, usize)>> = operands.iter().map(|op| addressing(op.labels(), op.shape())).collect();
    let out_addr = addressing(output, &out_shape);
    let flat = |addr: &[(usize, usize)], assign: &[usize]| addr.iter().map(|&(s, st)| assign[s] * st).sum::<usize>();
    let total: usize = extents.iter().product();
    let mut assign = vec![0usize; labels.len()];
    for _ in 0..total {
        let prod: f64 = operands.iter().zip(&ops).map(|(op, a)| op.data()[flat(a, &assign)]).product();
        out[flat(&out_addr, &assign)] += prod;
        for k in (0..assign.len()).rev() {
            assign[k] += 1;
            if assign[k] < extents[k] {
                break;
            }
            assign[k] = 0;
        }
    }
    DenseTensor::new(output.to_vec(), out_shape, out).unwrap()
}

/// Sliding-window causal valid convolution of one sequence; the last tap
/// meets the newest input.
pub fn sliding_conv(u: &[f64], taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    (0..=u.len() - k).map(|t| (0..k).map(|j| taps[j] * u[t + j]).sum()).collect()
}

/// Full 3x3 zero-padded convolution with stride, six nested loops per
/// frame; weights `(D, C, 3, 3)`.
pub fn spatial_oracle(x: &DenseTensor, weights: &[f64], d: usize, stride: usize) -> DenseTensor {
    let (c, t, h, w) = x.dims4().unwrap();
    let ho = (h - 1) / stride + 1;
    let wo = (w - 1) / stride + 1;
    let mut out = vec![0.0; d * t * ho * wo];
    for co in 0..d {
        for ti in 0..t {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as i64 - 1;
                                let ix = (ox * stride + kx) as i64 - 1;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let v = x.data()[((ci * t + ti) * h + iy as usize) * w + ix as usize];
                                acc += weights[((co * c + ci) * 3 + ky) * 3 + kx] * v;
                            }
                        }
                    }
                    out[((co * t + ti) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    DenseTensor::volume(d, t, ho, wo, out).unwrap()
}

pub fn random_tensor<R: Rng>(rng: &mut R, labels: &[&str], shape: &[usize]) -> DenseTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseTensor::new(labels.iter().map(|&l| Label::from(l)).collect(), shape.to_vec(), data).unwrap()
}

pub fn random_volume<R: Rng>(rng: &mut R, c: usize, t: usize, h: usize, w: usize) -> DenseTensor {
    let data = (0..c * t * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseTensor::volume(c, t, h, w, data).unwrap()
}

/// Uniformly random events over `[0, span_us)`, sorted by time.
pub fn random_events<R: Rng>(rng: &mut R, n: usize, span_us: u64, width: u16, height: u16) -> Vec<EventRecord> {
    let mut ev: Vec<EventRecord> = (0..n)
        .map(|_| {
            EventRecord::new(
                rng.gen_range(0..span_us),
                rng.gen_range(0..width),
                rng.gen_range(0..height),
                rng.gen_range(0..2),
            )
        })
        .collect();
    ev.sort_by_key(|e| e.t);
    ev
}

/// Relative error `max|a - b| / max(1e-300, max|b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Random dense einsum: 2..=`max_ops` operands over labels `a..f`, each
/// with 1-3 distinct labels, extents in `1..=max_extent`, and a random
/// output subset.
pub struct RandomEinsum {
    pub spec: String,
    pub sizes: BTreeMap<Label, usize>,
    pub operands: Vec<DenseTensor>,
    pub output: Vec<Label>,
}

pub fn random_einsum<R: Rng>(rng: &mut R, max_ops: usize, max_extent: usize) -> RandomEinsum {
    let pool = ['a', 'b', 'c', 'd', 'e', 'f'];
    let extents: BTreeMap<char, usize> = pool.iter().map(|&c| (c, rng.gen_range(1..=max_extent))).collect();
    let n_ops = rng.gen_range(2..=max_ops);
    let mut terms: Vec<Vec<char>> = Vec::new();
    for _ in 0..n_ops {
        let k = rng.gen_range(1..=3);
        let mut labels: Vec<char> = Vec::new();
        while labels.len() < k {
            let c = pool[rng.gen_range(0..pool.len())];
            if !labels.contains(&c) {
                labels.push(c);
            }
        }
        terms.push(labels);
    }
    let mut union: Vec<char> = terms.iter().flatten().copied().collect();
    union.sort_unstable();
    union.dedup();
    let mut output: Vec<char> = union.into_iter().filter(|_| rng.gen_bool(0.5)).collect();
    // random order
    for i in (1..output.len()).rev() {
        output.swap(i, rng.gen_range(0..=i));
    }
    let spec = format!(
        "{}->{}",
        terms.iter().map(|t| t.iter().collect::<String>()).collect::<Vec<_>>().join(","),
        output.iter().collect::<String>()
    );
    let operands = terms
        .iter()
        .map(|t| {
            let labels: Vec<String> = t.iter().map(|c| c.to_string()).collect();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            let shape: Vec<usize> = t.iter().map(|c| extents[c]).collect();
            random_tensor(rng, &refs, &shape)
        })
        .collect();
    RandomEinsum {
        spec,
        sizes: extents.iter().map(|(c, &n)| (Label::new(c.to_string()), n)).collect(),
        operands,
        output: output.iter().map(|c| Label::new(c.to_string())).collect(),
    }
}

/// Dense `(n, t', t)` Toeplitz tensor of a discrete basis:
/// `M[n][t'][t] = P̄[n][t - t' + offset]` inside the band, where the offset
/// is 0 for valid and `K - 1` for same-length output.
pub fn toeplitz(rows: &[Vec<f64>], t_in: usize, same: bool) -> DenseTensor {
    let k = rows[0].len();
    let (t_out, offset) = if same { (t_in, k - 1) } else { (t_in - k + 1, 0) };
    let n = rows.len();
    let mut data = vec![0.0; n * t_out * t_in];
    for (ni, row) in rows.iter().enumerate() {
        for tp in 0..t_out {
            for t in 0..t_in {
                let j = t as i64 - tp as i64 + offset as i64;
                if (0..k as i64).contains(&j) {
                    data[(ni * t_out + tp) * t_in + t] = row[j as usize];
                }
            }
        }
    }
    DenseTensor::new(vec!["n".into(), "t'".into(), "t".into()], vec![n, t_out, t_in], data).unwrap()
}

/// Valid causal temporal convolution of a `(C, T, H, W)` volume with full
/// `(D, C, K)` taps, one sliding window per pixel and channel pair.
pub fn temporal_oracle(x: &DenseTensor, taps: &[f64], d: usize, k: usize) -> DenseTensor {
    let (c, t, h, w) = x.dims4().unwrap();
    let to = t + 1 - k;
    let plane = h * w;
    let mut out = vec![0.0; d * to * plane];
    for co in 0..d {
        for ci in 0..c {
            let tap = &taps[(co * c + ci) * k..][..k];
            for p in 0..plane {
                let seq: Vec<f64> = (0..t).map(|ti| x.data()[(ci * t + ti) * plane + p]).collect();
                for (ti, v) in sliding_conv(&seq, tap).into_iter().enumerate() {
                    out[(co * to + ti) * plane + p] += v;
                }
            }
        }
    }
    DenseTensor::volume(d, to, h, w, out).unwrap()
}

/// Pointwise `(D, C)` weights as a 3x3 kernel with only the centre tap.
pub fn pointwise_as_full(weights: &[f64], d: usize, c: usize) -> Vec<f64> {
    let mut full = vec![0.0; d * c * 9];
    for (i, &v) in weights.iter().enumerate() {
        full[i * 9 + 4] = v;
    }
    assert_eq!(weights.len(), d * c);
    full
}
