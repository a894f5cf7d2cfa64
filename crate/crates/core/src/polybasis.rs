//! Jacobi polynomial bases and their exact per-bin discretization.
//!
//! A basis is held as exact monomial coefficients on `[-1, 1]`, which makes
//! evaluation a Horner loop and integration over any sub-interval an exact
//! antiderivative difference. The normalization constant of the Jacobi
//! family is not applied: rows are the raw three-term recurrence outputs.
//!
//! Time orientation: a kernel window of `K` bins maps affinely onto
//! `[-1, 1]` with the oldest bin at `tau = -1` and the most recent bin at
//! `tau = +1`. Column `j` of a [`DiscreteBasis`] is therefore the bin that
//! lies `K - 1 - j` frames in the past.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_jacobi;

/// Highest supported degree; bounds monomial coefficient growth.
pub const MAX_DEGREE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiParams {
    pub alpha: f64,
    pub beta: f64,
    /// Highest polynomial degree `N`; the basis holds `N + 1` polynomials.
    pub degree: usize,
}

impl JacobiParams {
    pub fn new(alpha: f64, beta: f64, degree: usize) -> Result<Self> {
        let params = Self { alpha, beta, degree };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= -1.0 {
            return Err(invalid(format!("alpha must be > -1, got {}", self.alpha)));
        }
        if !self.beta.is_finite() || self.beta <= -1.0 {
            return Err(invalid(format!("beta must be > -1, got {}", self.beta)));
        }
        if self.degree > MAX_DEGREE {
            return Err(invalid(format!("degree must be <= {MAX_DEGREE}, got {}", self.degree)));
        }
        Ok(())
    }

    /// Number of basis polynomials, `N + 1`.
    pub fn basis_size(&self) -> usize {
        self.degree + 1
    }
}

/// Monomial coefficients of `P_0 .. P_N`, low degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBasis {
    params: JacobiParams,
    coeffs: Vec<Vec<f64>>,
}

impl PolyBasis {
    pub fn params(&self) -> &JacobiParams {
        &self.params
    }

    /// Row `n`: coefficients of `P_n`, length `N + 1`, zero above column `n`.
    pub fn coeffs(&self, n: usize) -> &[f64] {
        &self.coeffs[n]
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Antiderivative of `P_n` vanishing at zero, evaluated at `tau`.
    fn antiderivative(&self, n: usize, tau: f64) -> f64 {
        let row = &self.coeffs[n];
        let mut acc = 0.0;
        for (k, c) in row.iter().enumerate().rev() {
            acc = acc * tau + c / (k + 1) as f64;
        }
        acc * tau
    }

    /// Exact `∫_{lo}^{hi} P_n(τ) dτ`.
    pub fn integrate(&self, n: usize, lo: f64, hi: f64) -> f64 {
        self.antiderivative(n, hi) - self.antiderivative(n, lo)
    }
}

fn horner(row: &[f64], tau: f64) -> f64 {
    row.iter().rev().fold(0.0, |acc, c| acc * tau + c)
}

/// Builds `P_0 .. P_N` with the standard three-term Jacobi recurrence,
/// expanded into monomials.
pub fn build_basis(params: JacobiParams) -> Result<PolyBasis> {
    params.validate()?;
    let JacobiParams { alpha, beta, degree } = params;
    let size = degree + 1;
    let mut coeffs = vec![vec![0.0; size]; size];
    coeffs[0][0] = 1.0;
    if degree >= 1 {
        coeffs[1][0] = 0.5 * (alpha - beta);
        coeffs[1][1] = 0.5 * (alpha + beta + 2.0);
    }
    let ab = alpha + beta;
    for n in 2..size {
        let nf = n as f64;
        let a0 = 2.0 * nf * (nf + ab) * (2.0 * nf + ab - 2.0);
        let a1 = (2.0 * nf + ab - 1.0) * (alpha * alpha - beta * beta);
        let a2 = (2.0 * nf + ab - 1.0) * (2.0 * nf + ab) * (2.0 * nf + ab - 2.0);
        let a3 = 2.0 * (nf + alpha - 1.0) * (nf + beta - 1.0) * (2.0 * nf + ab);
        let (head, tail) = coeffs.split_at_mut(n);
        let prev = &head[n - 1];
        let prev2 = &head[n - 2];
        let row = &mut tail[0];
        for k in 0..=n {
            let mut v = a1 * prev[k] - a3 * prev2[k];
            if k > 0 {
                v += a2 * prev[k - 1];
            }
            row[k] = v / a0;
        }
    }
    Ok(PolyBasis { params, coeffs })
}

/// Value of `P_n(tau)`.
pub fn eval_poly(basis: &PolyBasis, n: usize, tau: f64) -> Result<f64> {
    if n >= basis.len() {
        return Err(Error::OutOfRange(format!("degree index {n} exceeds basis degree {}", basis.len() - 1)));
    }
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::OutOfRange(format!("tau = {tau} is outside [-1, 1]")));
    }
    Ok(horner(&basis.coeffs[n], tau))
}

/// Weighted inner product `∫ P_n P_m (1-τ)^α (1+τ)^β dτ` by Gauss–Jacobi
/// quadrature, which is exact for the polynomial product.
pub fn weighted_inner_product(basis: &PolyBasis, n: usize, m: usize) -> Result<f64> {
    let size = basis.len();
    if n >= size || m >= size {
        return Err(Error::OutOfRange(format!("indices ({n}, {m}) exceed basis size {size}")));
    }
    let p = basis.params();
    let order = size + 1;
    let (nodes, weights) = gauss_jacobi(order, p.alpha, p.beta)?;
    Ok(nodes.iter().zip(&weights).map(|(&x, &w)| w * horner(&basis.coeffs[n], x) * horner(&basis.coeffs[m], x)).sum())
}

/// Weighted inner product of two distinct basis polynomials; near zero for
/// a correct basis.
pub fn orthogonality_defect(basis: &PolyBasis, n: usize, m: usize) -> Result<f64> {
    if n == m {
        return Err(invalid("orthogonality defect needs n != m; the self inner product is the normalization"));
    }
    weighted_inner_product(basis, n, m)
}

/// Per-bin integrals of a basis over `K` uniform bins of `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBasis {
    params: JacobiParams,
    values: Vec<Vec<f64>>,
    num_bins: usize,
    bin_size: f64,
    reference_bin_size: f64,
}

impl DiscreteBasis {
    pub fn params(&self) -> &JacobiParams {
        &self.params
    }

    /// Row `n` of the `(N + 1) x K` matrix, oldest bin first.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn basis_size(&self) -> usize {
        self.values.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Physical duration of one bin in seconds.
    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    /// Bin size the basis was originally discretized at, before any
    /// resampling.
    pub fn reference_bin_size(&self) -> f64 {
        self.reference_bin_size
    }

    /// Physical kernel window `K * Δτ` in seconds.
    pub fn window(&self) -> f64 {
        self.num_bins as f64 * self.bin_size
    }

    /// Factor by which binned event inputs must be multiplied when feeding
    /// this basis: reference bin size over current bin size.
    pub fn input_scale(&self) -> f64 {
        self.reference_bin_size / self.bin_size
    }
}

fn bin_edges(num_bins: usize) -> impl Iterator<Item = f64> {
    let k = num_bins as f64;
    (0..=num_bins).map(move |j| -1.0 + 2.0 * j as f64 / k)
}

fn integrate_bins(basis: &PolyBasis, num_bins: usize) -> Vec<Vec<f64>> {
    let edges: Vec<f64> = bin_edges(num_bins).collect();
    (0..basis.len()).map(|n| edges.windows(2).map(|e| basis.integrate(n, e[0], e[1])).collect()).collect()
}

/// Integrates every basis polynomial exactly over `num_bins` uniform bins.
pub fn discretize_basis(basis: &PolyBasis, num_bins: usize, bin_size: f64) -> Result<DiscreteBasis> {
    if num_bins == 0 {
        return Err(invalid("number of bins must be at least 1"));
    }
    if !(bin_size > 0.0 && bin_size.is_finite()) {
        return Err(invalid(format!("bin size must be positive, got {bin_size}")));
    }
    Ok(DiscreteBasis {
        params: basis.params,
        values: integrate_bins(basis, num_bins),
        num_bins,
        bin_size,
        reference_bin_size: bin_size,
    })
}

/// Re-discretizes the same continuous basis over the same physical window
/// with `new_num_bins` bins. The returned basis remembers the original bin
/// size so [`DiscreteBasis::input_scale`] gives the input rescaling factor.
pub fn resample_basis(db: &DiscreteBasis, new_num_bins: usize) -> Result<DiscreteBasis> {
    if new_num_bins == 0 {
        return Err(invalid("number of bins must be at least 1"));
    }
    let basis = build_basis(db.params)?;
    let bin_size = if new_num_bins == db.num_bins { db.bin_size } else { db.window() / new_num_bins as f64 };
    Ok(DiscreteBasis {
        params: db.params,
        values: integrate_bins(&basis, new_num_bins),
        num_bins: new_num_bins,
        bin_size,
        reference_bin_size: db.reference_bin_size,
    })
}

/// Discretizes directly from parameters, recording a reference bin size
/// that may differ from the current one (used when loading resampled
/// models).
pub fn discrete_basis_with_reference(
    params: JacobiParams,
    num_bins: usize,
    bin_size: f64,
    reference_bin_size: f64,
) -> Result<DiscreteBasis> {
    if !(reference_bin_size > 0.0 && reference_bin_size.is_finite()) {
        return Err(invalid(format!("reference bin size must be positive, got {reference_bin_size}")));
    }
    let mut db = discretize_basis(&build_basis(params)?, num_bins, bin_size)?;
    db.reference_bin_size = reference_bin_size;
    Ok(db)
}
