//! Gauss–Jacobi quadrature via the Golub–Welsch eigenvalue method.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};

/// Nodes and weights of an `order`-point Gauss–Jacobi rule for the weight
/// `(1 - x)^alpha (1 + x)^beta` on `[-1, 1]`.
///
/// The rule integrates `p(x) w(x)` exactly for polynomials `p` of degree
/// up to `2 * order - 1`. Nodes are returned in ascending order.
pub fn gauss_jacobi(order: usize, alpha: f64, beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(invalid("quadrature order must be at least 1"));
    }
    if !(alpha > -1.0 && beta > -1.0) {
        return Err(invalid(format!("Jacobi weight exponents must exceed -1 (alpha={alpha}, beta={beta})")));
    }
    let ab = alpha + beta;
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 0..order {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jacobi[(k, k)] = diag;
        if k + 1 < order {
            let j = kf + 1.0;
            // recurrence coefficient b_j of the monic family
            let b = if k == 0 {
                4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                4.0 * j * (j + alpha) * (j + beta) * (j + ab)
                    / ((2.0 * j + ab).powi(2) * (2.0 * j + ab + 1.0) * (2.0 * j + ab - 1.0))
            };
            let off = b.sqrt();
            jacobi[(k, k + 1)] = off;
            jacobi[(k + 1, k)] = off;
        }
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma(alpha + 1.0) * gamma(beta + 1.0) / gamma(ab + 2.0);
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}
