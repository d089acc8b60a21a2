//! Gauss–Hermite rule for expectations over a standard normal, built by the
//! Golub–Welsch eigenvalue method.

use nalgebra::{DMatrix, SymmetricEigen};

pub const DEFAULT_NODES: usize = 129;

/// Nodes and weights with Σ w_k f(x_k) ≈ E[f(Z)], Z ~ N(0, 1).
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    // Jacobi matrix of the probabilists' Hermite polynomials.
    let jacobi = DMatrix::from_fn(nodes, nodes, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..nodes)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

pub fn expect<F: Fn(f64) -> f64>(rule: &(Vec<f64>, Vec<f64>), f: F) -> f64 {
    rule.0.iter().zip(&rule.1).map(|(&x, &w)| w * f(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_moments() {
        let rule = gauss_hermite(DEFAULT_NODES);
        assert!((expect(&rule, |_| 1.0) - 1.0).abs() < 1e-12);
        assert!(expect(&rule, |x| x).abs() < 1e-12);
        assert!((expect(&rule, |x| x * x) - 1.0).abs() < 1e-10);
        assert!((expect(&rule, |x| x.powi(4)) - 3.0).abs() < 1e-9);
    }
}
