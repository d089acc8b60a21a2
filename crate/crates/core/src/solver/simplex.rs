//! Exact vertex pivoting for the unpenalized problem.
//!
//! A vertex is a set E of p samples with invertible rows A_E; the fit
//! interpolates them, w = A_E⁻¹ y_E. Every other sample sits on a side with
//! dual τ or −(1−τ), and stationarity gives η_E = −A_E⁻ᵀ g with
//! g = Σ_{i∉E} η_i a_i. The vertex is optimal when η_E lies in the box.
//! Otherwise the most violating basic sample leaves and the fit moves along
//! the edge that frees its residual, passing over residual sign changes
//! while the directional derivative stays negative (Barrodale–Roberts).

use nalgebra::{DMatrix, DVector};

use super::Problem;

const MAX_PIVOTS_PER_SAMPLE: usize = 4;
const REFACTOR_EVERY: usize = 50;
const DUAL_SLACK: f64 = 1e-12;

/// Greedy selection of p linearly independent rows, smallest |hint| first.
pub(crate) fn initial_basis(pb: &Problem, hint: &DVector<f64>) -> Option<Vec<usize>> {
    let p = pb.p();
    let n = pb.n();
    if n < p {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| hint[i].abs().total_cmp(&hint[j].abs()));
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut basis = Vec::with_capacity(p);
    for i in order {
        let a = pb.a.row(i).transpose();
        let norm = a.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = a.clone();
        // two passes of Gram–Schmidt for stability
        for _ in 0..2 {
            for qk in &q {
                let c = qk.dot(&v);
                v.axpy(-c, qk, 1.0);
            }
        }
        let vn = v.norm();
        if vn > 1e-8 * norm {
            q.push(v / vn);
            basis.push(i);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

fn basis_matrix(pb: &Problem, basis: &[usize]) -> DMatrix<f64> {
    let p = pb.p();
    DMatrix::from_fn(p, p, |r, c| pb.a[(basis[r], c)])
}

pub(crate) struct Vertex {
    pub w: DVector<f64>,
    pub eta: DVector<f64>,
    pub pivots: usize,
}

/// Pivots from `basis` to an optimal vertex. Returns None if the basis
/// becomes numerically singular or the pivot budget runs out.
pub(crate) fn solve(pb: &Problem, mut basis: Vec<usize>) -> Option<Vertex> {
    let n = pb.n();
    let p = pb.p();
    let tau = pb.tau;
    let mut in_basis = vec![usize::MAX; n];
    for (r, &i) in basis.iter().enumerate() {
        in_basis[i] = r;
    }

    let mut inv = basis_matrix(pb, &basis).try_inverse()?;
    let mut w = &inv * DVector::from_fn(p, |r, _| pb.y[basis[r]]);
    let mut resid = pb.residuals(&w);
    // true: dual τ (residual ≥ 0 side), false: dual −(1−τ)
    let mut upper: Vec<bool> = resid.iter().map(|&r| r >= 0.0).collect();

    let mut eta = DVector::zeros(n);
    let mut s = DVector::zeros(n);
    let mut breakpoints: Vec<(f64, usize)> = Vec::new();
    let budget = MAX_PIVOTS_PER_SAMPLE * n + 100;

    for pivot in 0..=budget {
        for i in 0..n {
            eta[i] = if in_basis[i] != usize::MAX {
                0.0
            } else if upper[i] {
                tau
            } else {
                -(1.0 - tau)
            };
        }
        let g = pb.a.tr_mul(&eta);
        let eta_basis = -(inv.tr_mul(&g));

        let mut leave: Option<(usize, f64)> = None;
        for r in 0..p {
            let v = (eta_basis[r] - tau).max(-(1.0 - tau) - eta_basis[r]);
            if v > DUAL_SLACK && leave.map_or(true, |(_, best)| v > best) {
                leave = Some((r, v));
            }
        }
        let Some((r_out, violation)) = leave else {
            for (r, &i) in basis.iter().enumerate() {
                eta[i] = eta_basis[r];
            }
            return Some(Vertex { w, eta, pivots: pivot });
        };
        if pivot == budget {
            return None;
        }
        let j = basis[r_out];
        let above = eta_basis[r_out] > tau;
        // A_E d = −e_r moves r_j upward; +e_r moves it downward.
        let mut d = inv.column(r_out).into_owned();
        if above {
            d.neg_mut();
        }
        s.gemv(1.0, &pb.a, &d, 0.0);

        breakpoints.clear();
        for i in 0..n {
            if in_basis[i] != usize::MAX || s[i] == 0.0 {
                continue;
            }
            // r_i(t) = r_i − t s_i crosses out of its assigned side
            let crosses = if upper[i] { s[i] > 0.0 } else { s[i] < 0.0 };
            if crosses {
                breakpoints.push(((resid[i] / s[i]).max(0.0), i));
            }
        }
        breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut slope = -violation;
        let mut enter = None;
        for (k, &(t, i)) in breakpoints.iter().enumerate() {
            slope += s[i].abs();
            if slope >= 0.0 {
                enter = Some((k, t, i));
                break;
            }
        }
        let (k_enter, t_step, i_in) = enter?;
        for &(_, i) in &breakpoints[..k_enter] {
            upper[i] = !upper[i];
        }

        w.axpy(t_step, &d, 1.0);
        upper[j] = above;
        in_basis[j] = usize::MAX;
        in_basis[i_in] = r_out;
        basis[r_out] = i_in;

        if (pivot + 1) % REFACTOR_EVERY == 0 {
            inv = basis_matrix(pb, &basis).try_inverse()?;
            w = &inv * DVector::from_fn(p, |r, _| pb.y[basis[r]]);
        } else {
            // Row r_out of A_E changes by u = a_in − a_j.
            let u = pb.a.row(i_in) - pb.a.row(j);
            let col = inv.column(r_out).into_owned();
            let denom = 1.0 + (&u * &col)[0];
            if denom.abs() < 1e-12 {
                inv = basis_matrix(pb, &basis).try_inverse()?;
            } else {
                let ut_inv = &u * &inv;
                inv -= (&col * ut_inv) / denom;
            }
            // Snap w back onto the new vertex.
            w = &inv * DVector::from_fn(p, |r, _| pb.y[basis[r]]);
        }
        resid = pb.residuals(&w);
        for i in 0..n {
            if in_basis[i] == usize::MAX && resid[i] != 0.0 {
                upper[i] = resid[i] > 0.0;
            }
        }
    }
    None
}
