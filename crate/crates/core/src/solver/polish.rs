//! Reduced KKT solve for a guessed partition of the samples.
//!
//! Given which residuals are positive, negative or exactly zero, optimality
//! pins the duals of the signed samples to the box edges and leaves
//!
//! ```text
//! [ 2Λ   A_Eᵀ ] [ w ]   [ g   ]
//! [ A_E  0    ] [ ν ] = [ y_E ],   η_E = −ν,
//! ```
//!
//! with `g = Σ_{r>0} τ a_i − Σ_{r<0} (1−τ) a_i`. The system is solved through
//! a quasi-definite regularization and iterative refinement against the
//! unregularized matrix, then the partition is corrected primal-dual
//! active-set style until it is self consistent.

use nalgebra::{DMatrix, DVector};

use super::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Side {
    Lower,
    Elbow,
    Upper,
}

pub(crate) fn partition(resid: &DVector<f64>, band: f64) -> Vec<Side> {
    resid
        .iter()
        .map(|&r| {
            if r > band {
                Side::Upper
            } else if r < -band {
                Side::Lower
            } else {
                Side::Elbow
            }
        })
        .collect()
}

const REFINEMENT_STEPS: usize = 12;

/// Solves the reduced system for `sides`. Returns (w, η) when the linear
/// system is consistent, without checking signs.
fn reduced_solve(pb: &Problem, sides: &[Side]) -> Option<(DVector<f64>, DVector<f64>)> {
    let p = pb.p();
    let n = pb.n();
    let tau = pb.tau;
    let elbow: Vec<usize> = (0..n).filter(|&i| sides[i] == Side::Elbow).collect();
    let k = elbow.len();

    let mut weights = DVector::zeros(n);
    for i in 0..n {
        weights[i] = match sides[i] {
            Side::Upper => tau,
            Side::Lower => -(1.0 - tau),
            Side::Elbow => 0.0,
        };
    }
    let g = pb.a.tr_mul(&weights);

    let m = p + k;
    let mut kkt = DMatrix::zeros(m, m);
    for j in 0..p {
        kkt[(j, j)] = 2.0 * pb.penalty[j];
    }
    for (row, &i) in elbow.iter().enumerate() {
        for j in 0..p {
            let v = pb.a[(i, j)];
            kkt[(p + row, j)] = v;
            kkt[(j, p + row)] = v;
        }
    }
    let mut rhs = DVector::zeros(m);
    rhs.rows_mut(0, p).copy_from(&g);
    for (row, &i) in elbow.iter().enumerate() {
        rhs[p + row] = pb.y[i];
    }

    let entry_scale = pb.a.amax().max(1.0);
    let delta = 1e-10 * entry_scale * entry_scale;
    let mut regularized = kkt.clone();
    for j in 0..m {
        regularized[(j, j)] += if j < p { delta } else { -delta };
    }
    let lu = regularized.lu();
    let mut x = lu.solve(&rhs)?;
    let rhs_scale = rhs.amax().max(1.0);
    let mut residual = &rhs - &kkt * &x;
    for _ in 0..REFINEMENT_STEPS {
        if residual.amax() <= 1e-13 * rhs_scale {
            break;
        }
        let step = lu.solve(&residual)?;
        x += step;
        residual = &rhs - &kkt * &x;
    }
    if !x.iter().all(|v| v.is_finite()) || residual.amax() > 1e-9 * rhs_scale {
        return None;
    }

    let w = x.rows(0, p).into_owned();
    let mut eta = weights;
    for (row, &i) in elbow.iter().enumerate() {
        eta[i] = -x[p + row];
    }
    Some((w, eta))
}

/// More than p interpolated samples make the reduced system overdetermined;
/// keep the p with the smallest |hint| residual.
fn trim_elbow(sides: &mut [Side], hint: &DVector<f64>, p: usize) {
    let mut elbow: Vec<usize> = (0..sides.len()).filter(|&i| sides[i] == Side::Elbow).collect();
    if elbow.len() <= p {
        return;
    }
    elbow.sort_by(|&i, &j| hint[i].abs().total_cmp(&hint[j].abs()));
    for &i in &elbow[p..] {
        sides[i] = if hint[i] >= 0.0 { Side::Upper } else { Side::Lower };
    }
}

/// Active-set refinement starting from `sides`. On success the duals of the
/// elbow samples are inside the box and every signed residual agrees with
/// its side.
pub(crate) fn polish(
    pb: &Problem,
    mut sides: Vec<Side>,
    hint: &DVector<f64>,
    rounds: usize,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let tau = pb.tau;
    let dual_slack = 1e-10;
    let resid_slack = 1e-10 * pb.response_scale.max(1.0);
    for _ in 0..rounds {
        trim_elbow(&mut sides, hint, pb.p());
        let (w, mut eta) = reduced_solve(pb, &sides)?;
        let resid = pb.residuals(&w);
        let mut changed = false;
        for i in 0..pb.n() {
            let next = match sides[i] {
                Side::Elbow if eta[i] > tau + dual_slack => Side::Upper,
                Side::Elbow if eta[i] < -(1.0 - tau) - dual_slack => Side::Lower,
                Side::Upper if resid[i] < -resid_slack => Side::Elbow,
                Side::Lower if resid[i] > resid_slack => Side::Elbow,
                s => s,
            };
            if next != sides[i] {
                sides[i] = next;
                changed = true;
            }
        }
        if !changed {
            for i in 0..pb.n() {
                if sides[i] == Side::Elbow {
                    eta[i] = eta[i].clamp(-(1.0 - tau), tau);
                }
            }
            return Some((w, eta));
        }
    }
    None
}
