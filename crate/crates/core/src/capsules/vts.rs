//! Variable-to-static routing.
//!
//! The `a` highest-norm PVC capsules seed the static capsules; all `b` PVC
//! capsules are then routed to them by dot-product agreement:
//!
//! ```text
//! v_j <- U_sorted[j]            alpha <- 0
//! repeat r times:
//!     alpha_ij += u_i . v_j
//!     beta_i    = softmax_j(alpha_i)
//!     v_j       = squash(sum_i beta_ij u_i)
//! ```
//!
//! When `b < a` only `b` capsules are routed and the remaining outputs are
//! zero vectors.

use std::cmp::Ordering;

use ndarray::Array2;

use super::{norm, softmax_rows, softmax_rows_backward, squash_rows, squash_rows_backward};
use super::{CapsuleLayer, CapsuleSet};
use crate::error::{Error, Result};
use crate::real::Real;

/// Everything the backward pass needs, plus the per-iteration coupling
/// coefficients for inspection.
#[derive(Debug, Clone)]
pub struct VtsCache<T> {
    /// PVC indices used to seed the static capsules, highest norm first.
    pub order: Vec<usize>,
    /// Output capsules including padding rows.
    pub num_out: usize,
    /// `v^0 ..= v^r` (live rows only).
    pub outputs: Vec<Array2<T>>,
    /// Pre-squash sums `s^1 ..= s^r`.
    pub sums: Vec<Array2<T>>,
    /// Coupling coefficients `beta^1 ..= beta^r`, each `b x live`.
    pub betas: Vec<Array2<T>>,
}

/// Capsule indices by descending L2 norm; ties keep the lower index first.
pub fn norm_order<T: Real>(u: &Array2<T>) -> Vec<usize> {
    let norms: Vec<T> = u.rows().into_iter().map(|r| norm(&r)).collect();
    let mut order: Vec<usize> = (0..u.nrows()).collect();
    order.sort_by(|&i, &j| {
        norms[j]
            .partial_cmp(&norms[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order
}

pub fn vts_route<T: Real>(pvc: &CapsuleSet<T>, iterations: usize, num_out: usize) -> Result<CapsuleSet<T>> {
    let (v, _) = vts_forward(&pvc.vectors, iterations, num_out)?;
    Ok(CapsuleSet::new(v, CapsuleLayer::Sc))
}

pub fn vts_forward<T: Real>(
    u: &Array2<T>,
    iterations: usize,
    num_out: usize,
) -> Result<(Array2<T>, VtsCache<T>)> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("routing needs at least one iteration".into()));
    }
    if num_out == 0 {
        return Err(Error::InvalidArgument("VTS needs at least one output capsule".into()));
    }
    let (b, dim) = u.dim();
    let live = num_out.min(b);
    let order: Vec<usize> = norm_order(u).into_iter().take(live).collect();

    let mut v = Array2::zeros((live, dim));
    for (j, &i) in order.iter().enumerate() {
        v.row_mut(j).assign(&u.row(i));
    }
    let mut cache = VtsCache {
        order,
        num_out,
        outputs: vec![v],
        sums: Vec::with_capacity(iterations),
        betas: Vec::with_capacity(iterations),
    };
    if live > 0 {
        let mut alpha = Array2::<T>::zeros((b, live));
        for _ in 0..iterations {
            let prev = cache.outputs.last().expect("seeded");
            alpha += &u.dot(&prev.t());
            let beta = softmax_rows(&alpha);
            let s = beta.t().dot(u);
            let v = squash_rows(&s);
            cache.betas.push(beta);
            cache.sums.push(s);
            cache.outputs.push(v);
        }
    }
    let mut out = Array2::zeros((num_out, dim));
    if live > 0 {
        out.slice_mut(ndarray::s![..live, ..])
            .assign(cache.outputs.last().expect("seeded"));
    }
    Ok((out, cache))
}

/// Gradient with respect to the PVC capsules given the gradient of the
/// (padded) SC output.
pub fn vts_backward<T: Real>(u: &Array2<T>, cache: &VtsCache<T>, d_out: &Array2<T>) -> Array2<T> {
    let mut du = Array2::zeros(u.raw_dim());
    let live = cache.order.len();
    if live == 0 {
        return du;
    }
    let r = cache.betas.len();
    let mut dv = d_out.slice(ndarray::s![..live, ..]).to_owned();
    let mut d_alpha_carry = Array2::<T>::zeros((u.nrows(), live));
    for t in (0..r).rev() {
        let beta = &cache.betas[t];
        let ds = squash_rows_backward(&cache.sums[t], &dv);
        let d_beta = u.dot(&ds.t());
        du += &beta.dot(&ds);
        let d_alpha = softmax_rows_backward(beta, &d_beta) + &d_alpha_carry;
        // alpha^t = alpha^{t-1} + U v^{t-1}^T
        let v_prev = &cache.outputs[t];
        du += &d_alpha.dot(v_prev);
        dv = d_alpha.t().dot(u);
        d_alpha_carry = d_alpha;
    }
    for (j, &i) in cache.order.iter().enumerate() {
        du.row_mut(i).scaled_add(T::one(), &dv.row(j));
    }
    du
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    #[test]
    fn hand_traced_single_parent() {
        let u = arr2(&[[0.8, 0.0], [0.0, 0.6]]);
        let (v, cache) = vts_forward(&u, 1, 1).unwrap();
        assert_eq!(cache.order, vec![0]);
        assert_eq!(cache.outputs[0], arr2(&[[0.8, 0.0]]));
        assert_abs_diff_eq!(v[[0, 0]], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 1]], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn initialization_is_norm_sorted_rows() {
        let u = arr2(&[[0.1, 0.0], [0.0, 0.5], [0.3, 0.3], [0.0, -0.2]]);
        let (_, cache) = vts_forward(&u, 2, 4).unwrap();
        assert_eq!(cache.order, vec![1, 2, 3, 0]);
        for (j, &i) in cache.order.iter().enumerate() {
            assert_eq!(cache.outputs[0].row(j), u.row(i));
        }
    }

    #[test]
    fn ties_break_by_index() {
        let u = arr2(&[[0.0, 0.5], [0.5, 0.0], [0.3, 0.4]]);
        assert_eq!(norm_order(&u), vec![0, 1, 2]);
    }

    #[test]
    fn padding_when_fewer_inputs() {
        let u = arr2(&[[0.3, 0.1]]);
        let (v, cache) = vts_forward(&u, 3, 4).unwrap();
        assert_eq!(v.dim(), (4, 2));
        assert_eq!(cache.order.len(), 1);
        assert!(v.slice(ndarray::s![1.., ..]).iter().all(|&x| x == 0.0));
        let (v, _) = vts_forward(&Array2::<f64>::zeros((0, 2)), 3, 2).unwrap();
        assert_eq!(v, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn zero_input_zero_output() {
        let (v, _) = vts_forward(&Array2::<f64>::zeros((6, 3)), 3, 2).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_arguments() {
        let u = arr2(&[[0.3, 0.1]]);
        assert!(vts_forward(&u, 0, 1).is_err());
        assert!(vts_forward(&u, 1, 0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let u = arr2(&[
            [0.31, -0.12, 0.05],
            [-0.22, 0.41, 0.17],
            [0.09, 0.03, -0.38],
            [0.27, 0.26, 0.11],
            [-0.05, -0.19, 0.02],
        ]);
        let w = arr2(&[[0.7, -0.3, 0.2], [0.1, 0.5, -0.6], [-0.4, 0.2, 0.9]]);
        let loss = |u: &Array2<f64>| {
            let (v, _) = vts_forward(u, 3, 3).unwrap();
            (&v * &w).sum()
        };
        let (_, cache) = vts_forward(&u, 3, 3).unwrap();
        let du = vts_backward(&u, &cache, &w);
        let eps = 1e-6;
        for i in 0..u.nrows() {
            for k in 0..u.ncols() {
                let mut p = u.clone();
                p[[i, k]] += eps;
                let mut m = u.clone();
                m[[i, k]] -= eps;
                let fd = (loss(&p) - loss(&m)) / (2.0 * eps);
                assert_abs_diff_eq!(du[[i, k]], fd, epsilon = 1e-8);
            }
        }
    }
}
