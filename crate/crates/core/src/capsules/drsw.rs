//! Dynamic routing with one transformation matrix per secondary capsule,
//! shared by every child capsule (the PVC count varies per tree, so
//! per-pair matrices cannot exist).
//!
//! ```text
//! u_hat_{j|i} = W_j u_i          alpha <- 0
//! repeat r times:
//!     beta_i    = softmax_j(alpha_i)
//!     v_j       = squash(sum_i beta_ij u_hat_{j|i})
//!     alpha_ij += u_hat_{j|i} . v_j
//! ```
//!
//! Because `W_j` is shared, `sum_i beta_ij W_j u_i = W_j (sum_i beta_ij u_i)`
//! and `u_hat_{j|i} . v_j = u_i . (W_j^T v_j)`, so the `b x a x D_sc`
//! prediction tensor is never built.

use ndarray::{s, Array2, Array3, Axis};

use super::{norm, softmax_rows, softmax_rows_backward, squash_rows, squash_rows_backward};
use super::{CapsuleLayer, CapsuleSet};
use crate::error::{Error, Result};
use crate::real::Real;

/// `w_shared[j]` is the `D_sc x D_pvc` matrix of secondary capsule `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrswParams<T> {
    pub w_shared: Array3<T>,
}

impl<T: Real> DrswParams<T> {
    pub fn num_out(&self) -> usize {
        self.w_shared.len_of(Axis(0))
    }

    pub fn out_dim(&self) -> usize {
        self.w_shared.len_of(Axis(1))
    }

    pub fn in_dim(&self) -> usize {
        self.w_shared.len_of(Axis(2))
    }
}

#[derive(Debug, Clone)]
pub struct DrswCache<T> {
    pub betas: Vec<Array2<T>>,
    /// `P^t = beta^t^T U`, the coefficient-weighted PVC sums per parent.
    pub pooled: Vec<Array2<T>>,
    pub sums: Vec<Array2<T>>,
    pub outputs: Vec<Array2<T>>,
}

pub fn drsw_route<T: Real>(pvc: &CapsuleSet<T>, params: &DrswParams<T>, iterations: usize) -> Result<CapsuleSet<T>> {
    let (v, _) = drsw_forward(&pvc.vectors, params, iterations)?;
    Ok(CapsuleSet::new(v, CapsuleLayer::Sc))
}

/// `out[j] = W_j x[j]` for every row.
fn per_parent_apply<T: Real>(w: &Array3<T>, x: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros((w.len_of(Axis(0)), w.len_of(Axis(1))));
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&w.index_axis(Axis(0), j).dot(&x.row(j)));
    }
    out
}

/// `out[j] = W_j^T x[j]` for every row.
fn per_parent_apply_t<T: Real>(w: &Array3<T>, x: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros((w.len_of(Axis(0)), w.len_of(Axis(2))));
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&w.index_axis(Axis(0), j).t().dot(&x.row(j)));
    }
    out
}

/// `dW[j] += a[j] (outer) b[j]`.
fn accumulate_outer<T: Real>(dw: &mut Array3<T>, a: &Array2<T>, b: &Array2<T>) {
    for j in 0..a.nrows() {
        let outer = a
            .row(j)
            .insert_axis(Axis(1))
            .dot(&b.row(j).insert_axis(Axis(0)));
        let mut slot = dw.slice_mut(s![j, .., ..]);
        slot += &outer;
    }
}

pub fn drsw_forward<T: Real>(
    u: &Array2<T>,
    params: &DrswParams<T>,
    iterations: usize,
) -> Result<(Array2<T>, DrswCache<T>)> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("routing needs at least one iteration".into()));
    }
    if u.nrows() == 0 {
        return Err(Error::InvalidArgument("DRSW needs at least one input capsule".into()));
    }
    if u.ncols() != params.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "DRSW input capsule dimension",
            expected: params.in_dim(),
            actual: u.ncols(),
        });
    }
    let w = &params.w_shared;
    let mut alpha = Array2::<T>::zeros((u.nrows(), params.num_out()));
    let mut cache = DrswCache {
        betas: Vec::with_capacity(iterations),
        pooled: Vec::with_capacity(iterations),
        sums: Vec::with_capacity(iterations),
        outputs: Vec::with_capacity(iterations),
    };
    for t in 0..iterations {
        let beta = softmax_rows(&alpha);
        let pooled = beta.t().dot(u);
        let s = per_parent_apply(w, &pooled);
        let v = squash_rows(&s);
        if t + 1 < iterations {
            let q = per_parent_apply_t(w, &v);
            alpha += &u.dot(&q.t());
        }
        cache.betas.push(beta);
        cache.pooled.push(pooled);
        cache.sums.push(s);
        cache.outputs.push(v);
    }
    let out = cache.outputs.last().expect("iterations >= 1").clone();
    Ok((out, cache))
}

/// Returns `(d_u, d_w_shared)`.
pub fn drsw_backward<T: Real>(
    u: &Array2<T>,
    params: &DrswParams<T>,
    cache: &DrswCache<T>,
    d_out: &Array2<T>,
) -> (Array2<T>, Array3<T>) {
    let w = &params.w_shared;
    let r = cache.betas.len();
    let mut du = Array2::zeros(u.raw_dim());
    let mut dw = Array3::zeros(w.raw_dim());
    let mut carry = Array2::<T>::zeros((u.nrows(), params.num_out()));
    for t in (0..r).rev() {
        let v = &cache.outputs[t];
        let mut dv = if t + 1 == r {
            d_out.clone()
        } else {
            Array2::zeros(v.raw_dim())
        };
        if t + 1 < r {
            let q = per_parent_apply_t(w, v);
            du += &carry.dot(&q);
            let dq = carry.t().dot(u);
            accumulate_outer(&mut dw, v, &dq);
            dv += &per_parent_apply(w, &dq);
        }
        let ds = squash_rows_backward(&cache.sums[t], &dv);
        accumulate_outer(&mut dw, &ds, &cache.pooled[t]);
        let d_pooled = per_parent_apply_t(w, &ds);
        let beta = &cache.betas[t];
        let d_beta = u.dot(&d_pooled.t());
        du += &beta.dot(&d_pooled);
        carry = softmax_rows_backward(beta, &d_beta) + &carry;
    }
    (du, dw)
}

/// Indices of PVC capsules whose norm reaches `threshold`, in order. Used
/// to bound DRSW cost on large trees; falls back to the single
/// highest-norm capsule so routing always has input.
pub fn prefilter_by_norm<T: Real>(u: &Array2<T>, threshold: T) -> Vec<usize> {
    let norms: Vec<T> = u.rows().into_iter().map(|r| norm(&r)).collect();
    let kept: Vec<usize> = (0..u.nrows()).filter(|&i| norms[i] >= threshold).collect();
    if kept.is_empty() && !norms.is_empty() {
        vec![super::vts::norm_order(u)[0]]
    } else {
        kept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn identity_params(n: usize, d: usize) -> DrswParams<f64> {
        let mut w = Array3::zeros((n, d, d));
        for j in 0..n {
            for k in 0..d {
                w[[j, k, k]] = 1.0;
            }
        }
        DrswParams { w_shared: w }
    }

    #[test]
    fn hand_traced_single_parent() {
        let u = arr2(&[[0.8, 0.0], [0.0, 0.6]]);
        let (v, _) = drsw_forward(&u, &identity_params(1, 2), 1).unwrap();
        assert_abs_diff_eq!(v[[0, 0]], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 1]], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn hand_traced_two_parents() {
        let u = arr2(&[[1.0, 0.0]]);
        let (v, _) = drsw_forward(&u, &identity_params(2, 2), 1).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(v[[j, 0]], 0.2, epsilon = 1e-12);
            assert_abs_diff_eq!(v[[j, 1]], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let mut p = identity_params(3, 2);
        p.w_shared.fill(0.7);
        for r in 1..4 {
            let (v, _) = drsw_forward(&Array2::zeros((5, 2)), &p, r).unwrap();
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let u = arr2(&[[1.0, 0.0, 0.0]]);
        assert!(matches!(
            drsw_forward(&u, &identity_params(2, 2), 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let u = arr2(&[[0.31, -0.12], [-0.22, 0.41], [0.09, 0.03], [0.27, 0.26]]);
        let mut w = Array3::zeros((3, 2, 2));
        for (i, x) in w.iter_mut().enumerate() {
            *x = ((i as f64) * 0.37).sin();
        }
        let params = DrswParams { w_shared: w };
        let g = arr2(&[[0.7, -0.3], [0.1, 0.5], [-0.4, 0.2]]);
        let loss = |u: &Array2<f64>, p: &DrswParams<f64>| (&drsw_forward(u, p, 3).unwrap().0 * &g).sum();
        let (_, cache) = drsw_forward(&u, &params, 3).unwrap();
        let (du, dw) = drsw_backward(&u, &params, &cache, &g);
        let eps = 1e-6;
        for i in 0..u.nrows() {
            for k in 0..u.ncols() {
                let (mut p, mut m) = (u.clone(), u.clone());
                p[[i, k]] += eps;
                m[[i, k]] -= eps;
                let fd = (loss(&p, &params) - loss(&m, &params)) / (2.0 * eps);
                assert_abs_diff_eq!(du[[i, k]], fd, epsilon = 1e-8);
            }
        }
        for idx in 0..params.w_shared.len() {
            let (mut p, mut m) = (params.clone(), params.clone());
            p.w_shared.as_slice_mut().unwrap()[idx] += eps;
            m.w_shared.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(&u, &p) - loss(&u, &m)) / (2.0 * eps);
            assert_abs_diff_eq!(dw.as_slice().unwrap()[idx], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn prefilter_keeps_large_capsules() {
        let u = arr2(&[[0.01, 0.0], [0.5, 0.0], [0.0, 0.3]]);
        assert_eq!(prefilter_by_norm(&u, 0.2), vec![1, 2]);
        assert_eq!(prefilter_by_norm(&u, 0.9), vec![1]);
    }
}
