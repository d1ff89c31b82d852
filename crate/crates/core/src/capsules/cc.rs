//! Dynamic routing from the fixed-size SC layer to the code capsules, with
//! a full transformation matrix for every (SC, CC) pair.

use ndarray::{s, Array2, Array3, Array4, Axis};

use super::{softmax_rows, softmax_rows_backward, squash_rows, squash_rows_backward};
use super::{CapsuleLayer, CapsuleSet};
use crate::error::{Error, Result};
use crate::real::Real;

/// `w[i][j]` is the `D_cc x D_in` matrix mapping SC capsule `i` to its
/// prediction for code capsule `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CcRoutingParams<T> {
    pub w: Array4<T>,
}

impl<T: Real> CcRoutingParams<T> {
    pub fn num_in(&self) -> usize {
        self.w.len_of(Axis(0))
    }

    pub fn num_out(&self) -> usize {
        self.w.len_of(Axis(1))
    }

    pub fn out_dim(&self) -> usize {
        self.w.len_of(Axis(2))
    }

    pub fn in_dim(&self) -> usize {
        self.w.len_of(Axis(3))
    }
}

#[derive(Debug, Clone)]
pub struct CcCache<T> {
    /// `u_hat[i, j, :]`, shape `N_sc x N_cc x D_cc`.
    pub predictions: Array3<T>,
    pub betas: Vec<Array2<T>>,
    pub sums: Vec<Array2<T>>,
    pub outputs: Vec<Array2<T>>,
}

pub fn cc_route<T: Real>(sc: &CapsuleSet<T>, params: &CcRoutingParams<T>, iterations: usize) -> Result<CapsuleSet<T>> {
    let (v, _) = cc_forward(&sc.vectors, params, iterations)?;
    Ok(CapsuleSet::new(v, CapsuleLayer::Cc))
}

fn weighted_sum<T: Real>(beta: &Array2<T>, uhat: &Array3<T>) -> Array2<T> {
    let (n_in, n_out, d) = uhat.dim();
    let mut s = Array2::zeros((n_out, d));
    for i in 0..n_in {
        for j in 0..n_out {
            s.row_mut(j).scaled_add(beta[[i, j]], &uhat.slice(s![i, j, ..]));
        }
    }
    s
}

fn agreement<T: Real>(uhat: &Array3<T>, v: &Array2<T>) -> Array2<T> {
    let (n_in, n_out, _) = uhat.dim();
    Array2::from_shape_fn((n_in, n_out), |(i, j)| uhat.slice(s![i, j, ..]).dot(&v.row(j)))
}

pub fn cc_forward<T: Real>(
    x: &Array2<T>,
    params: &CcRoutingParams<T>,
    iterations: usize,
) -> Result<(Array2<T>, CcCache<T>)> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("routing needs at least one iteration".into()));
    }
    if x.nrows() != params.num_in() {
        return Err(Error::DimensionMismatch {
            context: "CC routing input capsule count",
            expected: params.num_in(),
            actual: x.nrows(),
        });
    }
    if x.ncols() != params.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "CC routing input capsule dimension",
            expected: params.in_dim(),
            actual: x.ncols(),
        });
    }
    let (n_in, n_out, d_out, _) = params.w.dim();
    let mut uhat = Array3::zeros((n_in, n_out, d_out));
    for i in 0..n_in {
        for j in 0..n_out {
            uhat.slice_mut(s![i, j, ..])
                .assign(&params.w.slice(s![i, j, .., ..]).dot(&x.row(i)));
        }
    }
    let mut alpha = Array2::<T>::zeros((n_in, n_out));
    let mut cache = CcCache {
        predictions: uhat,
        betas: Vec::with_capacity(iterations),
        sums: Vec::with_capacity(iterations),
        outputs: Vec::with_capacity(iterations),
    };
    for t in 0..iterations {
        let beta = softmax_rows(&alpha);
        let s = weighted_sum(&beta, &cache.predictions);
        let v = squash_rows(&s);
        if t + 1 < iterations {
            alpha += &agreement(&cache.predictions, &v);
        }
        cache.betas.push(beta);
        cache.sums.push(s);
        cache.outputs.push(v);
    }
    let out = cache.outputs.last().expect("iterations >= 1").clone();
    Ok((out, cache))
}

/// Returns `(d_x, d_w)`.
pub fn cc_backward<T: Real>(
    x: &Array2<T>,
    params: &CcRoutingParams<T>,
    cache: &CcCache<T>,
    d_out: &Array2<T>,
) -> (Array2<T>, Array4<T>) {
    let uhat = &cache.predictions;
    let (n_in, n_out, _) = uhat.dim();
    let r = cache.betas.len();
    let mut d_uhat = Array3::<T>::zeros(uhat.raw_dim());
    let mut carry = Array2::<T>::zeros((n_in, n_out));
    for t in (0..r).rev() {
        let v = &cache.outputs[t];
        let mut dv = if t + 1 == r {
            d_out.clone()
        } else {
            Array2::zeros(v.raw_dim())
        };
        if t + 1 < r {
            for i in 0..n_in {
                for j in 0..n_out {
                    let g = carry[[i, j]];
                    d_uhat.slice_mut(s![i, j, ..]).scaled_add(g, &v.row(j));
                    dv.row_mut(j).scaled_add(g, &uhat.slice(s![i, j, ..]));
                }
            }
        }
        let ds = squash_rows_backward(&cache.sums[t], &dv);
        let beta = &cache.betas[t];
        let mut d_beta = Array2::zeros((n_in, n_out));
        for i in 0..n_in {
            for j in 0..n_out {
                d_beta[[i, j]] = uhat.slice(s![i, j, ..]).dot(&ds.row(j));
                d_uhat.slice_mut(s![i, j, ..]).scaled_add(beta[[i, j]], &ds.row(j));
            }
        }
        carry = softmax_rows_backward(beta, &d_beta) + &carry;
    }
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dw = Array4::zeros(params.w.raw_dim());
    for i in 0..n_in {
        for j in 0..n_out {
            let g = d_uhat.slice(s![i, j, ..]);
            let outer = g.insert_axis(Axis(1)).dot(&x.row(i).insert_axis(Axis(0)));
            dw.slice_mut(s![i, j, .., ..]).assign(&outer);
            dx.row_mut(i)
                .scaled_add(T::one(), &params.w.slice(s![i, j, .., ..]).t().dot(&g));
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsules::squash;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    #[test]
    fn single_pair_identity_is_squash() {
        let mut w = Array4::zeros((1, 1, 3, 3));
        for k in 0..3 {
            w[[0, 0, k, k]] = 1.0;
        }
        let x = arr2(&[[0.3, -0.4, 1.2]]);
        let (v, _) = cc_forward(&x, &CcRoutingParams { w }, 1).unwrap();
        assert_abs_diff_eq!(v.row(0), squash(arr1(&[0.3, -0.4, 1.2]).view()), epsilon = 1e-15);
    }

    #[test]
    fn count_mismatch() {
        let w = Array4::<f64>::zeros((2, 1, 2, 2));
        let x = arr2(&[[0.3, -0.4]]);
        assert!(matches!(
            cc_forward(&x, &CcRoutingParams { w }, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = arr2(&[[0.31, -0.12, 0.2], [-0.22, 0.41, 0.05], [0.09, 0.33, -0.1]]);
        let mut w = Array4::zeros((3, 2, 2, 3));
        for (i, v) in w.iter_mut().enumerate() {
            *v = ((i as f64) * 0.53).cos() * 0.8;
        }
        let params = CcRoutingParams { w };
        let g = arr2(&[[0.7, -0.3], [0.1, 0.5]]);
        let loss = |x: &Array2<f64>, p: &CcRoutingParams<f64>| (&cc_forward(x, p, 3).unwrap().0 * &g).sum();
        let (_, cache) = cc_forward(&x, &params, 3).unwrap();
        let (dx, dw) = cc_backward(&x, &params, &cache, &g);
        let eps = 1e-6;
        for i in 0..x.nrows() {
            for k in 0..x.ncols() {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[[i, k]] += eps;
                m[[i, k]] -= eps;
                let fd = (loss(&p, &params) - loss(&m, &params)) / (2.0 * eps);
                assert_abs_diff_eq!(dx[[i, k]], fd, epsilon = 1e-8);
            }
        }
        for idx in 0..params.w.len() {
            let (mut p, mut m) = (params.clone(), params.clone());
            p.w.as_slice_mut().unwrap()[idx] += eps;
            m.w.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(&x, &p) - loss(&x, &m)) / (2.0 * eps);
            assert_abs_diff_eq!(dw.as_slice().unwrap()[idx], fd, epsilon = 1e-8);
        }
    }
}
