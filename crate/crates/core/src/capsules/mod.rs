//! Capsule layers: primary variable capsules (PVC) formed from the encoder
//! outputs, the secondary capsule layer (SC) reached through shared-weight
//! dynamic routing ([`drsw`]) or variable-to-static routing ([`vts`]), and
//! the code capsule layer (CC) reached through per-pair dynamic routing
//! ([`cc`]).
//!
//! Every router is written as an unrolled computation with an explicit
//! backward pass so gradients flow through all routing iterations,
//! including the coupling-coefficient updates.

pub mod cc;
pub mod drsw;
pub mod vts;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::real::Real;

pub use cc::{cc_backward, cc_forward, cc_route, CcCache, CcRoutingParams};
pub use drsw::{drsw_backward, drsw_forward, drsw_route, prefilter_by_norm, DrswCache, DrswParams};
pub use vts::{norm_order, vts_backward, vts_forward, vts_route, VtsCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapsuleLayer {
    Pvc,
    Sc,
    Cc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsuleSet<T> {
    pub vectors: Array2<T>,
    pub layer: CapsuleLayer,
}

impl<T: Real> CapsuleSet<T> {
    pub fn new(vectors: Array2<T>, layer: CapsuleLayer) -> Self {
        CapsuleSet { vectors, layer }
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn norms(&self) -> Vec<T> {
        self.vectors.rows().into_iter().map(|r| norm(&r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RoutingKind {
    #[default]
    Vts,
    Drsw,
}

impl std::str::FromStr for RoutingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vts" => Ok(RoutingKind::Vts),
            "drsw" => Ok(RoutingKind::Drsw),
            other => Err(Error::InvalidArgument(format!(
                "unknown routing `{other}` (expected vts or drsw)"
            ))),
        }
    }
}

/// Shape parameters of the capsule stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub iterations: usize,
    pub num_secondary: usize,
    pub secondary_dim: usize,
    pub num_code: usize,
    pub code_dim: usize,
    pub kind: RoutingKind,
}

impl RoutingConfig {
    /// VTS copies PVC capsules into the SC layer, so its SC dimension is
    /// the PVC dimension regardless of `secondary_dim`.
    pub fn effective_secondary_dim(&self, pvc_dim: usize) -> usize {
        match self.kind {
            RoutingKind::Vts => pvc_dim,
            RoutingKind::Drsw => self.secondary_dim,
        }
    }
}

pub(crate) fn norm<T: Real>(v: &ArrayView1<T>) -> T {
    v.dot(v).sqrt()
}

/// `squash(c) = |c|^2 / (1 + |c|^2) * c / |c|`, with `squash(0) = 0`.
pub fn squash<T: Real>(c: ArrayView1<T>) -> Array1<T> {
    let mut out = c.to_owned();
    squash_in_place(out.view_mut());
    out
}

fn squash_in_place<T: Real>(mut c: ArrayViewMut1<T>) {
    let n2 = c.dot(&c);
    if n2 == T::zero() {
        return;
    }
    let n = n2.sqrt();
    let factor = n / (T::one() + n2);
    c.mapv_inplace(|x| x * factor);
}

/// Row-wise squash.
pub fn squash_rows<T: Real>(m: &Array2<T>) -> Array2<T> {
    let mut out = m.clone();
    for row in out.rows_mut() {
        squash_in_place(row);
    }
    out
}

/// Gradient of row-wise squash with respect to its input rows.
///
/// With `v = f(n) c`, `f(n) = n / (1 + n^2)`:
/// `dc = f dv + f'(n)/n (c . dv) c`, `f'(n) = (1 - n^2) / (1 + n^2)^2`.
pub(crate) fn squash_rows_backward<T: Real>(input: &Array2<T>, d_out: &Array2<T>) -> Array2<T> {
    let mut d_in = Array2::zeros(input.raw_dim());
    for ((c, dv), mut dc) in input
        .rows()
        .into_iter()
        .zip(d_out.rows())
        .zip(d_in.rows_mut())
    {
        let n2 = c.dot(&c);
        if n2 == T::zero() {
            continue;
        }
        let n = n2.sqrt();
        let denom = T::one() + n2;
        let f = n / denom;
        let fprime_over_n = (T::one() - n2) / (denom * denom * n);
        let cdv = c.dot(&dv);
        dc.assign(&dv);
        dc.mapv_inplace(|x| x * f);
        dc.scaled_add(fprime_over_n * cdv, &c);
    }
    d_in
}

/// In-place row softmax with max subtraction.
pub(crate) fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// `d_alpha = beta * (d_beta - sum_k beta_k d_beta_k)` row by row.
pub(crate) fn softmax_rows_backward<T: Real>(beta: &Array2<T>, d_beta: &Array2<T>) -> Array2<T> {
    let dots = (beta * d_beta).sum_axis(Axis(1));
    let mut out = d_beta.clone();
    for ((mut row, b), &dot) in out.rows_mut().into_iter().zip(beta.rows()).zip(&dots) {
        row.zip_mut_with(&b, |g, &bb| *g = bb * (*g - dot));
    }
    out
}

/// Groups layer outputs into `|V| * D` capsules of dimension `M`, capsule
/// `v * D + d` holding `(Y1[v,d], ..., YM[v,d])`. Returns the pre-squash
/// matrix alongside the squashed capsules.
pub fn form_pvc<T: Real>(enc: &EncoderOutput<T>) -> CapsuleSet<T> {
    let raw = group_layers(&enc.layer_features);
    CapsuleSet::new(squash_rows(&raw), CapsuleLayer::Pvc)
}

pub(crate) fn group_layers<T: Real>(layers: &[Array2<T>]) -> Array2<T> {
    let m = layers.len();
    let (n, d) = layers[0].dim();
    let mut raw = Array2::zeros((n * d, m));
    for (l, y) in layers.iter().enumerate() {
        for ((v, k), &val) in y.indexed_iter() {
            raw[[v * d + k, l]] = val;
        }
    }
    raw
}

/// Inverse of [`group_layers`] for gradients.
pub(crate) fn ungroup_layers<T: Real>(d_raw: &Array2<T>, nodes: usize, width: usize) -> Vec<Array2<T>> {
    let m = d_raw.ncols();
    (0..m)
        .map(|l| {
            let col = d_raw.column(l);
            Array2::from_shape_fn((nodes, width), |(v, k)| col[v * width + k])
        })
        .collect()
}
