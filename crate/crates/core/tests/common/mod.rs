//! Slow, loop-only reference implementations used as oracles, plus random
//! instance generators shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod reference;

use ndarray::{Array2, Array3, Array4};
use rand::Rng;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

pub fn random_array3<R: Rng>(rng: &mut R, shape: (usize, usize, usize), scale: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.gen_range(-scale..scale))
}

pub fn random_array4<R: Rng>(rng: &mut R, shape: (usize, usize, usize, usize), scale: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || rng.gen_range(-scale..scale))
}

pub fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.nrows(), b.len());
    let mut worst = 0.0f64;
    for (ra, rb) in a.rows().into_iter().zip(b) {
        assert_eq!(ra.len(), rb.len());
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
