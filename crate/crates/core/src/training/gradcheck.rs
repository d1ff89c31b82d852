use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ModelConfig, Task};
use super::model::{loss, loss_and_grad, PreparedTree, Target};
use super::params::{ParameterStore, StoreShape};
use crate::ast::{parse_source, Vocabulary};
use crate::capsules::RoutingKind;
use crate::error::Result;

/// Gradients smaller than this in both the analytic and numeric value are
/// compared on an absolute scale, since finite-difference noise dominates.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub const GRAD_CHECK_PROGRAM: &str = "int f(int a) { int b = a + 1; if (b > 2) { b = b * 2; } return b; }";

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub task: Task,
    pub routing: RoutingKind,
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// Tensor and flat index of the worst coordinate.
    pub worst: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares backpropagated gradients with central finite differences on
/// every coordinate of a tiny double-precision model.
pub fn grad_check(task: Task, routing: RoutingKind, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let cfg = ModelConfig::tiny(task, routing);
    let tree = parse_source(GRAD_CHECK_PROGRAM)?;
    let vocab = Vocabulary::from_trees([&tree], 1)?;
    let (num_outputs, target) = match task {
        Task::Classify => (cfg.num_code, Target::Class(1)),
        Task::Name => (5, Target::Name(2)),
    };
    let store: ParameterStore<f64> =
        ParameterStore::init(&cfg, StoreShape::new(&vocab, num_outputs), &mut ChaCha8Rng::seed_from_u64(seed));
    let prepared = PreparedTree::new(&tree, &vocab, false);
    let (_, grads) = loss_and_grad(&store, &cfg, &prepared, target)?;

    let mut worst = (0.0f64, String::new());
    let mut coordinates = 0;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let mut probe = store.clone();
    for (ti, (name, values)) in analytic.iter().enumerate() {
        for (k, &a) in values.iter().enumerate() {
            let original = nth(&mut probe, ti, k, None);
            nth(&mut probe, ti, k, Some(original + eps));
            let plus = loss(&probe, &cfg, &prepared, target)?;
            nth(&mut probe, ti, k, Some(original - eps));
            let minus = loss(&probe, &cfg, &prepared, target)?;
            nth(&mut probe, ti, k, Some(original));
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric);
            coordinates += 1;
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, format!("{name}[{k}]"));
            }
        }
    }
    Ok(GradCheckReport {
        task,
        routing,
        max_relative_error: worst.0,
        coordinates,
        worst: worst.1,
    })
}

/// Reads (and optionally overwrites) the `k`-th element of tensor `ti`.
fn nth(store: &mut ParameterStore<f64>, ti: usize, k: usize, set: Option<f64>) -> f64 {
    let mut tensors = store.tensors_mut();
    let slot = tensors[ti].1.iter_mut().nth(k).expect("coordinate in range");
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}
