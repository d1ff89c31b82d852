use ndarray::{Array1, Array2, Array3, Array4, ArrayViewD, ArrayViewMutD, Dimension, ShapeBuilder};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::config::{ModelConfig, Task};
use crate::ast::Vocabulary;
use crate::capsules::{CcRoutingParams, DrswParams};
use crate::capsules::RoutingKind;
use crate::encoder::{ConvLayerParams, EmbeddingTables};
use crate::real::{c, Real};

/// All trainable tensors of a model. The same type doubles as the
/// gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    pub embeddings: EmbeddingTables<T>,
    pub conv: Vec<ConvLayerParams<T>>,
    pub drsw: Option<DrswParams<T>>,
    pub cc: CcRoutingParams<T>,
    /// Name embedding table, one row per candidate name.
    pub functions_vocab: Option<Array2<T>>,
}

/// Shapes of every tensor for a configuration.
#[derive(Debug, Clone, Copy)]
pub struct StoreShape {
    pub num_types: usize,
    pub num_tokens: usize,
    /// Class count or name-vocabulary size.
    pub num_outputs: usize,
}

impl StoreShape {
    pub fn new(vocab: &Vocabulary, num_outputs: usize) -> Self {
        StoreShape {
            num_types: vocab.num_types(),
            num_tokens: vocab.num_tokens(),
            num_outputs,
        }
    }
}

fn uniform<T: Real, D: Dimension, Sh: ShapeBuilder<Dim = D>, R: Rng>(shape: Sh, limit: f64, rng: &mut R) -> ndarray::Array<T, D> {
    let dist = Uniform::new_inclusive(-limit, limit);
    ndarray::Array::from_shape_simple_fn(shape, || c::<T>(dist.sample(rng)))
}

/// Half-width of the uniform embedding initializer.
pub const EMBEDDING_INIT: f64 = 0.05;

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Real> ParameterStore<T> {
    pub fn zeros(cfg: &ModelConfig, shape: StoreShape) -> Self {
        let d = cfg.feature_width();
        let m = cfg.num_layers;
        let sc_dim = cfg.sc_dim();
        ParameterStore {
            embeddings: EmbeddingTables {
                type_table: Array2::zeros((shape.num_types, cfg.type_dim)),
                token_table: Array2::zeros((shape.num_tokens, cfg.token_dim)),
                mode: cfg.feature_mode,
            },
            conv: (0..m).map(|_| ConvLayerParams::zeros(d)).collect(),
            drsw: (cfg.routing == RoutingKind::Drsw).then(|| DrswParams {
                w_shared: Array3::zeros((cfg.num_secondary, cfg.secondary_dim, m)),
            }),
            cc: CcRoutingParams {
                w: Array4::zeros((cfg.num_secondary, cfg.num_code, cfg.code_dim, sc_dim)),
            },
            functions_vocab: (cfg.task == Task::Name).then(|| Array2::zeros((shape.num_outputs, cfg.code_dim))),
        }
    }

    /// Uniform Glorot-style initialization; embeddings are drawn from
    /// `[-EMBEDDING_INIT, EMBEDDING_INIT]`.
    pub fn init<R: Rng>(cfg: &ModelConfig, shape: StoreShape, rng: &mut R) -> Self {
        let d = cfg.feature_width();
        let m = cfg.num_layers;
        let sc_dim = cfg.sc_dim();
        let conv = (0..m)
            .map(|_| ConvLayerParams {
                w_top: uniform((d, d), glorot(d, d), rng),
                w_left: uniform((d, d), glorot(d, d), rng),
                w_right: uniform((d, d), glorot(d, d), rng),
                bias: Array1::zeros(d),
            })
            .collect();
        ParameterStore {
            embeddings: EmbeddingTables {
                type_table: uniform((shape.num_types, cfg.type_dim), EMBEDDING_INIT, rng),
                token_table: uniform((shape.num_tokens, cfg.token_dim), EMBEDDING_INIT, rng),
                mode: cfg.feature_mode,
            },
            conv,
            drsw: (cfg.routing == RoutingKind::Drsw).then(|| DrswParams {
                w_shared: uniform(
                    (cfg.num_secondary, cfg.secondary_dim, m),
                    glorot(m, cfg.secondary_dim),
                    rng,
                ),
            }),
            cc: CcRoutingParams {
                w: uniform(
                    (cfg.num_secondary, cfg.num_code, cfg.code_dim, sc_dim),
                    glorot(sc_dim, cfg.code_dim),
                    rng,
                ),
            },
            functions_vocab: (cfg.task == Task::Name)
                .then(|| uniform((shape.num_outputs, cfg.code_dim), glorot(shape.num_outputs, cfg.code_dim), rng)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Named views in a fixed order (also the checkpoint order).
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("embeddings.type".to_string(), self.embeddings.type_table.view().into_dyn()),
            ("embeddings.token".to_string(), self.embeddings.token_table.view().into_dyn()),
        ];
        for (l, layer) in self.conv.iter().enumerate() {
            out.push((format!("conv.{l}.w_top"), layer.w_top.view().into_dyn()));
            out.push((format!("conv.{l}.w_left"), layer.w_left.view().into_dyn()));
            out.push((format!("conv.{l}.w_right"), layer.w_right.view().into_dyn()));
            out.push((format!("conv.{l}.bias"), layer.bias.view().into_dyn()));
        }
        if let Some(drsw) = &self.drsw {
            out.push(("drsw.w_shared".to_string(), drsw.w_shared.view().into_dyn()));
        }
        out.push(("cc.w".to_string(), self.cc.w.view().into_dyn()));
        if let Some(fv) = &self.functions_vocab {
            out.push(("head.functions_vocab".to_string(), fv.view().into_dyn()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("embeddings.type".to_string(), self.embeddings.type_table.view_mut().into_dyn()),
            ("embeddings.token".to_string(), self.embeddings.token_table.view_mut().into_dyn()),
        ];
        for (l, layer) in self.conv.iter_mut().enumerate() {
            out.push((format!("conv.{l}.w_top"), layer.w_top.view_mut().into_dyn()));
            out.push((format!("conv.{l}.w_left"), layer.w_left.view_mut().into_dyn()));
            out.push((format!("conv.{l}.w_right"), layer.w_right.view_mut().into_dyn()));
            out.push((format!("conv.{l}.bias"), layer.bias.view_mut().into_dyn()));
        }
        if let Some(drsw) = &mut self.drsw {
            out.push(("drsw.w_shared".to_string(), drsw.w_shared.view_mut().into_dyn()));
        }
        out.push(("cc.w".to_string(), self.cc.w.view_mut().into_dyn()));
        if let Some(fv) = &mut self.functions_vocab {
            out.push(("head.functions_vocab".to_string(), fv.view_mut().into_dyn()));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let conv = |a: &Array2<T>| a.mapv(|x| c::<U>(x.to_f64().unwrap_or(f64::NAN)));
        let cast_any = |x: T| c::<U>(x.to_f64().unwrap_or(f64::NAN));
        ParameterStore {
            embeddings: EmbeddingTables {
                type_table: conv(&self.embeddings.type_table),
                token_table: conv(&self.embeddings.token_table),
                mode: self.embeddings.mode,
            },
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayerParams {
                    w_top: conv(&l.w_top),
                    w_left: conv(&l.w_left),
                    w_right: conv(&l.w_right),
                    bias: l.bias.mapv(cast_any),
                })
                .collect(),
            drsw: self.drsw.as_ref().map(|d| DrswParams {
                w_shared: d.w_shared.mapv(cast_any),
            }),
            cc: CcRoutingParams {
                w: self.cc.w.mapv(cast_any),
            },
            functions_vocab: self.functions_vocab.as_ref().map(conv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn shape() -> StoreShape {
        StoreShape {
            num_types: 7,
            num_tokens: 11,
            num_outputs: 5,
        }
    }

    #[test]
    fn names_unique_and_shapes_follow_config() {
        for routing in [RoutingKind::Vts, RoutingKind::Drsw] {
            for task in [Task::Classify, Task::Name] {
                let cfg = ModelConfig::tiny(task, routing);
                let store: ParameterStore<f64> = ParameterStore::init(&cfg, shape(), &mut ChaCha8Rng::seed_from_u64(1));
                let names: Vec<String> = store.tensors().into_iter().map(|(n, _)| n).collect();
                let unique: HashSet<&String> = names.iter().collect();
                assert_eq!(unique.len(), names.len());
                assert_eq!(names.len(), 2 + 4 * cfg.num_layers + 1 + usize::from(routing == RoutingKind::Drsw) + usize::from(task == Task::Name));
                assert_eq!(store.cc.w.dim().3, cfg.sc_dim());
                let z = ParameterStore::<f64>::zeros(&cfg, shape());
                assert_eq!(z.num_parameters(), store.num_parameters());
                assert!(store.is_finite());
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::tiny(Task::Classify, RoutingKind::Vts);
        let a: ParameterStore<f32> = ParameterStore::init(&cfg, shape(), &mut ChaCha8Rng::seed_from_u64(3));
        let b: ParameterStore<f32> = ParameterStore::init(&cfg, shape(), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let mut twice = a.clone();
        twice.add_assign(&a);
        let mut doubled = a.clone();
        doubled.scale(2.0);
        assert_eq!(twice, doubled);
        assert_eq!(a.cast::<f64>().cast::<f32>(), a);
    }
}
