use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::config::{ModelConfig, Task};
use super::params::ParameterStore;
use crate::ast::{AstTree, NodeKind, Vocabulary};
use crate::capsules::cc::{cc_backward, cc_forward, CcCache};
use crate::capsules::drsw::{drsw_backward, drsw_forward, prefilter_by_norm, DrswCache};
use crate::capsules::vts::{vts_backward, vts_forward, VtsCache};
use crate::capsules::{group_layers, squash_rows, squash_rows_backward, ungroup_layers};
use crate::encoder::{encode_backward, encode_features, gather_features, scatter_features, ConvWindows, EncoderOutput, NodeIds};
use crate::error::{Error, Result};
use crate::heads::{classify, margin_loss_and_grad, name_logits, name_loss_and_grad, NamePredictorHead, Prediction};
use crate::real::{c, Real};

/// A trained (or freshly initialized) model with everything needed to
/// run it on new trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Class names, or the candidate function names for naming.
    pub outputs: Vec<String>,
    pub store: ParameterStore<T>,
}

/// Per-tree data that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct PreparedTree {
    pub ids: NodeIds,
    pub windows: ConvWindows,
}

impl PreparedTree {
    pub fn new(tree: &AstTree, vocab: &Vocabulary, mask_function_name: bool) -> Self {
        let mut ids = NodeIds::new(tree, vocab);
        if mask_function_name {
            let unk = vocab.token_id(None);
            for (v, node) in tree.nodes.iter().enumerate() {
                if node.node_type == NodeKind::FunctionDef.as_str() {
                    ids.tokens[v] = unk;
                }
            }
        }
        PreparedTree {
            ids,
            windows: ConvWindows::new(tree),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.ids.types.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    Name(usize),
}

#[derive(Debug, Clone)]
pub enum RoutingCache<T> {
    Vts(VtsCache<T>),
    /// Cache plus the PVC rows that survived the norm prefilter.
    Drsw(DrswCache<T>, Option<Vec<usize>>),
}

/// Every intermediate needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub encoder: EncoderOutput<T>,
    pub pvc_raw: Array2<T>,
    pub pvc: Array2<T>,
    /// Input actually routed to the SC layer (a row subset of `pvc` when
    /// the DRSW prefilter is active).
    pub routed: Option<Array2<T>>,
    pub routing: RoutingCache<T>,
    pub sc: Array2<T>,
    pub cc_cache: CcCache<T>,
    pub cc: Array2<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Code vector used by the name head.
    pub fn code_vector(&self) -> ndarray::ArrayView1<'_, T> {
        self.cc.row(0)
    }
}

pub fn forward<T: Real>(store: &ParameterStore<T>, cfg: &ModelConfig, tree: &PreparedTree) -> Result<ForwardCache<T>> {
    let input = gather_features(&tree.ids, &store.embeddings);
    let encoder = encode_features(input, &tree.windows, &store.conv)?;
    let pvc_raw = group_layers(&encoder.layer_features);
    let pvc = squash_rows(&pvc_raw);
    let (sc, routing, routed) = match &store.drsw {
        None => {
            let (sc, cache) = vts_forward(&pvc, cfg.iterations, cfg.num_secondary)?;
            (sc, RoutingCache::Vts(cache), None)
        }
        Some(params) => match cfg.drsw_norm_threshold {
            None => {
                let (sc, cache) = drsw_forward(&pvc, params, cfg.iterations)?;
                (sc, RoutingCache::Drsw(cache, None), None)
            }
            Some(threshold) => {
                let kept = prefilter_by_norm(&pvc, c::<T>(threshold));
                let routed = pvc.select(Axis(0), &kept);
                let (sc, cache) = drsw_forward(&routed, params, cfg.iterations)?;
                (sc, RoutingCache::Drsw(cache, Some(kept)), Some(routed))
            }
        },
    };
    let (cc, cc_cache) = cc_forward(&sc, &store.cc, cfg.iterations)?;
    Ok(ForwardCache {
        encoder,
        pvc_raw,
        pvc,
        routed,
        routing,
        sc,
        cc_cache,
        cc,
    })
}

pub fn predict_from_cache<T: Real>(store: &ParameterStore<T>, cfg: &ModelConfig, cache: &ForwardCache<T>) -> Result<Prediction> {
    match cfg.task {
        Task::Classify => Ok(classify(&crate::capsules::CapsuleSet::new(
            cache.cc.clone(),
            crate::capsules::CapsuleLayer::Cc,
        ))),
        Task::Name => {
            let table = store
                .functions_vocab
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("model has no name head".into()))?;
            let head = NamePredictorHead {
                functions_vocab: table.clone(),
                names: Vec::new(),
            };
            name_logits(cache.code_vector(), &head)
        }
    }
}

pub fn predict<T: Real>(store: &ParameterStore<T>, cfg: &ModelConfig, tree: &PreparedTree) -> Result<Prediction> {
    predict_from_cache(store, cfg, &forward(store, cfg, tree)?)
}

/// Loss of one tree; the forward pass only.
pub fn loss<T: Real>(store: &ParameterStore<T>, cfg: &ModelConfig, tree: &PreparedTree, target: Target) -> Result<T> {
    let cache = forward(store, cfg, tree)?;
    Ok(head_loss_and_grad(store, cfg, &cache, target)?.0)
}

/// Head loss plus gradients for the CC capsules and the name table.
fn head_loss_and_grad<T: Real>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    target: Target,
) -> Result<(T, Array2<T>, Option<Array2<T>>)> {
    match target {
        Target::Class(k) => {
            let (l, g) = margin_loss_and_grad(&cache.cc, k, &cfg.margin)?;
            Ok((l, g, None))
        }
        Target::Name(k) => {
            let table = store
                .functions_vocab
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("model has no name head".into()))?;
            let head = NamePredictorHead {
                functions_vocab: table.clone(),
                names: vec![String::new(); table.nrows()],
            };
            let (l, dv, dvocab) = name_loss_and_grad(cache.code_vector(), &head, k)?;
            let mut dcc = Array2::zeros(cache.cc.raw_dim());
            dcc.row_mut(0).assign(&dv);
            Ok((l, dcc, Some(dvocab)))
        }
    }
}

/// Loss and exact gradient of one tree with respect to every tensor.
pub fn loss_and_grad<T: Real>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    tree: &PreparedTree,
    target: Target,
) -> Result<(T, ParameterStore<T>)> {
    let cache = forward(store, cfg, tree)?;
    let mut grads = store.zeros_like();
    let (loss, d_cc, d_vocab) = head_loss_and_grad(store, cfg, &cache, target)?;
    if let (Some(g), Some(dv)) = (grads.functions_vocab.as_mut(), d_vocab) {
        *g += &dv;
    }
    let (d_sc, d_wcc) = cc_backward(&cache.sc, &store.cc, &cache.cc_cache, &d_cc);
    grads.cc.w += &d_wcc;

    let d_pvc = match (&cache.routing, &store.drsw) {
        (RoutingCache::Vts(vc), _) => vts_backward(&cache.pvc, vc, &d_sc),
        (RoutingCache::Drsw(dc, kept), Some(params)) => {
            let routed = cache.routed.as_ref().unwrap_or(&cache.pvc);
            let (d_routed, d_w) = drsw_backward(routed, params, dc, &d_sc);
            if let Some(g) = grads.drsw.as_mut() {
                g.w_shared += &d_w;
            }
            match kept {
                None => d_routed,
                Some(rows) => {
                    let mut full = Array2::zeros(cache.pvc.raw_dim());
                    for (r, &i) in rows.iter().enumerate() {
                        full.row_mut(i).assign(&d_routed.row(r));
                    }
                    full
                }
            }
        }
        (RoutingCache::Drsw(..), None) => unreachable!("DRSW cache without DRSW parameters"),
    };
    let d_raw = squash_rows_backward(&cache.pvc_raw, &d_pvc);
    let width = cache.encoder.input.ncols();
    let d_layers = ungroup_layers(&d_raw, tree.num_nodes(), width);
    let d_input = encode_backward(&cache.encoder, d_layers, &tree.windows, &store.conv, &mut grads.conv);
    let (d_type, d_token) = (
        &mut grads.embeddings.type_table,
        &mut grads.embeddings.token_table,
    );
    scatter_features(&tree.ids, &d_input, store.embeddings.mode, d_type, d_token);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }
    Ok((loss, grads))
}

/// Mean loss and mean gradient over a batch. Trees are processed in
/// parallel; the reduction runs in input order so results do not depend
/// on thread scheduling.
pub fn batch_loss_and_grad<T: Real>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &[(&PreparedTree, Target)],
) -> Result<(T, ParameterStore<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parts: Vec<(T, ParameterStore<T>)> = batch
        .par_iter()
        .map(|(tree, target)| loss_and_grad(store, cfg, tree, *target))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        total += l;
        grads.add_assign(&g);
    }
    let inv = T::one() / c::<T>(batch.len() as f64);
    grads.scale(inv);
    Ok((total * inv, grads))
}
