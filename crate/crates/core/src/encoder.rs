//! Node initialization and stacked tree-based convolution.
//!
//! Each convolution window is a node plus its direct children. The parent
//! is weighted purely by `W_top`; the `k`-th of `n` children interpolates
//! between `W_left` and `W_right` by its position:
//!
//! ```text
//! y_v = tanh( W_top x_v + sum_k [eta_l(k) W_left + eta_r(k) W_right] x_{c_k} + b )
//! eta_r(k) = (k - 1) / (n - 1)   (0.5 when n = 1),   eta_l(k) = 1 - eta_r(k)
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::ast::{AstTree, Vocabulary};
use crate::error::{Error, Result};
use crate::real::{c, Real};

/// Which embeddings initialize a node's feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Type,
    Token,
    #[default]
    Combine,
}

impl FeatureMode {
    pub fn width(self, type_dim: usize, token_dim: usize) -> usize {
        match self {
            FeatureMode::Type => type_dim,
            FeatureMode::Token => token_dim,
            FeatureMode::Combine => type_dim + token_dim,
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type" => Ok(FeatureMode::Type),
            "token" => Ok(FeatureMode::Token),
            "combine" => Ok(FeatureMode::Combine),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature mode `{other}` (expected type, token or combine)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<T> {
    pub type_table: Array2<T>,
    pub token_table: Array2<T>,
    pub mode: FeatureMode,
}

impl<T: Real> EmbeddingTables<T> {
    pub fn width(&self) -> usize {
        self.mode
            .width(self.type_table.ncols(), self.token_table.ncols())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams<T> {
    pub w_top: Array2<T>,
    pub w_left: Array2<T>,
    pub w_right: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> ConvLayerParams<T> {
    pub fn zeros(dim: usize) -> Self {
        ConvLayerParams {
            w_top: Array2::zeros((dim, dim)),
            w_left: Array2::zeros((dim, dim)),
            w_right: Array2::zeros((dim, dim)),
            bias: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        for w in [&self.w_top, &self.w_left, &self.w_right] {
            if w.dim() != (d, d) {
                return Err(Error::DimensionMismatch {
                    context: "conv weight",
                    expected: d,
                    actual: w.nrows().max(w.ncols()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowWeights {
    pub top: f64,
    pub left: f64,
    pub right: f64,
}

/// Window weights for a node at depth `node_depth` (1 = window top,
/// 2 = child) and 1-based `position` among `siblings` children.
pub fn eta_weights(
    window_depth: usize,
    node_depth: usize,
    position: usize,
    siblings: usize,
) -> Result<WindowWeights> {
    if window_depth != 2 {
        return Err(Error::InvalidArgument(format!(
            "only depth-2 windows are supported, got {window_depth}"
        )));
    }
    match node_depth {
        1 => Ok(WindowWeights {
            top: 1.0,
            left: 0.0,
            right: 0.0,
        }),
        2 => {
            if position < 1 || position > siblings {
                return Err(Error::InvalidArgument(format!(
                    "child position {position} outside 1..={siblings}"
                )));
            }
            let right = if siblings == 1 {
                0.5
            } else {
                (position - 1) as f64 / (siblings - 1) as f64
            };
            Ok(WindowWeights {
                top: 0.0,
                left: 1.0 - right,
                right,
            })
        }
        d => Err(Error::InvalidArgument(format!(
            "node depth {d} outside a depth-2 window"
        ))),
    }
}

/// Per-tree child lists with precomputed (left, right) interpolation
/// weights; shared by every layer and by the backward pass.
#[derive(Debug, Clone)]
pub struct ConvWindows {
    children: Vec<Vec<(usize, f64, f64)>>,
}

impl ConvWindows {
    pub fn new(tree: &AstTree) -> Self {
        let children = tree
            .nodes
            .iter()
            .map(|node| {
                let n = node.children.len();
                node.children
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let w = eta_weights(2, 2, k + 1, n).expect("position within range");
                        (c, w.left, w.right)
                    })
                    .collect()
            })
            .collect();
        ConvWindows { children }
    }

    pub fn num_nodes(&self) -> usize {
        self.children.len()
    }

    /// Position-weighted child sums (left, right) for every node.
    fn child_sums<T: Real>(&self, x: &ArrayView2<T>) -> (Array2<T>, Array2<T>) {
        let mut left = Array2::zeros(x.raw_dim());
        let mut right = Array2::zeros(x.raw_dim());
        for (v, kids) in self.children.iter().enumerate() {
            for &(child, el, er) in kids {
                let xc = x.row(child);
                left.row_mut(v).scaled_add(c::<T>(el), &xc);
                right.row_mut(v).scaled_add(c::<T>(er), &xc);
            }
        }
        (left, right)
    }
}

/// Gradients of one convolution layer.
pub type ConvLayerGrads<T> = ConvLayerParams<T>;

/// One convolution layer over all windows of the tree.
pub fn conv_layer<T: Real>(
    features: &Array2<T>,
    windows: &ConvWindows,
    params: &ConvLayerParams<T>,
) -> Result<Array2<T>> {
    params.check()?;
    if features.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: "conv layer input width",
            expected: params.dim(),
            actual: features.ncols(),
        });
    }
    if features.nrows() != windows.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "conv layer input rows",
            expected: windows.num_nodes(),
            actual: features.nrows(),
        });
    }
    let x = features.view();
    let (left, right) = windows.child_sums(&x);
    let mut z = x.dot(&params.w_top.t());
    z = z + left.dot(&params.w_left.t()) + right.dot(&params.w_right.t());
    z += &params.bias;
    z.mapv_inplace(|v| v.tanh());
    Ok(z)
}

/// Backward pass of [`conv_layer`]: accumulates parameter gradients into
/// `grads` and returns the gradient with respect to `features`.
pub fn conv_layer_backward<T: Real>(
    features: &Array2<T>,
    output: &Array2<T>,
    d_output: &Array2<T>,
    windows: &ConvWindows,
    params: &ConvLayerParams<T>,
    grads: &mut ConvLayerGrads<T>,
) -> Array2<T> {
    let x = features.view();
    let mut dz = d_output.clone();
    Zip::from(&mut dz)
        .and(output)
        .for_each(|g, &y| *g = *g * (T::one() - y * y));
    let (left, right) = windows.child_sums(&x);
    let dzt = dz.t();
    grads.w_top += &dzt.dot(&x);
    grads.w_left += &dzt.dot(&left);
    grads.w_right += &dzt.dot(&right);
    grads.bias += &dz.sum_axis(Axis(0));

    let mut dx = dz.dot(&params.w_top);
    let d_left = dz.dot(&params.w_left);
    let d_right = dz.dot(&params.w_right);
    for (v, kids) in windows.children.iter().enumerate() {
        for &(child, el, er) in kids {
            dx.row_mut(child).scaled_add(c::<T>(el), &d_left.row(v));
            dx.row_mut(child).scaled_add(c::<T>(er), &d_right.row(v));
        }
    }
    dx
}

/// Embedding row indices for every node of a tree.
#[derive(Debug, Clone)]
pub struct NodeIds {
    pub types: Vec<usize>,
    pub tokens: Vec<usize>,
}

impl NodeIds {
    pub fn new(tree: &AstTree, vocab: &Vocabulary) -> Self {
        NodeIds {
            types: tree.nodes.iter().map(|n| vocab.type_id(&n.node_type)).collect(),
            tokens: tree
                .nodes
                .iter()
                .map(|n| vocab.token_id(n.token.as_deref()))
                .collect(),
        }
    }
}

fn check_tables<T: Real>(tables: &EmbeddingTables<T>, vocab: &Vocabulary) -> Result<()> {
    if tables.type_table.nrows() != vocab.num_types() {
        return Err(Error::VocabMismatch {
            what: "node types",
            vocab: vocab.num_types(),
            table: tables.type_table.nrows(),
        });
    }
    if tables.token_table.nrows() != vocab.num_tokens() {
        return Err(Error::VocabMismatch {
            what: "tokens",
            vocab: vocab.num_tokens(),
            table: tables.token_table.nrows(),
        });
    }
    Ok(())
}

/// Initial `|V| x D` feature matrix: type embedding, token embedding, or
/// their concatenation. Tokenless and unseen tokens use the UNK row.
pub fn init_node_features<T: Real>(
    tree: &AstTree,
    tables: &EmbeddingTables<T>,
    vocab: &Vocabulary,
) -> Result<Array2<T>> {
    check_tables(tables, vocab)?;
    Ok(gather_features(&NodeIds::new(tree, vocab), tables))
}

pub(crate) fn gather_features<T: Real>(ids: &NodeIds, tables: &EmbeddingTables<T>) -> Array2<T> {
    let (td, kd) = (tables.type_table.ncols(), tables.token_table.ncols());
    let n = ids.types.len();
    let mut x = Array2::zeros((n, tables.width()));
    for v in 0..n {
        let mut row = x.row_mut(v);
        match tables.mode {
            FeatureMode::Type => row.assign(&tables.type_table.row(ids.types[v])),
            FeatureMode::Token => row.assign(&tables.token_table.row(ids.tokens[v])),
            FeatureMode::Combine => {
                row.slice_mut(s![..td])
                    .assign(&tables.type_table.row(ids.types[v]));
                row.slice_mut(s![td..td + kd])
                    .assign(&tables.token_table.row(ids.tokens[v]));
            }
        }
    }
    x
}

/// Scatters feature gradients back into the embedding tables.
pub(crate) fn scatter_features<T: Real>(
    ids: &NodeIds,
    d_features: &Array2<T>,
    mode: FeatureMode,
    d_type: &mut Array2<T>,
    d_token: &mut Array2<T>,
) {
    let td = d_type.ncols();
    for v in 0..ids.types.len() {
        let g = d_features.row(v);
        match mode {
            FeatureMode::Type => d_type.row_mut(ids.types[v]).scaled_add(T::one(), &g),
            FeatureMode::Token => d_token.row_mut(ids.tokens[v]).scaled_add(T::one(), &g),
            FeatureMode::Combine => {
                d_type
                    .row_mut(ids.types[v])
                    .scaled_add(T::one(), &g.slice(s![..td]));
                d_token
                    .row_mut(ids.tokens[v])
                    .scaled_add(T::one(), &g.slice(s![td..]));
            }
        }
    }
}

/// Initial features plus all `M` per-layer outputs.
#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    pub input: Array2<T>,
    pub layer_features: Vec<Array2<T>>,
}

impl<T: Real> EncoderOutput<T> {
    pub fn num_layers(&self) -> usize {
        self.layer_features.len()
    }
}

pub fn encode<T: Real>(
    tree: &AstTree,
    tables: &EmbeddingTables<T>,
    layers: &[ConvLayerParams<T>],
    vocab: &Vocabulary,
) -> Result<EncoderOutput<T>> {
    let x = init_node_features(tree, tables, vocab)?;
    encode_features(x, &ConvWindows::new(tree), layers)
}

pub(crate) fn encode_features<T: Real>(
    input: Array2<T>,
    windows: &ConvWindows,
    layers: &[ConvLayerParams<T>],
) -> Result<EncoderOutput<T>> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
    }
    let mut layer_features: Vec<Array2<T>> = Vec::with_capacity(layers.len());
    for params in layers {
        let prev = layer_features.last().unwrap_or(&input);
        let y = conv_layer(prev, windows, params)?;
        layer_features.push(y);
    }
    Ok(EncoderOutput {
        input,
        layer_features,
    })
}

/// Backpropagates per-layer feature gradients (`d_layers[m]` is the
/// gradient flowing directly into layer `m`'s output) down to the input.
pub(crate) fn encode_backward<T: Real>(
    enc: &EncoderOutput<T>,
    mut d_layers: Vec<Array2<T>>,
    windows: &ConvWindows,
    layers: &[ConvLayerParams<T>],
    grads: &mut [ConvLayerGrads<T>],
) -> Array2<T> {
    let m = layers.len();
    let mut d_input = None;
    for l in (0..m).rev() {
        let input = if l == 0 {
            &enc.input
        } else {
            &enc.layer_features[l - 1]
        };
        let dx = conv_layer_backward(
            input,
            &enc.layer_features[l],
            &d_layers[l],
            windows,
            &layers[l],
            &mut grads[l],
        );
        if l == 0 {
            d_input = Some(dx);
        } else {
            d_layers[l - 1] += &dx;
        }
    }
    d_input.expect("at least one layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::parse_source;
    use approx::assert_abs_diff_eq;

    fn vocab_for(tree: &AstTree) -> Vocabulary {
        Vocabulary::from_trees([tree], 1).unwrap()
    }

    fn tables(vocab: &Vocabulary, td: usize, kd: usize, mode: FeatureMode) -> EmbeddingTables<f64> {
        let mut tt = Array2::zeros((vocab.num_types(), td));
        let mut kt = Array2::zeros((vocab.num_tokens(), kd));
        for ((i, j), v) in tt.indexed_iter_mut() {
            *v = (i * 10 + j) as f64;
        }
        for ((i, j), v) in kt.indexed_iter_mut() {
            *v = -((i * 10 + j) as f64);
        }
        EmbeddingTables {
            type_table: tt,
            token_table: kt,
            mode,
        }
    }

    #[test]
    fn eta_conventions() {
        let w = eta_weights(2, 1, 1, 1).unwrap();
        assert_eq!((w.top, w.left, w.right), (1.0, 0.0, 0.0));
        let w = eta_weights(2, 2, 1, 1).unwrap();
        assert_eq!((w.top, w.left, w.right), (0.0, 0.5, 0.5));
        let w = eta_weights(2, 2, 2, 3).unwrap();
        assert_eq!((w.top, w.left, w.right), (0.0, 0.5, 0.5));
        let w = eta_weights(2, 2, 1, 3).unwrap();
        assert_eq!((w.left, w.right), (1.0, 0.0));
        assert!(eta_weights(2, 2, 0, 3).is_err());
        assert!(eta_weights(2, 2, 4, 3).is_err());
        assert!(eta_weights(3, 1, 1, 1).is_err());
    }

    #[test]
    fn eta_exhaustive_simplex() {
        for n in 1..=64 {
            for p in 1..=n {
                let w = eta_weights(2, 2, p, n).unwrap();
                assert!((w.top + w.left + w.right - 1.0).abs() <= 1e-12);
                for x in [w.top, w.left, w.right] {
                    assert!((0.0..=1.0).contains(&x));
                }
            }
        }
    }

    #[test]
    fn feature_widths_by_mode() {
        let tree = parse_source("int main(){ return 0; }").unwrap();
        let vocab = vocab_for(&tree);
        for (mode, width) in [
            (FeatureMode::Combine, 80),
            (FeatureMode::Type, 30),
            (FeatureMode::Token, 50),
        ] {
            let x = init_node_features(&tree, &tables(&vocab, 30, 50, mode), &vocab).unwrap();
            assert_eq!(x.dim(), (5, width));
        }
    }

    #[test]
    fn combine_concatenates_and_unk_for_tokenless() {
        let tree = parse_source("int main(){ return 0; }").unwrap();
        let vocab = vocab_for(&tree);
        let t = tables(&vocab, 2, 3, FeatureMode::Combine);
        let x = init_node_features(&tree, &t, &vocab).unwrap();
        // node 1 is the tokenless ParamList
        let ty = vocab.type_id("ParamList");
        assert_eq!(x.row(1).to_vec()[..2], t.type_table.row(ty).to_vec()[..]);
        assert_eq!(x.row(1).to_vec()[2..], t.token_table.row(0).to_vec()[..]);
    }

    #[test]
    fn unseen_token_uses_unk_row() {
        let tree = parse_source("int main(){ return 0; }").unwrap();
        let vocab = vocab_for(&tree);
        let other = parse_source("int qq(){ return 0; }").unwrap();
        let t = tables(&vocab, 2, 3, FeatureMode::Token);
        let x = init_node_features(&other, &t, &vocab).unwrap();
        assert_eq!(x.row(0), t.token_table.row(0));
    }

    #[test]
    fn vocab_table_mismatch() {
        let tree = parse_source("int main(){ return 0; }").unwrap();
        let vocab = vocab_for(&tree);
        let mut t = tables(&vocab, 2, 3, FeatureMode::Combine);
        t.token_table = Array2::zeros((1, 3));
        assert!(matches!(
            init_node_features(&tree, &t, &vocab),
            Err(Error::VocabMismatch { .. })
        ));
    }

    fn single_node() -> AstTree {
        AstTree::from_json(br#"{"lang":"x","root":0,"nodes":[{"id":0,"type":"Leaf","token":null,"children":[]}]}"#)
            .unwrap()
    }

    #[test]
    fn single_node_cases() {
        let tree = single_node();
        let win = ConvWindows::new(&tree);
        let p = ConvLayerParams::<f64>::zeros(3);
        let y = conv_layer(&Array2::zeros((1, 3)), &win, &p).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        let mut p = ConvLayerParams::<f64>::zeros(3);
        p.w_top = Array2::eye(3);
        let x = Array2::from_elem((1, 3), 0.5);
        let y = conv_layer(&x, &win, &p).unwrap();
        for &v in y.iter() {
            assert_abs_diff_eq!(v, 0.5f64.tanh(), epsilon = 1e-15);
        }
    }

    #[test]
    fn parent_with_one_child() {
        let tree = AstTree::from_json(
            br#"{"lang":"x","root":0,"nodes":[
                {"id":0,"type":"P","token":null,"children":[1]},
                {"id":1,"type":"C","token":null,"children":[]}]}"#,
        )
        .unwrap();
        let win = ConvWindows::new(&tree);
        let p = ConvLayerParams {
            w_top: ndarray::arr2(&[[0.3, -0.1], [0.2, 0.4]]),
            w_left: ndarray::arr2(&[[0.5, 0.0], [-0.2, 0.1]]),
            w_right: ndarray::arr2(&[[-0.3, 0.7], [0.6, 0.2]]),
            bias: ndarray::arr1(&[0.05, -0.02]),
        };
        let x = ndarray::arr2(&[[0.9, -0.4], [0.3, 0.8]]);
        let y = conv_layer(&x, &win, &p).unwrap();
        let half = (&p.w_left + &p.w_right) * 0.5;
        let expect = (p.w_top.dot(&x.row(0)) + half.dot(&x.row(1)) + &p.bias).mapv(f64::tanh);
        for k in 0..2 {
            assert_abs_diff_eq!(y[[0, k]], expect[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_weights_cascade_to_zero() {
        let tree = parse_source("int main(){ return 0; }").unwrap();
        let vocab = vocab_for(&tree);
        let t = tables(&vocab, 2, 3, FeatureMode::Combine);
        let layers = vec![ConvLayerParams::zeros(5), ConvLayerParams::zeros(5)];
        let out = encode(&tree, &t, &layers, &vocab).unwrap();
        assert_eq!(out.num_layers(), 2);
        assert!(out.layer_features.iter().all(|y| y.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn one_layer_equals_conv_layer() {
        let tree = parse_source("int main(int a){ return a + 1; }").unwrap();
        let vocab = vocab_for(&tree);
        let t = tables(&vocab, 2, 2, FeatureMode::Combine);
        let mut p = ConvLayerParams::<f64>::zeros(4);
        p.w_top.fill(0.01);
        p.w_left.fill(-0.02);
        p.w_right.fill(0.03);
        let out = encode(&tree, &t, std::slice::from_ref(&p), &vocab).unwrap();
        let x = init_node_features(&tree, &t, &vocab).unwrap();
        let y = conv_layer(&x, &ConvWindows::new(&tree), &p).unwrap();
        assert_eq!(out.layer_features[0], y);
    }

    #[test]
    fn dimension_mismatch() {
        let tree = single_node();
        let win = ConvWindows::new(&tree);
        let p = ConvLayerParams::<f64>::zeros(3);
        assert!(matches!(
            conv_layer(&Array2::zeros((1, 4)), &win, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
