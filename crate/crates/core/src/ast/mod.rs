//! Syntax trees for the mini-C toy language and for externally supplied
//! ASTs ingested through the JSON schema.
//!
//! A tree is a flat arena of [`AstNode`]s addressed by index. Children are
//! ordered; every node except the root has exactly one parent.

mod interp;
mod lexer;
mod parser;
mod printer;
mod record;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use interp::{interpret, interpret_tree, Exit, Trace, Trap, DEFAULT_STEP_BUDGET};
pub use parser::parse_source;
pub use printer::to_source;
pub use record::{load_manifest, save_manifest, ProgramRecord, Split};
pub use vocab::{Vocabulary, DEFAULT_MIN_COUNT, UNK};

/// Language tag written for trees produced by the built-in parser.
pub const MINIC_LANG: &str = "minic";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub id: usize,
    #[serde(rename = "type")]
    pub node_type: String,
    pub token: Option<String>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AstTree {
    #[serde(rename = "lang")]
    pub source_lang: String,
    pub root: usize,
    pub nodes: Vec<AstNode>,
}

/// The fixed node-type inventory of mini-C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Program,
    FunctionDef,
    ParamList,
    Param,
    ArrayParam,
    Block,
    Decl,
    ArrayDecl,
    Assign,
    If,
    While,
    For,
    Return,
    Print,
    ExprStmt,
    Break,
    Continue,
    BinOp,
    CmpOp,
    LogicOp,
    UnaryOp,
    Ident,
    IntLit,
    StrLit,
    Index,
    Call,
}

impl NodeKind {
    pub const ALL: [NodeKind; 26] = [
        NodeKind::Program,
        NodeKind::FunctionDef,
        NodeKind::ParamList,
        NodeKind::Param,
        NodeKind::ArrayParam,
        NodeKind::Block,
        NodeKind::Decl,
        NodeKind::ArrayDecl,
        NodeKind::Assign,
        NodeKind::If,
        NodeKind::While,
        NodeKind::For,
        NodeKind::Return,
        NodeKind::Print,
        NodeKind::ExprStmt,
        NodeKind::Break,
        NodeKind::Continue,
        NodeKind::BinOp,
        NodeKind::CmpOp,
        NodeKind::LogicOp,
        NodeKind::UnaryOp,
        NodeKind::Ident,
        NodeKind::IntLit,
        NodeKind::StrLit,
        NodeKind::Index,
        NodeKind::Call,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Program => "Program",
            NodeKind::FunctionDef => "FunctionDef",
            NodeKind::ParamList => "ParamList",
            NodeKind::Param => "Param",
            NodeKind::ArrayParam => "ArrayParam",
            NodeKind::Block => "Block",
            NodeKind::Decl => "Decl",
            NodeKind::ArrayDecl => "ArrayDecl",
            NodeKind::Assign => "Assign",
            NodeKind::If => "If",
            NodeKind::While => "While",
            NodeKind::For => "For",
            NodeKind::Return => "Return",
            NodeKind::Print => "Print",
            NodeKind::ExprStmt => "ExprStmt",
            NodeKind::Break => "Break",
            NodeKind::Continue => "Continue",
            NodeKind::BinOp => "BinOp",
            NodeKind::CmpOp => "CmpOp",
            NodeKind::LogicOp => "LogicOp",
            NodeKind::UnaryOp => "UnaryOp",
            NodeKind::Ident => "Ident",
            NodeKind::IntLit => "IntLit",
            NodeKind::StrLit => "StrLit",
            NodeKind::Index => "Index",
            NodeKind::Call => "Call",
        }
    }

    /// Statement kinds that may appear directly inside a `Block`.
    pub fn is_statement(self) -> bool {
        matches!(
            self,
            NodeKind::Block
                | NodeKind::Decl
                | NodeKind::ArrayDecl
                | NodeKind::Assign
                | NodeKind::If
                | NodeKind::While
                | NodeKind::For
                | NodeKind::Return
                | NodeKind::Print
                | NodeKind::ExprStmt
                | NodeKind::Break
                | NodeKind::Continue
        )
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NodeKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unsupported(format!("node type `{s}` is not part of mini-C")))
    }
}

impl AstTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &AstNode {
        &self.nodes[id]
    }

    /// Node type parsed into the mini-C inventory.
    pub fn kind(&self, id: usize) -> Result<NodeKind> {
        self.nodes[id].node_type.parse()
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.nodes[id].token.as_deref()
    }

    /// Node ids in preorder starting from the root.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev().copied());
        }
        out
    }

    /// Parent of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.nodes.len()];
        for node in &self.nodes {
            for &c in &node.children {
                parents[c] = Some(node.id);
            }
        }
        parents
    }

    /// Node types in preorder.
    pub fn preorder_types(&self) -> Vec<&str> {
        self.preorder()
            .into_iter()
            .map(|id| self.nodes[id].node_type.as_str())
            .collect()
    }

    /// Checks every structural invariant: ids match positions, children
    /// exist, no cycles, one parent per non-root node, all nodes reachable.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::Schema("tree has no nodes".into()));
        }
        if self.root >= n {
            return Err(Error::Schema(format!(
                "root {} out of range for {n} nodes",
                self.root
            )));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Schema(format!(
                    "node at position {i} has id {}",
                    node.id
                )));
            }
            if let Some(&child) = node.children.iter().find(|&&c| c >= n) {
                return Err(Error::DanglingChild { node: i, child });
            }
        }

        // Iterative DFS with colours; a back edge to a node on the stack is a cycle.
        const WHITE: u8 = 0;
        const GREY: u8 = 1;
        const BLACK: u8 = 2;
        let mut colour = vec![WHITE; n];
        let mut stack: Vec<(usize, usize)> = vec![(self.root, 0)];
        colour[self.root] = GREY;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            if let Some(&child) = self.nodes[id].children.get(*next) {
                *next += 1;
                match colour[child] {
                    GREY => return Err(Error::Cycle(child)),
                    WHITE => {
                        colour[child] = GREY;
                        stack.push((child, 0));
                    }
                    _ => {}
                }
            } else {
                colour[id] = BLACK;
                stack.pop();
            }
        }

        let mut parent_count = vec![0usize; n];
        for node in &self.nodes {
            for &c in &node.children {
                parent_count[c] += 1;
            }
        }
        if parent_count[self.root] != 0 {
            return Err(Error::Cycle(self.root));
        }
        for (i, &count) in parent_count.iter().enumerate() {
            if i != self.root && count != 1 {
                return Err(Error::Schema(format!(
                    "node {i} has {count} parents (expected exactly one)"
                )));
            }
        }
        if let Some(unreached) = colour.iter().position(|&c| c == WHITE) {
            return Err(Error::Schema(format!(
                "node {unreached} is not reachable from the root"
            )));
        }
        Ok(())
    }

    /// Serializes to the AST JSON schema.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Parses and validates a document in the AST JSON schema. Nodes may
    /// appear in any order as long as their ids cover `0..n`.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)
            .map_err(|e| Error::Schema(format!("invalid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub(crate) fn from_value(value: serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            lang: String,
            root: usize,
            nodes: Vec<AstNode>,
        }
        let doc: Doc = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        let n = doc.nodes.len();
        let mut slots: Vec<Option<AstNode>> = vec![None; n];
        for node in doc.nodes {
            if node.id >= n {
                return Err(Error::Schema(format!(
                    "node id {} out of range for {n} nodes",
                    node.id
                )));
            }
            let id = node.id;
            if slots[id].replace(node).is_some() {
                return Err(Error::Schema(format!("duplicate node id {id}")));
            }
        }
        let tree = AstTree {
            source_lang: doc.lang,
            root: doc.root,
            nodes: slots.into_iter().map(|s| s.expect("ids cover 0..n")).collect(),
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Structural equality up to node numbering: same shape, types and
    /// tokens when both trees are walked from their roots.
    pub fn structurally_eq(&self, other: &AstTree) -> bool {
        fn eq(a: &AstTree, x: usize, b: &AstTree, y: usize) -> bool {
            let (nx, ny) = (&a.nodes[x], &b.nodes[y]);
            nx.node_type == ny.node_type
                && nx.token == ny.token
                && nx.children.len() == ny.children.len()
                && nx
                    .children
                    .iter()
                    .zip(&ny.children)
                    .all(|(&cx, &cy)| eq(a, cx, b, cy))
        }
        self.source_lang == other.source_lang
            && self.nodes.len() == other.nodes.len()
            && eq(self, self.root, other, other.root)
    }

    /// Renumbers nodes in preorder so that the root is node 0.
    pub fn canonicalize(&self) -> AstTree {
        let order = self.preorder();
        let mut new_id = vec![0usize; self.nodes.len()];
        for (i, &old) in order.iter().enumerate() {
            new_id[old] = i;
        }
        let nodes = order
            .iter()
            .enumerate()
            .map(|(i, &old)| {
                let n = &self.nodes[old];
                AstNode {
                    id: i,
                    node_type: n.node_type.clone(),
                    token: n.token.clone(),
                    children: n.children.iter().map(|&c| new_id[c]).collect(),
                }
            })
            .collect();
        AstTree {
            source_lang: self.source_lang.clone(),
            root: 0,
            nodes,
        }
    }

    /// Depth of every node (root has depth 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.nodes.len()];
        for id in self.preorder() {
            for &c in &self.nodes[id].children {
                depth[c] = depth[id] + 1;
            }
        }
        depth
    }
}

/// Incremental builder used by the parser and by transformations.
#[derive(Debug, Default)]
pub(crate) struct TreeBuilder {
    nodes: Vec<AstNode>,
}

impl TreeBuilder {
    pub(crate) fn add(&mut self, kind: NodeKind, token: Option<String>, children: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(AstNode {
            id,
            node_type: kind.as_str().to_string(),
            token,
            children,
        });
        id
    }

    pub(crate) fn finish(self, root: usize) -> AstTree {
        AstTree {
            source_lang: MINIC_LANG.to_string(),
            root,
            nodes: self.nodes,
        }
        .canonicalize()
    }
}
