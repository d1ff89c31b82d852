//! Semantics-preserving rewrites of mini-C trees (variable renaming, unused
//! string declarations, swaps of independent adjacent statements) and the
//! percentage-of-predictions-changed robustness harness.

mod deps;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ast::{interpret_tree, AstNode, AstTree, NodeKind, ProgramRecord, DEFAULT_STEP_BUDGET};
use crate::error::{Error, Result};

pub use deps::{independent, Access};

/// Nodes added by one unused declaration: `Decl`, `Ident`, `StrLit`.
pub const UNUSED_DECL_NODES: usize = 3;

const KEYWORDS: [&str; 10] = [
    "int", "str", "if", "else", "while", "for", "return", "print", "break", "continue",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    VariableRenaming,
    UnusedStatement,
    PermuteStatement,
    Identity,
}

impl TransformKind {
    pub const ALL: [TransformKind; 4] = [
        TransformKind::VariableRenaming,
        TransformKind::UnusedStatement,
        TransformKind::PermuteStatement,
        TransformKind::Identity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::VariableRenaming => "variable_renaming",
            TransformKind::UnusedStatement => "unused_statement",
            TransformKind::PermuteStatement => "permute_statement",
            TransformKind::Identity => "identity",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            TransformKind::VariableRenaming => "VN",
            TransformKind::UnusedStatement => "US",
            TransformKind::PermuteStatement => "PS",
            TransformKind::Identity => "ID",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    /// Accepts the full names and the abbreviations `vn`, `us`, `ps`, `id`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "_");
        TransformKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lower || k.short().eq_ignore_ascii_case(&lower))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown transform `{s}` (expected variable_renaming, unused_statement, permute_statement, identity, vn, us, ps)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformResult {
    pub tree: AstTree,
    pub applied: bool,
    /// Human-readable description of the rewritten site.
    pub site: String,
    pub seed: u64,
}

impl TransformResult {
    fn unchanged(tree: &AstTree, seed: u64, why: &str) -> Self {
        TransformResult {
            tree: tree.clone(),
            applied: false,
            site: why.to_string(),
            seed,
        }
    }
}

fn function_roots(tree: &AstTree) -> Result<Vec<usize>> {
    Ok(match tree.kind(tree.root)? {
        NodeKind::Program => tree.children(tree.root).to_vec(),
        NodeKind::FunctionDef => vec![tree.root],
        other => return Err(Error::Unsupported(format!("cannot transform a tree rooted at {other}"))),
    })
}

fn subtree(tree: &AstTree, root: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        out.push(id);
        stack.extend(tree.children(id).iter().rev().copied());
    }
    out
}

/// Identifier tokens a new name must avoid inside `function`: its variables
/// plus every function name of the program.
fn visible_names(tree: &AstTree, function: usize, functions: &[usize]) -> Result<HashSet<String>> {
    let mut names = HashSet::new();
    for &f in functions {
        if let Some(t) = tree.token(f) {
            names.insert(t.to_string());
        }
    }
    for id in subtree(tree, function) {
        if matches!(tree.kind(id)?, NodeKind::Ident | NodeKind::Call) {
            if let Some(t) = tree.token(id) {
                names.insert(t.to_string());
            }
        }
    }
    Ok(names)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&s)
}

/// Identifiers declared anywhere in `trees` (parameters and local
/// variables), sorted; the renaming pool drawn from a training split.
pub fn variable_pool<'a>(trees: impl IntoIterator<Item = &'a AstTree>) -> Result<Vec<String>> {
    let mut pool = BTreeSet::new();
    for tree in trees {
        for (_, name) in declared_variables(tree, tree.root)? {
            pool.insert(name);
        }
    }
    Ok(pool.into_iter().collect())
}

/// `(function, name)` for every declared variable, in preorder.
fn declared_variables(tree: &AstTree, root: usize) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let functions = match tree.kind(root)? {
        NodeKind::Program => tree.children(root).to_vec(),
        _ => vec![root],
    };
    for f in functions {
        for id in subtree(tree, f) {
            let declaring = matches!(
                tree.kind(id)?,
                NodeKind::Decl | NodeKind::ArrayDecl | NodeKind::Param | NodeKind::ArrayParam
            );
            if !declaring {
                continue;
            }
            if let Some(name) = tree.children(id).first().and_then(|&i| tree.token(i)) {
                if seen.insert((f, name.to_string())) {
                    out.push((f, name.to_string()));
                }
            }
        }
    }
    Ok(out)
}

/// Renames one uniformly chosen variable everywhere in its function. The
/// new name comes uniformly from `name_pool` minus every identifier the
/// function can already see.
pub fn rename_variable(tree: &AstTree, name_pool: &[String], seed: u64) -> Result<TransformResult> {
    if name_pool.is_empty() {
        return Err(Error::InvalidArgument("renaming pool is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functions = function_roots(tree)?;
    let vars = declared_variables(tree, tree.root)?;
    let Some((function, old)) = vars.choose(&mut rng).cloned() else {
        return Ok(TransformResult::unchanged(tree, seed, "no variables"));
    };
    let visible = visible_names(tree, function, &functions)?;
    let mut candidates: Vec<&String> = name_pool
        .iter()
        .filter(|n| is_identifier(n) && !visible.contains(n.as_str()))
        .collect();
    candidates.sort();
    candidates.dedup();
    let Some(&new) = candidates.choose(&mut rng) else {
        return Ok(TransformResult::unchanged(tree, seed, "renaming pool exhausted"));
    };
    let mut out = tree.clone();
    let mut count = 0usize;
    for id in subtree(tree, function) {
        if tree.kind(id)? == NodeKind::Ident && tree.token(id) == Some(old.as_str()) {
            out.nodes[id].token = Some(new.clone());
            count += 1;
        }
    }
    Ok(TransformResult {
        tree: out,
        applied: true,
        site: format!("renamed `{old}` to `{new}` ({count} occurrences)"),
        seed,
    })
}

fn blocks(tree: &AstTree) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for id in tree.preorder() {
        if tree.kind(id)? == NodeKind::Block {
            out.push(id);
        }
    }
    Ok(out)
}

fn enclosing_function(tree: &AstTree, node: usize, parents: &[Option<usize>]) -> Result<usize> {
    let mut cur = node;
    loop {
        if tree.kind(cur)? == NodeKind::FunctionDef {
            return Ok(cur);
        }
        cur = parents[cur].ok_or_else(|| Error::Schema(format!("node {node} is outside every function")))?;
    }
}

/// Inserts `str u_k = "unused";` at a uniformly chosen position of a
/// uniformly chosen block, with the smallest `k` that names nothing the
/// function can see.
pub fn insert_unused(tree: &AstTree, seed: u64) -> Result<TransformResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functions = function_roots(tree)?;
    let all_blocks = blocks(tree)?;
    let Some(&block) = all_blocks.choose(&mut rng) else {
        return Ok(TransformResult::unchanged(tree, seed, "no blocks"));
    };
    let position = rng.gen_range(0..=tree.children(block).len());
    let function = enclosing_function(tree, block, &tree.parents())?;
    let visible = visible_names(tree, function, &functions)?;
    let name = (0..)
        .map(|k| format!("u_{k}"))
        .find(|n| !visible.contains(n))
        .expect("finitely many names are visible");

    let mut out = tree.clone();
    let base = out.nodes.len();
    let mut push = |kind: NodeKind, token: Option<String>, children: Vec<usize>| {
        let id = out.nodes.len();
        out.nodes.push(AstNode {
            id,
            node_type: kind.as_str().to_string(),
            token,
            children,
        });
        id
    };
    let ident = push(NodeKind::Ident, Some(name.clone()), Vec::new());
    let lit = push(NodeKind::StrLit, Some("unused".to_string()), Vec::new());
    let decl = push(NodeKind::Decl, None, vec![ident, lit]);
    debug_assert_eq!(out.nodes.len(), base + UNUSED_DECL_NODES);
    out.nodes[block].children.insert(position, decl);
    Ok(TransformResult {
        tree: out,
        applied: true,
        site: format!("inserted `{name}` at position {position} of block node {block}"),
        seed,
    })
}

/// Every `(block, i)` such that statements `i` and `i + 1` of the block
/// may be exchanged.
pub fn swappable_pairs(tree: &AstTree) -> Result<Vec<(usize, usize)>> {
    let sizes = deps::array_sizes(tree)?;
    let mut out = Vec::new();
    for block in blocks(tree)? {
        let stmts = tree.children(block);
        for i in 0..stmts.len().saturating_sub(1) {
            if deps::independent_with(tree, stmts[i], stmts[i + 1], &sizes)? {
                out.push((block, i));
            }
        }
    }
    Ok(out)
}

/// Swaps one uniformly chosen pair of adjacent independent statements.
pub fn permute_statements(tree: &AstTree, seed: u64) -> Result<TransformResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = swappable_pairs(tree)?;
    let Some(&(block, i)) = pairs.choose(&mut rng) else {
        return Ok(TransformResult::unchanged(tree, seed, "no independent adjacent statements"));
    };
    let mut out = tree.clone();
    out.nodes[block].children.swap(i, i + 1);
    Ok(TransformResult {
        tree: out,
        applied: true,
        site: format!("swapped statements {i} and {} of block node {block}", i + 1),
        seed,
    })
}

/// Dispatches on `kind`; identity always reports `applied = true`.
pub fn apply(kind: TransformKind, tree: &AstTree, name_pool: &[String], seed: u64) -> Result<TransformResult> {
    match kind {
        TransformKind::VariableRenaming => rename_variable(tree, name_pool, seed),
        TransformKind::UnusedStatement => insert_unused(tree, seed),
        TransformKind::PermuteStatement => permute_statements(tree, seed),
        TransformKind::Identity => Ok(TransformResult {
            tree: tree.clone(),
            applied: true,
            site: "identity".to_string(),
            seed,
        }),
    }
}

/// Do the original and transformed trees produce identical interpreter
/// traces on every stored test input of `record`?
pub fn preserves_semantics(record: &ProgramRecord, transformed: &AstTree) -> Result<bool> {
    let inputs = record
        .test_inputs
        .as_ref()
        .ok_or_else(|| Error::Schema(format!("record `{}` has no test inputs", record.id)))?;
    for input in inputs {
        let before = interpret_tree(&record.ast, input, DEFAULT_STEP_BUDGET)?;
        let after = interpret_tree(transformed, input, DEFAULT_STEP_BUDGET)?;
        if before != after {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Seed used for the program at `index` of a robustness run.
pub fn program_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.gen()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramOutcome {
    pub id: String,
    pub before: usize,
    /// `None` when the transform had no applicable site.
    pub after: Option<usize>,
    pub site: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub kind: TransformKind,
    /// Percentage of changed predictions over transformed programs; 0 when
    /// nothing could be transformed.
    pub ppc: f64,
    pub changed: usize,
    pub unchanged: usize,
    pub inapplicable: usize,
    pub seed: u64,
    pub programs: Vec<ProgramOutcome>,
}

impl RobustnessReport {
    pub fn applied(&self) -> usize {
        self.changed + self.unchanged
    }
}

/// Percentage of predictions changed: `100 * changed / (changed + unchanged)`.
pub fn ppc_value(changed: usize, unchanged: usize) -> f64 {
    let total = changed + unchanged;
    if total == 0 {
        0.0
    } else {
        100.0 * changed as f64 / total as f64
    }
}

/// Predicts every program before and after one transformation and counts
/// how many predictions move. Programs are processed in parallel; the
/// report lists them in input order.
pub fn ppc<F>(model_fn: F, programs: &[ProgramRecord], kind: TransformKind, name_pool: &[String], seed: u64) -> Result<RobustnessReport>
where
    F: Fn(&AstTree) -> Result<usize> + Sync,
{
    if programs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outcomes = programs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let run = || -> Result<ProgramOutcome> {
                let before = model_fn(&p.ast)?;
                let t = apply(kind, &p.ast, name_pool, program_seed(seed, i))?;
                let after = if t.applied { Some(model_fn(&t.tree)?) } else { None };
                Ok(ProgramOutcome {
                    id: p.id.clone(),
                    before,
                    after,
                    site: t.site,
                })
            };
            run().map_err(|e| e.in_program(&p.id))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut changed = 0;
    let mut unchanged = 0;
    let mut inapplicable = 0;
    for o in &outcomes {
        match o.after {
            None => inapplicable += 1,
            Some(a) if a != o.before => changed += 1,
            Some(_) => unchanged += 1,
        }
    }
    Ok(RobustnessReport {
        kind,
        ppc: ppc_value(changed, unchanged),
        changed,
        unchanged,
        inapplicable,
        seed,
        programs: outcomes,
    })
}
