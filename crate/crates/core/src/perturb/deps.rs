use std::collections::HashMap;

use crate::ast::{AstTree, NodeKind};
use crate::error::Result;

/// A storage location read or written by a statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Access {
    /// A scalar, string or a whole array.
    Var(String),
    /// One array element; the index is known only when it is a literal.
    Elem(String, Option<i64>),
}

impl Access {
    fn name(&self) -> &str {
        match self {
            Access::Var(n) | Access::Elem(n, _) => n,
        }
    }

    /// May the two locations overlap?
    pub fn overlaps(&self, other: &Access) -> bool {
        if self.name() != other.name() {
            return false;
        }
        match (self, other) {
            (Access::Elem(_, Some(i)), Access::Elem(_, Some(j))) => i == j,
            _ => true,
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct Effects {
    pub defs: Vec<Access>,
    pub uses: Vec<Access>,
    /// Division, modulo or indexing somewhere in the statement.
    pub may_trap: bool,
}

fn literal_index(tree: &AstTree, id: usize) -> Result<Option<i64>> {
    Ok(match tree.kind(id)? {
        NodeKind::IntLit => tree.token(id).and_then(|t| t.parse().ok()),
        _ => None,
    })
}

/// Smallest declared length of every array name in the tree.
pub(crate) fn array_sizes(tree: &AstTree) -> Result<HashMap<String, i64>> {
    let mut sizes: HashMap<String, i64> = HashMap::new();
    for node in &tree.nodes {
        if matches!(tree.kind(node.id)?, NodeKind::ArrayDecl | NodeKind::ArrayParam) {
            let len = tree.token(node.children[1]).and_then(|t| t.parse().ok()).unwrap_or(0);
            let e = sizes.entry(name_of(tree, node.children[0])).or_insert(len);
            *e = (*e).min(len);
        }
    }
    Ok(sizes)
}

/// Element access; only a literal index inside the declared bounds is
/// known not to trap.
fn element(tree: &AstTree, index: usize, sizes: &HashMap<String, i64>, fx: &mut Effects, write: bool) -> Result<()> {
    let kids = tree.children(index);
    let name = name_of(tree, kids[0]);
    let lit = literal_index(tree, kids[1])?;
    let in_bounds = matches!((lit, sizes.get(&name)), (Some(i), Some(&n)) if (0..n).contains(&i));
    fx.may_trap |= !in_bounds;
    let access = Access::Elem(name, lit);
    if write {
        fx.defs.push(access);
    } else {
        fx.uses.push(access);
    }
    Ok(())
}

fn name_of(tree: &AstTree, id: usize) -> String {
    tree.token(id).unwrap_or_default().to_string()
}

/// Reads of an expression. `None` when it contains a call.
fn expr_uses(tree: &AstTree, id: usize, sizes: &HashMap<String, i64>, fx: &mut Effects) -> Result<Option<()>> {
    let kids = tree.children(id);
    match tree.kind(id)? {
        NodeKind::Call => return Ok(None),
        NodeKind::Ident => fx.uses.push(Access::Var(name_of(tree, id))),
        NodeKind::Index => {
            element(tree, id, sizes, fx, false)?;
            return expr_uses(tree, kids[1], sizes, fx);
        }
        NodeKind::BinOp => {
            if matches!(tree.token(id), Some("/" | "%")) {
                fx.may_trap = true;
            }
        }
        _ => {}
    }
    for &k in kids {
        if expr_uses(tree, k, sizes, fx)?.is_none() {
            return Ok(None);
        }
    }
    Ok(Some(()))
}

/// Def/use summary of a statement that may take part in a swap; `None` for
/// statements that never move (output, calls, control flow, blocks).
pub(crate) fn effects(tree: &AstTree, stmt: usize, sizes: &HashMap<String, i64>) -> Result<Option<Effects>> {
    let kids = tree.children(stmt);
    let mut fx = Effects::default();
    let ok = match tree.kind(stmt)? {
        NodeKind::Decl => {
            fx.defs.push(Access::Var(name_of(tree, kids[0])));
            match kids.get(1) {
                Some(&init) if tree.kind(init)? != NodeKind::StrLit => expr_uses(tree, init, sizes, &mut fx)?,
                _ => Some(()),
            }
        }
        NodeKind::ArrayDecl => {
            fx.defs.push(Access::Var(name_of(tree, kids[0])));
            Some(())
        }
        NodeKind::Assign => {
            let target = kids[0];
            if tree.kind(target)? == NodeKind::Index {
                element(tree, target, sizes, &mut fx, true)?;
                if expr_uses(tree, tree.children(target)[1], sizes, &mut fx)?.is_none() {
                    return Ok(None);
                }
            } else {
                fx.defs.push(Access::Var(name_of(tree, target)));
            }
            expr_uses(tree, kids[1], sizes, &mut fx)?
        }
        _ => None,
    };
    Ok(ok.map(|_| fx))
}

fn disjoint(a: &[Access], b: &[Access]) -> bool {
    a.iter().all(|x| b.iter().all(|y| !x.overlaps(y)))
}

/// Can two statements of the same block run in either order with the same
/// observable behaviour? Requires disjoint def/use sets, no output, calls
/// or control flow, and at most one statement that can trap.
pub fn independent(tree: &AstTree, a: usize, b: usize) -> Result<bool> {
    independent_with(tree, a, b, &array_sizes(tree)?)
}

pub(crate) fn independent_with(tree: &AstTree, a: usize, b: usize, sizes: &HashMap<String, i64>) -> Result<bool> {
    let (Some(fa), Some(fb)) = (effects(tree, a, sizes)?, effects(tree, b, sizes)?) else {
        return Ok(false);
    };
    Ok(disjoint(&fa.defs, &fb.uses)
        && disjoint(&fa.uses, &fb.defs)
        && disjoint(&fa.defs, &fb.defs)
        && !(fa.may_trap && fb.may_trap))
}
