use std::fmt::Write;

use super::{AstTree, NodeKind};
use crate::error::{Error, Result};

/// Renders a mini-C tree back to source text. Parsing the output yields a
/// structurally equal tree.
pub fn to_source(tree: &AstTree) -> Result<String> {
    let mut out = String::new();
    let p = Printer { tree };
    match tree.kind(tree.root)? {
        NodeKind::Program => {
            for (i, &f) in tree.children(tree.root).iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                p.function(f, &mut out)?;
            }
        }
        NodeKind::FunctionDef => p.function(tree.root, &mut out)?,
        other => return Err(Error::Unsupported(format!("cannot print a tree rooted at {other}"))),
    }
    Ok(out)
}

fn precedence(op: &str) -> u8 {
    match op {
        "||" => 1,
        "&&" => 2,
        "==" | "!=" => 3,
        "<" | "<=" | ">" | ">=" => 4,
        "+" | "-" => 5,
        _ => 6,
    }
}

struct Printer<'a> {
    tree: &'a AstTree,
}

impl Printer<'_> {
    fn tok(&self, id: usize) -> &str {
        self.tree.token(id).unwrap_or_default()
    }

    fn kids(&self, id: usize) -> &[usize] {
        self.tree.children(id)
    }

    fn function(&self, id: usize, out: &mut String) -> Result<()> {
        let name = self.tree.token(id).unwrap_or("_");
        let params: Vec<String> = self
            .kids(self.kids(id)[0])
            .iter()
            .map(|&p| {
                let name = self.tok(self.kids(p)[0]);
                match self.kids(p).get(1) {
                    Some(&size) => format!("int {name}[{}]", self.tok(size)),
                    None => format!("int {name}"),
                }
            })
            .collect();
        write!(out, "int {name}({}) ", params.join(", ")).unwrap();
        self.block(self.kids(id)[1], 0, out)?;
        out.push('\n');
        Ok(())
    }

    fn block(&self, id: usize, indent: usize, out: &mut String) -> Result<()> {
        out.push_str("{\n");
        for &s in self.kids(id) {
            self.statement(s, indent + 1, out)?;
        }
        out.push_str(&"    ".repeat(indent));
        out.push('}');
        Ok(())
    }

    /// Statements usable inside a `for` header, without the trailing `;`.
    fn simple(&self, id: usize) -> Result<String> {
        let k = self.kids(id);
        Ok(match self.tree.kind(id)? {
            NodeKind::Decl => match k.get(1) {
                Some(&init) if self.tree.kind(init)? == NodeKind::StrLit => {
                    format!("str {} = {}", self.tok(k[0]), quote(self.tok(init)))
                }
                Some(&init) => format!("int {} = {}", self.tok(k[0]), self.expr(init)?),
                None => format!("int {}", self.tok(k[0])),
            },
            NodeKind::ArrayDecl => format!("int {}[{}]", self.tok(k[0]), self.tok(k[1])),
            NodeKind::Assign => format!("{} = {}", self.expr(k[0])?, self.expr(k[1])?),
            other => return Err(Error::Unsupported(format!("{other} is not a simple statement"))),
        })
    }

    fn statement(&self, id: usize, indent: usize, out: &mut String) -> Result<()> {
        let pad = "    ".repeat(indent);
        let k = self.kids(id);
        out.push_str(&pad);
        match self.tree.kind(id)? {
            NodeKind::Decl | NodeKind::ArrayDecl | NodeKind::Assign => {
                write!(out, "{};", self.simple(id)?).unwrap();
            }
            NodeKind::Return => write!(out, "return {};", self.expr(k[0])?).unwrap(),
            NodeKind::Print => write!(out, "print({});", self.expr(k[0])?).unwrap(),
            NodeKind::ExprStmt => write!(out, "{};", self.expr(k[0])?).unwrap(),
            NodeKind::Break => out.push_str("break;"),
            NodeKind::Continue => out.push_str("continue;"),
            NodeKind::Block => self.block(id, indent, out)?,
            NodeKind::While => {
                write!(out, "while ({}) ", self.expr(k[0])?).unwrap();
                self.block(k[1], indent, out)?;
            }
            NodeKind::For => {
                write!(
                    out,
                    "for ({}; {}; {}) ",
                    self.simple(k[0])?,
                    self.expr(k[1])?,
                    self.simple(k[2])?
                )
                .unwrap();
                self.block(k[3], indent, out)?;
            }
            NodeKind::If => {
                self.if_chain(id, indent, out)?;
            }
            other => return Err(Error::Unsupported(format!("{other} is not a statement"))),
        }
        out.push('\n');
        Ok(())
    }

    fn if_chain(&self, id: usize, indent: usize, out: &mut String) -> Result<()> {
        let k = self.kids(id);
        write!(out, "if ({}) ", self.expr(k[0])?).unwrap();
        self.block(k[1], indent, out)?;
        if let Some(&other) = k.get(2) {
            out.push_str(" else ");
            if self.tree.kind(other)? == NodeKind::If {
                self.if_chain(other, indent, out)?;
            } else {
                self.block(other, indent, out)?;
            }
        }
        Ok(())
    }

    fn expr(&self, id: usize) -> Result<String> {
        let k = self.kids(id);
        Ok(match self.tree.kind(id)? {
            NodeKind::Ident | NodeKind::IntLit => self.tok(id).to_string(),
            NodeKind::StrLit => quote(self.tok(id)),
            NodeKind::Index => format!("{}[{}]", self.tok(k[0]), self.expr(k[1])?),
            NodeKind::Call => {
                let args: Result<Vec<_>> = k.iter().map(|&a| self.expr(a)).collect();
                format!("{}({})", self.tok(id), args?.join(", "))
            }
            NodeKind::UnaryOp => {
                let inner = self.expr(k[0])?;
                if self.is_binary(k[0])? {
                    format!("{}({inner})", self.tok(id))
                } else if self.tree.kind(k[0])? == NodeKind::UnaryOp
                    || inner.starts_with('-')
                {
                    format!("{}({inner})", self.tok(id))
                } else {
                    format!("{}{inner}", self.tok(id))
                }
            }
            NodeKind::BinOp | NodeKind::CmpOp | NodeKind::LogicOp => {
                let op = self.tok(id);
                let prec = precedence(op);
                let side = |child: usize, right: bool| -> Result<String> {
                    let s = self.expr(child)?;
                    if self.is_binary(child)? {
                        let cp = precedence(self.tok(child));
                        if cp < prec || (right && cp == prec) {
                            return Ok(format!("({s})"));
                        }
                    }
                    Ok(s)
                };
                format!("{} {op} {}", side(k[0], false)?, side(k[1], true)?)
            }
            other => return Err(Error::Unsupported(format!("{other} is not an expression"))),
        })
    }

    fn is_binary(&self, id: usize) -> Result<bool> {
        Ok(matches!(
            self.tree.kind(id)?,
            NodeKind::BinOp | NodeKind::CmpOp | NodeKind::LogicOp
        ))
    }
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for ch in s.chars() {
        match ch {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}
