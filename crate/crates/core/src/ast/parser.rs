//! Recursive-descent parser for mini-C.
//!
//! ```text
//! program  := function+
//! function := 'int' IDENT '(' [param {',' param}] ')' block
//! param    := 'int' IDENT ['[' INT ']']
//! block    := '{' stmt* '}'
//! stmt     := 'int' IDENT '[' INT ']' ';' | 'int' IDENT ['=' expr] ';'
//!           | 'str' IDENT '=' STRING ';'
//!           | 'if' '(' expr ')' block ['else' (block | if)]
//!           | 'while' '(' expr ')' block
//!           | 'for' '(' simple ';' expr ';' simple ')' block
//!           | 'return' expr ';' | 'print' '(' expr ')' ';'
//!           | 'break' ';' | 'continue' ';' | block
//!           | lvalue '=' expr ';' | IDENT '(' args ')' ';'
//! ```
//!
//! Expressions use C precedence: `||` < `&&` < equality < relational <
//! additive < multiplicative < unary. Variables live in one namespace per
//! function and must be declared before use.

use std::collections::HashMap;

use super::lexer::{syntax, tokenize, Spanned, Tok};
use super::{AstTree, NodeKind, TreeBuilder};
use crate::error::{Error, Result};

/// Parses mini-C source text into a validated tree. A single function
/// becomes the root; several functions are wrapped in a `Program` node.
pub fn parse_source(text: &str) -> Result<AstTree> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        builder: TreeBuilder::default(),
    };
    let mut functions = Vec::new();
    while parser.peek() != &Tok::Eof {
        functions.push(parser.function()?);
    }
    if functions.is_empty() {
        let t = parser.current();
        return Err(syntax(t.line, t.column, "expected a function definition"));
    }
    let root = if functions.len() == 1 {
        functions[0]
    } else {
        parser.builder.add(NodeKind::Program, None, functions)
    };
    let tree = parser.builder.finish(root);
    check_semantics(&tree)?;
    Ok(tree)
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
    builder: TreeBuilder,
}

impl Parser {
    fn current(&self) -> &Spanned {
        &self.tokens[self.pos]
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn advance(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, message: &str) -> Error {
        let t = self.current();
        let found = match &t.tok {
            Tok::Eof => "end of input".to_string(),
            other => format!("{other:?}"),
        };
        syntax(t.line, t.column, &format!("{message}, found {found}"))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                Ok(name)
            }
            _ => Err(self.error("expected identifier")),
        }
    }

    fn int_literal(&mut self) -> Result<i64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.advance();
                Ok(v)
            }
            _ => Err(self.error("expected integer literal")),
        }
    }

    fn leaf(&mut self, kind: NodeKind, token: String) -> usize {
        self.builder.add(kind, Some(token), Vec::new())
    }

    fn function(&mut self) -> Result<usize> {
        self.expect(Tok::KwInt, "`int` return type")?;
        let name = self.ident()?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                params.push(self.param()?);
                if *self.peek() == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let plist = self.builder.add(NodeKind::ParamList, None, params);
        let body = self.block()?;
        Ok(self.builder.add(NodeKind::FunctionDef, Some(name), vec![plist, body]))
    }

    fn param(&mut self) -> Result<usize> {
        self.expect(Tok::KwInt, "`int` parameter type")?;
        let name = self.ident()?;
        let ident = self.leaf(NodeKind::Ident, name);
        if *self.peek() == Tok::LBracket {
            self.advance();
            let size = self.array_size()?;
            self.expect(Tok::RBracket, "`]`")?;
            let lit = self.leaf(NodeKind::IntLit, size.to_string());
            Ok(self.builder.add(NodeKind::ArrayParam, None, vec![ident, lit]))
        } else {
            Ok(self.builder.add(NodeKind::Param, None, vec![ident]))
        }
    }

    fn array_size(&mut self) -> Result<i64> {
        let size = self.int_literal()?;
        if !(1..=4096).contains(&size) {
            return Err(Error::Unsupported(format!(
                "array size {size} outside 1..=4096"
            )));
        }
        Ok(size)
    }

    fn block(&mut self) -> Result<usize> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return Err(self.error("expected `}`"));
            }
            stmts.push(self.statement()?);
        }
        self.advance();
        Ok(self.builder.add(NodeKind::Block, None, stmts))
    }

    fn statement(&mut self) -> Result<usize> {
        match self.peek().clone() {
            Tok::KwInt => {
                let stmt = self.int_decl()?;
                self.expect(Tok::Semi, "`;`")?;
                Ok(stmt)
            }
            Tok::KwStr => {
                self.advance();
                let name = self.ident()?;
                self.expect(Tok::Assign, "`=` (string declarations need an initializer)")?;
                let text = match self.advance() {
                    Tok::Str(s) => s,
                    _ => {
                        self.pos -= 1;
                        return Err(self.error("expected string literal"));
                    }
                };
                self.expect(Tok::Semi, "`;`")?;
                let ident = self.leaf(NodeKind::Ident, name);
                let lit = self.leaf(NodeKind::StrLit, text);
                Ok(self.builder.add(NodeKind::Decl, None, vec![ident, lit]))
            }
            Tok::KwIf => self.if_statement(),
            Tok::KwWhile => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                let body = self.block()?;
                Ok(self.builder.add(NodeKind::While, None, vec![cond, body]))
            }
            Tok::KwFor => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let init = self.simple_statement()?;
                self.expect(Tok::Semi, "`;`")?;
                let cond = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                let update = self.simple_statement()?;
                self.expect(Tok::RParen, "`)`")?;
                let body = self.block()?;
                Ok(self
                    .builder
                    .add(NodeKind::For, None, vec![init, cond, update, body]))
            }
            Tok::KwReturn => {
                self.advance();
                let value = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                Ok(self.builder.add(NodeKind::Return, None, vec![value]))
            }
            Tok::KwPrint => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let value = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                self.expect(Tok::Semi, "`;`")?;
                Ok(self.builder.add(NodeKind::Print, None, vec![value]))
            }
            Tok::KwBreak | Tok::KwContinue => {
                let kind = if self.advance() == Tok::KwBreak {
                    NodeKind::Break
                } else {
                    NodeKind::Continue
                };
                self.expect(Tok::Semi, "`;`")?;
                Ok(self.builder.add(kind, None, Vec::new()))
            }
            Tok::LBrace => self.block(),
            Tok::Ident(_) if *self.peek_at(1) == Tok::LParen => {
                let call = self.primary()?;
                self.expect(Tok::Semi, "`;`")?;
                Ok(self.builder.add(NodeKind::ExprStmt, None, vec![call]))
            }
            Tok::Ident(_) => {
                let stmt = self.assignment()?;
                self.expect(Tok::Semi, "`;`")?;
                Ok(stmt)
            }
            Tok::KwElse => Err(self.error("`else` without matching `if`")),
            _ => Err(self.error("expected statement")),
        }
    }

    /// `for` headers accept an int declaration or an assignment.
    fn simple_statement(&mut self) -> Result<usize> {
        match self.peek() {
            Tok::KwInt => self.int_decl(),
            Tok::Ident(_) => self.assignment(),
            _ => Err(self.error("expected assignment or declaration")),
        }
    }

    fn int_decl(&mut self) -> Result<usize> {
        self.expect(Tok::KwInt, "`int`")?;
        let name = self.ident()?;
        if *self.peek() == Tok::LBracket {
            self.advance();
            let size = self.array_size()?;
            self.expect(Tok::RBracket, "`]`")?;
            let ident = self.leaf(NodeKind::Ident, name);
            let lit = self.leaf(NodeKind::IntLit, size.to_string());
            return Ok(self.builder.add(NodeKind::ArrayDecl, None, vec![ident, lit]));
        }
        let ident = self.leaf(NodeKind::Ident, name);
        let mut children = vec![ident];
        if *self.peek() == Tok::Assign {
            self.advance();
            children.push(self.expr()?);
        }
        Ok(self.builder.add(NodeKind::Decl, None, children))
    }

    fn assignment(&mut self) -> Result<usize> {
        let name = self.ident()?;
        let ident = self.leaf(NodeKind::Ident, name);
        let target = if *self.peek() == Tok::LBracket {
            self.advance();
            let index = self.expr()?;
            self.expect(Tok::RBracket, "`]`")?;
            self.builder.add(NodeKind::Index, None, vec![ident, index])
        } else {
            ident
        };
        self.expect(Tok::Assign, "`=`")?;
        let value = self.expr()?;
        Ok(self.builder.add(NodeKind::Assign, None, vec![target, value]))
    }

    fn if_statement(&mut self) -> Result<usize> {
        self.expect(Tok::KwIf, "`if`")?;
        self.expect(Tok::LParen, "`(`")?;
        let cond = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        let then = self.block()?;
        let mut children = vec![cond, then];
        if *self.peek() == Tok::KwElse {
            self.advance();
            let other = if *self.peek() == Tok::KwIf {
                self.if_statement()?
            } else {
                self.block()?
            };
            children.push(other);
        }
        Ok(self.builder.add(NodeKind::If, None, children))
    }

    fn expr(&mut self) -> Result<usize> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<usize> {
        const LEVELS: [(&[&str], NodeKind); 6] = [
            (&["||"], NodeKind::LogicOp),
            (&["&&"], NodeKind::LogicOp),
            (&["==", "!="], NodeKind::CmpOp),
            (&["<", "<=", ">", ">="], NodeKind::CmpOp),
            (&["+", "-"], NodeKind::BinOp),
            (&["*", "/", "%"], NodeKind::BinOp),
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let (ops, kind) = LEVELS[level];
        let mut lhs = self.binary(level + 1)?;
        while let Tok::Op(op) = *self.peek() {
            if !ops.contains(&op) {
                break;
            }
            self.advance();
            let rhs = self.binary(level + 1)?;
            lhs = self.builder.add(kind, Some(op.to_string()), vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<usize> {
        if let Tok::Op(op @ ("-" | "!")) = *self.peek() {
            self.advance();
            let operand = self.unary()?;
            return Ok(self
                .builder
                .add(NodeKind::UnaryOp, Some(op.to_string()), vec![operand]));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<usize> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.advance();
                Ok(self.leaf(NodeKind::IntLit, v.to_string()))
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.advance();
                match self.peek() {
                    Tok::LParen => {
                        self.advance();
                        let mut args = Vec::new();
                        if *self.peek() != Tok::RParen {
                            loop {
                                args.push(self.expr()?);
                                if *self.peek() == Tok::Comma {
                                    self.advance();
                                } else {
                                    break;
                                }
                            }
                        }
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(self.builder.add(NodeKind::Call, Some(name), args))
                    }
                    Tok::LBracket => {
                        self.advance();
                        let ident = self.leaf(NodeKind::Ident, name);
                        let index = self.expr()?;
                        self.expect(Tok::RBracket, "`]`")?;
                        Ok(self.builder.add(NodeKind::Index, None, vec![ident, index]))
                    }
                    _ => Ok(self.leaf(NodeKind::Ident, name)),
                }
            }
            Tok::Str(_) => Err(Error::Unsupported(format!(
                "string literal used as an expression at {}:{}",
                self.current().line,
                self.current().column
            ))),
            _ => Err(self.error("expected expression")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarKind {
    Int,
    Array,
    Str,
}

/// Scoping and kind rules that the grammar alone does not enforce.
fn check_semantics(tree: &AstTree) -> Result<()> {
    let functions: Vec<usize> = match tree.kind(tree.root)? {
        NodeKind::Program => tree.children(tree.root).to_vec(),
        _ => vec![tree.root],
    };
    let mut signatures: HashMap<&str, Vec<VarKind>> = HashMap::new();
    for &f in &functions {
        let name = tree.token(f).unwrap_or_default();
        let params = tree.children(tree.children(f)[0]);
        let kinds = params
            .iter()
            .map(|&p| match tree.kind(p) {
                Ok(NodeKind::ArrayParam) => VarKind::Array,
                _ => VarKind::Int,
            })
            .collect();
        if signatures.insert(name, kinds).is_some() {
            return Err(Error::Unsupported(format!("function `{name}` defined twice")));
        }
    }

    for &f in &functions {
        let mut scope: HashMap<String, VarKind> = HashMap::new();
        let plist = tree.children(f)[0];
        for &p in tree.children(plist) {
            let ident = tree.children(p)[0];
            let kind = if tree.kind(p)? == NodeKind::ArrayParam {
                VarKind::Array
            } else {
                VarKind::Int
            };
            declare(tree, ident, kind, &mut scope)?;
        }
        let body = tree.children(f)[1];
        check_node(tree, body, &mut scope, &signatures, Context::Stmt)?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Context {
    Stmt,
    IntExpr,
    ArrayArg,
}

fn declare(
    tree: &AstTree,
    ident: usize,
    kind: VarKind,
    scope: &mut HashMap<String, VarKind>,
) -> Result<()> {
    let name = tree.token(ident).unwrap_or_default().to_string();
    if scope.insert(name.clone(), kind).is_some() {
        return Err(Error::Unsupported(format!(
            "variable `{name}` declared twice in one function"
        )));
    }
    Ok(())
}

fn lookup(tree: &AstTree, ident: usize, scope: &HashMap<String, VarKind>) -> Result<VarKind> {
    let name = tree.token(ident).unwrap_or_default();
    scope
        .get(name)
        .copied()
        .ok_or_else(|| Error::Unsupported(format!("use of undeclared variable `{name}`")))
}

fn check_node(
    tree: &AstTree,
    id: usize,
    scope: &mut HashMap<String, VarKind>,
    sigs: &HashMap<&str, Vec<VarKind>>,
    ctx: Context,
) -> Result<()> {
    let kids = tree.children(id);
    let int_expr = |i: usize, scope: &mut HashMap<String, VarKind>| {
        check_node(tree, kids[i], scope, sigs, Context::IntExpr)
    };
    match tree.kind(id)? {
        NodeKind::Decl => {
            if let Some(&init) = kids.get(1) {
                if tree.kind(init)? == NodeKind::StrLit {
                    return declare(tree, kids[0], VarKind::Str, scope);
                }
                int_expr(1, scope)?;
            }
            declare(tree, kids[0], VarKind::Int, scope)
        }
        NodeKind::ArrayDecl => declare(tree, kids[0], VarKind::Array, scope),
        NodeKind::Assign => {
            match tree.kind(kids[0])? {
                NodeKind::Ident => {
                    if lookup(tree, kids[0], scope)? != VarKind::Int {
                        return Err(Error::Unsupported(format!(
                            "assignment to non-int variable `{}`",
                            tree.token(kids[0]).unwrap_or_default()
                        )));
                    }
                }
                _ => int_expr(0, scope)?,
            }
            int_expr(1, scope)
        }
        NodeKind::Ident => {
            let kind = lookup(tree, id, scope)?;
            let wanted = if ctx == Context::ArrayArg {
                VarKind::Array
            } else {
                VarKind::Int
            };
            if kind != wanted {
                return Err(Error::Unsupported(format!(
                    "variable `{}` used as {wanted:?} but declared {kind:?}",
                    tree.token(id).unwrap_or_default()
                )));
            }
            Ok(())
        }
        NodeKind::Index => {
            if lookup(tree, kids[0], scope)? != VarKind::Array {
                return Err(Error::Unsupported(format!(
                    "indexing non-array `{}`",
                    tree.token(kids[0]).unwrap_or_default()
                )));
            }
            int_expr(1, scope)
        }
        NodeKind::Call => {
            let name = tree.token(id).unwrap_or_default();
            let params = sigs
                .get(name)
                .ok_or_else(|| Error::Unsupported(format!("call to unknown function `{name}`")))?;
            if params.len() != kids.len() {
                return Err(Error::Unsupported(format!(
                    "`{name}` expects {} arguments, got {}",
                    params.len(),
                    kids.len()
                )));
            }
            for (&arg, &kind) in kids.iter().zip(params) {
                if kind == VarKind::Array {
                    if tree.kind(arg)? != NodeKind::Ident {
                        return Err(Error::Unsupported(format!(
                            "array argument to `{name}` must be a variable"
                        )));
                    }
                    check_node(tree, arg, scope, sigs, Context::ArrayArg)?;
                } else {
                    check_node(tree, arg, scope, sigs, Context::IntExpr)?;
                }
            }
            Ok(())
        }
        NodeKind::IntLit | NodeKind::StrLit | NodeKind::Break | NodeKind::Continue => Ok(()),
        _ => {
            for &k in kids {
                let child_ctx = if tree.kind(k)?.is_statement() {
                    Context::Stmt
                } else {
                    Context::IntExpr
                };
                check_node(tree, k, scope, sigs, child_ctx)?;
            }
            Ok(())
        }
    }
}
