//! Tree-walking interpreter for mini-C, used as the semantic oracle that
//! checks transformations preserve behaviour.
//!
//! Integers are 64-bit with wrapping arithmetic. Arrays are passed by
//! reference. Loop-condition evaluations and calls each cost one step;
//! exhausting the budget, dividing by zero, indexing out of bounds and
//! recursing too deeply end the run with a deterministic [`Trap`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AstTree, NodeKind, ProgramRecord};
use crate::error::{Error, Result};

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;
const MAX_CALL_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trap {
    StepBudget,
    DivisionByZero,
    OutOfBounds,
    StackOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Return(i64),
    Trap(Trap),
}

/// Everything observable about one run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trace {
    pub output: Vec<i64>,
    pub exit: Exit,
}

impl Trace {
    pub fn is_trap(&self) -> bool {
        matches!(self.exit, Exit::Trap(_))
    }
}

pub fn interpret(program: &ProgramRecord, input: &[i64]) -> Result<Trace> {
    interpret_tree(&program.ast, input, DEFAULT_STEP_BUDGET).map_err(|e| e.in_program(&program.id))
}

/// Runs the entry function (`main` if present, else the first function)
/// with `input` flattened over its parameters: one value per scalar,
/// `n` values per `int a[n]`.
pub fn interpret_tree(tree: &AstTree, input: &[i64], step_budget: u64) -> Result<Trace> {
    let functions: Vec<usize> = match tree.kind(tree.root)? {
        NodeKind::Program => tree.children(tree.root).to_vec(),
        NodeKind::FunctionDef => vec![tree.root],
        other => {
            return Err(Error::Unsupported(format!(
                "cannot execute a tree rooted at {other}"
            )))
        }
    };
    let mut by_name = HashMap::new();
    for &f in &functions {
        if tree.kind(f)? != NodeKind::FunctionDef {
            return Err(Error::Unsupported("Program children must be functions".into()));
        }
        by_name.insert(tree.token(f).unwrap_or_default().to_string(), f);
    }
    let entry = functions
        .iter()
        .copied()
        .find(|&f| tree.token(f) == Some("main"))
        .unwrap_or(functions[0]);

    let mut machine = Machine {
        tree,
        functions: by_name,
        heap: Vec::new(),
        output: Vec::new(),
        steps: 0,
        budget: step_budget,
        depth: 0,
    };

    let arity = input_arity(tree, entry)?;
    if arity != input.len() {
        return Err(Error::InvalidArgument(format!(
            "entry function takes {arity} input values, got {}",
            input.len()
        )));
    }
    let mut frame = HashMap::new();
    let mut cursor = 0;
    for &p in tree.children(tree.children(entry)[0]) {
        let name = param_name(tree, p)?;
        match tree.kind(p)? {
            NodeKind::ArrayParam => {
                let size = literal(tree, tree.children(p)[1])? as usize;
                machine.heap.push(input[cursor..cursor + size].to_vec());
                frame.insert(name, Value::Array(machine.heap.len() - 1));
                cursor += size;
            }
            _ => {
                frame.insert(name, Value::Int(input[cursor]));
                cursor += 1;
            }
        }
    }

    let exit = match machine.run_function(entry, frame) {
        Ok(v) => Exit::Return(v),
        Err(Halt::Trap(t)) => Exit::Trap(t),
        Err(Halt::Fault(e)) => return Err(e),
    };
    Ok(Trace {
        output: machine.output,
        exit,
    })
}

/// Number of input integers the entry function consumes.
pub(crate) fn input_arity(tree: &AstTree, function: usize) -> Result<usize> {
    let mut n = 0;
    for &p in tree.children(tree.children(function)[0]) {
        n += match tree.kind(p)? {
            NodeKind::ArrayParam => literal(tree, tree.children(p)[1])? as usize,
            _ => 1,
        };
    }
    Ok(n)
}

fn param_name(tree: &AstTree, p: usize) -> Result<String> {
    tree.children(p)
        .first()
        .and_then(|&i| tree.token(i))
        .map(str::to_string)
        .ok_or_else(|| Error::Unsupported("parameter without a name".into()))
}

fn literal(tree: &AstTree, id: usize) -> Result<i64> {
    tree.token(id)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Unsupported(format!("node {id} is not an integer literal")))
}

#[derive(Debug, Clone)]
enum Value {
    Int(i64),
    Array(usize),
    Str,
}

enum Halt {
    Trap(Trap),
    Fault(Error),
}

impl From<Error> for Halt {
    fn from(e: Error) -> Self {
        Halt::Fault(e)
    }
}

enum Flow {
    Next,
    Break,
    Continue,
    Return(i64),
}

type Frame = HashMap<String, Value>;

struct Machine<'a> {
    tree: &'a AstTree,
    functions: HashMap<String, usize>,
    heap: Vec<Vec<i64>>,
    output: Vec<i64>,
    steps: u64,
    budget: u64,
    depth: usize,
}

fn fault(msg: impl Into<String>) -> Halt {
    Halt::Fault(Error::Unsupported(msg.into()))
}

impl Machine<'_> {
    fn tick(&mut self) -> Result<(), Halt> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(Halt::Trap(Trap::StepBudget))
        } else {
            Ok(())
        }
    }

    fn run_function(&mut self, f: usize, mut frame: Frame) -> Result<i64, Halt> {
        self.depth += 1;
        if self.depth > MAX_CALL_DEPTH {
            return Err(Halt::Trap(Trap::StackOverflow));
        }
        let body = self.tree.children(f)[1];
        let result = match self.exec(body, &mut frame)? {
            Flow::Return(v) => v,
            Flow::Next => 0,
            Flow::Break | Flow::Continue => return Err(fault("break/continue outside a loop")),
        };
        self.depth -= 1;
        Ok(result)
    }

    fn name(&self, id: usize) -> Result<&str, Halt> {
        self.tree
            .token(id)
            .ok_or_else(|| fault(format!("node {id} is missing its identifier token")))
    }

    fn exec(&mut self, id: usize, frame: &mut Frame) -> Result<Flow, Halt> {
        let tree = self.tree;
        let k = tree.children(id);
        match tree.kind(id)? {
            NodeKind::Block => {
                for &s in k {
                    match self.exec(s, frame)? {
                        Flow::Next => {}
                        other => return Ok(other),
                    }
                }
                Ok(Flow::Next)
            }
            NodeKind::Decl => {
                let name = self.name(k[0])?.to_string();
                let value = match k.get(1) {
                    Some(&init) if tree.kind(init)? == NodeKind::StrLit => Value::Str,
                    Some(&init) => Value::Int(self.eval(init, frame)?),
                    None => Value::Int(0),
                };
                frame.insert(name, value);
                Ok(Flow::Next)
            }
            NodeKind::ArrayDecl => {
                let name = self.name(k[0])?.to_string();
                let size = literal(tree, k[1])?;
                self.heap.push(vec![0; size as usize]);
                frame.insert(name, Value::Array(self.heap.len() - 1));
                Ok(Flow::Next)
            }
            NodeKind::Assign => {
                let value = self.eval(k[1], frame)?;
                match tree.kind(k[0])? {
                    NodeKind::Ident => {
                        let name = self.name(k[0])?;
                        match frame.get_mut(name) {
                            Some(slot @ Value::Int(_)) => *slot = Value::Int(value),
                            _ => return Err(fault(format!("assignment to non-int `{name}`"))),
                        }
                    }
                    NodeKind::Index => {
                        let (arr, idx) = self.element(k[0], frame)?;
                        self.heap[arr][idx] = value;
                    }
                    other => return Err(fault(format!("cannot assign to {other}"))),
                }
                Ok(Flow::Next)
            }
            NodeKind::If => {
                if self.eval(k[0], frame)? != 0 {
                    self.exec(k[1], frame)
                } else if let Some(&other) = k.get(2) {
                    self.exec(other, frame)
                } else {
                    Ok(Flow::Next)
                }
            }
            NodeKind::While => {
                loop {
                    self.tick()?;
                    if self.eval(k[0], frame)? == 0 {
                        break;
                    }
                    match self.exec(k[1], frame)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Next | Flow::Continue => {}
                    }
                }
                Ok(Flow::Next)
            }
            NodeKind::For => {
                self.exec(k[0], frame)?;
                loop {
                    self.tick()?;
                    if self.eval(k[1], frame)? == 0 {
                        break;
                    }
                    match self.exec(k[3], frame)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Next | Flow::Continue => {}
                    }
                    self.exec(k[2], frame)?;
                }
                Ok(Flow::Next)
            }
            NodeKind::Return => Ok(Flow::Return(self.eval(k[0], frame)?)),
            NodeKind::Print => {
                let v = self.eval(k[0], frame)?;
                self.output.push(v);
                Ok(Flow::Next)
            }
            NodeKind::ExprStmt => {
                self.eval(k[0], frame)?;
                Ok(Flow::Next)
            }
            NodeKind::Break => Ok(Flow::Break),
            NodeKind::Continue => Ok(Flow::Continue),
            other => Err(fault(format!("{other} is not a statement"))),
        }
    }

    /// Resolves `a[i]` to (heap slot, checked index).
    fn element(&mut self, id: usize, frame: &mut Frame) -> Result<(usize, usize), Halt> {
        let k = self.tree.children(id);
        let name = self.name(k[0])?;
        let arr = match frame.get(name) {
            Some(Value::Array(a)) => *a,
            _ => return Err(fault(format!("`{name}` is not an array"))),
        };
        let idx = self.eval(k[1], frame)?;
        if idx < 0 || idx as usize >= self.heap[arr].len() {
            return Err(Halt::Trap(Trap::OutOfBounds));
        }
        Ok((arr, idx as usize))
    }

    fn eval(&mut self, id: usize, frame: &mut Frame) -> Result<i64, Halt> {
        let tree = self.tree;
        let k = tree.children(id);
        match tree.kind(id)? {
            NodeKind::IntLit => Ok(literal(tree, id)?),
            NodeKind::Ident => {
                let name = self.name(id)?;
                match frame.get(name) {
                    Some(Value::Int(v)) => Ok(*v),
                    Some(Value::Array(_)) | Some(Value::Str) => {
                        Err(fault(format!("`{name}` is not an int")))
                    }
                    None => Err(fault(format!("undeclared variable `{name}`"))),
                }
            }
            NodeKind::Index => {
                let (arr, idx) = self.element(id, frame)?;
                Ok(self.heap[arr][idx])
            }
            NodeKind::UnaryOp => {
                let v = self.eval(k[0], frame)?;
                match tree.token(id) {
                    Some("-") => Ok(v.wrapping_neg()),
                    Some("!") => Ok((v == 0) as i64),
                    other => Err(fault(format!("unknown unary operator {other:?}"))),
                }
            }
            NodeKind::LogicOp => {
                let lhs = self.eval(k[0], frame)? != 0;
                let result = match tree.token(id) {
                    Some("&&") => lhs && self.eval(k[1], frame)? != 0,
                    Some("||") => lhs || self.eval(k[1], frame)? != 0,
                    other => return Err(fault(format!("unknown logical operator {other:?}"))),
                };
                Ok(result as i64)
            }
            NodeKind::BinOp | NodeKind::CmpOp => {
                let a = self.eval(k[0], frame)?;
                let b = self.eval(k[1], frame)?;
                let op = tree.token(id).unwrap_or_default();
                Ok(match op {
                    "+" => a.wrapping_add(b),
                    "-" => a.wrapping_sub(b),
                    "*" => a.wrapping_mul(b),
                    "/" | "%" if b == 0 => return Err(Halt::Trap(Trap::DivisionByZero)),
                    "/" => a.wrapping_div(b),
                    "%" => a.wrapping_rem(b),
                    "<" => (a < b) as i64,
                    "<=" => (a <= b) as i64,
                    ">" => (a > b) as i64,
                    ">=" => (a >= b) as i64,
                    "==" => (a == b) as i64,
                    "!=" => (a != b) as i64,
                    other => return Err(fault(format!("unknown operator `{other}`"))),
                })
            }
            NodeKind::Call => {
                self.tick()?;
                let name = self.name(id)?;
                let f = *self
                    .functions
                    .get(name)
                    .ok_or_else(|| fault(format!("unknown function `{name}`")))?;
                let params = tree.children(tree.children(f)[0]);
                if params.len() != k.len() {
                    return Err(fault(format!("arity mismatch calling `{name}`")));
                }
                let mut callee = Frame::new();
                for (&p, &arg) in params.iter().zip(k) {
                    let pname = param_name(tree, p)?;
                    let value = if tree.kind(p)? == NodeKind::ArrayParam {
                        let aname = self.name(arg)?;
                        match frame.get(aname) {
                            Some(Value::Array(a)) => Value::Array(*a),
                            _ => return Err(fault(format!("`{aname}` is not an array"))),
                        }
                    } else {
                        Value::Int(self.eval(arg, frame)?)
                    };
                    callee.insert(pname, value);
                }
                self.run_function(f, callee)
            }
            other => Err(fault(format!("{other} is not an expression"))),
        }
    }
}
