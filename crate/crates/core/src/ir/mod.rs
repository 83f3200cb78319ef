//! Loop-free, SSA-style IR consumed by every later stage.
//!
//! A [`Function`] is a straight chain of basic blocks. Values are named by
//! the statement that defines them; memory is a set of fixed-length arrays
//! addressed by constant element indices, so adjacency and aliasing are
//! decided exactly.

mod deps;
mod parse;
mod print;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

pub use deps::{DepEdge, DepGraph, DepKind};
pub use parse::{parse_function, ParseError, ParseErrorKind};

/// Index of a statement inside its [`Function`], in program order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StmtId(pub u32);

impl StmtId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl BlockId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArrayId(pub u32);

impl ArrayId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Element type of a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Type {
    I32,
    I64,
    F32,
    F64,
}

impl Type {
    pub const ALL: [Type; 4] = [Type::I32, Type::I64, Type::F32, Type::F64];

    pub fn is_float(self) -> bool {
        matches!(self, Type::F32 | Type::F64)
    }

    pub fn name(self) -> &'static str {
        match self {
            Type::I32 => "i32",
            Type::I64 => "i64",
            Type::F32 => "f32",
            Type::F64 => "f64",
        }
    }

    pub fn from_name(s: &str) -> Option<Type> {
        Type::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Load,
    Store,
    Add,
    Sub,
    Mul,
    Div,
    FAdd,
    FSub,
    FMul,
    FDiv,
    Const,
}

impl Opcode {
    pub const ALL: [Opcode; 11] = [
        Opcode::Load,
        Opcode::Store,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::FAdd,
        Opcode::FSub,
        Opcode::FMul,
        Opcode::FDiv,
        Opcode::Const,
    ];

    pub const BINARY: [Opcode; 8] = [
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::FAdd,
        Opcode::FSub,
        Opcode::FMul,
        Opcode::FDiv,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Div => "div",
            Opcode::FAdd => "fadd",
            Opcode::FSub => "fsub",
            Opcode::FMul => "fmul",
            Opcode::FDiv => "fdiv",
            Opcode::Const => "const",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Number of value operands.
    pub fn arity(self) -> usize {
        match self {
            Opcode::Load | Opcode::Const => 0,
            Opcode::Store => 1,
            _ => 2,
        }
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store)
    }

    pub fn is_binary(self) -> bool {
        self.arity() == 2
    }

    /// Whether the opcode is legal on elements of `ty`.
    pub fn accepts(self, ty: Type) -> bool {
        match self {
            Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div => !ty.is_float(),
            Opcode::FAdd | Opcode::FSub | Opcode::FMul | Opcode::FDiv => ty.is_float(),
            Opcode::Load | Opcode::Store | Opcode::Const => true,
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// A concrete element value. Equality is bitwise so that floating-point
/// results compare exactly (NaN payloads included).
#[derive(Clone, Copy, Debug)]
pub enum Scalar {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
}

impl Scalar {
    pub fn ty(self) -> Type {
        match self {
            Scalar::I32(_) => Type::I32,
            Scalar::I64(_) => Type::I64,
            Scalar::F32(_) => Type::F32,
            Scalar::F64(_) => Type::F64,
        }
    }

    fn bits(self) -> u64 {
        match self {
            Scalar::I32(v) => v as u32 as u64,
            Scalar::I64(v) => v as u64,
            Scalar::F32(v) => v.to_bits() as u64,
            Scalar::F64(v) => v.to_bits(),
        }
    }

    /// Parses a literal of the given type.
    pub fn parse(text: &str, ty: Type) -> Option<Scalar> {
        match ty {
            Type::I32 => text.parse().ok().map(Scalar::I32),
            Type::I64 => text.parse().ok().map(Scalar::I64),
            Type::F32 => text.parse().ok().map(Scalar::F32),
            Type::F64 => text.parse().ok().map(Scalar::F64),
        }
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        self.ty() == other.ty() && self.bits() == other.bits()
    }
}

impl Eq for Scalar {}

impl std::hash::Hash for Scalar {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.ty().hash(state);
        self.bits().hash(state);
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` on floats is the shortest representation that round-trips.
        match self {
            Scalar::I32(v) => write!(f, "{v}"),
            Scalar::I64(v) => write!(f, "{v}"),
            Scalar::F32(v) => write!(f, "{v:?}"),
            Scalar::F64(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub elem: Type,
    pub len: u32,
}

/// A constant-index access into a declared array.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MemRef {
    pub array: ArrayId,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub id: StmtId,
    /// Name of the defined value; `None` for stores.
    pub name: Option<String>,
    pub block: BlockId,
    pub opcode: Opcode,
    pub ty: Type,
    /// Value operands, in order. Stores carry the stored value here.
    pub operands: Vec<StmtId>,
    pub mem: Option<MemRef>,
    /// Literal of a `const` statement.
    pub literal: Option<Scalar>,
}

impl Statement {
    pub fn defines_value(&self) -> bool {
        self.opcode != Opcode::Store
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub name: String,
    pub stmts: Vec<StmtId>,
    /// Explicit `br` terminator. Control falls through to the following
    /// block when absent; the last block returns.
    pub branch: Option<BlockId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: String,
    pub arrays: Vec<ArrayDecl>,
    /// Values observable after the function returns.
    pub exports: Vec<StmtId>,
    pub blocks: Vec<BasicBlock>,
    stmts: Vec<Statement>,
    /// Ordinal among stores, used for display labels.
    store_ordinal: HashMap<StmtId, usize>,
}

impl Function {
    pub(crate) fn from_parts(
        name: String,
        arrays: Vec<ArrayDecl>,
        exports: Vec<StmtId>,
        blocks: Vec<BasicBlock>,
        stmts: Vec<Statement>,
    ) -> Function {
        let store_ordinal = stmts
            .iter()
            .filter(|s| s.opcode == Opcode::Store)
            .enumerate()
            .map(|(k, s)| (s.id, k))
            .collect();
        Function {
            name,
            arrays,
            exports,
            blocks,
            stmts,
            store_ordinal,
        }
    }

    #[inline]
    pub fn stmt(&self, id: StmtId) -> &Statement {
        &self.stmts[id.index()]
    }

    pub fn stmts(&self) -> &[Statement] {
        &self.stmts
    }

    pub fn len(&self) -> usize {
        self.stmts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stmts.is_empty()
    }

    pub fn array(&self, id: ArrayId) -> &ArrayDecl {
        &self.arrays[id.index()]
    }

    pub fn array_by_name(&self, name: &str) -> Option<ArrayId> {
        self.arrays
            .iter()
            .position(|a| a.name == name)
            .map(|i| ArrayId(i as u32))
    }

    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id.index()]
    }

    pub fn value_by_name(&self, name: &str) -> Option<StmtId> {
        self.stmts
            .iter()
            .find(|s| s.name.as_deref() == Some(name))
            .map(|s| s.id)
    }

    /// Display label: `%name` for values, `st<k>` for the k-th store.
    pub fn label(&self, id: StmtId) -> String {
        let s = self.stmt(id);
        match &s.name {
            Some(n) => format!("%{n}"),
            None => format!("st{}", self.store_ordinal[&id]),
        }
    }

    pub fn is_exported(&self, id: StmtId) -> bool {
        self.exports.contains(&id)
    }

    /// Distinct user statements of every statement, in program order.
    pub fn users(&self) -> Vec<Vec<StmtId>> {
        let mut users = vec![Vec::new(); self.stmts.len()];
        for s in &self.stmts {
            for &op in &s.operands {
                let list: &mut Vec<StmtId> = &mut users[op.index()];
                if list.last() != Some(&s.id) {
                    list.push(s.id);
                }
            }
        }
        users
    }
}

/// Same opcode, same operand types, same result type.
pub fn isomorphic(f: &Function, a: StmtId, b: StmtId) -> bool {
    let (sa, sb) = (f.stmt(a), f.stmt(b));
    sa.opcode == sb.opcode
        && sa.ty == sb.ty
        && sa.operands.len() == sb.operands.len()
        && sa
            .operands
            .iter()
            .zip(&sb.operands)
            .all(|(&x, &y)| f.stmt(x).ty == f.stmt(y).ty)
}

/// For two loads or two stores touching neighbouring elements of the same
/// array, reports whether `a` holds the lower address (`Less`) or `b` does
/// (`Greater`).
pub fn adjacent_memory(f: &Function, a: StmtId, b: StmtId) -> Option<Ordering> {
    let (sa, sb) = (f.stmt(a), f.stmt(b));
    if sa.opcode != sb.opcode || !sa.opcode.is_memory() || sa.ty != sb.ty {
        return None;
    }
    let (ma, mb) = (sa.mem?, sb.mem?);
    if ma.array != mb.array {
        return None;
    }
    if ma.index + 1 == mb.index {
        Some(Ordering::Less)
    } else if mb.index + 1 == ma.index {
        Some(Ordering::Greater)
    } else {
        None
    }
}
