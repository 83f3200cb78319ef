//! Cost oracles queried by the packing formulation, the lane-order DP and
//! the baselines.
//!
//! Two implementations ship: [`UnitCostModel`], where every instruction
//! costs 1, and [`TableCostModel`], which answers from a line-oriented
//! table and reports missing entries at query time.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::ir::{Opcode, Type};

/// Flavours of cross-vector shuffle with distinct costs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShuffleKind {
    InsertSubvector,
    Broadcast,
    Generic,
}

impl ShuffleKind {
    pub const ALL: [ShuffleKind; 3] = [
        ShuffleKind::InsertSubvector,
        ShuffleKind::Broadcast,
        ShuffleKind::Generic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShuffleKind::InsertSubvector => "insert-subvector",
            ShuffleKind::Broadcast => "broadcast",
            ShuffleKind::Generic => "generic",
        }
    }

    pub fn from_name(s: &str) -> Option<ShuffleKind> {
        ShuffleKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for ShuffleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("cost table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cost table has no entries")]
    Empty,
    #[error("cost table has no entry for `{0}`")]
    Missing(String),
    #[error("cannot read cost table: {0}")]
    Io(String),
}

pub type CostResult = Result<i64, CostError>;

pub trait CostModel {
    fn scalar_cost(&self, op: Opcode, ty: Type) -> CostResult;
    fn vector_cost(&self, op: Opcode, ty: Type, lanes: usize) -> CostResult;
    /// Building a `lanes`-wide vector from scalars.
    fn pack_cost(&self, ty: Type, lanes: usize) -> CostResult;
    /// Extracting lane `lane` of a `lanes`-wide vector.
    fn unpack_cost(&self, ty: Type, lanes: usize, lane: usize) -> CostResult;
    /// Shuffle producing or consuming a `lanes`-wide vector.
    fn shuffle_cost(&self, kind: ShuffleKind, lanes: usize) -> CostResult;
    /// Raw cost of one lane permutation on a `lanes`-wide vector.
    fn permute_cost(&self, lanes: usize) -> CostResult;

    /// Cost of turning lane order `from` into lane order `to`.
    fn perm_cost(&self, from: &[usize], to: &[usize]) -> CostResult {
        debug_assert_eq!(from.len(), to.len());
        if from == to {
            Ok(0)
        } else {
            self.permute_cost(from.len())
        }
    }
}

/// `vec_cost(P) - sum of scalar costs` for a `lanes`-wide pack of `op`.
pub fn vec_savings(cm: &dyn CostModel, op: Opcode, ty: Type, lanes: usize) -> CostResult {
    Ok(cm.vector_cost(op, ty, lanes)? - lanes as i64 * cm.scalar_cost(op, ty)?)
}

/// Every instruction costs 1; permuting to the same order costs 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitCostModel;

impl CostModel for UnitCostModel {
    fn scalar_cost(&self, _: Opcode, _: Type) -> CostResult {
        Ok(1)
    }
    fn vector_cost(&self, _: Opcode, _: Type, _: usize) -> CostResult {
        Ok(1)
    }
    fn pack_cost(&self, _: Type, _: usize) -> CostResult {
        Ok(1)
    }
    fn unpack_cost(&self, _: Type, _: usize, _: usize) -> CostResult {
        Ok(1)
    }
    fn shuffle_cost(&self, _: ShuffleKind, _: usize) -> CostResult {
        Ok(1)
    }
    fn permute_cost(&self, _: usize) -> CostResult {
        Ok(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Key {
    Scalar(Opcode, Type),
    Vector(Opcode, Type, usize),
    Pack(Type, usize),
    Unpack(Type, usize),
    Shuffle(ShuffleKind, usize),
    Perm(usize),
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Scalar(op, ty) => write!(f, "scalar {op} {ty}"),
            Key::Vector(op, ty, n) => write!(f, "vector {op} {ty} {n}"),
            Key::Pack(ty, n) => write!(f, "pack {ty} {n}"),
            Key::Unpack(ty, n) => write!(f, "unpack {ty} {n}"),
            Key::Shuffle(k, n) => write!(f, "shuffle {k} {n}"),
            Key::Perm(n) => write!(f, "perm {n}"),
        }
    }
}

/// Cost model read from a table file.
///
/// A `surcharge <cost>` line adds a fixed penalty to every shuffle and
/// permutation.
#[derive(Clone, Debug)]
pub struct TableCostModel {
    entries: HashMap<Key, i64>,
    surcharge: i64,
}

pub const UNIT_TABLE: &str = include_str!("../costs/unit.cost");
pub const HASWELL_LIKE_TABLE: &str = include_str!("../costs/haswell-like.cost");

impl TableCostModel {
    pub fn parse(text: &str) -> Result<TableCostModel, CostError> {
        let mut entries = HashMap::new();
        let mut surcharge = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            let bad = |msg: String| CostError::Parse { line, msg };
            let op = |s: &str| {
                Opcode::from_mnemonic(s).ok_or_else(|| bad(format!("unknown opcode `{s}`")))
            };
            let ty = |s: &str| Type::from_name(s).ok_or_else(|| bad(format!("unknown type `{s}`")));
            let lanes = |s: &str| -> Result<usize, CostError> {
                match s.parse::<usize>() {
                    Ok(n) if n >= 2 => Ok(n),
                    _ => Err(bad(format!("invalid lane count `{s}`"))),
                }
            };
            let expect = |n: usize| {
                if toks.len() == n {
                    Ok(())
                } else {
                    Err(bad(format!("`{}` takes {} fields", toks[0], n - 1)))
                }
            };
            let cost = |s: &str| -> Result<i64, CostError> {
                match s.parse::<i64>() {
                    Ok(c) if c >= 0 => Ok(c),
                    _ => Err(bad(format!("invalid cost `{s}`"))),
                }
            };
            let (key, c) = match toks[0] {
                "scalar" => {
                    expect(4)?;
                    (Key::Scalar(op(toks[1])?, ty(toks[2])?), cost(toks[3])?)
                }
                "vector" => {
                    expect(5)?;
                    (
                        Key::Vector(op(toks[1])?, ty(toks[2])?, lanes(toks[3])?),
                        cost(toks[4])?,
                    )
                }
                "pack" | "unpack" => {
                    expect(4)?;
                    let (t, n) = (ty(toks[1])?, lanes(toks[2])?);
                    let k = if toks[0] == "pack" {
                        Key::Pack(t, n)
                    } else {
                        Key::Unpack(t, n)
                    };
                    (k, cost(toks[3])?)
                }
                "shuffle" => {
                    expect(4)?;
                    let kind = ShuffleKind::from_name(toks[1])
                        .ok_or_else(|| bad(format!("unknown shuffle kind `{}`", toks[1])))?;
                    (Key::Shuffle(kind, lanes(toks[2])?), cost(toks[3])?)
                }
                "perm" => {
                    expect(3)?;
                    (Key::Perm(lanes(toks[1])?), cost(toks[2])?)
                }
                "surcharge" => {
                    expect(2)?;
                    surcharge = cost(toks[1])?;
                    continue;
                }
                other => return Err(bad(format!("unknown entry kind `{other}`"))),
            };
            if entries.insert(key.clone(), c).is_some() {
                return Err(bad(format!("duplicate entry `{key}`")));
            }
        }
        if entries.is_empty() {
            return Err(CostError::Empty);
        }
        Ok(TableCostModel { entries, surcharge })
    }

    pub fn load(path: &Path) -> Result<TableCostModel, CostError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CostError::Io(format!("{}: {e}", path.display())))?;
        TableCostModel::parse(&text)
    }

    pub fn unit() -> TableCostModel {
        TableCostModel::parse(UNIT_TABLE).expect("shipped unit table parses")
    }

    pub fn haswell_like() -> TableCostModel {
        TableCostModel::parse(HASWELL_LIKE_TABLE).expect("shipped haswell-like table parses")
    }

    pub fn surcharge(&self) -> i64 {
        self.surcharge
    }

    fn get(&self, key: Key) -> CostResult {
        self.entries
            .get(&key)
            .copied()
            .ok_or_else(|| CostError::Missing(key.to_string()))
    }
}

impl CostModel for TableCostModel {
    fn scalar_cost(&self, op: Opcode, ty: Type) -> CostResult {
        self.get(Key::Scalar(op, ty))
    }
    fn vector_cost(&self, op: Opcode, ty: Type, lanes: usize) -> CostResult {
        self.get(Key::Vector(op, ty, lanes))
    }
    fn pack_cost(&self, ty: Type, lanes: usize) -> CostResult {
        self.get(Key::Pack(ty, lanes))
    }
    fn unpack_cost(&self, ty: Type, lanes: usize, lane: usize) -> CostResult {
        debug_assert!(lane < lanes);
        self.get(Key::Unpack(ty, lanes))
    }
    fn shuffle_cost(&self, kind: ShuffleKind, lanes: usize) -> CostResult {
        Ok(self.get(Key::Shuffle(kind, lanes))? + self.surcharge)
    }
    fn permute_cost(&self, lanes: usize) -> CostResult {
        Ok(self.get(Key::Perm(lanes))? + self.surcharge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LANES: [usize; 4] = [2, 4, 8, 16];

    #[test]
    fn unit_savings() {
        let cm = UnitCostModel;
        assert_eq!(vec_savings(&cm, Opcode::FAdd, Type::F64, 2), Ok(-1));
        assert_eq!(vec_savings(&cm, Opcode::Load, Type::I32, 4), Ok(-3));
    }

    #[test]
    fn shipped_unit_table_matches_unit_model() {
        let t = TableCostModel::unit();
        let u = UnitCostModel;
        for op in Opcode::ALL {
            for ty in Type::ALL.into_iter().filter(|&ty| op.accepts(ty)) {
                if op == Opcode::Const {
                    continue;
                }
                assert_eq!(t.scalar_cost(op, ty), u.scalar_cost(op, ty));
                for n in LANES {
                    assert_eq!(t.vector_cost(op, ty, n), u.vector_cost(op, ty, n));
                }
            }
        }
        for ty in Type::ALL {
            for n in LANES {
                assert_eq!(t.pack_cost(ty, n), Ok(1));
                for lane in 0..n {
                    assert_eq!(t.unpack_cost(ty, n, lane), Ok(1));
                }
            }
        }
        for n in LANES {
            for k in ShuffleKind::ALL {
                assert_eq!(t.shuffle_cost(k, n), Ok(1));
            }
            let id: Vec<usize> = (0..n).collect();
            let mut rev = id.clone();
            rev.reverse();
            assert_eq!(t.perm_cost(&id, &id), Ok(0));
            assert_eq!(t.perm_cost(&id, &rev), Ok(1));
        }
    }

    #[test]
    fn haswell_like_division_is_expensive() {
        let t = TableCostModel::haswell_like();
        let div = t.scalar_cost(Opcode::FDiv, Type::F64).unwrap();
        let add = t.scalar_cost(Opcode::FAdd, Type::F64).unwrap();
        assert!(div > add);
        // Hand computation from the shipped table: 9 - 2 * 8.
        assert_eq!(vec_savings(&t, Opcode::FDiv, Type::F64, 2), Ok(-7));
    }

    #[test]
    fn table_errors() {
        assert!(matches!(TableCostModel::parse(""), Err(CostError::Empty)));
        assert!(matches!(
            TableCostModel::parse("# nothing\n\n"),
            Err(CostError::Empty)
        ));
        assert!(matches!(
            TableCostModel::parse("scalar fadd f64 1\nbogus 1\n"),
            Err(CostError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            TableCostModel::parse("scalar fadd f64 -1\n"),
            Err(CostError::Parse { line: 1, .. })
        ));
        let t = TableCostModel::parse("scalar fadd f64 3\nsurcharge 2\nperm 2 1\n").unwrap();
        assert_eq!(t.scalar_cost(Opcode::FAdd, Type::F64), Ok(3));
        assert!(matches!(
            t.scalar_cost(Opcode::FMul, Type::F64),
            Err(CostError::Missing(_))
        ));
        assert_eq!(t.perm_cost(&[0, 1], &[1, 0]), Ok(3));
        assert_eq!(t.perm_cost(&[1, 0], &[1, 0]), Ok(0));
    }

    #[test]
    fn queries_are_pure() {
        let t = TableCostModel::haswell_like();
        for _ in 0..3 {
            assert_eq!(t.vector_cost(Opcode::FDiv, Type::F64, 2), Ok(9));
        }
    }
}
