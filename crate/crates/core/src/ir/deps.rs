use fixedbitset::FixedBitSet;

use super::{Function, Opcode, StmtId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DepKind {
    Data,
    Memory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DepEdge {
    pub from: StmtId,
    pub to: StmtId,
    pub kind: DepKind,
}

/// Dependence graph over the statements of a function, with a precomputed
/// transitive closure.
///
/// Every edge points forward in program order, so program order is a
/// topological order.
#[derive(Clone, Debug)]
pub struct DepGraph {
    edges: Vec<DepEdge>,
    succs: Vec<Vec<StmtId>>,
    preds: Vec<Vec<StmtId>>,
    reach: Vec<FixedBitSet>,
}

impl DepGraph {
    pub fn build(f: &Function) -> DepGraph {
        let n = f.len();
        let mut edges = Vec::new();
        for s in f.stmts() {
            let mut seen: Vec<StmtId> = Vec::new();
            for &op in &s.operands {
                if !seen.contains(&op) {
                    seen.push(op);
                    edges.push(DepEdge {
                        from: op,
                        to: s.id,
                        kind: DepKind::Data,
                    });
                }
            }
        }
        let accesses: Vec<_> = f.stmts().iter().filter(|s| s.opcode.is_memory()).collect();
        for (i, a) in accesses.iter().enumerate() {
            for b in &accesses[i + 1..] {
                let conflict = a.opcode == Opcode::Store || b.opcode == Opcode::Store;
                if conflict && a.mem == b.mem {
                    edges.push(DepEdge {
                        from: a.id,
                        to: b.id,
                        kind: DepKind::Memory,
                    });
                }
            }
        }
        edges.sort_by_key(|e| (e.from, e.to, e.kind == DepKind::Memory));

        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for e in &edges {
            if succs[e.from.index()].last() != Some(&e.to) {
                succs[e.from.index()].push(e.to);
                preds[e.to.index()].push(e.from);
            }
        }
        let mut reach = vec![FixedBitSet::with_capacity(n); n];
        for u in (0..n).rev() {
            let mut set = FixedBitSet::with_capacity(n);
            for &v in &succs[u] {
                set.insert(v.index());
                set.union_with(&reach[v.index()]);
            }
            reach[u] = set;
        }
        DepGraph {
            edges,
            succs,
            preds,
            reach,
        }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    pub fn edges(&self) -> &[DepEdge] {
        &self.edges
    }

    pub fn succs(&self, s: StmtId) -> &[StmtId] {
        &self.succs[s.index()]
    }

    pub fn preds(&self, s: StmtId) -> &[StmtId] {
        &self.preds[s.index()]
    }

    /// Whether a non-empty dependence path leads from `a` to `b`.
    #[inline]
    pub fn reaches(&self, a: StmtId, b: StmtId) -> bool {
        self.reach[a.index()].contains(b.index())
    }

    /// Whether either statement depends on the other.
    pub fn dependent(&self, a: StmtId, b: StmtId) -> bool {
        self.reaches(a, b) || self.reaches(b, a)
    }

    /// Statements reachable from `s`.
    pub fn descendants(&self, s: StmtId) -> &FixedBitSet {
        &self.reach[s.index()]
    }

    pub fn topo_order(&self) -> Vec<StmtId> {
        (0..self.len() as u32).map(StmtId).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_function;

    const TEXT: &str = "
func deps {
  array A : i32 x 4
  array B : i32 x 4
  block entry:
    %a = load A[0] : i32
    %b = load A[1] : i32
    %c = add %a, %b : i32
    store A[1], %c : i32
    %d = load A[1] : i32
    %e = load B[1] : i32
    %f = load A[0] : i32
}
";

    #[test]
    fn edges_and_reachability() {
        let f = parse_function(TEXT).unwrap();
        let g = DepGraph::build(&f);
        let id = |n: &str| f.value_by_name(n).unwrap();
        let st = StmtId(3);
        assert!(g.reaches(id("a"), st));
        assert!(g.reaches(id("b"), id("d")));
        assert!(g.edges().contains(&DepEdge {
            from: id("b"),
            to: st,
            kind: DepKind::Memory
        }));
        assert!(g.edges().contains(&DepEdge {
            from: st,
            to: id("d"),
            kind: DepKind::Memory
        }));
        // Loads never conflict with each other; distinct arrays never alias.
        assert!(!g.dependent(id("a"), id("f")));
        assert!(!g.dependent(id("e"), st));
        assert!(!g.dependent(id("a"), id("b")));
        for e in g.edges() {
            assert!(e.from < e.to);
        }
    }
}
