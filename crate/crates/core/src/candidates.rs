//! Pairing candidates: feasible partner sets, the pair universe and the
//! operand-use maps that feed the packing formulation.
//!
//! Everything is phrased over an [`ItemView`]. In the first iteration the
//! items are the scalar statements; later iterations treat every pack of
//! the current width as one item, and the dependence graph is contracted
//! accordingly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use fixedbitset::FixedBitSet;

use crate::graph;
use crate::ir::{self, BlockId, DepGraph, Function, MemRef, Opcode, StmtId, Type};

/// One schedulable unit that may be paired: a scalar statement or a pack
/// formed by an earlier iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    /// Lanes in their natural order (address order for memory packs).
    pub lanes: Vec<StmtId>,
    pub block: BlockId,
    pub opcode: Opcode,
    pub ty: Type,
    /// Lowest accessed element, for memory items.
    pub mem: Option<MemRef>,
}

/// The function seen as a set of units, some of which are pairable items.
#[derive(Clone, Debug)]
pub struct ItemView<'f> {
    f: &'f Function,
    g: &'f DepGraph,
    width: usize,
    items: Vec<Item>,
    /// Unit `k < items.len()` is item `k`; the rest are leftovers.
    units: Vec<Vec<StmtId>>,
    unit_of: Vec<usize>,
    succs: Vec<Vec<usize>>,
    reach: Vec<FixedBitSet>,
    by_set: HashMap<Vec<StmtId>, usize>,
    users: Vec<Vec<usize>>,
}

impl<'f> ItemView<'f> {
    /// Every statement is its own item.
    pub fn scalars(f: &'f Function, g: &'f DepGraph) -> ItemView<'f> {
        let groups: Vec<Vec<StmtId>> = f.stmts().iter().map(|s| vec![s.id]).collect();
        ItemView::from_groups(f, g, &groups, 1)
    }

    /// Units are `groups` plus every uncovered statement; groups of exactly
    /// `width` lanes become items. Panics if the grouping cannot be
    /// scheduled.
    pub fn from_groups(
        f: &'f Function,
        g: &'f DepGraph,
        groups: &[Vec<StmtId>],
        width: usize,
    ) -> ItemView<'f> {
        let mut covered = vec![false; f.len()];
        let mut item_groups: Vec<Vec<StmtId>> = Vec::new();
        let mut rest: Vec<Vec<StmtId>> = Vec::new();
        for grp in groups {
            for s in grp {
                assert!(!covered[s.index()], "groups overlap at {s:?}");
                covered[s.index()] = true;
            }
            if grp.len() == width {
                item_groups.push(grp.clone());
            } else {
                rest.push(grp.clone());
            }
        }
        for s in f.stmts() {
            if !covered[s.id.index()] {
                if width == 1 {
                    item_groups.push(vec![s.id]);
                } else {
                    rest.push(vec![s.id]);
                }
            }
        }
        item_groups.sort_by_key(|grp| grp.iter().min().copied());
        rest.sort_by_key(|grp| grp.iter().min().copied());

        let items: Vec<Item> = item_groups
            .iter()
            .map(|lanes| {
                let first = f.stmt(lanes[0]);
                let mem = lanes.iter().filter_map(|&s| f.stmt(s).mem).min();
                Item {
                    lanes: lanes.clone(),
                    block: first.block,
                    opcode: first.opcode,
                    ty: first.ty,
                    mem,
                }
            })
            .collect();
        let units: Vec<Vec<StmtId>> = item_groups.into_iter().chain(rest).collect();
        let mut unit_of = vec![0; f.len()];
        for (k, u) in units.iter().enumerate() {
            for s in u {
                unit_of[s.index()] = k;
            }
        }
        let succs = graph::contract(g, &unit_of, units.len());
        let topo = graph::topo_order(&succs).expect("grouping is not schedulable");
        let reach = graph::reachability(&succs, &topo);
        let by_set = items
            .iter()
            .enumerate()
            .map(|(k, it)| (sorted(&it.lanes), k))
            .collect();

        let stmt_users = f.users();
        let users = items
            .iter()
            .map(|it| {
                let set: BTreeSet<usize> = it
                    .lanes
                    .iter()
                    .flat_map(|s| stmt_users[s.index()].iter().map(|u| unit_of[u.index()]))
                    .collect();
                set.into_iter().collect()
            })
            .collect();

        ItemView {
            f,
            g,
            width,
            items,
            units,
            unit_of,
            succs,
            reach,
            by_set,
            users,
        }
    }

    pub fn function(&self) -> &'f Function {
        self.f
    }

    pub fn deps(&self) -> &'f DepGraph {
        self.g
    }

    /// Lanes per item.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, k: usize) -> &Item {
        &self.items[k]
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    pub fn unit(&self, u: usize) -> &[StmtId] {
        &self.units[u]
    }

    pub fn unit_of(&self, s: StmtId) -> usize {
        self.unit_of[s.index()]
    }

    pub fn unit_succs(&self, u: usize) -> &[usize] {
        &self.succs[u]
    }

    pub fn unit_reaches(&self, a: usize, b: usize) -> bool {
        self.reach[a].contains(b)
    }

    /// Distinct units using a value defined by item `k`.
    pub fn users(&self, k: usize) -> &[usize] {
        &self.users[k]
    }

    pub fn is_exported(&self, k: usize) -> bool {
        self.items[k].lanes.iter().any(|&s| self.f.is_exported(s))
    }

    /// Item whose lanes are exactly the statements of `tuple`, in any order.
    pub fn item_for_tuple(&self, tuple: &[StmtId]) -> Option<usize> {
        self.by_set.get(&sorted(tuple)).copied()
    }

    /// Operand `k` of every lane of item `it`, in lane order.
    pub fn operand_tuple(&self, it: usize, k: usize) -> Vec<StmtId> {
        self.items[it]
            .lanes
            .iter()
            .map(|&s| self.f.stmt(s).operands[k])
            .collect()
    }

    pub fn label(&self, k: usize) -> String {
        tuple_label(self.f, &self.items[k].lanes)
    }

    /// All four pairing conditions: same block, isomorphic, independent and,
    /// for memory items, contiguous.
    pub fn feasible(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let (ia, ib) = (&self.items[a], &self.items[b]);
        if ia.opcode == Opcode::Const || ia.block != ib.block {
            return false;
        }
        if ia.lanes.len() != ib.lanes.len() || !ir::isomorphic(self.f, ia.lanes[0], ib.lanes[0]) {
            return false;
        }
        if self.unit_reaches(a, b) || self.unit_reaches(b, a) {
            return false;
        }
        if ia.opcode.is_memory() {
            return self.contiguous(a, b).is_some();
        }
        true
    }

    /// For memory items covering neighbouring ranges of one array: whether
    /// `a` comes first (`true`) or `b` does.
    pub fn contiguous(&self, a: usize, b: usize) -> Option<bool> {
        let (ia, ib) = (&self.items[a], &self.items[b]);
        if ia.opcode != ib.opcode || ia.ty != ib.ty {
            return None;
        }
        let (ma, mb) = (ia.mem?, ib.mem?);
        let w = self.width as u32;
        if ma.array != mb.array {
            None
        } else if ma.index + w == mb.index {
            Some(true)
        } else if mb.index + w == ma.index {
            Some(false)
        } else {
            None
        }
    }

    /// Lanes of the pack formed from items `a` and `b`: address order for
    /// memory items, otherwise `a` then `b`.
    pub fn fused_lanes(&self, a: usize, b: usize) -> Vec<StmtId> {
        let (first, second) = match self.contiguous(a, b) {
            Some(false) => (b, a),
            _ => (a, b),
        };
        let mut lanes = self.items[first].lanes.clone();
        lanes.extend_from_slice(&self.items[second].lanes);
        lanes
    }

    /// Indices into `pairs` of packs on a dependence cycle once every pair
    /// is fused, or `None` if the selection can be scheduled.
    pub fn find_cycle(&self, pairs: &[(usize, usize)]) -> Option<Vec<usize>> {
        let n = self.units.len();
        let mut node_of: Vec<usize> = (0..n).collect();
        let mut pack_of_node = vec![usize::MAX; n];
        for (k, &(a, b)) in pairs.iter().enumerate() {
            node_of[b] = a;
            pack_of_node[a] = k;
        }
        let mut succs = vec![Vec::new(); n];
        for (u, list) in self.succs.iter().enumerate() {
            for &v in list {
                let (x, y) = (node_of[u], node_of[v]);
                if x != y {
                    succs[x].push(y);
                }
            }
        }
        let cycle = graph::find_cycle(&succs)?;
        let mut packs: Vec<usize> = cycle
            .into_iter()
            .map(|u| pack_of_node[u])
            .filter(|&k| k != usize::MAX)
            .collect();
        packs.sort_unstable();
        packs.dedup();
        Some(packs)
    }
}

fn sorted(tuple: &[StmtId]) -> Vec<StmtId> {
    let mut v = tuple.to_vec();
    v.sort_unstable();
    v
}

/// Display label of a statement without the value sigil.
pub fn stmt_label(f: &Function, s: StmtId) -> String {
    let l = f.label(s);
    l.strip_prefix('%').map(str::to_string).unwrap_or(l)
}

/// `S1` for a single statement, `[S1,S2]` for a tuple.
pub fn tuple_label(f: &Function, lanes: &[StmtId]) -> String {
    if lanes.len() == 1 {
        stmt_label(f, lanes[0])
    } else {
        let parts: Vec<String> = lanes.iter().map(|&s| stmt_label(f, s)).collect();
        format!("[{}]", parts.join(","))
    }
}

/// An operand tuple that no candidate pair provides: two sides, each the
/// lanes one item would need, normalized so the key ignores lane order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NonVecKey {
    pub sides: [Vec<StmtId>; 2],
}

impl NonVecKey {
    pub fn new(left: &[StmtId], right: &[StmtId]) -> NonVecKey {
        let (l, r) = (sorted(left), sorted(right));
        let sides = if l <= r { [l, r] } else { [r, l] };
        NonVecKey { sides }
    }

    pub fn lanes(&self) -> usize {
        self.sides[0].len() * 2
    }

    pub fn label(&self, f: &Function) -> String {
        format!(
            "({},{})",
            tuple_label(f, &self.sides[0]),
            tuple_label(f, &self.sides[1])
        )
    }
}

/// How one operand position of a candidate pair would be supplied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OperandPack {
    /// By another candidate pair, if that pair is vectorized.
    Vector(usize),
    NonVector(NonVecKey),
}

/// Feasible partner sets, the candidate pairs `D`, and the use maps.
#[derive(Clone, Debug, Default)]
pub struct Universe {
    /// Partners of every item, ascending.
    pub feasible: Vec<Vec<usize>>,
    /// Unordered pairs `(a, b)` with `a < b`, ascending.
    pub pairs: Vec<(usize, usize)>,
    pub index: HashMap<(usize, usize), usize>,
    /// Candidate pair -> candidate pairs consuming it as an operand.
    pub vec_vec_uses: BTreeMap<usize, Vec<usize>>,
    /// Non-candidate operand tuple -> candidate pairs consuming it.
    pub non_vec_uses: BTreeMap<NonVecKey, Vec<usize>>,
    /// Operand supply of every pair, per operand position.
    pub operands: Vec<Vec<OperandPack>>,
}

pub fn collect_feasible_sets(view: &ItemView) -> Vec<Vec<usize>> {
    let n = view.items().len();
    let mut by_block: BTreeMap<BlockId, Vec<usize>> = BTreeMap::new();
    for (k, it) in view.items().iter().enumerate() {
        by_block.entry(it.block).or_default().push(k);
    }
    let mut feasible = vec![Vec::new(); n];
    for members in by_block.values() {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if view.feasible(a, b) {
                    feasible[a].push(b);
                    feasible[b].push(a);
                }
            }
        }
    }
    for list in &mut feasible {
        list.sort_unstable();
    }
    feasible
}

pub fn build_pack_universe(feasible: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = feasible
        .iter()
        .enumerate()
        .flat_map(|(a, list)| list.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
        .collect();
    pairs.sort_unstable();
    pairs
}

impl Universe {
    pub fn build(view: &ItemView) -> Universe {
        let feasible = collect_feasible_sets(view);
        let pairs = build_pack_universe(&feasible);
        let index: HashMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let mut u = Universe {
            feasible,
            pairs,
            index,
            ..Universe::default()
        };
        u.build_use_maps(view);
        u
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Candidate pair joining items `a` and `b`, in either order.
    pub fn pair_of(&self, a: usize, b: usize) -> Option<usize> {
        self.index.get(&(a.min(b), a.max(b))).copied()
    }

    fn build_use_maps(&mut self, view: &ItemView) {
        let mut vv: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut nv: BTreeMap<NonVecKey, BTreeSet<usize>> = BTreeMap::new();
        let mut operands = Vec::with_capacity(self.pairs.len());
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            let arity = view.function().stmt(view.item(a).lanes[0]).operands.len();
            let mut per_pos = Vec::with_capacity(arity);
            for k in 0..arity {
                let (ta, tb) = (view.operand_tuple(a, k), view.operand_tuple(b, k));
                let vec_pair = match (view.item_for_tuple(&ta), view.item_for_tuple(&tb)) {
                    (Some(x), Some(y)) => self.pair_of(x, y),
                    _ => None,
                };
                match vec_pair {
                    Some(q) => {
                        vv.entry(q).or_default().insert(p);
                        per_pos.push(OperandPack::Vector(q));
                    }
                    None => {
                        let key = NonVecKey::new(&ta, &tb);
                        nv.entry(key.clone()).or_default().insert(p);
                        per_pos.push(OperandPack::NonVector(key));
                    }
                }
            }
            operands.push(per_pos);
        }
        self.vec_vec_uses = vv.into_iter().map(|(k, s)| (k, s.into_iter().collect())).collect();
        self.non_vec_uses = nv.into_iter().map(|(k, s)| (k, s.into_iter().collect())).collect();
        self.operands = operands;
    }

    pub fn pair_label(&self, view: &ItemView, p: usize) -> String {
        let (a, b) = self.pairs[p];
        format!("({},{})", view.label(a), view.label(b))
    }

    fn pair_set(&self, view: &ItemView, ps: &[usize]) -> String {
        let mut labels: Vec<String> = ps.iter().map(|&p| self.pair_label(view, p)).collect();
        labels.sort();
        format!("{{{}}}", labels.join(", "))
    }

    /// Canonical text listing: feasible sets, `D`, then both use maps, each
    /// section sorted.
    pub fn dump(&self, view: &ItemView) -> String {
        let mut out = String::new();
        let mut lines: Vec<String> = (0..view.items().len())
            .filter(|&k| view.item(k).opcode != Opcode::Const)
            .map(|k| {
                let mut partners: Vec<String> =
                    self.feasible[k].iter().map(|&j| view.label(j)).collect();
                partners.sort();
                format!("f_{} = {{{}}}", view.label(k), partners.join(", "))
            })
            .collect();
        lines.sort();
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
        let all: Vec<usize> = (0..self.pairs.len()).collect();
        writeln!(out, "D = {}", self.pair_set(view, &all)).unwrap();
        let mut lines: Vec<String> = self
            .vec_vec_uses
            .iter()
            .map(|(&q, users)| {
                format!(
                    "VecVecUses {} -> {}",
                    self.pair_label(view, q),
                    self.pair_set(view, users)
                )
            })
            .collect();
        lines.sort();
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
        let mut lines: Vec<String> = self
            .non_vec_uses
            .iter()
            .map(|(key, users)| {
                format!(
                    "NonVecVecUses {} -> {}",
                    key.label(view.function()),
                    self.pair_set(view, users)
                )
            })
            .collect();
        lines.sort();
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_function;

    const TWO_LOADS: &str = "
func two {
  array A : i32 x 8
  block b:
    %x = load A[5] : i32
    %y = load A[6] : i32
    %c = const 3 : i32
    %d = const 4 : i32
    %p = add %c, %x : i32
    %q = add %d, %y : i32
}
";

    #[test]
    fn adjacent_loads_pair_and_consts_never_do() {
        let f = parse_function(TWO_LOADS).unwrap();
        let g = DepGraph::build(&f);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        let id = |n: &str| view.unit_of(f.value_by_name(n).unwrap());
        assert_eq!(u.feasible[id("x")], vec![id("y")]);
        assert!(u.feasible[id("c")].is_empty());
        // The add pair takes its first operands from the two constants.
        let pq = u.pair_of(id("p"), id("q")).unwrap();
        let key = NonVecKey::new(&[StmtId(2)], &[StmtId(3)]);
        assert_eq!(u.non_vec_uses[&key], vec![pq]);
        let xy = u.pair_of(id("x"), id("y")).unwrap();
        assert_eq!(u.vec_vec_uses[&xy], vec![pq]);
        assert!(!u.vec_vec_uses.contains_key(&pq));
    }

    #[test]
    fn dependent_statements_are_not_feasible() {
        let text = "func dep {\n  block b:\n    %c = const 1 : i32\n    %a = add %c, %c : i32\n    %b = add %a, %c : i32\n}\n";
        let f = parse_function(text).unwrap();
        let g = DepGraph::build(&f);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        assert!(u.is_empty());
        assert!(u.feasible.iter().all(Vec::is_empty));
    }

    #[test]
    fn three_mutually_feasible() {
        let text = "func three {\n  block b:\n    %c = const 1 : i32\n    %a = add %c, %c : i32\n    %b = add %c, %c : i32\n    %d = add %c, %c : i32\n}\n";
        let f = parse_function(text).unwrap();
        let g = DepGraph::build(&f);
        let u = Universe::build(&ItemView::scalars(&f, &g));
        assert_eq!(u.len(), 3);
    }

    #[test]
    fn contracted_view_sees_fused_dependences() {
        // a0 -> b1 and b0 -> a1 hold only through the fused packs.
        let text = "
func wide {
  array A : f32 x 4
  array B : f32 x 4
  block b:
    %a0 = load A[0] : f32
    %a1 = load A[1] : f32
    %a2 = load A[2] : f32
    %a3 = load A[3] : f32
    %x0 = fadd %a0, %a0 : f32
    %x1 = fadd %a1, %a1 : f32
    %x2 = fadd %a2, %a2 : f32
    %x3 = fadd %a3, %a3 : f32
}
";
        let f = parse_function(text).unwrap();
        let g = DepGraph::build(&f);
        let id = |n: &str| f.value_by_name(n).unwrap();
        let groups = vec![
            vec![id("a0"), id("a1")],
            vec![id("a2"), id("a3")],
            vec![id("x0"), id("x1")],
            vec![id("x2"), id("x3")],
        ];
        let view = ItemView::from_groups(&f, &g, &groups, 2);
        assert_eq!(view.items().len(), 4);
        let u = Universe::build(&view);
        assert_eq!(u.len(), 2);
        let loads = u.pair_of(0, 1).unwrap();
        let adds = u.pair_of(2, 3).unwrap();
        assert_eq!(u.vec_vec_uses[&loads], vec![adds]);
        assert_eq!(view.fused_lanes(1, 0), vec![id("a0"), id("a1"), id("a2"), id("a3")]);
    }
}
