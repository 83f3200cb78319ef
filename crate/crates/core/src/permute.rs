//! Lane-order selection for the chosen packs.
//!
//! A mask `m` for a node describes the order its vector is produced in:
//! lane `i` holds `lanes[m[i]]` of the pack. An edge from user `U` to
//! operand pack `O` carries a wiring `w`, where operand `k` of
//! `U.lanes[j]` is `O.lanes[w[j]]`. With masks `mu` and `mo`, `U` needs
//! `O` in order `w . mu` and a permutation is paid if that differs from
//! `mo`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::candidates::tuple_label;
use crate::costmodel::{CostError, CostModel};
use crate::graph;
use crate::ir::{Function, StmtId};
use crate::packing::PackSet;

pub type Mask = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PermuteError {
    #[error("multi-node of {size} packs exceeds the limit of {limit}")]
    GroupSize { size: usize, limit: usize },
    #[error("multi-node with {count} candidate orders exceeds the limit of {limit}")]
    Candidates { count: usize, limit: usize },
    #[error("{nodes} nodes with up to {candidates} candidates exceed the brute-force limit")]
    TooLarge { nodes: usize, candidates: usize },
    #[error(transparent)]
    Cost(#[from] CostError),
}

pub fn identity(w: usize) -> Mask {
    (0..w).collect()
}

/// `(a . b)[i] = a[b[i]]`.
pub fn compose(a: &[usize], b: &[usize]) -> Mask {
    b.iter().map(|&i| a[i]).collect()
}

pub fn inverse(a: &[usize]) -> Mask {
    let mut inv = vec![0; a.len()];
    for (i, &x) in a.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

pub fn is_permutation(m: &[usize]) -> bool {
    let mut seen = vec![false; m.len()];
    m.iter()
        .all(|&x| x < m.len() && !std::mem::replace(&mut seen[x], true))
}

pub fn mask_label(m: &[usize]) -> String {
    let parts: Vec<String> = m.iter().map(usize::to_string).collect();
    format!("{{{}}}", parts.join(","))
}

fn set_label<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> String {
    let parts: Vec<String> = masks.into_iter().map(|m| mask_label(m)).collect();
    format!("{{{}}}", parts.join(","))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VecNode {
    pub width: usize,
    /// Required order for packs whose lane order is dictated by memory.
    pub fixed: Option<Mask>,
    pub label: String,
}

/// Operand position `position` of node `user` is supplied by `operand`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VecEdge {
    pub user: usize,
    pub operand: usize,
    pub position: usize,
    pub wiring: Mask,
}

/// The chosen packs linked by use-def; roots have no vectorized users.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VecGraph {
    pub nodes: Vec<VecNode>,
    pub edges: Vec<VecEdge>,
}

impl VecGraph {
    /// Node `k` is pack `k` of `ps`.
    pub fn build(f: &Function, ps: &PackSet) -> VecGraph {
        let mut by_set: HashMap<Vec<StmtId>, usize> = HashMap::new();
        for (k, p) in ps.packs.iter().enumerate() {
            let mut key = p.lanes.clone();
            key.sort_unstable();
            by_set.insert(key, k);
        }
        let mut g = VecGraph::default();
        for p in &ps.packs {
            let first = f.stmt(p.lanes[0]);
            let fixed = first.opcode.is_memory().then(|| {
                let mut m = identity(p.width());
                m.sort_by_key(|&i| f.stmt(p.lanes[i]).mem.map(|r| r.index));
                m
            });
            g.nodes.push(VecNode {
                width: p.width(),
                fixed,
                label: tuple_label(f, &p.lanes),
            });
        }
        for (u, p) in ps.packs.iter().enumerate() {
            let arity = f.stmt(p.lanes[0]).operands.len();
            for k in 0..arity {
                let tuple: Vec<StmtId> = p.lanes.iter().map(|&s| f.stmt(s).operands[k]).collect();
                let mut key = tuple.clone();
                key.sort_unstable();
                let Some(&o) = by_set.get(&key) else { continue };
                let lanes = &ps.packs[o].lanes;
                let wiring = tuple
                    .iter()
                    .map(|s| lanes.iter().position(|l| l == s).unwrap())
                    .collect();
                g.edges.push(VecEdge {
                    user: u,
                    operand: o,
                    position: k,
                    wiring,
                });
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Distinct operand nodes of every node.
    pub fn succs(&self) -> Vec<Vec<usize>> {
        let mut s = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            s[e.user].push(e.operand);
        }
        for l in &mut s {
            l.sort_unstable();
            l.dedup();
        }
        s
    }

    pub fn roots(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len()];
        for e in &self.edges {
            used[e.operand] = true;
        }
        (0..self.nodes.len()).filter(|&v| !used[v]).collect()
    }

    /// Users before their operands. Panics on a cyclic graph.
    pub fn topo(&self) -> Vec<usize> {
        graph::topo_order(&self.succs()).expect("vectorization graph has a cycle")
    }

    pub fn edge_cost(&self, e: &VecEdge, masks: &[Mask], cm: &dyn CostModel) -> Result<i64, CostError> {
        cm.perm_cost(&compose(&e.wiring, &masks[e.user]), &masks[e.operand])
    }

    /// Permutation cost of a full mask assignment.
    pub fn total_cost(&self, masks: &[Mask], cm: &dyn CostModel) -> Result<i64, CostError> {
        self.edges.iter().map(|e| self.edge_cost(e, masks, cm)).sum()
    }
}

/// Candidate masks from both propagation directions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSets {
    pub forward: Vec<BTreeSet<Mask>>,
    pub backward: Vec<BTreeSet<Mask>>,
    /// Final candidates per node, ascending.
    pub candidates: Vec<Vec<Mask>>,
}

pub fn propagate_masks(g: &VecGraph) -> MaskSets {
    let n = g.len();
    let topo = g.topo();
    let mut out_edges: Vec<Vec<&VecEdge>> = vec![Vec::new(); n];
    for e in &g.edges {
        out_edges[e.user].push(e);
    }
    let mut forward = vec![BTreeSet::new(); n];
    for &u in &topo {
        let src: Vec<Mask> = match &g.nodes[u].fixed {
            Some(m) => vec![m.clone()],
            None => forward[u].iter().cloned().collect(),
        };
        for e in &out_edges[u] {
            if g.nodes[e.operand].fixed.is_none() {
                for m in &src {
                    forward[e.operand].insert(compose(&e.wiring, m));
                }
            }
        }
    }
    let mut backward = vec![BTreeSet::new(); n];
    for &u in topo.iter().rev() {
        if g.nodes[u].fixed.is_some() {
            continue;
        }
        for e in &out_edges[u] {
            let inv = inverse(&e.wiring);
            let src: Vec<Mask> = match &g.nodes[e.operand].fixed {
                Some(m) => vec![m.clone()],
                None => backward[e.operand].iter().cloned().collect(),
            };
            for m in src {
                backward[u].insert(compose(&inv, &m));
            }
        }
    }
    let candidates = (0..n)
        .map(|v| match &g.nodes[v].fixed {
            Some(m) => vec![m.clone()],
            None => {
                let all: BTreeSet<Mask> = forward[v].union(&backward[v]).cloned().collect();
                if all.is_empty() {
                    vec![identity(g.nodes[v].width)]
                } else {
                    all.into_iter().collect()
                }
            }
        })
        .collect();
    MaskSets {
        forward,
        backward,
        candidates,
    }
}

/// Bounds on multi-node size and on the orders each member contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub nodes: usize,
    pub candidates: usize,
}

impl Default for Limits {
    fn default() -> Limits {
        Limits {
            nodes: 5,
            candidates: 4,
        }
    }
}

/// Groups of nodes forming a forest: every group has at most one parent
/// group and every edge is inside a group or goes from a group to a child.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forest {
    /// Members ascending; groups ordered by their smallest member.
    pub groups: Vec<Vec<usize>>,
    pub group_of: Vec<usize>,
    pub parent: Vec<Option<usize>>,
}

fn find(uf: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while uf[r] != r {
        r = uf[r];
    }
    let mut y = x;
    while uf[y] != r {
        y = std::mem::replace(&mut uf[y], r);
    }
    r
}

/// Merges nodes sharing an operand, and groups that end up on a cycle,
/// until the group graph is a forest.
pub fn coalesce(g: &VecGraph, candidates: &[Vec<Mask>], limits: Limits) -> Result<Forest, PermuteError> {
    let n = g.len();
    let mut uf: Vec<usize> = (0..n).collect();
    loop {
        let rep: Vec<usize> = (0..n).map(|v| find(&mut uf, v)).collect();
        let mut gsucc = vec![BTreeSet::new(); n];
        let mut gpred = vec![BTreeSet::new(); n];
        for e in &g.edges {
            let (a, b) = (rep[e.user], rep[e.operand]);
            if a != b {
                gsucc[a].insert(b);
                gpred[b].insert(a);
            }
        }
        let succ_lists: Vec<Vec<usize>> = gsucc.iter().map(|s| s.iter().copied().collect()).collect();
        let merge: Option<Vec<usize>> = match graph::find_cycle(&succ_lists) {
            Some(cycle) => Some(cycle),
            None => (0..n).find(|&v| gpred[v].len() > 1).map(|v| gpred[v].iter().copied().collect()),
        };
        let Some(merge) = merge else { break };
        let root = merge[0];
        for &m in &merge[1..] {
            let (a, b) = (find(&mut uf, root), find(&mut uf, m));
            uf[a.max(b)] = a.min(b);
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut group_of = vec![0; n];
    for v in 0..n {
        let r = find(&mut uf, v);
        let k = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(v);
        group_of[v] = k;
    }
    let limit = limits.candidates.pow(limits.nodes as u32);
    for grp in &groups {
        if grp.len() > limits.nodes {
            return Err(PermuteError::GroupSize {
                size: grp.len(),
                limit: limits.nodes,
            });
        }
        let count = grp
            .iter()
            .map(|&v| candidates[v].len())
            .try_fold(1usize, |acc, c| acc.checked_mul(c))
            .unwrap_or(usize::MAX);
        if count > limit {
            return Err(PermuteError::Candidates { count, limit });
        }
    }
    let mut parent = vec![None; groups.len()];
    for e in &g.edges {
        let (a, b) = (group_of[e.user], group_of[e.operand]);
        if a != b {
            debug_assert!(parent[b].is_none_or(|p| p == a));
            parent[b] = Some(a);
        }
    }
    Ok(Forest {
        groups,
        group_of,
        parent,
    })
}

/// Chosen mask per node and the permutation cost it implies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub masks: Vec<Mask>,
    pub cost: i64,
}

/// Mixed-radix decoding of assignment `a` over `radix`, most significant
/// digit first, so increasing `a` walks the product lexicographically.
fn digits(mut a: usize, radix: &[usize]) -> Vec<usize> {
    let mut d = vec![0; radix.len()];
    for i in (0..radix.len()).rev() {
        d[i] = a % radix[i];
        a /= radix[i];
    }
    d
}

/// Tree dynamic program over the coalesced forest: the cheapest assignment
/// of each group's subtree is tabulated for every candidate of the group,
/// then roots pick their minimum and children follow the recorded argmin.
pub fn select_permutations(
    g: &VecGraph,
    candidates: &[Vec<Mask>],
    cm: &dyn CostModel,
    limits: Limits,
) -> Result<Selection, PermuteError> {
    let forest = coalesce(g, candidates, limits)?;
    let ng = forest.groups.len();
    let mut children = vec![Vec::new(); ng];
    for (h, p) in forest.parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(h);
        }
    }
    let mut internal = vec![Vec::new(); ng];
    let mut cross: HashMap<(usize, usize), Vec<&VecEdge>> = HashMap::new();
    for e in &g.edges {
        let (a, b) = (forest.group_of[e.user], forest.group_of[e.operand]);
        if a == b {
            internal[a].push(e);
        } else {
            cross.entry((a, b)).or_default().push(e);
        }
    }
    let radix: Vec<Vec<usize>> = forest
        .groups
        .iter()
        .map(|grp| grp.iter().map(|&v| candidates[v].len()).collect())
        .collect();
    let size = |h: usize| radix[h].iter().product::<usize>();
    let masks_of = |h: usize, a: usize| -> Vec<(usize, &Mask)> {
        let d = digits(a, &radix[h]);
        forest.groups[h]
            .iter()
            .zip(d)
            .map(|(&v, i)| (v, &candidates[v][i]))
            .collect()
    };
    let mut scratch: Vec<Mask> = g.nodes.iter().map(|n| identity(n.width)).collect();

    let mut post = Vec::with_capacity(ng);
    let mut stack: Vec<(usize, bool)> = (0..ng)
        .filter(|&h| forest.parent[h].is_none())
        .rev()
        .map(|h| (h, false))
        .collect();
    while let Some((h, done)) = stack.pop() {
        if done {
            post.push(h);
        } else {
            stack.push((h, true));
            for &c in children[h].iter().rev() {
                stack.push((c, false));
            }
        }
    }

    let mut best: Vec<Vec<i64>> = vec![Vec::new(); ng];
    let mut arg: Vec<Vec<Vec<usize>>> = vec![Vec::new(); ng];
    for &h in &post {
        let mut table = Vec::with_capacity(size(h));
        let mut args = Vec::with_capacity(size(h));
        for a in 0..size(h) {
            for (v, m) in masks_of(h, a) {
                scratch[v] = m.clone();
            }
            let mut total = 0;
            for e in &internal[h] {
                total += g.edge_cost(e, &scratch, cm)?;
            }
            let mut picks = Vec::with_capacity(children[h].len());
            for &c in &children[h] {
                let mut pick = (i64::MAX, 0);
                for b in 0..size(c) {
                    for (v, m) in masks_of(c, b) {
                        scratch[v] = m.clone();
                    }
                    let mut cost = best[c][b];
                    for e in &cross[&(h, c)] {
                        cost += g.edge_cost(e, &scratch, cm)?;
                    }
                    if cost < pick.0 {
                        pick = (cost, b);
                    }
                }
                total += pick.0;
                picks.push(pick.1);
            }
            table.push(total);
            args.push(picks);
        }
        best[h] = table;
        arg[h] = args;
    }

    let mut chosen = vec![0usize; ng];
    for &h in post.iter().rev() {
        let a = match forest.parent[h] {
            None => {
                let t = &best[h];
                (0..t.len()).min_by_key(|&a| (t[a], a)).unwrap_or(0)
            }
            Some(p) => {
                let idx = children[p].iter().position(|&c| c == h).unwrap();
                arg[p][chosen[p]][idx]
            }
        };
        chosen[h] = a;
    }
    let mut masks = scratch;
    for h in 0..ng {
        for (v, m) in masks_of(h, chosen[h]) {
            masks[v] = m.clone();
        }
    }
    let cost = g.total_cost(&masks, cm)?;
    Ok(Selection { masks, cost })
}

/// Exhaustive minimum over every candidate assignment, lexicographically
/// first on ties.
pub fn brute_force_permutations(
    g: &VecGraph,
    candidates: &[Vec<Mask>],
    cm: &dyn CostModel,
) -> Result<Selection, PermuteError> {
    let widest = candidates.iter().map(Vec::len).max().unwrap_or(0);
    if g.len() > 6 || widest > 4 {
        return Err(PermuteError::TooLarge {
            nodes: g.len(),
            candidates: widest,
        });
    }
    let radix: Vec<usize> = candidates.iter().map(Vec::len).collect();
    let total: usize = radix.iter().product();
    let mut best: Option<Selection> = None;
    for a in 0..total {
        let masks: Vec<Mask> = digits(a, &radix)
            .into_iter()
            .enumerate()
            .map(|(v, i)| candidates[v][i].clone())
            .collect();
        let cost = g.total_cost(&masks, cm)?;
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            best = Some(Selection { masks, cost });
        }
    }
    Ok(best.unwrap_or(Selection {
        masks: Vec::new(),
        cost: 0,
    }))
}

/// Per-node candidate sets, edges and the selection, one item per line.
pub fn dump(g: &VecGraph, sets: &MaskSets, sel: Option<&Selection>) -> String {
    let mut out = String::new();
    for (v, node) in g.nodes.iter().enumerate() {
        let kind = if node.fixed.is_some() { "constrained" } else { "free" };
        write!(
            out,
            "node {v} {} {kind} Pf = {} Pb = {} FP = {}",
            node.label,
            set_label(&sets.forward[v]),
            set_label(&sets.backward[v]),
            set_label(&sets.candidates[v]),
        )
        .unwrap();
        if let Some(s) = sel {
            write!(out, " selected {}", mask_label(&s.masks[v])).unwrap();
        }
        out.push('\n');
    }
    for e in &g.edges {
        writeln!(
            out,
            "edge {} -> {} operand {} wiring {}",
            e.user,
            e.operand,
            e.position,
            mask_label(&e.wiring)
        )
        .unwrap();
    }
    if let Some(s) = sel {
        writeln!(out, "cost {}", s.cost).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::UnitCostModel;

    fn node(fixed: Option<Mask>) -> VecNode {
        VecNode {
            width: 2,
            fixed,
            label: String::new(),
        }
    }

    fn edge(user: usize, operand: usize, wiring: Mask) -> VecEdge {
        VecEdge {
            user,
            operand,
            position: 0,
            wiring,
        }
    }

    #[test]
    fn mask_algebra() {
        let m = vec![2, 0, 1];
        assert_eq!(compose(&m, &inverse(&m)), identity(3));
        assert!(is_permutation(&m));
        assert!(!is_permutation(&[0, 0]));
        assert_eq!(mask_label(&[1, 0]), "{1,0}");
    }

    #[test]
    fn diamond_coalesces_the_two_users() {
        // store <- a, store <- b, a -> load, b -> load
        let g = VecGraph {
            nodes: vec![node(Some(vec![0, 1])), node(None), node(None), node(Some(vec![0, 1]))],
            edges: vec![
                edge(0, 1, vec![0, 1]),
                edge(0, 2, vec![0, 1]),
                edge(1, 3, vec![1, 0]),
                edge(2, 3, vec![0, 1]),
            ],
        };
        let sets = propagate_masks(&g);
        let forest = coalesce(&g, &sets.candidates, Limits::default()).unwrap();
        assert_eq!(forest.groups, vec![vec![0], vec![1, 2], vec![3]]);
        let dp = select_permutations(&g, &sets.candidates, &UnitCostModel, Limits::default()).unwrap();
        let bf = brute_force_permutations(&g, &sets.candidates, &UnitCostModel).unwrap();
        assert_eq!(dp.cost, bf.cost);
        assert_eq!(dp.cost, 1);
    }

    #[test]
    fn group_limit() {
        let mut g = VecGraph::default();
        for _ in 0..7 {
            g.nodes.push(node(None));
        }
        for u in 0..6 {
            g.edges.push(edge(u, 6, vec![0, 1]));
        }
        let sets = propagate_masks(&g);
        assert_eq!(
            coalesce(&g, &sets.candidates, Limits::default()),
            Err(PermuteError::GroupSize { size: 6, limit: 5 })
        );
        assert!(matches!(
            brute_force_permutations(&g, &sets.candidates, &UnitCostModel),
            Err(PermuteError::TooLarge { .. })
        ));
    }

    #[test]
    fn tree_is_unchanged() {
        let g = VecGraph {
            nodes: vec![node(None), node(None), node(Some(vec![1, 0]))],
            edges: vec![edge(0, 1, vec![0, 1]), edge(1, 2, vec![1, 0])],
        };
        let sets = propagate_masks(&g);
        let forest = coalesce(&g, &sets.candidates, Limits::default()).unwrap();
        assert_eq!(forest.groups.len(), 3);
        let dp = select_permutations(&g, &sets.candidates, &UnitCostModel, Limits::default()).unwrap();
        assert_eq!(dp.cost, 0);
    }
}
