//! Two greedy packers to compare against: seed-and-extend from adjacent
//! memory accesses, and holistic greedy selection by reuse potential.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet, VecDeque};

use crate::candidates::{ItemView, OperandPack, Universe};
use crate::costmodel::{vec_savings, CostError, CostModel};
use crate::graph;
use crate::ir::{adjacent_memory, isomorphic, DepGraph, Function, Opcode, StmtId};
use crate::packing::{Pack, PackSet};

/// `a` and `b` may share a vector instruction in this lane order.
fn pairable(f: &Function, g: &DepGraph, a: StmtId, b: StmtId) -> bool {
    let (sa, sb) = (f.stmt(a), f.stmt(b));
    if a == b || sa.block != sb.block || sa.opcode == Opcode::Const || !isomorphic(f, a, b) {
        return false;
    }
    if g.dependent(a, b) {
        return false;
    }
    !sa.opcode.is_memory() || adjacent_memory(f, a, b) == Some(Ordering::Less)
}

struct Seeder<'a> {
    f: &'a Function,
    g: &'a DepGraph,
    packs: Vec<(StmtId, StmtId)>,
    left: Vec<bool>,
    right: Vec<bool>,
    seen: HashSet<(StmtId, StmtId)>,
    work: VecDeque<usize>,
}

impl Seeder<'_> {
    fn admissible(&self, a: StmtId, b: StmtId) -> bool {
        pairable(self.f, self.g, a, b)
            && !self.left[a.index()]
            && !self.right[b.index()]
            && !self.seen.contains(&(a.min(b), a.max(b)))
    }

    fn add(&mut self, a: StmtId, b: StmtId) {
        if !self.admissible(a, b) {
            return;
        }
        self.left[a.index()] = true;
        self.right[b.index()] = true;
        self.seen.insert((a.min(b), a.max(b)));
        self.work.push_back(self.packs.len());
        self.packs.push((a, b));
    }

    fn known(&self, a: StmtId, b: StmtId) -> bool {
        self.seen.contains(&(a.min(b), a.max(b)))
    }
}

/// Seeds every adjacent ascending memory pair, grows packs along use-def
/// and def-use chains, then replaces each statement by the first pack
/// containing it in formation order.
pub fn larsen_pack(f: &Function, g: &DepGraph, max_lanes: usize) -> PackSet {
    let n = f.len();
    let mut sd = Seeder {
        f,
        g,
        packs: Vec::new(),
        left: vec![false; n],
        right: vec![false; n],
        seen: HashSet::new(),
        work: VecDeque::new(),
    };
    for a in f.stmts() {
        for b in f.stmts() {
            if adjacent_memory(f, a.id, b.id) == Some(Ordering::Less) {
                sd.add(a.id, b.id);
            }
        }
    }
    let users = f.users();
    while let Some(k) = sd.work.pop_front() {
        let (a, b) = sd.packs[k];
        let (oa, ob) = (f.stmt(a).operands.clone(), f.stmt(b).operands.clone());
        for (&x, &y) in oa.iter().zip(&ob) {
            sd.add(x, y);
        }
        let mut best: Option<(usize, StmtId, StmtId)> = None;
        for &u in &users[a.index()] {
            for &v in &users[b.index()] {
                let (su, sv) = (f.stmt(u), f.stmt(v));
                let same_slot = su
                    .operands
                    .iter()
                    .zip(&sv.operands)
                    .any(|(&x, &y)| x == a && y == b);
                if !same_slot || !sd.admissible(u, v) {
                    continue;
                }
                let score = su
                    .operands
                    .iter()
                    .zip(&sv.operands)
                    .filter(|(&x, &y)| sd.known(x, y))
                    .count();
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, u, v));
                }
            }
        }
        if let Some((_, u, v)) = best {
            sd.add(u, v);
        }
    }

    let mut covered = vec![false; n];
    let mut groups: Vec<Vec<StmtId>> = Vec::new();
    for &(a, b) in &sd.packs {
        if covered[a.index()] || covered[b.index()] {
            continue;
        }
        groups.push(vec![a, b]);
        if graph::group_cycle(g, &groups).is_some() {
            groups.pop();
            continue;
        }
        covered[a.index()] = true;
        covered[b.index()] = true;
    }
    PackSet::from_packs(widen(f, g, groups, max_lanes).into_iter().map(Pack::new).collect())
}

/// Repeatedly commits the candidate pair with the most potential vector
/// uses, breaking ties by program position, while its local cost change
/// is not positive.
pub fn liu_pack(f: &Function, g: &DepGraph, cm: &dyn CostModel, max_lanes: usize) -> Result<PackSet, CostError> {
    let view = ItemView::scalars(f, g);
    let u = Universe::build(&view);
    let mut committed: Vec<usize> = Vec::new();
    let mut is_committed = vec![false; u.len()];
    let mut alive = vec![true; u.len()];
    let mut used = vec![false; view.items().len()];
    loop {
        for p in 0..u.len() {
            if !alive[p] {
                continue;
            }
            let (a, b) = u.pairs[p];
            if used[a] || used[b] {
                alive[p] = false;
                continue;
            }
            let mut trial: Vec<(usize, usize)> = committed.iter().map(|&q| u.pairs[q]).collect();
            trial.push((a, b));
            if view.find_cycle(&trial).is_some() {
                alive[p] = false;
            }
        }
        let mut best: Option<(usize, usize)> = None;
        for p in (0..u.len()).filter(|&p| alive[p]) {
            let it = view.item(u.pairs[p].0);
            let ty = it.ty;
            let uses = u
                .vec_vec_uses
                .get(&p)
                .map_or(0, |users| users.iter().filter(|&&q| alive[q] || is_committed[q]).count());
            let mut score = uses;
            let mut delta = vec_savings(cm, it.opcode, ty, 2)?;
            for op in &u.operands[p] {
                match op {
                    OperandPack::Vector(q) if is_committed[*q] => score += 1,
                    OperandPack::Vector(q) if alive[*q] => {}
                    _ => delta += cm.pack_cost(ty, 2)?,
                }
            }
            if delta <= 0 && best.is_none_or(|(s, _)| score > s) {
                best = Some((score, p));
            }
        }
        let Some((_, p)) = best else { break };
        let (a, b) = u.pairs[p];
        used[a] = true;
        used[b] = true;
        alive[p] = false;
        is_committed[p] = true;
        committed.push(p);
    }
    let groups = committed
        .iter()
        .map(|&p| {
            let (a, b) = u.pairs[p];
            view.fused_lanes(a, b)
        })
        .collect();
    Ok(PackSet::from_packs(widen(f, g, groups, max_lanes).into_iter().map(Pack::new).collect()))
}

/// Joins equal-width packs into wider ones while the result stays a legal
/// vector: isomorphic, independent, contiguous for memory, and with every
/// pair of packed operands joined the same way.
pub fn widen(f: &Function, g: &DepGraph, mut groups: Vec<Vec<StmtId>>, max_lanes: usize) -> Vec<Vec<StmtId>> {
    let sorted = |v: &[StmtId]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v
    };
    let mut width = 2;
    while width * 2 <= max_lanes {
        groups.sort_by_key(|grp| grp.iter().min().copied());
        let packed: HashSet<Vec<StmtId>> = groups.iter().map(|grp| sorted(grp)).collect();
        let mut joined: HashMap<Vec<StmtId>, Vec<StmtId>> = HashMap::new();
        let mut taken = vec![false; groups.len()];
        let mut next: Vec<Vec<StmtId>> = Vec::new();
        let mut grew = false;
        for i in 0..groups.len() {
            if taken[i] || groups[i].len() != width {
                continue;
            }
            for j in i + 1..groups.len() {
                if taken[j] || groups[j].len() != width {
                    continue;
                }
                let Some(lanes) = join(f, g, &groups[i], &groups[j]) else { continue };
                let operands_agree = (0..f.stmt(lanes[0]).operands.len()).all(|k| {
                    let tp: Vec<StmtId> = groups[i].iter().map(|&s| f.stmt(s).operands[k]).collect();
                    let tq: Vec<StmtId> = groups[j].iter().map(|&s| f.stmt(s).operands[k]).collect();
                    if !(packed.contains(&sorted(&tp)) && packed.contains(&sorted(&tq))) {
                        return true;
                    }
                    let (a, b) = (sorted(&tp), sorted(&tq));
                    joined.get(&a).is_some_and(|w| sorted(w) == sorted(&[a.clone(), b].concat()))
                });
                if !operands_agree {
                    continue;
                }
                let mut trial: Vec<Vec<StmtId>> = groups
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i && k != j && !taken[k])
                    .map(|(_, grp)| grp.clone())
                    .chain(next.iter().cloned())
                    .collect();
                trial.push(lanes.clone());
                if graph::group_cycle(g, &trial).is_some() {
                    continue;
                }
                taken[i] = true;
                taken[j] = true;
                joined.insert(sorted(&groups[i]), lanes.clone());
                joined.insert(sorted(&groups[j]), lanes.clone());
                next.push(lanes);
                grew = true;
                break;
            }
        }
        if !grew {
            break;
        }
        next.extend(groups.iter().enumerate().filter(|&(k, _)| !taken[k]).map(|(_, grp)| grp.clone()));
        groups = next;
        width *= 2;
    }
    groups
}

/// Lanes of `p` and `q` fused, or `None` if they cannot form one vector.
fn join(f: &Function, g: &DepGraph, p: &[StmtId], q: &[StmtId]) -> Option<Vec<StmtId>> {
    let (sp, sq) = (f.stmt(p[0]), f.stmt(q[0]));
    if sp.block != sq.block || sp.opcode == Opcode::Const || !isomorphic(f, p[0], q[0]) {
        return None;
    }
    if p.iter().any(|&a| q.iter().any(|&b| g.dependent(a, b))) {
        return None;
    }
    if !sp.opcode.is_memory() {
        return Some([p, q].concat());
    }
    let (mp, mq) = (sp.mem?, sq.mem?);
    let w = p.len() as u32;
    if mp.array != mq.array {
        None
    } else if mp.index + w == mq.index {
        Some([p, q].concat())
    } else if mq.index + w == mp.index {
        Some([q, p].concat())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::tuple_label;
    use crate::costmodel::UnitCostModel;
    use crate::ir::parse_function;

    fn names(f: &Function, ps: &PackSet) -> Vec<String> {
        ps.packs.iter().map(|p| tuple_label(f, &p.lanes)).collect()
    }

    #[test]
    fn larsen_on_div_sub_chain() {
        let f = parse_function(include_str!("../programs/div_sub_chain.ir")).unwrap();
        let g = DepGraph::build(&f);
        let ps = larsen_pack(&f, &g, 2);
        assert_eq!(names(&f, &ps), ["[L1,L2]", "[L3,L4]", "[L5,L6]", "[S1,S2]", "[S4,S5]"]);
    }

    #[test]
    fn liu_on_div_sub_chain() {
        let f = parse_function(include_str!("../programs/div_sub_chain.ir")).unwrap();
        let g = DepGraph::build(&f);
        let ps = liu_pack(&f, &g, &UnitCostModel, 2).unwrap();
        assert_eq!(names(&f, &ps), ["[L2,L3]", "[L5,L6]", "[S1,S2]", "[S4,S6]"]);
    }

    #[test]
    fn no_memory_means_no_seeds() {
        let text = "func n {\n  block b:\n    %c = const 1 : i32\n    %a = add %c, %c : i32\n    %d = add %c, %c : i32\n}\n";
        let f = parse_function(text).unwrap();
        let g = DepGraph::build(&f);
        assert!(larsen_pack(&f, &g, 2).packs.is_empty());
    }

    #[test]
    fn widening_quad_add() {
        let f = parse_function(include_str!("../programs/quad_add.ir")).unwrap();
        let g = DepGraph::build(&f);
        let ps = larsen_pack(&f, &g, 4);
        assert_eq!(ps.packs.len(), 4);
        assert!(ps.packs.iter().all(|p| p.width() == 4));
        ps.check(&f, &g).unwrap();
        let ps = liu_pack(&f, &g, &UnitCostModel, 4).unwrap();
        assert!(ps.packs.iter().all(|p| p.width() == 4));
    }
}
