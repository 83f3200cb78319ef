//! Small directed-graph helpers shared by the analyses.

use fixedbitset::FixedBitSet;

use crate::ir::{DepGraph, StmtId};

/// Kahn's algorithm. Ties are resolved by smallest node index, so the
/// result is deterministic. `None` if the graph has a cycle.
pub fn topo_order(succs: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = succs.len();
    let mut indeg = vec![0usize; n];
    for list in succs {
        for &v in list {
            indeg[v] += 1;
        }
    }
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&v| indeg[v] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(u)) = ready.pop() {
        order.push(u);
        for &v in &succs[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(std::cmp::Reverse(v));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Some cycle of the graph, as the nodes along it.
pub fn find_cycle(succs: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let n = succs.len();
    let mut color = vec![Color::White; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if color[root] != Color::White {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = Color::Grey;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if let Some(&v) = succs[u].get(*next) {
                *next += 1;
                match color[v] {
                    Color::White => {
                        color[v] = Color::Grey;
                        parent[v] = u;
                        stack.push((v, 0));
                    }
                    Color::Grey => {
                        let mut cycle = vec![u];
                        let mut w = u;
                        while w != v {
                            w = parent[w];
                            cycle.push(w);
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    Color::Black => {}
                }
            } else {
                color[u] = Color::Black;
                stack.pop();
            }
        }
    }
    None
}

/// Transitive closure of a DAG given a topological order.
pub fn reachability(succs: &[Vec<usize>], topo: &[usize]) -> Vec<FixedBitSet> {
    let n = succs.len();
    let mut reach = vec![FixedBitSet::with_capacity(n); n];
    for &u in topo.iter().rev() {
        let mut set = FixedBitSet::with_capacity(n);
        for &v in &succs[u] {
            set.insert(v);
            set.union_with(&reach[v]);
        }
        reach[u] = set;
    }
    reach
}

/// Quotient of the dependence graph where statement `s` is mapped to node
/// `node_of[s]`. Self-loops are dropped and successor lists deduplicated.
pub fn contract(g: &DepGraph, node_of: &[usize], nodes: usize) -> Vec<Vec<usize>> {
    let mut succs = vec![Vec::new(); nodes];
    for e in g.edges() {
        let (u, v) = (node_of[e.from.index()], node_of[e.to.index()]);
        if u != v {
            succs[u].push(v);
        }
    }
    for list in &mut succs {
        list.sort_unstable();
        list.dedup();
    }
    succs
}

/// Indices of `groups` lying on a dependence cycle once every group is
/// fused into a single node, or `None` when the grouping can be scheduled.
/// Statements outside every group stay on their own.
pub fn group_cycle(g: &DepGraph, groups: &[Vec<StmtId>]) -> Option<Vec<usize>> {
    let n = g.len();
    let mut node_of = vec![usize::MAX; n];
    for (k, grp) in groups.iter().enumerate() {
        for s in grp {
            node_of[s.index()] = k;
        }
    }
    let mut next = groups.len();
    for slot in node_of.iter_mut() {
        if *slot == usize::MAX {
            *slot = next;
            next += 1;
        }
    }
    let succs = contract(g, &node_of, next);
    find_cycle(&succs).map(|c| c.into_iter().filter(|&k| k < groups.len()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_and_topo() {
        let dag = vec![vec![1, 2], vec![3], vec![3], vec![]];
        assert_eq!(topo_order(&dag), Some(vec![0, 1, 2, 3]));
        assert_eq!(find_cycle(&dag), None);
        let r = reachability(&dag, &[0, 1, 2, 3]);
        assert!(r[0].contains(3) && !r[1].contains(2));
        let cyc = vec![vec![1], vec![2], vec![0], vec![]];
        assert_eq!(topo_order(&cyc), None);
        let mut c = find_cycle(&cyc).unwrap();
        c.sort();
        assert_eq!(c, vec![0, 1, 2]);
    }
}
