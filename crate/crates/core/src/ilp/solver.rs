//! Depth-first branch-and-bound for 0-1 problems in `sum(a x) <= b` form.
//!
//! Constraints are propagated on their minimum activity. The bound splits
//! each negative objective coefficient across the set-packing rows that
//! contain the variable, so at most one share per row is counted.

use std::time::{Duration, Instant};

use super::linear::{IlpProblem, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// The search finished; the objective is minimal.
    Optimal,
    /// The timeout expired; the assignment is the best one found.
    Feasible,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub values: Vec<bool>,
    pub objective: i64,
    pub status: Status,
    pub nodes: u64,
}

impl Assignment {
    /// Decision variables set to 1.
    pub fn selected(&self, num_decisions: usize) -> Vec<Var> {
        (0..num_decisions).filter(|&v| self.values[v]).collect()
    }
}

const UNSET: i8 = -1;
const MAX_SCALE: i64 = 2520;

struct Incumbent {
    objective: i64,
    selected: Vec<Var>,
    values: Vec<bool>,
}

impl Incumbent {
    /// Lower objective, then more selected decisions, then the
    /// lexicographically smallest selection.
    fn better_than(&self, other: &Incumbent) -> bool {
        (self.objective, std::cmp::Reverse(self.selected.len()), &self.selected)
            < (other.objective, std::cmp::Reverse(other.selected.len()), &other.selected)
    }
}

struct Search<'p> {
    p: &'p IlpProblem,
    occ: Vec<Vec<(usize, i64)>>,
    val: Vec<i8>,
    minact: Vec<i64>,
    trail: Vec<Var>,
    fixed_obj: i64,
    order: Vec<Var>,
    /// Set-packing rows with the scaled share of every member.
    rows: Vec<Vec<(Var, i64)>>,
    /// Negative-cost variables outside every set-packing row.
    loose: Vec<Var>,
    scale: i64,
    best: Option<Incumbent>,
    nodes: u64,
    deadline: Option<Instant>,
    timed_out: bool,
}

fn lcm(a: i64, b: i64) -> i64 {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

impl<'p> Search<'p> {
    fn new(p: &'p IlpProblem, deadline: Option<Instant>) -> Search<'p> {
        let n = p.num_vars();
        let mut occ = vec![Vec::new(); n];
        let mut minact = Vec::with_capacity(p.constraints.len());
        for (c, con) in p.constraints.iter().enumerate() {
            for &(v, a) in &con.terms {
                occ[v].push((c, a));
            }
            minact.push(con.terms.iter().map(|&(_, a)| a.min(0)).sum());
        }

        let packing: Vec<&Vec<(Var, i64)>> = p
            .constraints
            .iter()
            .filter(|c| c.rhs == 1 && c.terms.len() >= 2 && c.terms.iter().all(|&(_, a)| a == 1))
            .map(|c| &c.terms)
            .collect();
        let mut row_count = vec![0i64; n];
        for row in &packing {
            for &(v, _) in row.iter() {
                row_count[v] += 1;
            }
        }
        let mut scale = 1;
        for v in 0..n {
            if p.objective[v] < 0 && row_count[v] > 0 {
                let next = lcm(scale, row_count[v]);
                if next <= MAX_SCALE {
                    scale = next;
                }
            }
        }
        let mut seen = vec![0i64; n];
        let mut rows = Vec::with_capacity(packing.len());
        for row in &packing {
            let mut shares = Vec::new();
            for &(v, _) in row.iter() {
                let c = p.objective[v];
                if c >= 0 {
                    continue;
                }
                let total = c * scale;
                let k = row_count[v];
                let mut share = total / k;
                if seen[v] == 0 {
                    share += total - share * k;
                }
                seen[v] += 1;
                shares.push((v, share));
            }
            if !shares.is_empty() {
                rows.push(shares);
            }
        }
        let loose = (0..n)
            .filter(|&v| p.objective[v] < 0 && row_count[v] == 0)
            .collect();

        let mut order: Vec<Var> = (0..p.num_decisions).collect();
        order.sort_by_key(|&v| (std::cmp::Reverse(p.objective[v].abs()), v));
        order.extend(p.num_decisions..n);

        Search {
            p,
            occ,
            val: vec![UNSET; n],
            minact,
            trail: Vec::new(),
            fixed_obj: p.constant,
            order,
            rows,
            loose,
            scale,
            best: None,
            nodes: 0,
            deadline,
            timed_out: false,
        }
    }

    /// Queues every implication of constraint `c`; `false` on conflict.
    fn implications(&self, c: usize, queue: &mut Vec<(Var, bool)>) -> bool {
        let con = &self.p.constraints[c];
        let slack = con.rhs - self.minact[c];
        if slack < 0 {
            return false;
        }
        for &(v, a) in &con.terms {
            if self.val[v] == UNSET {
                if a > slack {
                    queue.push((v, false));
                } else if -a > slack {
                    queue.push((v, true));
                }
            }
        }
        true
    }

    fn assign(&mut self, var: Var, value: bool) -> bool {
        let mut queue = vec![(var, value)];
        while let Some((x, b)) = queue.pop() {
            if self.val[x] != UNSET {
                if (self.val[x] == 1) != b {
                    return false;
                }
                continue;
            }
            self.val[x] = b as i8;
            self.trail.push(x);
            if b {
                self.fixed_obj += self.p.objective[x];
            }
            for k in 0..self.occ[x].len() {
                let (c, a) = self.occ[x][k];
                let delta = a * b as i64 - a.min(0);
                if delta != 0 {
                    self.minact[c] += delta;
                    if !self.implications(c, &mut queue) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let x = self.trail.pop().unwrap();
            let b = self.val[x] == 1;
            if b {
                self.fixed_obj -= self.p.objective[x];
            }
            for &(c, a) in &self.occ[x] {
                self.minact[c] -= a * b as i64 - a.min(0);
            }
            self.val[x] = UNSET;
        }
    }

    fn bound(&self) -> i64 {
        let mut b = self.fixed_obj * self.scale;
        for &v in &self.loose {
            if self.val[v] == UNSET {
                b += self.p.objective[v] * self.scale;
            }
        }
        for row in &self.rows {
            let mut m = 0;
            for &(v, share) in row {
                if self.val[v] == UNSET {
                    m = m.min(share);
                }
            }
            b += m;
        }
        b
    }

    fn leaf(&mut self) {
        let selected: Vec<Var> = (0..self.p.num_decisions)
            .filter(|&v| self.val[v] == 1)
            .collect();
        let cand = Incumbent {
            objective: self.fixed_obj,
            selected,
            values: self.val.iter().map(|&b| b == 1).collect(),
        };
        if self.best.as_ref().is_none_or(|b| cand.better_than(b)) {
            self.best = Some(cand);
        }
    }

    fn dfs(&mut self, depth: usize) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(1024) {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    self.timed_out = true;
                }
            }
        }
        if self.timed_out {
            return;
        }
        if let Some(best) = &self.best {
            if self.bound() > best.objective * self.scale {
                return;
            }
        }
        let mut depth = depth;
        while depth < self.order.len() && self.val[self.order[depth]] != UNSET {
            depth += 1;
        }
        if depth == self.order.len() {
            self.leaf();
            return;
        }
        let var = self.order[depth];
        for value in [true, false] {
            let mark = self.trail.len();
            if self.assign(var, value) {
                self.dfs(depth + 1);
            }
            self.undo(mark);
            if self.timed_out {
                return;
            }
        }
    }

    fn root(&mut self) -> bool {
        let mut queue = Vec::new();
        for c in 0..self.p.constraints.len() {
            if !self.implications(c, &mut queue) {
                return false;
            }
        }
        for (v, b) in queue {
            if !self.assign(v, b) {
                return false;
            }
        }
        true
    }
}

/// Minimizes `p`. With `timeout = None` the search always completes;
/// otherwise the best assignment found so far is returned once it expires.
pub fn solve(p: &IlpProblem, timeout: Option<Duration>) -> Assignment {
    let deadline = timeout.map(|t| Instant::now() + t);
    let mut s = Search::new(p, deadline);
    if !s.root() {
        return Assignment {
            values: vec![false; p.num_vars()],
            objective: 0,
            status: Status::Infeasible,
            nodes: 0,
        };
    }
    let root_mark = s.trail.len();

    // The all-zero decision vector, completed by propagation, seeds the
    // incumbent.
    let mut ok = true;
    for v in 0..p.num_decisions {
        if s.val[v] == UNSET && !s.assign(v, false) {
            ok = false;
            break;
        }
    }
    if ok && s.val.iter().all(|&b| b != UNSET) {
        s.leaf();
    }
    s.undo(root_mark);

    s.dfs(0);
    let status = if s.timed_out {
        Status::Feasible
    } else {
        Status::Optimal
    };
    match s.best {
        Some(b) => Assignment {
            values: b.values,
            objective: b.objective,
            status,
            nodes: s.nodes,
        },
        None => Assignment {
            values: vec![false; p.num_vars()],
            objective: 0,
            status: Status::Infeasible,
            nodes: s.nodes,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::super::linear::{Gate, Linearizer, Lit, Origin};
    use super::*;

    fn exhaustive(p: &IlpProblem) -> Option<(i64, Vec<Var>)> {
        let n = p.num_decisions;
        let mut best: Option<(i64, std::cmp::Reverse<usize>, Vec<Var>)> = None;
        for bits in 0..1u64 << n {
            let d: Vec<bool> = (0..n).map(|k| bits >> k & 1 == 1).collect();
            let x = p.complete(&d);
            if !p.satisfied(&x) {
                continue;
            }
            let sel: Vec<Var> = (0..n).filter(|&v| d[v]).collect();
            let key = (p.objective_value(&x), std::cmp::Reverse(sel.len()), sel);
            if best.as_ref().is_none_or(|b| key < *b) {
                best = Some(key);
            }
        }
        best.map(|(o, _, s)| (o, s))
    }

    #[test]
    fn empty_problem() {
        let p = IlpProblem::new(Vec::new());
        let a = solve(&p, None);
        assert_eq!(a.status, Status::Optimal);
        assert_eq!(a.objective, 0);
    }

    #[test]
    fn small_problems_match_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=8);
            let labels = (0..n).map(|k| format!("d{k}")).collect();
            let mut lz = Linearizer::new(labels);
            for v in 0..n {
                lz.add_term(rng.gen_range(-3..=1), Gate::Lit(Lit::pos(v)));
            }
            for _ in 0..rng.gen_range(0..4) {
                let k = rng.gen_range(2..=3.min(n).max(2));
                if n < 2 {
                    break;
                }
                let gates: Vec<Gate> = (0..k)
                    .map(|_| {
                        let v = rng.gen_range(0..n);
                        Gate::Lit(if rng.gen_bool(0.3) { Lit::neg(v) } else { Lit::pos(v) })
                    })
                    .collect();
                let g = if rng.gen_bool(0.5) { lz.or(&gates) } else { lz.and(&gates) };
                lz.add_term(rng.gen_range(0..=3), g);
            }
            let mut p = lz.finish();
            for _ in 0..rng.gen_range(0..4) {
                if n < 2 {
                    break;
                }
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b {
                    p.add_constraint(vec![(a, 1), (b, 1)], 1, Origin::Overlap);
                }
            }
            let a = solve(&p, None);
            let (obj, sel) = exhaustive(&p).unwrap();
            assert_eq!(a.status, Status::Optimal);
            assert_eq!(a.objective, obj);
            assert_eq!(a.selected(n), sel);
            assert!(p.satisfied(&a.values));
            assert_eq!(p.objective_value(&a.values), a.objective);
        }
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let mut p = IlpProblem::new(vec!["a".into()]);
        p.add_constraint(vec![(0, -1)], -1, Origin::Cut);
        p.add_constraint(vec![(0, 1)], 0, Origin::Cut);
        assert_eq!(solve(&p, None).status, Status::Infeasible);
    }
}
