//! Statement-packing optimization over one [`Universe`] of candidate pairs.
//!
//! [`encode`] gathers every cost term with its boolean guard, [`linearize`]
//! turns them into a 0-1 linear program, and [`solve_packing`] runs the
//! branch-and-bound, adding a cut whenever the chosen packs cannot be
//! scheduled together. [`evaluate_objective`] and [`brute_force`] interpret
//! the same terms directly and serve as oracles.

pub mod linear;
pub mod solver;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::candidates::{ItemView, NonVecKey, Universe};
use crate::costmodel::{CostError, CostModel, ShuffleKind};

pub use linear::{Gate, IlpProblem, Linearizer, Lit, Origin};
pub use solver::{solve, Assignment, Status};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum IlpError {
    #[error("packs {0} and {1} share a statement")]
    Overlap(usize, usize),
    #[error("packs {0:?} cannot be scheduled together")]
    Unschedulable(Vec<usize>),
    #[error("{size} candidate pairs exceed the brute-force limit of {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Packing a candidate pair explicitly when it is not vectorized but some
/// consumer is.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VecPackTerm {
    pub pair: usize,
    pub users: Vec<usize>,
    pub cost: i64,
}

/// Packing a non-candidate operand tuple when any consumer is vectorized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonVecPackTerm {
    pub key: NonVecKey,
    pub users: Vec<usize>,
    pub cost: i64,
}

/// Extracting item `item` from pair `pair`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UnpackTerm {
    /// Paid whenever the pair is vectorized.
    Always { pair: usize, item: usize, cost: i64 },
    /// Paid when the pair is vectorized and fewer than `uses.len()` of the
    /// item's uses have one of their listed partner packs vectorized.
    Unless {
        pair: usize,
        item: usize,
        cost: i64,
        uses: Vec<Vec<usize>>,
    },
}

/// Every term of the objective and every eager constraint.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Formulation {
    pub labels: Vec<String>,
    pub savings: Vec<i64>,
    pub vec_pack: Vec<VecPackTerm>,
    pub non_vec_pack: Vec<NonVecPackTerm>,
    pub unpack: Vec<UnpackTerm>,
    /// Pairs sharing an item; at most one of each row may be chosen.
    pub overlap: Vec<Vec<usize>>,
    /// Pairs whose statements depend on each other in both directions.
    pub conflicts: Vec<(usize, usize)>,
}

impl Formulation {
    pub fn len(&self) -> usize {
        self.savings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.savings.is_empty()
    }
}

fn pair_savings(view: &ItemView, cm: &dyn CostModel, p: (usize, usize)) -> Result<i64, CostError> {
    let it = view.item(p.0);
    let w = view.width();
    if w == 1 {
        Ok(cm.vector_cost(it.opcode, it.ty, 2)? - 2 * cm.scalar_cost(it.opcode, it.ty)?)
    } else {
        Ok(cm.vector_cost(it.opcode, it.ty, 2 * w)? - 2 * cm.vector_cost(it.opcode, it.ty, w)?)
    }
}

fn non_vec_cost(view: &ItemView, cm: &dyn CostModel, key: &NonVecKey) -> Result<i64, CostError> {
    let w = view.width();
    let ty = view.function().stmt(key.sides[0][0]).ty;
    if w == 1 {
        return cm.pack_cost(ty, 2);
    }
    let left = view.item_for_tuple(&key.sides[0]);
    let right = view.item_for_tuple(&key.sides[1]);
    match (left, right) {
        (Some(a), Some(b)) if a == b => cm.shuffle_cost(ShuffleKind::Broadcast, 2 * w),
        (Some(_), Some(_)) => cm.shuffle_cost(ShuffleKind::InsertSubvector, 2 * w),
        _ => cm.pack_cost(ty, 2 * w),
    }
}

fn unpack_unit(view: &ItemView, cm: &dyn CostModel, item: usize) -> Result<i64, CostError> {
    let w = view.width();
    if w == 1 {
        let ty = view.item(item).ty;
        Ok(cm.unpack_cost(ty, 2, 0)?.max(cm.unpack_cost(ty, 2, 1)?))
    } else {
        cm.shuffle_cost(ShuffleKind::Generic, 2 * w)
    }
}

/// Collects all cost terms and eager constraints for `u`.
pub fn encode(view: &ItemView, u: &Universe, cm: &dyn CostModel) -> Result<Formulation, IlpError> {
    let mut form = Formulation {
        labels: (0..u.len()).map(|p| u.pair_label(view, p)).collect(),
        ..Formulation::default()
    };
    for &p in &u.pairs {
        form.savings.push(pair_savings(view, cm, p)?);
    }

    let w = view.width();
    for (&q, users) in &u.vec_vec_uses {
        let ty = view.item(u.pairs[q].0).ty;
        let cost = if w == 1 {
            cm.pack_cost(ty, 2)?
        } else {
            cm.shuffle_cost(ShuffleKind::InsertSubvector, 2 * w)?
        };
        form.vec_pack.push(VecPackTerm {
            pair: q,
            users: users.clone(),
            cost,
        });
    }
    for (key, users) in &u.non_vec_uses {
        form.non_vec_pack.push(NonVecPackTerm {
            key: key.clone(),
            users: users.clone(),
            cost: non_vec_cost(view, cm, key)?,
        });
    }

    for (p, &(a, b)) in u.pairs.iter().enumerate() {
        for (item, other) in [(a, b), (b, a)] {
            let cost = unpack_unit(view, cm, item)?;
            let uses = view.users(item);
            if view.is_exported(item) || uses.len() > view.users(other).len() {
                form.unpack.push(UnpackTerm::Always { pair: p, item, cost });
                continue;
            }
            if uses.is_empty() {
                continue;
            }
            let groups: Vec<Vec<usize>> = uses
                .iter()
                .map(|&use_unit| {
                    let mut g: Vec<usize> = view
                        .users(other)
                        .iter()
                        .filter_map(|&o| {
                            let items = view.items().len();
                            if use_unit < items && o < items {
                                u.pair_of(use_unit, o)
                            } else {
                                None
                            }
                        })
                        .collect();
                    g.sort_unstable();
                    g.dedup();
                    g
                })
                .collect();
            form.unpack.push(UnpackTerm::Unless {
                pair: p,
                item,
                cost,
                uses: groups,
            });
        }
    }

    let mut rows = vec![Vec::new(); view.items().len()];
    for (p, &(a, b)) in u.pairs.iter().enumerate() {
        rows[a].push(p);
        rows[b].push(p);
    }
    form.overlap = rows.into_iter().filter(|r| r.len() >= 2).collect();

    let reaches = |x: (usize, usize), y: (usize, usize)| {
        [x.0, x.1]
            .iter()
            .any(|&s| [y.0, y.1].iter().any(|&t| view.unit_reaches(s, t)))
    };
    for p in 0..u.len() {
        for q in p + 1..u.len() {
            let (x, y) = (u.pairs[p], u.pairs[q]);
            if [x.0, x.1].iter().any(|i| [y.0, y.1].contains(i)) {
                continue;
            }
            if reaches(x, y) && reaches(y, x) {
                form.conflicts.push((p, q));
            }
        }
    }
    Ok(form)
}

/// The linear 0-1 program equivalent to `form`. Decision variable `p` is
/// candidate pair `p`.
pub fn linearize(form: &Formulation) -> IlpProblem {
    let mut lz = Linearizer::new(form.labels.clone());
    let v = |p: usize| Gate::Lit(Lit::pos(p));
    for (p, &s) in form.savings.iter().enumerate() {
        lz.add_term(s, v(p));
    }
    for t in &form.vec_pack {
        let users: Vec<Gate> = t.users.iter().map(|&q| v(q)).collect();
        let any = lz.or(&users);
        let g = lz.and(&[Gate::Lit(Lit::neg(t.pair)), any]);
        lz.add_term(t.cost, g);
    }
    for t in &form.non_vec_pack {
        let users: Vec<Gate> = t.users.iter().map(|&q| v(q)).collect();
        let g = lz.or(&users);
        lz.add_term(t.cost, g);
    }
    for t in &form.unpack {
        match t {
            UnpackTerm::Always { pair, cost, .. } => lz.add_term(*cost, v(*pair)),
            UnpackTerm::Unless {
                pair, cost, uses, ..
            } => {
                let covered: Vec<Gate> = uses
                    .iter()
                    .map(|g| {
                        let gs: Vec<Gate> = g.iter().map(|&q| v(q)).collect();
                        lz.or(&gs)
                    })
                    .collect();
                let all = lz.below(&covered, uses.len() as i64);
                let g = lz.and(&[v(*pair), all]);
                lz.add_term(*cost, g);
            }
        }
    }
    for row in &form.overlap {
        let terms = row.iter().map(|&p| (p, 1)).collect();
        lz.problem.add_constraint(terms, 1, Origin::Overlap);
    }
    for &(p, q) in &form.conflicts {
        lz.problem.add_constraint(vec![(p, 1), (q, 1)], 1, Origin::Conflict);
    }
    lz.finish()
}

/// Rejects selections that overlap or cannot be scheduled.
pub fn check_packing(view: &ItemView, u: &Universe, selected: &[usize]) -> Result<(), IlpError> {
    let mut owner = vec![usize::MAX; view.items().len()];
    for &p in selected {
        let (a, b) = u.pairs[p];
        for i in [a, b] {
            if owner[i] != usize::MAX {
                return Err(IlpError::Overlap(owner[i], p));
            }
            owner[i] = p;
        }
    }
    let pairs: Vec<(usize, usize)> = selected.iter().map(|&p| u.pairs[p]).collect();
    if let Some(cycle) = view.find_cycle(&pairs) {
        return Err(IlpError::Unschedulable(
            cycle.into_iter().map(|k| selected[k]).collect(),
        ));
    }
    Ok(())
}

/// Direct interpretation of every objective term on a selection.
pub fn evaluate_objective(
    view: &ItemView,
    u: &Universe,
    form: &Formulation,
    selected: &[usize],
) -> Result<i64, IlpError> {
    check_packing(view, u, selected)?;
    let mut on = vec![false; u.len()];
    for &p in selected {
        on[p] = true;
    }
    Ok(objective_on(form, &on))
}

fn objective_on(form: &Formulation, on: &[bool]) -> i64 {
    let any = |ps: &[usize]| ps.iter().any(|&q| on[q]);
    let mut total = 0;
    for (p, &s) in form.savings.iter().enumerate() {
        if on[p] {
            total += s;
        }
    }
    for t in &form.vec_pack {
        if !on[t.pair] && any(&t.users) {
            total += t.cost;
        }
    }
    for t in &form.non_vec_pack {
        if any(&t.users) {
            total += t.cost;
        }
    }
    for t in &form.unpack {
        match t {
            UnpackTerm::Always { pair, cost, .. } => {
                if on[*pair] {
                    total += cost;
                }
            }
            UnpackTerm::Unless {
                pair, cost, uses, ..
            } => {
                let covered = uses.iter().filter(|g| any(g)).count();
                if on[*pair] && covered < uses.len() {
                    total += cost;
                }
            }
        }
    }
    total
}

/// Result of one packing optimization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Solution {
    /// Chosen candidate pairs, ascending.
    pub selected: Vec<usize>,
    pub objective: i64,
    pub status: Status,
    pub cuts: usize,
    pub nodes: u64,
}

/// Optimal selection by exhaustive enumeration; same tie-breaking as the
/// solver.
pub fn brute_force(
    view: &ItemView,
    u: &Universe,
    form: &Formulation,
    limit: usize,
) -> Result<Solution, IlpError> {
    if u.len() > limit {
        return Err(IlpError::TooLarge {
            size: u.len(),
            limit,
        });
    }
    struct Walk<'a, 'v> {
        view: &'a ItemView<'v>,
        u: &'a Universe,
        form: &'a Formulation,
        used: Vec<bool>,
        on: Vec<bool>,
        chosen: Vec<usize>,
        best: Option<(i64, std::cmp::Reverse<usize>, Vec<usize>)>,
    }
    impl Walk<'_, '_> {
        fn go(&mut self, p: usize) {
            if p == self.u.len() {
                if self.form.conflicts.iter().any(|&(a, b)| self.on[a] && self.on[b]) {
                    return;
                }
                let pairs: Vec<(usize, usize)> =
                    self.chosen.iter().map(|&q| self.u.pairs[q]).collect();
                if self.view.find_cycle(&pairs).is_some() {
                    return;
                }
                let key = (
                    objective_on(self.form, &self.on),
                    std::cmp::Reverse(self.chosen.len()),
                    self.chosen.clone(),
                );
                if self.best.as_ref().is_none_or(|b| key < *b) {
                    self.best = Some(key);
                }
                return;
            }
            let (a, b) = self.u.pairs[p];
            if !self.used[a] && !self.used[b] {
                self.used[a] = true;
                self.used[b] = true;
                self.on[p] = true;
                self.chosen.push(p);
                self.go(p + 1);
                self.chosen.pop();
                self.on[p] = false;
                self.used[a] = false;
                self.used[b] = false;
            }
            self.go(p + 1);
        }
    }
    let mut walk = Walk {
        view,
        u,
        form,
        used: vec![false; view.items().len()],
        on: vec![false; u.len()],
        chosen: Vec::new(),
        best: None,
    };
    walk.go(0);
    let (objective, _, selected) = walk.best.expect("the empty selection is always legal");
    Ok(Solution {
        selected,
        objective,
        status: Status::Optimal,
        cuts: 0,
        nodes: 0,
    })
}

/// Solves the packing problem, cutting off unschedulable selections until
/// the answer can be scheduled. If time runs out first, packs on the
/// offending cycle are dropped until it can.
pub fn solve_packing(
    view: &ItemView,
    u: &Universe,
    form: &Formulation,
    timeout: Option<Duration>,
) -> Solution {
    let mut problem = linearize(form);
    let deadline = timeout.map(|t| Instant::now() + t);
    let mut cuts = 0;
    let mut nodes = 0;
    loop {
        let remaining = deadline.map(|d| d.saturating_duration_since(Instant::now()));
        let a = solve(&problem, remaining);
        nodes += a.nodes;
        assert_ne!(a.status, Status::Infeasible, "the empty packing is always feasible");
        let mut selected = a.selected(u.len());
        match check_packing(view, u, &selected) {
            Ok(()) => {
                return Solution {
                    selected,
                    objective: a.objective,
                    status: a.status,
                    cuts,
                    nodes,
                }
            }
            Err(IlpError::Unschedulable(cycle)) if a.status == Status::Optimal => {
                problem.add_cut(&cycle);
                cuts += 1;
            }
            Err(IlpError::Unschedulable(_)) => {
                while let Err(IlpError::Unschedulable(cycle)) = check_packing(view, u, &selected) {
                    let drop = *cycle.iter().max().unwrap();
                    selected.retain(|&p| p != drop);
                }
                let objective = evaluate_objective(view, u, form, &selected)
                    .expect("repaired packing is legal");
                return Solution {
                    selected,
                    objective,
                    status: Status::Feasible,
                    cuts,
                    nodes,
                };
            }
            Err(e) => panic!("solver returned an illegal packing: {e}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::UnitCostModel;
    use crate::ir::{parse_function, DepGraph};

    const CROSS: &str = "
func cross {
  array A : i32 x 4
  block b:
    %c = const 1 : i32
    %a1 = add %c, %c : i32
    %a2 = add %c, %c : i32
    %b1 = mul %a1, %c : i32
    %b2 = mul %c, %c : i32
    %a3 = add %b2, %c : i32
}
";

    #[test]
    fn circular_pairs_conflict() {
        // x1 -> y1 and y2 -> x2, so {x1,x2} and {y1,y2} exclude each other.
        let text = "
func cyc {
  block b:
    %c = const 1 : i32
    %x1 = add %c, %c : i32
    %y2 = mul %c, %c : i32
    %y1 = mul %x1, %c : i32
    %x2 = add %y2, %c : i32
}
";
        let f = parse_function(text).unwrap();
        let g = DepGraph::build(&f);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        let form = encode(&view, &u, &UnitCostModel).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(form.conflicts, vec![(0, 1)]);
        assert!(matches!(
            evaluate_objective(&view, &u, &form, &[0, 1]),
            Err(IlpError::Unschedulable(_))
        ));
        let sol = solve_packing(&view, &u, &form, None);
        assert!(sol.selected.len() <= 1);
        assert_eq!(sol.objective, brute_force(&view, &u, &form, 20).unwrap().objective);

        let f = parse_function(CROSS).unwrap();
        let g = DepGraph::build(&f);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        let form = encode(&view, &u, &UnitCostModel).unwrap();
        let bf = brute_force(&view, &u, &form, 20).unwrap();
        let sol = solve_packing(&view, &u, &form, None);
        assert_eq!(sol.objective, bf.objective);
        assert_eq!(sol.selected, bf.selected);
    }

    #[test]
    fn empty_universe() {
        let f = parse_function("func e {\n}\n").unwrap();
        let g = DepGraph::build(&f);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        let form = encode(&view, &u, &UnitCostModel).unwrap();
        assert!(form.is_empty());
        assert_eq!(evaluate_objective(&view, &u, &form, &[]), Ok(0));
        let sol = solve_packing(&view, &u, &form, None);
        assert_eq!((sol.selected.len(), sol.objective, sol.status), (0, 0, Status::Optimal));
        assert_eq!(brute_force(&view, &u, &form, 20).unwrap().selected, Vec::<usize>::new());
    }
}
