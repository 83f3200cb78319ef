use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use slp_core::candidates::{ItemView, Universe};
use slp_core::costmodel::{TableCostModel, UnitCostModel};
use slp_core::emit::{Elem, VInst};
use slp_core::fuzz;
use slp_core::ilp::solver::Status;
use slp_core::ilp::{check_packing, encode, evaluate_objective, solve_packing};
use slp_core::ir::{parse_function, DepGraph, Function, Opcode, StmtId};
use slp_core::permute::{compose, identity, inverse, is_permutation, propagate_masks, select_permutations, Limits, VecGraph};
use slp_core::pipeline::{self, choose_packs, vectorize, Options};

fn program(seed: u64, size: usize) -> (String, Function, DepGraph) {
    let text = fuzz::random_program(&mut fuzz::rng(seed), "p", size);
    let f = parse_function(&text).unwrap();
    let g = DepGraph::build(&f);
    (text, f, g)
}

fn naive_edge(f: &Function, a: StmtId, b: StmtId) -> bool {
    let (sa, sb) = (f.stmt(a), f.stmt(b));
    if sb.operands.contains(&a) {
        return true;
    }
    sa.opcode.is_memory()
        && sb.opcode.is_memory()
        && (sa.opcode == Opcode::Store || sb.opcode == Opcode::Store)
        && sa.mem == sb.mem
}

fn naive_reaches(f: &Function, from: StmtId, to: StmtId) -> bool {
    let mut stack = vec![from];
    let mut seen = HashSet::new();
    while let Some(x) = stack.pop() {
        for s in f.stmts() {
            if s.id > x && naive_edge(f, x, s.id) {
                if s.id == to {
                    return true;
                }
                if seen.insert(s.id) {
                    stack.push(s.id);
                }
            }
        }
    }
    false
}

fn naive_pairable(f: &Function, g: &DepGraph, a: StmtId, b: StmtId) -> bool {
    let (sa, sb) = (f.stmt(a), f.stmt(b));
    let same_shape = sa.opcode == sb.opcode
        && sa.ty == sb.ty
        && sa.block == sb.block
        && sa.opcode != Opcode::Const
        && sa.operands.iter().zip(&sb.operands).all(|(&x, &y)| f.stmt(x).ty == f.stmt(y).ty);
    if !same_shape || g.dependent(a, b) {
        return false;
    }
    match (sa.mem, sb.mem) {
        (Some(x), Some(y)) => x.array == y.array && x.index.abs_diff(y.index) == 1,
        _ => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn printed_programs_parse_back(seed in any::<u64>(), size in 1usize..30) {
        let (_, f, _) = program(seed, size);
        let again = parse_function(&f.to_string()).unwrap();
        prop_assert_eq!(again, f);
    }

    #[test]
    fn reachability_matches_naive_search(seed in any::<u64>(), size in 1usize..20) {
        let (_, f, g) = program(seed, size);
        for a in f.stmts() {
            for b in f.stmts() {
                prop_assert_eq!(g.reaches(a.id, b.id), naive_reaches(&f, a.id, b.id), "{} -> {}", a.id.index(), b.id.index());
            }
        }
    }

    #[test]
    fn candidate_pairs_match_naive_rules(seed in any::<u64>(), size in 1usize..26) {
        let (_, f, g) = program(seed, size);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        let got: BTreeSet<(usize, usize)> = u.pairs.iter().copied().collect();
        let mut want = BTreeSet::new();
        for a in f.stmts() {
            for b in f.stmts() {
                if a.id < b.id && naive_pairable(&f, &g, a.id, b.id) {
                    want.insert((view.unit_of(a.id), view.unit_of(b.id)));
                }
            }
        }
        prop_assert_eq!(got, want);
        for (k, partners) in u.feasible.iter().enumerate() {
            for &j in partners {
                prop_assert!(u.feasible[j].contains(&k));
            }
        }
    }

    #[test]
    fn solved_packings_are_legal(seed in any::<u64>(), size in 2usize..24) {
        let (_, f, g) = program(seed, size);
        let view = ItemView::scalars(&f, &g);
        let u = Universe::build(&view);
        let form = encode(&view, &u, &UnitCostModel).unwrap();
        let sol = solve_packing(&view, &u, &form, None);
        prop_assert_eq!(sol.status, Status::Optimal);
        prop_assert!(check_packing(&view, &u, &sol.selected).is_ok());
        prop_assert_eq!(evaluate_objective(&view, &u, &form, &sol.selected).unwrap(), sol.objective);
        prop_assert!(sol.objective <= 0);
    }

    #[test]
    fn every_strategy_yields_a_valid_pack_set(seed in any::<u64>(), size in 2usize..24, wide in any::<bool>()) {
        let (_, f, g) = program(seed, size);
        let max_lanes = if wide { 4 } else { 2 };
        for s in pipeline::Strategy::ALL {
            let ps = choose_packs(&f, &g, &UnitCostModel, &Options { strategy: s, max_lanes, ..Options::default() }).unwrap();
            prop_assert!(ps.check(&f, &g).is_ok(), "{s}: {:?}", ps.check(&f, &g));
            prop_assert!(ps.packs.iter().all(|p| p.width() <= max_lanes));
        }
    }

    #[test]
    fn chosen_masks_are_candidates(seed in any::<u64>(), size in 2usize..24) {
        let (_, f, g) = program(seed, size);
        let ps = choose_packs(&f, &g, &UnitCostModel, &Options::default()).unwrap();
        let vg = VecGraph::build(&f, &ps);
        let sets = propagate_masks(&vg);
        if let Ok(sel) = select_permutations(&vg, &sets.candidates, &UnitCostModel, Limits::default()) {
            for (v, node) in vg.nodes.iter().enumerate() {
                prop_assert!(is_permutation(&sel.masks[v]));
                prop_assert!(sets.candidates[v].contains(&sel.masks[v]));
                if let Some(fixed) = &node.fixed {
                    prop_assert_eq!(&sel.masks[v], fixed);
                }
            }
            prop_assert_eq!(vg.total_cost(&sel.masks, &UnitCostModel).unwrap(), sel.cost);
        }
    }

    #[test]
    fn mask_inverse_composes_to_identity(m in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        prop_assert_eq!(compose(&m, &inverse(&m)), identity(m.len()));
        prop_assert_eq!(compose(&inverse(&m), &m), identity(m.len()));
    }

    #[test]
    fn emitted_code_is_well_formed(seed in any::<u64>(), size in 2usize..28, wide in any::<bool>()) {
        let (text, f, g) = program(seed, size);
        let max_lanes = if wide { 4 } else { 2 };
        for s in pipeline::Strategy::ALL {
            let out = vectorize(&f, &g, &UnitCostModel, &Options { strategy: s, max_lanes, ..Options::default() }).unwrap();
            let mut defined = HashSet::new();
            let mut scalars = HashSet::new();
            let mut covered = 0;
            let mut packs = HashSet::new();
            for inst in out.code.blocks.iter().flat_map(|b| &b.insts) {
                for r in inst.reads() {
                    prop_assert!(defined.contains(&r), "{s}: {r} read before definition\n{text}\n{}", out.code);
                }
                if let Some(d) = inst.defines() {
                    prop_assert!(defined.insert(d), "{s}: {d} defined twice");
                }
                match inst {
                    VInst::Scalar(id) => {
                        prop_assert!(scalars.insert(*id));
                        covered += 1;
                    }
                    VInst::Extract { dst, .. } => prop_assert!(scalars.insert(*dst), "{s}: extracted twice"),
                    VInst::VLoad { lanes, .. } | VInst::VStore { lanes, .. } | VInst::VOp { lanes, .. } => covered += lanes,
                    VInst::Pack { elems, .. } => {
                        let key: Vec<String> = elems.iter().map(|e| match e {
                            Elem::Scalar(id) => format!("s{}", id.index()),
                            Elem::Vector(r) => r.to_string(),
                        }).collect();
                        prop_assert!(packs.insert(key), "{s}: identical pack built twice");
                    }
                    VInst::Perm { .. } => {}
                }
            }
            prop_assert_eq!(covered, f.len(), "{}: every statement runs once", s);
        }
    }

    #[test]
    fn vectorizing_is_deterministic(seed in any::<u64>(), size in 2usize..24) {
        let (_, f, g) = program(seed, size);
        let cm = TableCostModel::haswell_like();
        let opts = Options { max_lanes: 4, ..Options::default() };
        let a = vectorize(&f, &g, &cm, &opts).unwrap();
        let b = vectorize(&f, &g, &cm, &opts).unwrap();
        prop_assert_eq!(a.code.to_string(), b.code.to_string());
        prop_assert_eq!(a.counts, b.counts);
    }
}
