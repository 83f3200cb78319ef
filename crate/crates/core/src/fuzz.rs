//! Seeded random programs, inputs and lane-order graphs for the oracle
//! tests.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::candidates::{ItemView, Universe};
use crate::ir::{Function, Scalar, Type};
use crate::permute::{Mask, VecEdge, VecGraph, VecNode};
use crate::verify::MachineState;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const TYPES: [Type; 4] = [Type::I32, Type::I64, Type::F32, Type::F64];

fn ops(ty: Type) -> [&'static str; 4] {
    if ty.is_float() {
        ["fadd", "fsub", "fmul", "fdiv"]
    } else {
        ["add", "sub", "mul", "div"]
    }
}

fn literal(rng: &mut impl Rng, ty: Type) -> String {
    if ty.is_float() {
        format!("{:?}", rng.gen_range(-64i32..64) as f64 / 8.0)
    } else {
        rng.gen_range(1i32..10).to_string()
    }
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    text: String,
    arrays: Vec<(String, Type, u32)>,
    vals: Vec<(String, Type)>,
    next: usize,
    emitted: usize,
}

impl<R: Rng> Gen<'_, R> {
    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("%t{}", self.next - 1)
    }

    fn line(&mut self, s: String) {
        writeln!(self.text, "    {s}").unwrap();
        self.emitted += 1;
    }

    fn array_of(&mut self, ty: Type) -> Option<usize> {
        let ids: Vec<usize> = (0..self.arrays.len()).filter(|&k| self.arrays[k].1 == ty).collect();
        ids.choose(self.rng).copied()
    }

    /// A random existing value of `ty`, biased towards recent ones,
    /// loading or materializing one if none exists.
    fn value(&mut self, ty: Type) -> String {
        let pool: Vec<usize> = (0..self.vals.len()).filter(|&k| self.vals[k].1 == ty).collect();
        if pool.is_empty() || self.rng.gen_bool(0.05) {
            return self.fresh_value(ty);
        }
        let window = pool.len().min(6);
        let k = if self.rng.gen_bool(0.7) {
            pool[pool.len() - 1 - self.rng.gen_range(0..window)]
        } else {
            *pool.choose(self.rng).unwrap()
        };
        self.vals[k].0.clone()
    }

    fn fresh_value(&mut self, ty: Type) -> String {
        let dst = self.fresh();
        match self.array_of(ty) {
            Some(a) if self.rng.gen_bool(0.8) => {
                let (name, _, len) = self.arrays[a].clone();
                let i = self.rng.gen_range(0..len);
                self.line(format!("{dst} = load {name}[{i}] : {ty}"));
            }
            _ => {
                let lit = literal(self.rng, ty);
                self.line(format!("{dst} = const {lit} : {ty}"));
            }
        }
        self.vals.push((dst.clone(), ty));
        dst
    }

    fn op(&mut self, ty: Type, op: &str, a: String, b: String) -> String {
        let dst = self.fresh();
        self.line(format!("{dst} = {op} {a}, {b} : {ty}"));
        dst
    }

    fn step(&mut self, ty: Type) {
        let roll = self.rng.gen_range(0..100);
        let arr = self.array_of(ty);
        match (roll, arr) {
            (0..=19, Some(a)) => {
                let (name, _, len) = self.arrays[a].clone();
                let run = if len >= 4 && self.rng.gen_bool(0.3) { 4 } else { 2 }.min(len);
                let base = self.rng.gen_range(0..=len - run);
                let mut idx: Vec<u32> = (base..base + run).collect();
                if self.rng.gen_bool(0.3) {
                    idx.shuffle(self.rng);
                }
                for i in idx {
                    let dst = self.fresh();
                    self.line(format!("{dst} = load {name}[{i}] : {ty}"));
                    self.vals.push((dst, ty));
                }
            }
            (20..=59, _) => {
                let op = *ops(ty)[..if self.rng.gen_bool(0.15) { 4 } else { 3 }].choose(self.rng).unwrap();
                let lanes = if self.rng.gen_bool(0.25) { 4 } else { 2 };
                let mut outs = Vec::new();
                for _ in 0..lanes {
                    let (a, b) = (self.value(ty), self.value(ty));
                    outs.push(self.op(ty, op, a, b));
                }
                for o in outs {
                    self.vals.push((o, ty));
                }
            }
            (60..=69, _) => {
                let op = *ops(ty)[..3].choose(self.rng).unwrap();
                let (a, b) = (self.value(ty), self.value(ty));
                let o = self.op(ty, op, a, b);
                self.vals.push((o, ty));
            }
            (70..=74, _) => {
                self.fresh_value(ty);
            }
            (75..=94, Some(a)) => {
                let (name, _, len) = self.arrays[a].clone();
                let run = if len >= 4 && self.rng.gen_bool(0.25) { 4 } else { 2 }.min(len);
                let base = self.rng.gen_range(0..=len - run);
                let mut idx: Vec<u32> = (base..base + run).collect();
                if self.rng.gen_bool(0.3) {
                    idx.shuffle(self.rng);
                }
                for i in idx {
                    let v = self.value(ty);
                    self.line(format!("store {name}[{i}], {v} : {ty}"));
                }
            }
            (_, Some(a)) => {
                let (name, _, len) = self.arrays[a].clone();
                let i = self.rng.gen_range(0..len);
                let v = self.value(ty);
                self.line(format!("store {name}[{i}], {v} : {ty}"));
            }
            _ => {
                self.fresh_value(ty);
            }
        }
    }
}

/// Text of a random loop-free function with roughly `size` statements
/// spread over up to three blocks. Pairs and quads of isomorphic
/// statements and adjacent accesses are planted on purpose.
pub fn random_program(rng: &mut impl Rng, name: &str, size: usize) -> String {
    let n_types = if rng.gen_bool(0.7) { 1 } else { 2 };
    let types: Vec<Type> = TYPES.choose_multiple(rng, n_types).copied().collect();
    let n_arrays = rng.gen_range(2..=4);
    let arrays: Vec<(String, Type, u32)> = (0..n_arrays)
        .map(|k| {
            let ty = types[k % types.len()];
            (format!("A{k}"), ty, rng.gen_range(4..=8))
        })
        .collect();
    let mut gen = Gen {
        rng,
        text: String::new(),
        arrays,
        vals: Vec::new(),
        next: 0,
        emitted: 0,
    };
    let blocks = gen.rng.gen_range(1..=3);
    let mut body = String::new();
    for b in 0..blocks {
        gen.text.clear();
        let target = size * (b + 1) / blocks;
        while gen.emitted < target.max(1) {
            let ty = *types.choose(gen.rng).unwrap();
            gen.step(ty);
        }
        writeln!(body, "  block b{b}:").unwrap();
        body.push_str(&gen.text);
        if b + 1 < blocks && gen.rng.gen_bool(0.5) {
            writeln!(body, "    br b{}", b + 1).unwrap();
        }
    }
    let mut out = format!("func {name} {{\n");
    for (n, ty, len) in &gen.arrays {
        writeln!(out, "  array {n} : {ty} x {len}").unwrap();
    }
    let mut exports: Vec<String> = Vec::new();
    for (v, _) in &gen.vals {
        if gen.rng.gen_bool(0.08) && !exports.contains(v) {
            exports.push(v.clone());
        }
    }
    if !exports.is_empty() {
        writeln!(out, "  export {}", exports.join(", ")).unwrap();
    }
    out.push_str(&body);
    out.push_str("}\n");
    out
}

/// Every array element initialized: integers in 1..=9 or their negation,
/// floats on a 1/8 grid.
pub fn random_state(f: &Function, rng: &mut impl Rng) -> MachineState {
    let mut st = MachineState::empty(f);
    for (a, vals) in f.arrays.iter().zip(&mut st.arrays) {
        for v in vals.iter_mut() {
            let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
            let m = rng.gen_range(1..=9) * sign;
            *v = Some(match a.elem {
                Type::I32 => Scalar::I32(m),
                Type::I64 => Scalar::I64(m as i64),
                Type::F32 => Scalar::F32(rng.gen_range(-64i32..64) as f32 / 8.0),
                Type::F64 => Scalar::F64(rng.gen_range(-64i32..64) as f64 / 8.0),
            });
        }
    }
    st
}

fn random_mask(rng: &mut impl Rng, w: usize) -> Mask {
    let mut m: Mask = (0..w).collect();
    m.shuffle(rng);
    m
}

/// A random acyclic lane-order graph with explicit candidate sets.
pub fn random_vec_graph(rng: &mut impl Rng, max_nodes: usize, max_candidates: usize) -> (VecGraph, Vec<Vec<Mask>>) {
    let n = rng.gen_range(1..=max_nodes);
    let w = *[2usize, 3, 4].choose(rng).unwrap();
    let mut g = VecGraph::default();
    let mut cands = Vec::with_capacity(n);
    for v in 0..n {
        let fixed = rng.gen_bool(0.3).then(|| random_mask(rng, w));
        let set = match &fixed {
            Some(m) => vec![m.clone()],
            None => {
                let k = rng.gen_range(1..=max_candidates);
                let mut s: Vec<Mask> = (0..k).map(|_| random_mask(rng, w)).collect();
                s.sort();
                s.dedup();
                s
            }
        };
        cands.push(set);
        g.nodes.push(VecNode {
            width: w,
            fixed,
            label: format!("n{v}"),
        });
    }
    for u in 0..n {
        for o in u + 1..n {
            if rng.gen_bool(0.4) {
                let positions = if rng.gen_bool(0.2) { 2 } else { 1 };
                for position in 0..positions {
                    g.edges.push(VecEdge {
                        user: u,
                        operand: o,
                        position,
                        wiring: random_mask(rng, w),
                    });
                }
            }
        }
    }
    (g, cands)
}

/// A random selection of candidate pairs that is overlap-free and can be
/// scheduled.
pub fn random_packing(view: &ItemView, u: &Universe, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.shuffle(rng);
    let keep = rng.gen_range(0.2..0.9);
    let mut used = vec![false; view.items().len()];
    let mut chosen: Vec<usize> = Vec::new();
    for p in order {
        let (a, b) = u.pairs[p];
        if used[a] || used[b] || !rng.gen_bool(keep) {
            continue;
        }
        chosen.push(p);
        let pairs: Vec<(usize, usize)> = chosen.iter().map(|&q| u.pairs[q]).collect();
        if view.find_cycle(&pairs).is_some() {
            chosen.pop();
        } else {
            used[a] = true;
            used[b] = true;
        }
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_function;

    #[test]
    fn generated_programs_parse() {
        let mut r = rng(7);
        for k in 0..200 {
            let text = random_program(&mut r, &format!("p{k}"), 4 + k % 20);
            let f = parse_function(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
            let st = random_state(&f, &mut r);
            assert_eq!(st.arrays.len(), f.arrays.len());
        }
    }

    #[test]
    fn same_seed_same_program() {
        let a = random_program(&mut rng(3), "x", 12);
        let b = random_program(&mut rng(3), "x", 12);
        assert_eq!(a, b);
    }
}
