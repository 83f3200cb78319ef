//! Vector code generation from a pack set and chosen lane orders.

use std::collections::{BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;

use crate::graph;
use crate::ir::{ArrayId, DepGraph, Function, Opcode, StmtId, Type};
use crate::packing::PackSet;
use crate::permute::{identity, mask_label, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VReg(pub u32);

impl fmt::Display for VReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%v{}", self.0)
    }
}

/// A source of lanes for a `pack`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Elem {
    Scalar(StmtId),
    /// Every lane of a narrower vector, in order.
    Vector(VReg),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VInst {
    /// An original statement executed as is.
    Scalar(StmtId),
    VLoad { dst: VReg, array: ArrayId, base: u32, lanes: usize, ty: Type },
    VStore { src: VReg, array: ArrayId, base: u32, lanes: usize, ty: Type },
    VOp { dst: VReg, op: Opcode, a: VReg, b: VReg, lanes: usize, ty: Type },
    Pack { dst: VReg, elems: Vec<Elem>, lanes: usize, ty: Type },
    /// Defines scalar `dst` from lane `lane`.
    Extract { dst: StmtId, src: VReg, lane: usize, lanes: usize, ty: Type },
    /// `dst[i] = src[mask[i]]`.
    Perm { dst: VReg, src: VReg, mask: Mask, ty: Type },
}

impl VInst {
    pub fn category(&self) -> Category {
        match self {
            VInst::Scalar(_) => Category::Scalar,
            VInst::VLoad { .. } | VInst::VStore { .. } | VInst::VOp { .. } => Category::Vector,
            VInst::Pack { .. } => Category::Packing,
            VInst::Extract { .. } => Category::Unpacking,
            VInst::Perm { .. } => Category::Permute,
        }
    }

    pub fn defines(&self) -> Option<VReg> {
        match self {
            VInst::VLoad { dst, .. }
            | VInst::VOp { dst, .. }
            | VInst::Pack { dst, .. }
            | VInst::Perm { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    pub fn reads(&self) -> Vec<VReg> {
        match self {
            VInst::VStore { src, .. } | VInst::Extract { src, .. } | VInst::Perm { src, .. } => vec![*src],
            VInst::VOp { a, b, .. } => vec![*a, *b],
            VInst::Pack { elems, .. } => elems
                .iter()
                .filter_map(|e| match e {
                    Elem::Vector(v) => Some(*v),
                    Elem::Scalar(_) => None,
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Scalar,
    Vector,
    Packing,
    Unpacking,
    Permute,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VBlock {
    pub name: String,
    pub insts: Vec<VInst>,
    pub branch: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorFunction {
    pub source: Function,
    pub blocks: Vec<VBlock>,
    pub num_vregs: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CategoryCounts {
    pub scalar: usize,
    pub vector: usize,
    pub packing: usize,
    pub unpacking: usize,
    pub permute: usize,
    pub total: usize,
}

impl fmt::Display for CategoryCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scalar: {}", self.scalar)?;
        writeln!(f, "vector: {}", self.vector)?;
        writeln!(f, "packing: {}", self.packing)?;
        writeln!(f, "unpacking: {}", self.unpacking)?;
        writeln!(f, "permute: {}", self.permute)?;
        writeln!(f, "total: {}", self.total)
    }
}

pub fn count_instructions(vf: &VectorFunction) -> CategoryCounts {
    let mut c = CategoryCounts::default();
    for inst in vf.blocks.iter().flat_map(|b| &b.insts) {
        match inst.category() {
            Category::Scalar => c.scalar += 1,
            Category::Vector => c.vector += 1,
            Category::Packing => c.packing += 1,
            Category::Unpacking => c.unpacking += 1,
            Category::Permute => c.permute += 1,
        }
    }
    c.total = c.scalar + c.vector + c.packing + c.unpacking + c.permute;
    c
}

struct Emitter<'f> {
    f: &'f Function,
    /// Pack of every statement, if any.
    pack_of: Vec<Option<usize>>,
    /// Pack lanes in emitted order.
    order: Vec<Vec<StmtId>>,
    pack_reg: Vec<Option<VReg>>,
    pack_by_set: HashMap<Vec<StmtId>, usize>,
    extracted: Vec<bool>,
    perms: HashMap<(usize, Vec<StmtId>), VReg>,
    packs: HashMap<Vec<StmtId>, VReg>,
    next: u32,
    out: Vec<VInst>,
}

impl Emitter<'_> {
    fn fresh(&mut self) -> VReg {
        self.next += 1;
        VReg(self.next - 1)
    }

    /// Makes `s` available as a scalar, extracting it once if it only
    /// exists in a vector.
    fn scalar(&mut self, s: StmtId) {
        let Some(p) = self.pack_of[s.index()] else { return };
        if std::mem::replace(&mut self.extracted[s.index()], true) {
            return;
        }
        let src = self.pack_reg[p].expect("operand pack not yet emitted");
        let lane = self.order[p].iter().position(|&l| l == s).unwrap();
        let st = self.f.stmt(s);
        self.out.push(VInst::Extract {
            dst: s,
            src,
            lane,
            lanes: self.order[p].len(),
            ty: st.ty,
        });
    }

    /// A register holding `tuple` lane by lane.
    fn vector(&mut self, tuple: &[StmtId]) -> VReg {
        let mut key = tuple.to_vec();
        key.sort_unstable();
        if let Some(&p) = self.pack_by_set.get(&key) {
            let src = self.pack_reg[p].expect("operand pack not yet emitted");
            if self.order[p] == tuple {
                return src;
            }
            if let Some(&r) = self.perms.get(&(p, tuple.to_vec())) {
                return r;
            }
            let mask = tuple
                .iter()
                .map(|s| self.order[p].iter().position(|l| l == s).unwrap())
                .collect();
            let dst = self.fresh();
            let ty = self.f.stmt(tuple[0]).ty;
            self.out.push(VInst::Perm { dst, src, mask, ty });
            self.perms.insert((p, tuple.to_vec()), dst);
            return dst;
        }
        if let Some(&r) = self.packs.get(tuple) {
            return r;
        }
        let n = tuple.len();
        let halves_packed = n >= 4
            && [&tuple[..n / 2], &tuple[n / 2..]].iter().all(|h| {
                let mut k = h.to_vec();
                k.sort_unstable();
                self.pack_by_set.contains_key(&k)
            });
        let elems = if halves_packed {
            vec![
                Elem::Vector(self.vector(&tuple[..n / 2])),
                Elem::Vector(self.vector(&tuple[n / 2..])),
            ]
        } else {
            for &s in tuple {
                self.scalar(s);
            }
            tuple.iter().map(|&s| Elem::Scalar(s)).collect()
        };
        let dst = self.fresh();
        let ty = self.f.stmt(tuple[0]).ty;
        self.out.push(VInst::Pack { dst, elems, lanes: n, ty });
        self.packs.insert(tuple.to_vec(), dst);
        dst
    }

    fn emit_pack(&mut self, p: usize) {
        let lanes = self.order[p].clone();
        let first = self.f.stmt(lanes[0]);
        let (ty, w) = (first.ty, lanes.len());
        let contiguous_base = || {
            let m = first.mem.unwrap();
            for (i, &s) in lanes.iter().enumerate() {
                let r = self.f.stmt(s).mem.unwrap();
                assert!(
                    r.array == m.array && r.index == m.index + i as u32,
                    "memory pack lanes are not in address order"
                );
            }
            m
        };
        let dst = match first.opcode {
            Opcode::Load => {
                let m = contiguous_base();
                let dst = self.fresh();
                self.out.push(VInst::VLoad { dst, array: m.array, base: m.index, lanes: w, ty });
                Some(dst)
            }
            Opcode::Store => {
                let m = contiguous_base();
                let tuple: Vec<StmtId> = lanes.iter().map(|&s| self.f.stmt(s).operands[0]).collect();
                let src = self.vector(&tuple);
                self.out.push(VInst::VStore { src, array: m.array, base: m.index, lanes: w, ty });
                None
            }
            Opcode::Const => unreachable!("constants are never packed"),
            op => {
                let ta: Vec<StmtId> = lanes.iter().map(|&s| self.f.stmt(s).operands[0]).collect();
                let tb: Vec<StmtId> = lanes.iter().map(|&s| self.f.stmt(s).operands[1]).collect();
                let a = self.vector(&ta);
                let b = self.vector(&tb);
                let dst = self.fresh();
                self.out.push(VInst::VOp { dst, op, a, b, lanes: w, ty });
                Some(dst)
            }
        };
        self.pack_reg[p] = dst;
    }
}

/// Schedules and lowers `f` with the packs of `ps`. Pack `k` is emitted in
/// lane order `lanes[masks[k][i]]`; an empty `masks` keeps each pack's
/// natural order. Panics if the packing cannot be scheduled.
pub fn emit(f: &Function, g: &DepGraph, ps: &PackSet, masks: &[Mask]) -> VectorFunction {
    let mut pack_of = vec![None; f.len()];
    let mut order = Vec::with_capacity(ps.packs.len());
    let mut pack_by_set = HashMap::new();
    for (k, p) in ps.packs.iter().enumerate() {
        let m = masks.get(k).cloned().unwrap_or_else(|| identity(p.width()));
        let lanes: Vec<StmtId> = m.iter().map(|&i| p.lanes[i]).collect();
        for &s in &lanes {
            pack_of[s.index()] = Some(k);
        }
        let mut key = lanes.clone();
        key.sort_unstable();
        pack_by_set.insert(key, k);
        order.push(lanes);
    }
    let mut em = Emitter {
        f,
        pack_of,
        order,
        pack_reg: vec![None; ps.packs.len()],
        pack_by_set,
        extracted: vec![false; f.len()],
        perms: HashMap::new(),
        packs: HashMap::new(),
        next: 0,
        out: Vec::new(),
    };

    // One node per pack, then one per statement outside every pack.
    let mut node_of = vec![0; f.len()];
    let mut nodes = ps.packs.len();
    for s in f.stmts() {
        node_of[s.id.index()] = match em.pack_of[s.id.index()] {
            Some(p) => p,
            None => {
                nodes += 1;
                nodes - 1
            }
        };
    }
    let mut members: Vec<Vec<StmtId>> = vec![Vec::new(); nodes];
    for s in f.stmts() {
        members[node_of[s.id.index()]].push(s.id);
    }
    let succs = graph::contract(g, &node_of, nodes);
    assert!(graph::topo_order(&succs).is_some(), "packing cannot be scheduled");
    let mut indeg = vec![0usize; nodes];
    for list in &succs {
        for &v in list {
            indeg[v] += 1;
        }
    }

    let mut blocks = Vec::with_capacity(f.blocks.len());
    for (b, block) in f.blocks.iter().enumerate() {
        let mut ready = BinaryHeap::new();
        let mut pending = 0;
        let block_nodes: Vec<usize> = {
            let mut v: Vec<usize> = block.stmts.iter().map(|s| node_of[s.index()]).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        for &n in &block_nodes {
            pending += 1;
            if indeg[n] == 0 {
                ready.push(Reverse((members[n].iter().min().copied().unwrap(), n)));
            }
        }
        while let Some(Reverse((_, n))) = ready.pop() {
            pending -= 1;
            if n < ps.packs.len() {
                em.emit_pack(n);
            } else {
                let s = members[n][0];
                for &o in &f.stmt(s).operands {
                    em.scalar(o);
                }
                em.out.push(VInst::Scalar(s));
            }
            for &v in &succs[n] {
                indeg[v] -= 1;
                if indeg[v] == 0 && f.stmt(members[v][0]).block.index() == b {
                    ready.push(Reverse((members[v].iter().min().copied().unwrap(), v)));
                }
            }
        }
        assert_eq!(pending, 0, "block {} could not be scheduled", block.name);
        if b + 1 == f.blocks.len() {
            for &e in &f.exports {
                em.scalar(e);
            }
        }
        blocks.push(VBlock {
            name: block.name.clone(),
            insts: std::mem::take(&mut em.out),
            branch: block.branch.map(|t| f.block(t).name.clone()),
        });
    }
    VectorFunction {
        source: f.clone(),
        blocks,
        num_vregs: em.next,
    }
}

impl VectorFunction {
    fn fmt_inst(&self, inst: &VInst, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let f = &self.source;
        match inst {
            VInst::Scalar(s) => f.fmt_stmt(f.stmt(*s), out),
            VInst::VLoad { dst, array, base, lanes, ty } => {
                write!(out, "{dst} = vload {}[{base}] : {ty} x {lanes}", f.array(*array).name)
            }
            VInst::VStore { src, array, base, lanes, ty } => {
                write!(out, "vstore {}[{base}], {src} : {ty} x {lanes}", f.array(*array).name)
            }
            VInst::VOp { dst, op, a, b, lanes, ty } => {
                write!(out, "{dst} = v{op} {a}, {b} : {ty} x {lanes}")
            }
            VInst::Pack { dst, elems, lanes, ty } => {
                let parts: Vec<String> = elems
                    .iter()
                    .map(|e| match e {
                        Elem::Scalar(s) => f.label(*s),
                        Elem::Vector(v) => v.to_string(),
                    })
                    .collect();
                write!(out, "{dst} = pack {} : {ty} x {lanes}", parts.join(", "))
            }
            VInst::Extract { dst, src, lane, ty, .. } => {
                write!(out, "{} = extract {src}, {lane} : {ty}", f.label(*dst))
            }
            VInst::Perm { dst, src, mask, ty } => {
                write!(out, "{dst} = perm {src} {} : {ty} x {}", mask_label(mask), mask.len())
            }
        }
    }
}

impl fmt::Display for VectorFunction {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let f = &self.source;
        writeln!(out, "func {} {{", f.name)?;
        for a in &f.arrays {
            writeln!(out, "  array {} : {} x {}", a.name, a.elem, a.len)?;
        }
        if !f.exports.is_empty() {
            let names: Vec<String> = f.exports.iter().map(|&e| f.label(e)).collect();
            writeln!(out, "  export {}", names.join(", "))?;
        }
        for b in &self.blocks {
            writeln!(out, "  block {}:", b.name)?;
            for inst in &b.insts {
                out.write_str("    ")?;
                self.fmt_inst(inst, out)?;
                out.write_str("\n")?;
            }
            if let Some(t) = &b.branch {
                writeln!(out, "    br {t}")?;
            }
        }
        writeln!(out, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmodel::UnitCostModel;
    use crate::ir::parse_function;
    use crate::packing::pack_statements;

    #[test]
    fn div_sub_chain_counts() {
        let f = parse_function(include_str!("../programs/div_sub_chain.ir")).unwrap();
        let g = DepGraph::build(&f);
        let none = emit(&f, &g, &PackSet::default(), &[]);
        let c = count_instructions(&none);
        assert_eq!((c.scalar, c.total), (13, 13));
        assert_eq!(none.to_string(), f.to_string());

        let ps = pack_statements(&f, &g, &UnitCostModel, 2, None).unwrap();
        let vf = emit(&f, &g, &ps, &[]);
        let c = count_instructions(&vf);
        assert_eq!((c.scalar, c.vector, c.packing, c.unpacking, c.permute), (3, 5, 0, 2, 0));
        assert_eq!(c.total, 10);
    }

    #[test]
    fn exports_are_extracted_once() {
        let text = "
func ex {
  array A : i32 x 2
  export %a, %b
  block b:
    %a = load A[0] : i32
    %b = load A[1] : i32
    %c = add %a, %a : i32
}
";
        let f = parse_function(text).unwrap();
        let g = DepGraph::build(&f);
        let ps = PackSet::from_packs(vec![crate::packing::Pack::new(vec![StmtId(0), StmtId(1)])]);
        let vf = emit(&f, &g, &ps, &[]);
        let c = count_instructions(&vf);
        assert_eq!((c.vector, c.unpacking, c.scalar), (1, 2, 1));
    }
}
