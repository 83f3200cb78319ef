//! Iterative pairwise packing. Each round pairs the packs of the current
//! width and the next round treats the fused pairs as single items.

use std::time::Duration;

use thiserror::Error;

use crate::candidates::{ItemView, Universe};
use crate::costmodel::CostModel;
use crate::graph;
use crate::ilp::{self, IlpError, Status};
use crate::ir::{DepGraph, Function, StmtId};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PackingError {
    #[error("maximum lane count {0} is not a power of two of at least 2")]
    MaxLanes(usize),
    #[error(transparent)]
    Ilp(#[from] IlpError),
}

/// Statements executed as one vector instruction, one per lane.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pack {
    pub lanes: Vec<StmtId>,
}

impl Pack {
    pub fn new(lanes: Vec<StmtId>) -> Pack {
        Pack { lanes }
    }

    pub fn width(&self) -> usize {
        self.lanes.len()
    }
}

/// What one round of pairing did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Iteration {
    /// Lanes per item going in.
    pub width: usize,
    pub candidates: usize,
    pub status: Status,
    pub objective: i64,
    pub selected: usize,
    pub cuts: usize,
}

/// Disjoint packs chosen for a function.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PackSet {
    pub packs: Vec<Pack>,
    pub log: Vec<Iteration>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PackSetError {
    #[error("statement {0:?} is in more than one pack")]
    Overlap(StmtId),
    #[error("pack {0} has width {1}")]
    Width(usize, usize),
    #[error("pack {0} mixes opcodes, types or blocks")]
    NotIsomorphic(usize),
    #[error("packs {0:?} cannot be scheduled together")]
    Unschedulable(Vec<usize>),
}

impl PackSet {
    pub fn from_packs(mut packs: Vec<Pack>) -> PackSet {
        packs.sort_by_key(|p| p.lanes.iter().min().copied());
        PackSet {
            packs,
            log: Vec::new(),
        }
    }

    pub fn groups(&self) -> Vec<Vec<StmtId>> {
        self.packs.iter().map(|p| p.lanes.clone()).collect()
    }

    pub fn covered(&self) -> usize {
        self.packs.iter().map(Pack::width).sum()
    }

    /// Structural legality: disjoint, power-of-two widths, same block,
    /// opcode and type per pack, and a schedulable grouping.
    pub fn check(&self, f: &Function, g: &DepGraph) -> Result<(), PackSetError> {
        let mut seen = vec![false; f.len()];
        for (k, p) in self.packs.iter().enumerate() {
            if p.width() < 2 || !p.width().is_power_of_two() {
                return Err(PackSetError::Width(k, p.width()));
            }
            let first = f.stmt(p.lanes[0]);
            for &s in &p.lanes {
                if std::mem::replace(&mut seen[s.index()], true) {
                    return Err(PackSetError::Overlap(s));
                }
                let st = f.stmt(s);
                if (st.opcode, st.ty, st.block) != (first.opcode, first.ty, first.block) {
                    return Err(PackSetError::NotIsomorphic(k));
                }
            }
        }
        match graph::group_cycle(g, &self.groups()) {
            Some(c) => Err(PackSetError::Unschedulable(c)),
            None => Ok(()),
        }
    }
}

/// Candidate pair indices of `u` matching width-2 `packs`, or `None` if
/// some pack is not a candidate.
pub fn pair_selection(view: &ItemView, u: &Universe, packs: &[Pack]) -> Option<Vec<usize>> {
    let mut sel = Vec::with_capacity(packs.len());
    for p in packs {
        if p.width() != 2 {
            return None;
        }
        let a = view.item_for_tuple(&p.lanes[..1])?;
        let b = view.item_for_tuple(&p.lanes[1..])?;
        sel.push(u.pair_of(a, b)?);
    }
    sel.sort_unstable();
    Some(sel)
}

/// Pairs statements, then pairs of pairs, until nothing more is selected
/// or the next width would exceed `max_lanes`.
pub fn pack_statements(
    f: &Function,
    g: &DepGraph,
    cm: &dyn CostModel,
    max_lanes: usize,
    timeout: Option<Duration>,
) -> Result<PackSet, PackingError> {
    if max_lanes < 2 || !max_lanes.is_power_of_two() {
        return Err(PackingError::MaxLanes(max_lanes));
    }
    let mut groups: Vec<Vec<StmtId>> = Vec::new();
    let mut log = Vec::new();
    let mut width = 1;
    while width * 2 <= max_lanes {
        let view = ItemView::from_groups(f, g, &groups, width);
        let u = Universe::build(&view);
        let form = ilp::encode(&view, &u, cm)?;
        let sol = ilp::solve_packing(&view, &u, &form, timeout);
        log.push(Iteration {
            width,
            candidates: u.len(),
            status: sol.status,
            objective: sol.objective,
            selected: sol.selected.len(),
            cuts: sol.cuts,
        });
        if sol.selected.is_empty() {
            break;
        }
        let mut fused = vec![false; view.items().len()];
        let mut next: Vec<Vec<StmtId>> = Vec::new();
        for &p in &sol.selected {
            let (a, b) = u.pairs[p];
            fused[a] = true;
            fused[b] = true;
            next.push(view.fused_lanes(a, b));
        }
        for (k, it) in view.items().iter().enumerate() {
            if !fused[k] && it.lanes.len() >= 2 {
                next.push(it.lanes.clone());
            }
        }
        next.extend(groups.into_iter().filter(|grp| grp.len() != width));
        groups = next;
        width *= 2;
    }
    let mut set = PackSet::from_packs(groups.into_iter().map(Pack::new).collect());
    set.log = log;
    Ok(set)
}
