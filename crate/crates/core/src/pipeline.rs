//! End-to-end vectorization of one function.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::baselines::{larsen_pack, liu_pack};
use crate::candidates::{ItemView, Universe};
use crate::costmodel::{CostError, CostModel};
use crate::emit::{count_instructions, emit, CategoryCounts, VectorFunction};
use crate::ilp::{self, IlpError};
use crate::ir::{DepGraph, Function};
use crate::packing::{pack_statements, pair_selection, PackSet, PackingError};
use crate::permute::{self, Limits, MaskSets, PermuteError, Selection, VecGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    None,
    Larsen,
    Liu,
    Goslp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::None, Strategy::Larsen, Strategy::Liu, Strategy::Goslp];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Larsen => "larsen",
            Strategy::Liu => "liu",
            Strategy::Goslp => "goslp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Strategy, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy {s}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Options {
    pub strategy: Strategy,
    pub max_lanes: usize,
    pub timeout: Option<Duration>,
    pub limits: Limits,
}

impl Default for Options {
    fn default() -> Options {
        Options {
            strategy: Strategy::Goslp,
            max_lanes: 2,
            timeout: None,
            limits: Limits::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Permute(#[from] PermuteError),
}

/// Everything one run produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub packs: PackSet,
    pub graph: VecGraph,
    pub masks: MaskSets,
    pub selection: Selection,
    /// Set when lane-order search hit its limits and every pack kept its
    /// natural order instead.
    pub fallback: Option<PermuteError>,
    pub code: VectorFunction,
    pub counts: CategoryCounts,
}

pub fn choose_packs(
    f: &Function,
    g: &DepGraph,
    cm: &dyn CostModel,
    opts: &Options,
) -> Result<PackSet, PipelineError> {
    Ok(match opts.strategy {
        Strategy::None => PackSet::default(),
        Strategy::Larsen => larsen_pack(f, g, opts.max_lanes),
        Strategy::Liu => liu_pack(f, g, cm, opts.max_lanes)?,
        Strategy::Goslp => pack_statements(f, g, cm, opts.max_lanes, opts.timeout)?,
    })
}

/// Lowers `f` using an already chosen pack set.
pub fn lower(f: &Function, g: &DepGraph, cm: &dyn CostModel, packs: PackSet, limits: Limits) -> Result<Outcome, PipelineError> {
    let graph = VecGraph::build(f, &packs);
    let masks = permute::propagate_masks(&graph);
    let (selection, fallback) = match permute::select_permutations(&graph, &masks.candidates, cm, limits) {
        Ok(sel) => (sel, None),
        Err(PermuteError::Cost(e)) => return Err(e.into()),
        Err(e) => {
            let natural: Vec<_> = graph
                .nodes
                .iter()
                .map(|n| n.fixed.clone().unwrap_or_else(|| permute::identity(n.width)))
                .collect();
            let cost = graph.total_cost(&natural, cm)?;
            (Selection { masks: natural, cost }, Some(e))
        }
    };
    let code = emit(f, g, &packs, &selection.masks);
    let counts = count_instructions(&code);
    Ok(Outcome {
        packs,
        graph,
        masks,
        selection,
        fallback,
        code,
        counts,
    })
}

pub fn vectorize(f: &Function, g: &DepGraph, cm: &dyn CostModel, opts: &Options) -> Result<Outcome, PipelineError> {
    let packs = choose_packs(f, g, cm, opts)?;
    lower(f, g, cm, packs, opts.limits)
}

/// The pairwise packing objective of `packs`, or `None` unless every pack
/// is a candidate pair.
pub fn pairwise_objective(
    f: &Function,
    g: &DepGraph,
    cm: &dyn CostModel,
    packs: &PackSet,
) -> Result<Option<i64>, IlpError> {
    let view = ItemView::scalars(f, g);
    let u = Universe::build(&view);
    let form = ilp::encode(&view, &u, cm)?;
    match pair_selection(&view, &u, &packs.packs) {
        Some(sel) => ilp::evaluate_objective(&view, &u, &form, &sel).map(Some),
        None => Ok(None),
    }
}
