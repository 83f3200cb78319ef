pub mod candidates;
pub mod costmodel;
mod graph;
pub mod ilp;
pub mod ir;
pub mod packing;
pub mod permute;
pub mod emit;
pub mod verify;
pub mod baselines;
pub mod pipeline;
pub mod fuzz;
