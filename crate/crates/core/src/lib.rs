pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod eval;
pub mod graph;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
