pub mod backend;
pub mod cache;
pub mod canonical;
pub mod graph;
pub mod ops;
pub mod optimizer;
pub mod runtime;
pub mod schemes;
