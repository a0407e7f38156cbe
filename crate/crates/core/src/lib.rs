pub mod evaluation;
pub mod graph;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod training;
