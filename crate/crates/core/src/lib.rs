pub mod formula;
pub mod generator;
pub mod geom;
pub mod poset;
pub mod prediction;
pub mod planner;
pub mod executor;
