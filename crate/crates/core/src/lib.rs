pub mod deployment;
pub mod engine;
pub mod experiment;
pub mod fixtures;
pub mod geometry;
pub mod random_env;
pub mod rng;
pub mod sparse;
pub mod system;
