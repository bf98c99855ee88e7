pub mod bilingen;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod numerics;
pub mod rng;
pub mod trainer;
