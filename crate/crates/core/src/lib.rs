pub mod numerics;
pub mod layout;
pub mod encoders;
pub mod env;
pub mod rng;
pub mod policy;
pub mod training;
pub mod harness;
