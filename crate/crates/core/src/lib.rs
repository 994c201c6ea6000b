pub mod bitmask;
pub mod cli;
pub mod cluster;
pub mod codes;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kd_loss;
pub mod metrics;
pub mod rng;
pub mod search;
