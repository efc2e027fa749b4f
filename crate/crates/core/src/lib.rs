pub mod adversary;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod federation;
pub mod harness;
pub mod jamming;
pub mod model;
pub mod rng;
