pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod retrieval;
pub mod synth;
pub mod trainer;
