pub mod autodiff;
pub mod beamforming;
pub mod channel;
pub mod frame;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod selftest;
pub mod semantic;
pub mod sparse;
pub mod config;
pub mod error;
