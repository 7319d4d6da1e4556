//! Simulator, verifier and certificate generator for caching with per-agent
//! reserves.

pub mod accounting;
pub mod dual;
pub mod engine;
pub mod harness;
pub mod instance;
pub mod opt;
pub mod paging;
pub mod ratio;
pub mod rounding;
pub mod suite;
pub mod workload;
