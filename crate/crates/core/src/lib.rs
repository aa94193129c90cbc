//! Cardinality estimation for select-join queries with an exact
//! neural-network Gaussian process.
//!
//! The crate covers the whole loop: relations ([`relstore`]), a brute-force
//! labeling oracle ([`oracle`]), workload generation ([`workload`]), query
//! featurization ([`encoder`]), the NNGP and RBF kernels ([`kernel`]),
//! exact GP inference ([`gp`]), metrics and active learning ([`eval`]), and
//! the command-line front end ([`cli`]).

pub mod artifact;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gp;
pub mod kernel;
pub mod oracle;
pub mod relstore;
pub mod workload;

pub use error::{Error, Result};
