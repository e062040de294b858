//! Sparse Möbius transform of pseudo-boolean functions from few queries.
//!
//! A function `f: {0,1}^n -> R` with a `K`-sparse Möbius spectrum is
//! subsampled into small aliased bin tables, each bin is classified as
//! empty, single or mixed, and single bins are peeled off until nothing
//! changes. Dense transforms, brute-force recovery and attribution scores
//! live alongside as ground truth.

pub mod bench;
pub mod designs;
pub mod detection;
pub mod error;
pub mod group_testing;
pub mod index;
pub mod metrics;
pub mod oracle;
pub mod peeling;
pub mod sampling;
pub mod synth;
pub mod transform;

pub use designs::{make_designs, DesignConfig, Regime, SubsamplingDesign};
pub use detection::{BinType, DetectorConfig};
pub use error::{Error, OracleError, Result};
pub use index::{bool_matvec, BoolMatrix, IndexVector};
pub use oracle::{ValueOracle, OracleKind};
pub use peeling::{run, EngineConfig, RunOutput, RunReport};
pub use transform::{brute_force_transform, forward_mobius_dense, inverse_mobius_dense, DenseFunction, SparseMobius};
