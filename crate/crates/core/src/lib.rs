//! Exact conditional-independence analysis for multivariate binary and
//! bit-encoded multinomial distributions.
//!
//! Conditional independence `A ⟂ C | B` of binary vectors is decided through
//! the covariance of their interaction features: the generalized Schur
//! complement of the block generated by `B` is block diagonal exactly when
//! the independence holds, and the Schur–Banachiewicz inverse turns that
//! sparsity into a graph separation statement. A dyadic quantization layer
//! extends the machinery approximately to `[-1, 1]`-valued data.
//!
//! Module map:
//!
//! - [`bitgroup`]: masks, GF(2) spans and the `(𝓑, 𝓛, 𝓡)` index sets
//! - [`distribution`]: pmfs, samples, moments and test-bed generators
//! - [`hadamard`]: fast Walsh–Hadamard transform and the Hadamard prism
//! - [`schur`]: pseudoinverse, Schur complement, Schur–Banachiewicz inverse
//! - [`engine`]: covariance assembly and the conditional-independence verdict
//! - [`graph`]: the interaction graph, separation and DOT / JSON export
//! - [`quantize`]: dyadic quantization and the `Δ_d` discrepancy
//! - [`oracle`]: brute-force ground truth

pub mod bitgroup;
pub mod distribution;
pub mod engine;
pub mod error;
pub mod graph;
pub mod hadamard;
pub mod oracle;
pub mod quantize;
pub mod schur;

pub use bitgroup::{Mask, MaskSpan};
pub use distribution::Pmf;
pub use engine::{test_ci, CiVerdict, Partition};
pub use error::{Error, Result};

/// Maximum number of base coordinates.
pub const MAX_WIDTH: usize = 24;
