//! Evaluation and threshold-policy optimization of a finite-buffer indexing
//! queue fed by a controllable number of crawler robots.
//!
//! The system is a single server with buffer capacity K−1: pages arrive in
//! batches from a Markov-modulated process whose matrices depend on how many
//! robots are active, service times are phase-type, and every buffered page
//! carries an independent phase-type obsolescence clock — when it absorbs the
//! page is dropped. A threshold policy maps the queue length to the number of
//! active robots. The crate computes the stationary law of the resulting
//! level-structured chain exactly, derives loss/obsolescence/starvation
//! probabilities and sojourn-time transforms, evaluates a weighted cost, and
//! optimizes it by exhaustive enumeration, with a discrete-event simulator as
//! an independent cross-check on every measure.

pub mod arrivals;
pub mod error;
pub mod generator;
pub mod matrix;
pub mod measures;
pub mod modelfile;
pub mod optimizer;
pub mod ph;
pub mod policy;
pub mod simulator;
pub mod sojourn;
pub mod solver;
pub mod trace;

#[doc(hidden)]
pub mod testing;

pub use arrivals::{ArrivalStats, BatchProcess, ModedArrival, ValidationMode};
pub use error::{Error, Result};
pub use generator::{assemble_dense, build_generator, BlockGenerator, QueueModel};
pub use matrix::DenseMatrix;
pub use measures::PerformanceReport;
pub use modelfile::ModelFile;
pub use optimizer::{CostCoefficients, OptimizationResult, SubsetSpec};
pub use ph::PhaseType;
pub use policy::ThresholdPolicy;
pub use simulator::{SimConfig, SimReport};
pub use solver::{solve_general, solve_qbd, StationarySolution};
