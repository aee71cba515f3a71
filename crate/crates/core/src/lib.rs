//! Simulated GPU communication stack: channel primitives over a simulated
//! cluster, an execution-plan IR with lowering passes and an interpreter,
//! a collective algorithm library and an alpha-beta timing model.

pub mod channels;
pub mod collectives;
pub mod element;
pub mod error;
pub mod executor;
pub mod fifo;
pub mod lowering;
pub mod plan;
pub mod sim;
pub mod timing;

pub use element::{DType, Element};
pub use error::{Error, Result};

/// Results of running a plan over the two supported element types.
pub type RunResultI32 = executor::RunResult<i32>;
pub type RunResultF32 = executor::RunResult<f32>;

/// Per-rank vectors, as fed to and returned by the executor.
pub type RankData<T> = Vec<Vec<T>>;
pub type RankDataI32 = RankData<i32>;
pub type RankDataF32 = RankData<f32>;
