//! Alpha-beta timing of plan executions and the benchmark sweep.

pub mod bench;
pub mod model;
pub mod sim;

pub use bench::{applicable, geometric_sizes, measure, run_benchmark, to_csv, BenchRow, CSV_HEADER};
pub use model::{CostParams, LinkCost, Overhead, Timeline, TransferEvent};
pub use sim::{algobw, simulate_timed, TimedEvent, TimedTrace};
