//! Monte Carlo experiments: data generation, replicated fits and timings.

pub mod bench;
pub mod config;
pub mod dgp;
pub mod harness;

pub use bench::{bench_csv, run_benchmark, BenchOptions, BenchRow};
pub use config::{load_scenarios, parse_scenarios, Dgp, Estimator, Scenario};
pub use dgp::{draw_replicate, generate_dgp, response, Draws, Generated};
pub use harness::{reports_csv, run_monte_carlo, SimulationReport};
