//! Symmetric mixed Nash equilibria for single-shot transaction selection in
//! DAG-based ledgers.
//!
//! `N` validators each pick `b` of the `m` transactions in a shared pool.
//! Under random fee allocation ([`Mechanism::Rfa`]) a transaction's fee goes
//! to one random includer; under collaborative fee sharing
//! ([`Mechanism::Cfs`]) it is split across all validators once anyone
//! includes it. A symmetric mixed strategy is summarised by its inclusion
//! marginals `q` with `Σ q_i = b`.
//!
//! The crate provides two independent routes to the equilibrium
//! ([`waterfilling::theorem_equilibrium`] and [`optim::solve_ne`]), the
//! uniform and fee-proportional benchmarks, analytic throughput metrics with
//! best-response certification, a Monte Carlo engine that realises
//! marginals as exact-size blocks, and the parameter sweeps.
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod mc;
pub mod metrics;
pub mod optim;
pub mod pool;
pub mod seed;
pub mod share;
pub mod strategies;
pub mod waterfilling;

pub use error::{Error, Result};
pub use experiments::{
    run_sweep, write_results, write_rows, OutputFormat, SweepBase, SweepParam, SweepRow, SweepSpec,
};
pub use mc::{sample_subset, simulate, simulate_run, RunOutcome, SimulationReport};
pub use metrics::{
    best_response, effective_fee_throughput, effective_tx_throughput, ne_gap, symmetric_payoff,
    ThroughputReport,
};
pub use optim::{project_capped_simplex, solve_ne, EquilibriumResult, SolverConfig, StepSize};
pub use pool::{
    group_fee_levels, read_pool, validate_marginals, write_pool, zipf_pool, FeeLevels, GameConfig,
    MarginalStrategy, TransactionPool, ZipfSpec,
};
pub use share::{Mechanism, ShareModel};
pub use strategies::{make_strategy, pts, rts, StrategyKind};
pub use waterfilling::{theorem_equilibrium, WaterfillingSolution};
