//! Monte Carlo realisation of marginal strategies as concrete blocks.
//!
//! Streams: validator `k` in run `r` draws its block from
//! `derive_seed(seed, [r, k])`; the RFA winner lottery of run `r` uses
//! `derive_seed(seed, [r, u64::MAX])`. Runs are therefore independent of
//! execution order and may be evaluated in parallel.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pool::{GameConfig, TransactionPool, SUM_TOLERANCE};
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::share::Mechanism;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub runs: usize,
    pub theta_tx_mean: f64,
    pub theta_tx_std: f64,
    pub theta_fee_mean: f64,
    pub theta_fee_std: f64,
    /// Reward of validator 0; all validators are exchangeable.
    pub per_validator_reward_mean: f64,
    pub per_validator_reward_std: f64,
    pub seed: u64,
}

/// The outcome of one simulated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub unique_transactions: usize,
    pub total_fees: f64,
    /// Reward of each validator.
    pub rewards: Vec<f64>,
}

/// Draws a block of exactly `b` distinct indices whose inclusion
/// probabilities are `q`.
///
/// Systematic sampling over a random permutation: the marginals are laid
/// end to end in permuted order and the items hit by the points
/// `u, u + 1, …, u + b − 1` (one uniform `u`) are selected.
pub fn sample_subset(q: &[f64], config: &GameConfig, rng: &mut Rng) -> Result<Vec<usize>> {
    let b = config.block_capacity();
    config.check_pool_size(q.len())?;
    let bf = config.capacity();
    if let Some((index, &value)) = q
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::BoundViolation { index, value });
    }
    let sum: f64 = q.iter().sum();
    if (sum - bf).abs() > SUM_TOLERANCE * bf {
        return Err(Error::SumMismatch { sum, expected: bf });
    }
    let scale = bf / sum;

    let mut order: Vec<usize> = (0..q.len()).collect();
    order.shuffle(rng);
    let offset: f64 = rng.gen();

    let mut chosen = Vec::with_capacity(b);
    let mut cumulative = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        cumulative += (q[i] * scale).min(1.0);
        if pos + 1 == order.len() {
            cumulative = bf;
        }
        if chosen.len() < b && offset + (chosen.len() as f64) < cumulative {
            chosen.push(i);
        }
    }
    assert_eq!(
        chosen.len(),
        b,
        "systematic sampling drew a block of the wrong size"
    );
    Ok(chosen)
}

/// Simulates one round: every validator draws a block, then fees are paid
/// out under `mechanism`.
pub fn simulate_run(
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
    mechanism: Mechanism,
    seed: u64,
    run: u64,
) -> Result<RunOutcome> {
    let m = pool.len();
    if q.len() != m {
        return Err(Error::LengthMismatch {
            got: q.len(),
            expected: m,
        });
    }
    let n = config.n_validators() as usize;
    let blocks = (0..n)
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, &[run, k as u64]));
            sample_subset(q, config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    // Includers of each transaction, grouped by transaction in validator order.
    let mut start = vec![0usize; m + 1];
    for block in &blocks {
        for &i in block {
            start[i + 1] += 1;
        }
    }
    for i in 0..m {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut includers = vec![0usize; start[m]];
    for (k, block) in blocks.iter().enumerate() {
        for &i in block {
            includers[fill[i]] = k;
            fill[i] += 1;
        }
    }

    let fees = pool.fees();
    let mut rewards = vec![0.0; n];
    let mut unique = 0;
    let mut total = 0.0;
    let mut lottery = rng_from_seed(derive_seed(seed, &[run, u64::MAX]));
    for i in 0..m {
        let count = start[i + 1] - start[i];
        if count == 0 {
            continue;
        }
        unique += 1;
        total += fees[i];
        match mechanism {
            Mechanism::Rfa => {
                let winner = includers[start[i] + lottery.gen_range(0..count)];
                rewards[winner] += fees[i];
            }
            Mechanism::Cfs => {
                let share = fees[i] / n as f64;
                for r in rewards.iter_mut() {
                    *r += share;
                }
            }
        }
    }
    Ok(RunOutcome {
        unique_transactions: unique,
        total_fees: total,
        rewards,
    })
}

/// Runs `runs` independent rounds and summarises them.
pub fn simulate(
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
    mechanism: Mechanism,
    runs: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if runs < 1 {
        return Err(Error::Domain {
            name: "runs",
            value: 0.0,
            domain: "[1, ∞)",
        });
    }
    let outcomes = (0..runs as u64)
        .into_par_iter()
        .map(|r| simulate_run(q, pool, config, mechanism, seed, r))
        .collect::<Result<Vec<_>>>()?;

    let tx: Vec<f64> = outcomes
        .iter()
        .map(|o| o.unique_transactions as f64)
        .collect();
    let fee: Vec<f64> = outcomes.iter().map(|o| o.total_fees).collect();
    let reward: Vec<f64> = outcomes.iter().map(|o| o.rewards[0]).collect();
    let (theta_tx_mean, theta_tx_std) = mean_std(&tx);
    let (theta_fee_mean, theta_fee_std) = mean_std(&fee);
    let (per_validator_reward_mean, per_validator_reward_std) = mean_std(&reward);
    Ok(SimulationReport {
        runs,
        theta_tx_mean,
        theta_tx_std,
        theta_fee_mean,
        theta_fee_std,
        per_validator_reward_mean,
        per_validator_reward_std,
        seed,
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
