//! Analytic throughput metrics, payoffs and equilibrium certification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pool::{GameConfig, MarginalStrategy, TransactionPool};
use crate::share::{alpha_hat, Mechanism};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub theta_tx: f64,
    pub theta_fee: f64,
    pub per_validator_payoff: f64,
}

impl ThroughputReport {
    pub fn new(
        mechanism: Mechanism,
        q: &[f64],
        pool: &TransactionPool,
        config: &GameConfig,
    ) -> Result<Self> {
        Ok(Self {
            theta_tx: effective_tx_throughput(q, config),
            theta_fee: effective_fee_throughput(q, pool, config)?,
            per_validator_payoff: symmetric_payoff(mechanism, q, pool, config)?,
        })
    }
}

/// `1 − (1 − q)^N`, the probability that at least one validator includes a
/// transaction with marginal `q`.
fn coverage_probability(q: f64, n: u32) -> f64 {
    -(f64::from(n) * (-q).ln_1p()).exp_m1()
}

fn check_len(q: &[f64], pool: &TransactionPool) -> Result<()> {
    if q.len() == pool.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            got: q.len(),
            expected: pool.len(),
        })
    }
}

/// Expected number of distinct transactions across the `N` blocks.
pub fn effective_tx_throughput(q: &[f64], config: &GameConfig) -> f64 {
    let n = config.n_validators();
    q.iter().map(|&x| coverage_probability(x, n)).sum()
}

/// Expected total fee collected across the `N` blocks.
pub fn effective_fee_throughput(
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Result<f64> {
    check_len(q, pool)?;
    let n = config.n_validators();
    Ok(pool
        .fees()
        .iter()
        .zip(q)
        .map(|(&v, &x)| v * coverage_probability(x, n))
        .sum())
}

/// Expected payoff of one validator when all play `q`.
pub fn symmetric_payoff(
    mechanism: Mechanism,
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Result<f64> {
    check_len(q, pool)?;
    let n = config.n_validators();
    let nf = f64::from(n);
    pool.fees()
        .iter()
        .zip(q)
        .map(|(&v, &x)| match mechanism {
            Mechanism::Rfa => Ok(x * v * alpha_hat(x, n)?),
            Mechanism::Cfs => Ok(v / nf * coverage_probability(x, n)),
        })
        .sum()
}

/// Per-transaction value of one deviator including transaction `i` while
/// everyone else plays `q`, and the payoff the deviator collects regardless
/// of its own choice.
fn deviation_coefficients(
    mechanism: Mechanism,
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Result<(Vec<f64>, f64)> {
    check_len(q, pool)?;
    let n = config.n_validators();
    let nf = f64::from(n);
    let mut baseline = 0.0;
    let coefficients = pool
        .fees()
        .iter()
        .zip(q)
        .map(|(&v, &x)| match mechanism {
            Mechanism::Rfa => Ok(v * alpha_hat(x, n)?),
            Mechanism::Cfs => {
                baseline += v / nf * coverage_probability(x, n - 1);
                Ok(v / nf * (1.0 - x).powi(n as i32 - 1))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((coefficients, baseline))
}

/// The best pure deviation against `q`: the `b` transactions with the
/// largest deviation coefficients (lower index wins ties), with its payoff.
pub fn best_response(
    mechanism: Mechanism,
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Result<(MarginalStrategy, f64)> {
    config.check_pool_size(pool.len())?;
    let (coefficients, baseline) = deviation_coefficients(mechanism, q, pool, config)?;
    let mut order: Vec<usize> = (0..coefficients.len()).collect();
    order.sort_by(|&i, &j| coefficients[j].total_cmp(&coefficients[i]).then(i.cmp(&j)));
    let mut choice = vec![0.0; coefficients.len()];
    let mut payoff = baseline;
    for &i in &order[..config.block_capacity()] {
        choice[i] = 1.0;
        payoff += coefficients[i];
    }
    Ok((MarginalStrategy::from_vec_unchecked(choice), payoff))
}

/// How much a single validator gains by deviating from `q`; zero at an
/// equilibrium.
pub fn ne_gap(
    mechanism: Mechanism,
    q: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Result<f64> {
    let (_, best) = best_response(mechanism, q, pool, config)?;
    let symmetric = symmetric_payoff(mechanism, q, pool, config)?;
    Ok((best - symmetric).max(0.0))
}
