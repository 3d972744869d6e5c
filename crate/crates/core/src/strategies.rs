//! Benchmark strategies and a single entry point over all four strategies.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::{solve_ne, SolverConfig};
use crate::pool::{GameConfig, MarginalStrategy, TransactionPool};
use crate::share::Mechanism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Uniform selection, `q_i = b / m`.
    #[serde(rename = "RTS")]
    Rts,
    /// Fee-proportional selection.
    #[serde(rename = "PTS")]
    Pts,
    #[serde(rename = "NE_RFA")]
    NeRfa,
    #[serde(rename = "NE_CFS")]
    NeCfs,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Rts,
        StrategyKind::Pts,
        StrategyKind::NeRfa,
        StrategyKind::NeCfs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Rts => "RTS",
            StrategyKind::Pts => "PTS",
            StrategyKind::NeRfa => "NE_RFA",
            StrategyKind::NeCfs => "NE_CFS",
        }
    }

    /// The mechanism whose equilibrium this is, if any.
    pub fn mechanism(self) -> Option<Mechanism> {
        match self {
            StrategyKind::NeRfa => Some(Mechanism::Rfa),
            StrategyKind::NeCfs => Some(Mechanism::Cfs),
            _ => None,
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rts" => Ok(StrategyKind::Rts),
            "pts" => Ok(StrategyKind::Pts),
            "ne_rfa" | "rfa" => Ok(StrategyKind::NeRfa),
            "ne_cfs" | "cfs" => Ok(StrategyKind::NeCfs),
            other => Err(format!(
                "unknown strategy `{other}` (expected rts, pts, rfa or cfs)"
            )),
        }
    }
}

pub fn rts(pool: &TransactionPool, config: &GameConfig) -> Result<MarginalStrategy> {
    let m = pool.len();
    config.check_pool_size(m)?;
    Ok(MarginalStrategy::from_vec_unchecked(vec![
        config.capacity()
            / m as f64;
        m
    ]))
}

/// Fee-proportional marginals `q_i = b v_i / Σ v_j`.
///
/// Marginals that would exceed 1 are saturated at 1 and the remaining
/// capacity is shared proportionally among the unsaturated transactions,
/// repeating until nothing exceeds 1.
pub fn pts(pool: &TransactionPool, config: &GameConfig) -> Result<MarginalStrategy> {
    let fees = pool.fees();
    config.check_pool_size(fees.len())?;
    let b = config.capacity();
    // Fees are sorted descending, so the saturated set is always a prefix.
    let mut saturated = 0usize;
    let mut suffix_total: Vec<f64> = vec![0.0; fees.len() + 1];
    for i in (0..fees.len()).rev() {
        suffix_total[i] = suffix_total[i + 1] + fees[i];
    }
    loop {
        let remaining = b - saturated as f64;
        let total = suffix_total[saturated];
        let newly = fees[saturated..]
            .iter()
            .take_while(|&&v| remaining * v / total > 1.0)
            .count();
        if newly == 0 || saturated + newly == fees.len() {
            saturated += if newly == 0 { 0 } else { newly };
            break;
        }
        saturated += newly;
    }
    let remaining = b - saturated as f64;
    let total = suffix_total[saturated];
    let q = fees
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i < saturated {
                1.0
            } else if remaining <= 0.0 {
                0.0
            } else {
                (remaining * v / total).min(1.0)
            }
        })
        .collect();
    Ok(MarginalStrategy::from_vec_unchecked(q))
}

pub fn make_strategy(
    kind: StrategyKind,
    pool: &TransactionPool,
    config: &GameConfig,
    solver: &SolverConfig,
) -> Result<MarginalStrategy> {
    match kind {
        StrategyKind::Rts => rts(pool, config),
        StrategyKind::Pts => pts(pool, config),
        StrategyKind::NeRfa => Ok(solve_ne(Mechanism::Rfa, pool, config, solver)?.strategy),
        StrategyKind::NeCfs => Ok(solve_ne(Mechanism::Cfs, pool, config, solver)?.strategy),
    }
}
