//! Direct construction of the symmetric equilibrium by water-filling over
//! fee levels.
//!
//! At a common "water level" `z`, a transaction with fee `v` is covered with
//! probability `f^{-1}(z / v)`, clamped to `[0, 1]`. The coverage function
//!
//! ```text
//! G_ℓ(z) = Σ_{h ≤ ℓ} k_h · clamp(f^{-1}(z / v_h)) − b
//! ```
//!
//! is nonincreasing in `z`. Levels are admitted while `G_ℓ(v_ℓ) ≤ 0` (the
//! threshold `k_max`), and the equilibrium level `c` is the root of
//! `G_{k_max}`. Every transaction on an admitted level then gets
//! `p_i = clamp(f^{-1}(c / v_ℓ))`; the rest get 0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pool::{FeeLevels, GameConfig, MarginalStrategy};
use crate::share::{Mechanism, ShareModel};

/// Lower end of the root bracket before any widening.
const BRACKET_FLOOR: f64 = 1e-15;
const ROOT_MAX_ITERS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaterfillingSolution {
    /// Number of admitted fee levels.
    pub k_max: usize,
    /// Water level: the root of `G_{k_max}`.
    pub c: f64,
    /// Total inclusion mass per fee level.
    pub q_levels: Vec<f64>,
    /// Per-transaction marginals, in pool order.
    pub p: MarginalStrategy,
}

/// `G_ℓ(z)` for the first `ell` levels (`1 ≤ ell ≤ n`).
pub fn g_ell(
    z: f64,
    ell: usize,
    levels: &FeeLevels,
    config: &GameConfig,
    model: &ShareModel,
) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain {
            name: "z",
            value: z,
            domain: "(0, ∞)",
        });
    }
    if ell < 1 || ell > levels.len() {
        return Err(Error::Domain {
            name: "ell",
            value: ell as f64,
            domain: "[1, number of fee levels]",
        });
    }
    Ok(g_unchecked(z, ell, levels, config, model))
}

fn g_unchecked(
    z: f64,
    ell: usize,
    levels: &FeeLevels,
    config: &GameConfig,
    model: &ShareModel,
) -> f64 {
    let covered: f64 = levels.levels()[..ell]
        .iter()
        .map(|l| l.count as f64 * model.coverage(z / l.value))
        .sum();
    covered - config.capacity()
}

/// Returns `(k_max, c)`.
///
/// When `b = m` every transaction is covered with certainty; `c` is then
/// reported as `v_n · f(1)`, the largest level consistent with full
/// coverage (0 under CFS).
pub fn find_kmax_and_root(
    levels: &FeeLevels,
    config: &GameConfig,
    model: &ShareModel,
) -> Result<(usize, f64)> {
    let m = levels.transaction_count();
    config.check_pool_size(m)?;
    let n = levels.len();
    if config.block_capacity() == m {
        let lowest = levels.levels()[n - 1].value;
        return Ok((n, lowest * model.share_at_one()));
    }

    // The admission condition is prefix-closed, so a linear scan that stops
    // at the first violation finds the maximal prefix.
    let mut k_max = 0;
    for (i, level) in levels.levels().iter().enumerate() {
        if g_unchecked(level.value, i + 1, levels, config, model) <= 0.0 {
            k_max = i + 1;
        } else {
            break;
        }
    }
    debug_assert!(k_max >= 1, "G_1(v_1) = -b is always admissible");

    let g = |z: f64| g_unchecked(z, k_max, levels, config, model);
    let v1 = levels.levels()[0].value;

    let mut hi = v1 * model.share(BRACKET_FLOOR)?;
    let mut lo = BRACKET_FLOOR;
    // CFS coverage approaches 1 only like z^(1/(N-1)), so the floor may
    // have to move towards zero before the bracket holds a sign change.
    while g(lo) < 0.0 {
        if lo < f64::MIN_POSITIVE {
            let available: f64 = levels.levels()[..k_max]
                .iter()
                .map(|l| l.count as f64)
                .sum();
            return Err(Error::InfeasibleCapacity {
                capacity: config.capacity(),
                available,
            });
        }
        lo *= 1e-30;
    }
    if g(hi) > 0.0 {
        return Err(Error::InfeasibleCapacity {
            capacity: config.capacity(),
            available: 0.0,
        });
    }

    // Geometric bisection: the bracket can span hundreds of decades.
    // Invariant g(lo) > 0 >= g(hi) (or g(lo) == 0 on a flat stretch); ties
    // move towards the smaller root.
    for _ in 0..ROOT_MAX_ITERS {
        let mid = (lo * hi).sqrt().clamp(lo, hi);
        let mid = if mid <= lo || mid >= hi {
            0.5 * (lo + hi)
        } else {
            mid
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok((k_max, hi))
}

pub fn theorem_equilibrium(
    levels: &FeeLevels,
    config: &GameConfig,
    mechanism: Mechanism,
) -> Result<WaterfillingSolution> {
    let model = ShareModel::new(mechanism, config.n_validators())?;
    let (k_max, c) = find_kmax_and_root(levels, config, &model)?;

    let full = config.block_capacity() == levels.transaction_count();
    let coverages: Vec<f64> = levels
        .levels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if full {
                1.0
            } else if i < k_max {
                model.coverage(c / l.value)
            } else {
                0.0
            }
        })
        .collect();

    let q_levels = levels
        .levels()
        .iter()
        .zip(&coverages)
        .map(|(l, cov)| l.count as f64 * cov)
        .collect();
    let p = levels
        .levels()
        .iter()
        .zip(&coverages)
        .flat_map(|(l, &cov)| std::iter::repeat_n(cov, l.count))
        .collect();

    Ok(WaterfillingSolution {
        k_max,
        c,
        q_levels,
        p: MarginalStrategy::from_vec_unchecked(p),
    })
}
