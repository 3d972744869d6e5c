//! Symmetric equilibria as maximisers of a separable concave program.
//!
//! The symmetric equilibrium for both mechanisms maximises
//!
//! * RFA: `Σ v_i · ∫_0^{p_i} α̂(q) dq`
//! * CFS: `Σ (v_i / N) · (1 − (1 − p_i)^N)`
//!
//! over the capped simplex `{p : Σ p_i = b, 0 ≤ p_i ≤ 1}`. [`solve_ne`]
//! runs projected gradient ascent from the uniform point `b / m`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pool::{GameConfig, MarginalStrategy, TransactionPool};
use crate::share::{alpha_hat, rfa_potential_unchecked, Mechanism, ShareModel};

/// Entries this close to a bound are treated as sitting on it.
pub const SNAP_TOLERANCE: f64 = 1e-12;

/// A converged solve certifies `kkt_residual <= KKT_TOLERANCE · v_1`.
pub const KKT_TOLERANCE: f64 = 1e-6;

const ARMIJO_SIGMA: f64 = 1e-4;
const MIN_LINE_STEP: f64 = 1e-12;
/// Spectral steps are kept within `[STEP_FLOOR, STEP_CEIL] / ‖g‖∞`.
const STEP_FLOOR: f64 = 1e-10;
const STEP_CEIL: f64 = 1e6;

/// Step-size rule for projected gradient ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StepSize {
    /// Spectral (Barzilai–Borwein) steps safeguarded by a monotone Armijo
    /// backtracking search.
    Auto,
    /// Constant step `1 / (L + 1)` from the gradient Lipschitz bound
    /// (`L = v_1 (N − 1)` for CFS, `L = v_1 N / 2` for RFA).
    Lipschitz,
    /// Constant user-supplied step.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub step_size: StepSize,
    pub max_iters: usize,
    /// Stop once an iteration moves no coordinate by more than this.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: StepSize::Auto,
            max_iters: 100_000,
            tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain {
                name: "tol",
                value: self.tol,
                domain: "(0, ∞)",
            });
        }
        if self.max_iters < 1 {
            return Err(Error::Domain {
                name: "max_iters",
                value: 0.0,
                domain: "[1, ∞)",
            });
        }
        if let StepSize::Fixed(eta) = self.step_size {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Domain {
                    name: "step_size",
                    value: eta,
                    domain: "(0, ∞)",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub strategy: MarginalStrategy,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Euclidean projection onto `{p : Σ p_i = b, 0 ≤ p_i ≤ 1}`.
///
/// The projection is `p_i = clamp(y_i − λ, 0, 1)` for the shift `λ` at
/// which the coordinates sum to `b`. The sum is piecewise linear in `λ`
/// with kinks at `y_i − 1` and `y_i`, so `λ` is located exactly by a binary
/// search over the sorted kinks followed by one linear solve.
pub fn project_capped_simplex(y: &[f64], b: f64) -> Result<MarginalStrategy> {
    let m = y.len() as f64;
    if !(b >= 0.0) || b > m {
        return Err(Error::InfeasibleCapacity {
            capacity: b,
            available: m,
        });
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Domain {
            name: if index == 0 { "y[0]" } else { "y[i]" },
            value,
            domain: "finite reals",
        });
    }
    if b == 0.0 {
        return Ok(MarginalStrategy::from_vec_unchecked(vec![0.0; y.len()]));
    }
    if b == m {
        return Ok(MarginalStrategy::from_vec_unchecked(vec![1.0; y.len()]));
    }

    let total = |lambda: f64| -> f64 { y.iter().map(|&v| (v - lambda).clamp(0.0, 1.0)).sum() };

    let mut kinks: Vec<f64> = y.iter().flat_map(|&v| [v - 1.0, v]).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();

    // total(kinks[0]) = m >= b and total(kinks[last]) = 0 <= b; find the
    // segment [kinks[lo], kinks[lo + 1]] containing the crossing.
    let (mut lo, mut hi) = (0usize, kinks.len() - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if total(kinks[mid]) >= b {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (left, right) = (kinks[lo], kinks[hi]);
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut ones = 0usize;
    for &v in y {
        if v - 1.0 >= right {
            ones += 1;
        } else if v - 1.0 <= left && v >= right {
            free += 1;
            free_sum += v;
        }
    }
    let lambda = if free == 0 {
        left
    } else {
        ((free_sum + ones as f64 - b) / free as f64).clamp(left, right)
    };
    let mut p: Vec<f64> = y.iter().map(|&v| (v - lambda).clamp(0.0, 1.0)).collect();
    polish_sum(&mut p, b);
    Ok(MarginalStrategy::from_vec_unchecked(p))
}

/// Spreads the rounding residual `b − Σ p` over the strictly interior
/// coordinates so that the capacity constraint holds to machine precision.
fn polish_sum(p: &mut [f64], b: f64) {
    for _ in 0..3 {
        let residual = b - p.iter().sum::<f64>();
        if residual.abs() <= f64::EPSILON * b.max(1.0) {
            return;
        }
        let interior = p.iter().filter(|&&x| x > 0.0 && x < 1.0).count();
        if interior == 0 {
            return;
        }
        let shift = residual / interior as f64;
        for x in p.iter_mut().filter(|x| **x > 0.0 && **x < 1.0) {
            *x = (*x + shift).clamp(0.0, 1.0);
        }
    }
}

/// Value of the concave potential whose maximiser is the symmetric
/// equilibrium.
pub fn objective(
    mechanism: Mechanism,
    p: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> f64 {
    let n = config.n_validators();
    let nf = f64::from(n);
    pool.fees()
        .iter()
        .zip(p)
        .map(|(&v, &x)| match mechanism {
            Mechanism::Rfa => v * rfa_potential_unchecked(x, n),
            Mechanism::Cfs => v / nf * -(nf * (-x).ln_1p()).exp_m1(),
        })
        .sum()
}

/// `objective(p_new) − objective(p_old)`, accumulated per coordinate so
/// small improvements are not lost against the size of the objective.
fn objective_gain(mechanism: Mechanism, old: &[f64], new: &[f64], fees: &[f64], n: u32) -> f64 {
    let nf = f64::from(n);
    fees.iter()
        .zip(old.iter().zip(new))
        .map(|(&v, (&a, &b))| match mechanism {
            Mechanism::Rfa => v * (rfa_potential_unchecked(b, n) - rfa_potential_unchecked(a, n)),
            Mechanism::Cfs => v / nf * ((1.0 - a).powi(n as i32) - (1.0 - b).powi(n as i32)),
        })
        .sum()
}

/// Gradient of [`objective`]: `v_i · α̂(p_i)` for RFA and
/// `v_i · (1 − p_i)^(N−1)` for CFS.
pub fn gradient(
    mechanism: Mechanism,
    p: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    gradient_into(mechanism, p, pool.fees(), config.n_validators(), &mut g);
    g
}

fn gradient_into(mechanism: Mechanism, p: &[f64], fees: &[f64], n: u32, out: &mut [f64]) {
    for ((o, &v), &x) in out.iter_mut().zip(fees).zip(p) {
        *o = match mechanism {
            Mechanism::Rfa => v * alpha_hat(x.clamp(0.0, 1.0), n).unwrap_or(1.0),
            Mechanism::Cfs => v * (1.0 - x).powi(n as i32 - 1),
        };
    }
}

/// Largest violation of the equilibrium conditions, in fee units.
///
/// With `λ*` the median of `v_i f(p_i)` over interior coordinates, the
/// residual is the maximum of `|v_i f(p_i) − λ*|` (interior),
/// `max(0, v_i f(0) − λ*)` (excluded) and `max(0, λ* − v_i f(1))` (always
/// included). Without interior coordinates `λ*` is the smallest value that
/// clears every excluded coordinate, or the midpoint of the two bounds when
/// no value clears both sides.
pub fn kkt_residual(
    mechanism: Mechanism,
    p: &[f64],
    pool: &TransactionPool,
    config: &GameConfig,
) -> Result<f64> {
    let model = ShareModel::new(mechanism, config.n_validators())?;
    let fees = pool.fees();
    if p.len() != fees.len() {
        return Err(Error::LengthMismatch {
            got: p.len(),
            expected: fees.len(),
        });
    }
    let at_zero = model.share_at_zero();
    let at_one = model.share_at_one();

    let mut interior = Vec::new();
    let mut zero_max = f64::NEG_INFINITY;
    let mut one_min = f64::INFINITY;
    for (&v, &x) in fees.iter().zip(p) {
        if x <= SNAP_TOLERANCE {
            zero_max = zero_max.max(v * at_zero);
        } else if x >= 1.0 - SNAP_TOLERANCE {
            one_min = one_min.min(v * at_one);
        } else {
            interior.push(v * model.share(x)?);
        }
    }

    let lambda = if !interior.is_empty() {
        median(&mut interior.clone())
    } else if zero_max.is_finite() && one_min.is_finite() {
        if zero_max <= one_min {
            zero_max
        } else {
            0.5 * (zero_max + one_min)
        }
    } else if zero_max.is_finite() {
        zero_max
    } else {
        one_min
    };

    let zero_gap = if zero_max.is_finite() {
        (zero_max - lambda).max(0.0)
    } else {
        0.0
    };
    let one_gap = if one_min.is_finite() {
        (lambda - one_min).max(0.0)
    } else {
        0.0
    };
    let interior_gap = interior
        .iter()
        .map(|&s| (s - lambda).abs())
        .fold(0.0, f64::max);
    Ok(interior_gap.max(zero_gap).max(one_gap))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Computes the symmetric equilibrium by projected gradient ascent.
///
/// Returns [`Error::NotConverged`] (carrying the last iterate) when the
/// iteration budget runs out or the final point fails the KKT check.
pub fn solve_ne(
    mechanism: Mechanism,
    pool: &TransactionPool,
    config: &GameConfig,
    solver: &SolverConfig,
) -> Result<EquilibriumResult> {
    solve_ne_observed(mechanism, pool, config, solver, |_, _| {})
}

/// Like [`solve_ne`], calling `observer(iteration, objective)` after every
/// accepted step (and once for the starting point).
pub fn solve_ne_observed(
    mechanism: Mechanism,
    pool: &TransactionPool,
    config: &GameConfig,
    solver: &SolverConfig,
    mut observer: impl FnMut(usize, f64),
) -> Result<EquilibriumResult> {
    solver.validate()?;
    let m = pool.len();
    config.check_pool_size(m)?;
    let fees = pool.fees();
    let n = config.n_validators();
    let b = config.capacity();
    let v1 = pool.max_fee();

    let mut p = vec![b / m as f64; m];
    let mut g = vec![0.0; m];
    let mut g_next = vec![0.0; m];
    let mut trial = vec![0.0; m];
    gradient_into(mechanism, &p, fees, n, &mut g);
    observer(0, objective(mechanism, &p, pool, config));

    let lipschitz = match mechanism {
        Mechanism::Cfs => v1 * f64::from(n - 1),
        Mechanism::Rfa => v1 * f64::from(n) / 2.0,
    };
    let mut step = match solver.step_size {
        StepSize::Auto => 1.0 / sup_norm(&g).max(f64::MIN_POSITIVE),
        StepSize::Lipschitz => 1.0 / (lipschitz + 1.0),
        StepSize::Fixed(eta) => eta,
    };

    let mut iterations = 0;
    let mut settled = config.block_capacity() == m;
    while !settled && iterations < solver.max_iters {
        if solver.step_size == StepSize::Auto {
            let scale = sup_norm(&g).max(f64::MIN_POSITIVE);
            step = step.clamp(STEP_FLOOR / scale, STEP_CEIL / scale);
        }
        let y: Vec<f64> = p.iter().zip(&g).map(|(x, d)| x + step * d).collect();
        let target = project_capped_simplex(&y, b)?;
        let change = max_abs_diff(&target, &p);
        if change < solver.tol {
            settled = true;
            break;
        }
        iterations += 1;

        match solver.step_size {
            StepSize::Auto => {
                let slope: f64 = g
                    .iter()
                    .zip(target.iter().zip(&p))
                    .map(|(d, (t, x))| d * (t - x))
                    .sum();
                let slack = 4.0 * f64::EPSILON * objective(mechanism, &p, pool, config).abs();
                let mut t = 1.0;
                loop {
                    for ((o, &x), &tx) in trial.iter_mut().zip(&p).zip(target.iter()) {
                        *o = if t == 1.0 { tx } else { x + t * (tx - x) };
                    }
                    let gain = objective_gain(mechanism, &p, &trial, fees, n);
                    if gain >= ARMIJO_SIGMA * t * slope - slack {
                        break;
                    }
                    t *= 0.5;
                    if t < MIN_LINE_STEP {
                        break;
                    }
                }
                if t < MIN_LINE_STEP {
                    // No resolvable ascent left along this direction.
                    break;
                }
                gradient_into(mechanism, &trial, fees, n, &mut g_next);
                let (mut ss, mut sy) = (0.0, 0.0);
                for i in 0..m {
                    let s = trial[i] - p[i];
                    ss += s * s;
                    sy -= s * (g_next[i] - g[i]);
                }
                step = if sy > 0.0 { ss / sy } else { f64::INFINITY };
                std::mem::swap(&mut p, &mut trial);
                std::mem::swap(&mut g, &mut g_next);
            }
            StepSize::Lipschitz | StepSize::Fixed(_) => {
                p.copy_from_slice(&target);
                gradient_into(mechanism, &p, fees, n, &mut g);
            }
        }
        observer(iterations, objective(mechanism, &p, pool, config));
    }

    snap_to_bounds(&mut p);
    let kkt = kkt_residual(mechanism, &p, pool, config)?;
    let result = EquilibriumResult {
        objective: objective(mechanism, &p, pool, config),
        strategy: MarginalStrategy::from_vec_unchecked(p),
        iterations,
        kkt_residual: kkt,
        converged: settled && kkt <= KKT_TOLERANCE * v1,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NotConverged(Box::new(result)))
    }
}

fn snap_to_bounds(p: &mut [f64]) {
    for x in p.iter_mut() {
        if *x <= SNAP_TOLERANCE {
            *x = 0.0;
        } else if *x >= 1.0 - SNAP_TOLERANCE {
            *x = 1.0;
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}
