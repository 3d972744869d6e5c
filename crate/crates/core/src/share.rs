//! Expected-share functions for the two fee-allocation mechanisms.
//!
//! When every validator includes a transaction independently with marginal
//! probability `p`, a single includer expects the fraction `f(p)` of its fee:
//!
//! * random fee allocation (RFA): one includer, chosen uniformly, takes the
//!   whole fee, so `f(p) = (1 - (1 - p)^N) / (N p)`;
//! * collaborative fee sharing (CFS): the fee is split over all `N`
//!   validators as soon as anyone includes it, so the marginal value of
//!   including it yourself is `f(p) = (1 - p)^(N - 1) / N`.
//!
//! Both are strictly decreasing on `[0, 1]`, which is what makes the
//! equilibrium construction and the concave reformulation work.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit_interval, Error, Result};

/// Below this coverage the RFA closed form is evaluated through its power
/// series to avoid `0 / 0`.
const SMALL_P: f64 = 1e-8;

const INVERSE_MAX_ITERS: usize = 200;

/// Fee-allocation mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Random fee allocation: the fee goes to one uniformly chosen includer.
    Rfa,
    /// Collaborative fee sharing: the fee is split equally over all validators.
    Cfs,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Rfa => "rfa",
            Mechanism::Cfs => "cfs",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rfa" => Ok(Mechanism::Rfa),
            "cfs" => Ok(Mechanism::Cfs),
            other => Err(format!("unknown mechanism `{other}` (expected rfa or cfs)")),
        }
    }
}

/// A share function bound to a mechanism and a validator count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShareModel {
    mechanism: Mechanism,
    n_validators: u32,
}

impl ShareModel {
    pub fn new(mechanism: Mechanism, n_validators: u32) -> Result<Self> {
        if n_validators < 2 {
            return Err(Error::TooFewValidators(n_validators));
        }
        Ok(Self {
            mechanism,
            n_validators,
        })
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn n_validators(&self) -> u32 {
        self.n_validators
    }

    /// `f(p)` on the closed interval `[0, 1]`. For RFA the value at zero is
    /// the continuous limit 1.
    pub fn share(&self, p: f64) -> Result<f64> {
        match self.mechanism {
            Mechanism::Rfa => alpha_hat(p, self.n_validators),
            Mechanism::Cfs => cfs_share(p, self.n_validators),
        }
    }

    /// `f(0)`, the share of a transaction nobody else covers.
    pub fn share_at_zero(&self) -> f64 {
        match self.mechanism {
            Mechanism::Rfa => 1.0,
            Mechanism::Cfs => 1.0 / f64::from(self.n_validators),
        }
    }

    /// `f(1)`, the share of a transaction everybody covers.
    pub fn share_at_one(&self) -> f64 {
        match self.mechanism {
            Mechanism::Rfa => 1.0 / f64::from(self.n_validators),
            Mechanism::Cfs => 0.0,
        }
    }

    /// `f^{-1}(x)` for `x` in `[f(1), f(0)]`.
    pub fn share_inverse(&self, x: f64) -> Result<f64> {
        match self.mechanism {
            Mechanism::Rfa => rfa_share_inverse(x, self.n_validators),
            Mechanism::Cfs => cfs_share_inverse(x, self.n_validators),
        }
    }

    /// `f^{-1}` extended to all nonnegative arguments: shares above `f(0)`
    /// map to coverage 0 and shares below `f(1)` to coverage 1.
    pub fn coverage(&self, x: f64) -> f64 {
        if x >= self.share_at_zero() {
            0.0
        } else if x <= self.share_at_one() {
            1.0
        } else {
            // in range by the two guards above
            self.share_inverse(x).unwrap_or(0.0).clamp(0.0, 1.0)
        }
    }
}

/// RFA expected share, `(1 - (1 - p)^n) / (n p)` for `0 < p <= 1`.
pub fn rfa_share(p: f64, n: u32) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain {
            name: "p",
            value: p,
            domain: "(0, 1]",
        });
    }
    Ok(rfa_share_unchecked(p, n))
}

fn rfa_share_unchecked(p: f64, n: u32) -> f64 {
    let nf = f64::from(n);
    if p < SMALL_P {
        // sum_{k>=1} C(n,k) (-1)^(k+1) p^(k-1) / n; a handful of terms is
        // exact to machine precision at this size.
        let mut coeff = nf; // C(n, 1)
        let mut power = 1.0;
        let mut sum = 0.0;
        for k in 1..=n.min(6) {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * coeff * power / nf;
            coeff *= (nf - f64::from(k)) / f64::from(k + 1);
            power *= p;
        }
        return sum;
    }
    -(nf * (-p).ln_1p()).exp_m1() / (nf * p)
}

/// The same share written as `E[1 / (X + 1)]` with `X ~ Binomial(n - 1, p)`.
///
/// Algebraically identical to [`rfa_share`] but evaluated along a different
/// route, so it serves as a cross-check.
pub fn rfa_share_sum_form(p: f64, n: u32) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain {
            name: "p",
            value: p,
            domain: "(0, 1]",
        });
    }
    let trials = n - 1;
    let q = 1.0 - p;
    let mut binom = 1.0;
    let mut sum = 0.0;
    for i in 0..=trials {
        let pmf = binom * p.powi(i as i32) * q.powi((trials - i) as i32);
        sum += pmf / f64::from(i + 1);
        binom *= f64::from(trials - i) / f64::from(i + 1);
    }
    Ok(sum)
}

/// Collision adjustment factor: the RFA share extended to `q = 0` by its
/// limit value 1.
pub fn alpha_hat(q: f64, n: u32) -> Result<f64> {
    check_unit_interval("q", q)?;
    if q == 0.0 {
        Ok(1.0)
    } else {
        Ok(rfa_share_unchecked(q, n))
    }
}

/// CFS expected share `(1 - p)^(n - 1) / n`.
pub fn cfs_share(p: f64, n: u32) -> Result<f64> {
    check_unit_interval("p", p)?;
    Ok((1.0 - p).powi(n as i32 - 1) / f64::from(n))
}

/// Closed-form inverse of [`cfs_share`], `1 - (n x)^(1 / (n - 1))`.
pub fn cfs_share_inverse(x: f64, n: u32) -> Result<f64> {
    let nf = f64::from(n);
    if !(x >= 0.0 && x <= 1.0 / nf) {
        return Err(Error::Domain {
            name: "x",
            value: x,
            domain: "[0, 1/n]",
        });
    }
    Ok((1.0 - (nf * x).powf(1.0 / (nf - 1.0))).clamp(0.0, 1.0))
}

/// Inverse of [`rfa_share`] by bisection on `[0, 1]`.
///
/// `f` has no closed-form inverse; bisection is used because `f'` is small
/// near `p = 0` for large `n`, which makes Newton steps unreliable. The
/// bracket is halved until it stops shrinking (well below `1e-12`).
pub fn rfa_share_inverse(x: f64, n: u32) -> Result<f64> {
    let floor = 1.0 / f64::from(n);
    if !(x >= floor && x <= 1.0) {
        return Err(Error::Domain {
            name: "x",
            value: x,
            domain: "[1/n, 1]",
        });
    }
    if x == 1.0 {
        return Ok(0.0);
    }
    if x == floor {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..INVERSE_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rfa_share_unchecked(mid, n) > x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `∫_0^p alpha_hat(q, n) dq`, the per-unit-fee RFA potential.
///
/// Substituting `u = 1 - q` turns the integrand into the geometric sum
/// `(1/n) Σ_{j<n} u^j`, giving `(1/n) Σ_{j=1}^{n} (1 - (1 - p)^j) / j`.
/// Every term is nonnegative, so the sum has no cancellation for any `n`.
pub fn rfa_potential(p: f64, n: u32) -> Result<f64> {
    check_unit_interval("p", p)?;
    Ok(rfa_potential_unchecked(p, n))
}

pub(crate) fn rfa_potential_unchecked(p: f64, n: u32) -> f64 {
    if p == 0.0 {
        return 0.0;
    }
    let log_q = (-p).ln_1p();
    let sum: f64 = (1..=n)
        .map(|j| {
            let jf = f64::from(j);
            -(jf * log_q).exp_m1() / jf
        })
        .sum();
    sum / f64::from(n)
}
