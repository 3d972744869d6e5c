//! Transaction pools, fee levels, Zipf-like fee generation and strategy
//! validation.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Relative tolerance on `Σ q_i = b`.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// The shared mempool: positive fees sorted in descending order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransactionPool {
    fees: Vec<f64>,
}

impl TransactionPool {
    /// Builds a pool from arbitrary positive fees; they are sorted in
    /// descending order.
    pub fn from_fees(mut fees: Vec<f64>) -> Result<Self> {
        if fees.is_empty() {
            return Err(Error::InvalidPool("pool is empty".into()));
        }
        if let Some((i, v)) = fees
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidPool(format!(
                "fee #{i} is {v}, fees must be positive"
            )));
        }
        fees.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { fees })
    }

    pub fn fees(&self) -> &[f64] {
        &self.fees
    }

    pub fn len(&self) -> usize {
        self.fees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fees.is_empty()
    }

    /// The highest fee, `v_1`.
    pub fn max_fee(&self) -> f64 {
        self.fees[0]
    }

    pub fn total_fees(&self) -> f64 {
        self.fees.iter().sum()
    }

    /// Multiplies every fee by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_fees(self.fees.iter().map(|v| v * factor).collect())
    }
}

/// One distinct fee value and the number of transactions paying it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeeLevel {
    pub value: f64,
    pub count: usize,
}

/// Distinct fee values in strictly descending order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeeLevels {
    levels: Vec<FeeLevel>,
}

impl FeeLevels {
    pub fn levels(&self) -> &[FeeLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Total number of transactions, `Σ k_ℓ`.
    pub fn transaction_count(&self) -> usize {
        self.levels.iter().map(|l| l.count).sum()
    }

    /// Repeats every value `count` times, reproducing the sorted pool.
    pub fn expand(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|l| std::iter::repeat_n(l.value, l.count))
            .collect()
    }
}

pub fn group_fee_levels(pool: &TransactionPool) -> FeeLevels {
    let mut levels: Vec<FeeLevel> = Vec::new();
    for &fee in pool.fees() {
        match levels.last_mut() {
            Some(last) if last.value == fee => last.count += 1,
            _ => levels.push(FeeLevel {
                value: fee,
                count: 1,
            }),
        }
    }
    FeeLevels { levels }
}

/// Parameters of a Zipf-like fee pool: fee value `i ∈ {1, …, max_fee}` is
/// drawn with probability proportional to `i^(-shape)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    pub max_fee: u32,
    pub shape: f64,
    pub m: usize,
    pub seed: u64,
}

impl ZipfSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_fee < 1 {
            return Err(Error::InvalidZipf("max_fee must be at least 1".into()));
        }
        if !(self.shape.is_finite() && self.shape >= 0.0) {
            return Err(Error::InvalidZipf(format!(
                "shape must be a nonnegative number, got {}",
                self.shape
            )));
        }
        if self.m < 1 {
            return Err(Error::InvalidZipf("pool size must be at least 1".into()));
        }
        Ok(())
    }

    /// Normalised probabilities of fee values `1..=max_fee`.
    pub fn probabilities(&self) -> Vec<f64> {
        let weights = zipf_weights(self.max_fee, self.shape);
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }
}

fn zipf_weights(max_fee: u32, shape: f64) -> Vec<f64> {
    (1..=max_fee).map(|i| f64::from(i).powf(-shape)).collect()
}

/// Draws `m` i.i.d. fees from the Zipf-like law; deterministic in `seed`.
pub fn zipf_pool(spec: &ZipfSpec) -> Result<TransactionPool> {
    spec.validate()?;
    let dist = WeightedIndex::new(zipf_weights(spec.max_fee, spec.shape))
        .map_err(|e| Error::InvalidZipf(e.to_string()))?;
    let mut rng = rng_from_seed(spec.seed);
    let fees = (0..spec.m)
        .map(|_| (dist.sample(&mut rng) + 1) as f64)
        .collect();
    TransactionPool::from_fees(fees)
}

/// Validator count `N` and block capacity `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    n_validators: u32,
    block_capacity: usize,
}

impl GameConfig {
    pub fn new(n_validators: u32, block_capacity: usize) -> Result<Self> {
        if n_validators < 2 {
            return Err(Error::TooFewValidators(n_validators));
        }
        if block_capacity < 1 {
            return Err(Error::ZeroCapacity);
        }
        Ok(Self {
            n_validators,
            block_capacity,
        })
    }

    pub fn n_validators(&self) -> u32 {
        self.n_validators
    }

    pub fn block_capacity(&self) -> usize {
        self.block_capacity
    }

    /// `b` as a real number.
    pub fn capacity(&self) -> f64 {
        self.block_capacity as f64
    }

    /// Fails when a block cannot be filled from a pool of `m` transactions.
    pub fn check_pool_size(&self, m: usize) -> Result<()> {
        if self.block_capacity > m {
            Err(Error::InfeasibleCapacity {
                capacity: self.capacity(),
                available: m as f64,
            })
        } else {
            Ok(())
        }
    }
}

/// Inclusion marginals `q ∈ [0, 1]^m` with `Σ q_i = b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MarginalStrategy {
    q: Vec<f64>,
}

impl MarginalStrategy {
    /// Wraps marginals that the caller has already made feasible.
    pub(crate) fn from_vec_unchecked(q: Vec<f64>) -> Self {
        Self { q }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.q.iter().sum()
    }
}

impl std::ops::Deref for MarginalStrategy {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.q
    }
}

/// Checks box bounds and the capacity constraint.
pub fn validate_marginals(q: Vec<f64>, config: &GameConfig) -> Result<MarginalStrategy> {
    if let Some((index, &value)) = q
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::BoundViolation { index, value });
    }
    let b = config.capacity();
    let sum: f64 = q.iter().sum();
    if (sum - b).abs() > SUM_TOLERANCE * b {
        return Err(Error::SumMismatch { sum, expected: b });
    }
    Ok(MarginalStrategy { q })
}

/// Reads a pool file: a JSON array of numbers for `.json`, otherwise one
/// number per line (blank lines and `#` comments are skipped).
pub fn read_pool(path: &Path) -> Result<TransactionPool> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let fees: Vec<f64> = if is_json(path) {
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
    } else {
        text.lines()
            .enumerate()
            .map(|(i, line)| (i, line.trim().trim_end_matches(',')))
            .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
            .map(|(i, line)| {
                line.parse::<f64>()
                    .map_err(|e| parse_err(format!("line {}: `{line}`: {e}", i + 1)))
            })
            .collect::<Result<_>>()?
    };
    TransactionPool::from_fees(fees).map_err(|e| parse_err(e.to_string()))
}

/// Writes a pool in the format implied by the extension of `path`.
pub fn write_pool(path: &Path, pool: &TransactionPool) -> Result<()> {
    let text = if is_json(path) {
        serde_json::to_string(pool.fees()).expect("fees serialize")
    } else {
        let mut s = String::new();
        for fee in pool.fees() {
            s.push_str(&fee.to_string());
            s.push('\n');
        }
        s
    };
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(fees: &[f64]) -> TransactionPool {
        TransactionPool::from_fees(fees.to_vec()).unwrap()
    }

    fn levels(fees: &[f64]) -> Vec<(f64, usize)> {
        group_fee_levels(&pool(fees))
            .levels()
            .iter()
            .map(|l| (l.value, l.count))
            .collect()
    }

    #[test]
    fn grouping_examples() {
        assert_eq!(levels(&[4.0, 1.0]), vec![(4.0, 1), (1.0, 1)]);
        assert_eq!(levels(&[5.0, 5.0, 5.0]), vec![(5.0, 3)]);
        assert_eq!(
            levels(&[10.0, 10.0, 3.0, 3.0, 3.0, 1.0]),
            vec![(10.0, 2), (3.0, 3), (1.0, 1)]
        );
        // unsorted input is sorted first
        assert_eq!(levels(&[1.0, 3.0, 3.0]), vec![(3.0, 2), (1.0, 1)]);
    }

    #[test]
    fn pool_rejects_bad_fees() {
        assert!(TransactionPool::from_fees(vec![]).is_err());
        assert!(TransactionPool::from_fees(vec![1.0, 0.0]).is_err());
        assert!(TransactionPool::from_fees(vec![-2.0]).is_err());
        assert!(TransactionPool::from_fees(vec![f64::NAN]).is_err());
    }

    #[test]
    fn validate_examples() {
        let cfg = GameConfig::new(2, 1).unwrap();
        assert!(validate_marginals(vec![0.5, 0.5], &cfg).is_ok());
        assert!(matches!(
            validate_marginals(vec![1.2, -0.2], &cfg),
            Err(Error::BoundViolation { index: 0, .. })
        ));
        assert!(matches!(
            validate_marginals(vec![0.5, 0.4], &cfg),
            Err(Error::SumMismatch { .. })
        ));
        assert!(matches!(
            validate_marginals(vec![0.5, f64::NAN], &cfg),
            Err(Error::BoundViolation { index: 1, .. })
        ));
    }

    #[test]
    fn config_invariants() {
        assert!(GameConfig::new(1, 1).is_err());
        assert!(GameConfig::new(2, 0).is_err());
        let cfg = GameConfig::new(3, 5).unwrap();
        assert!(cfg.check_pool_size(5).is_ok());
        assert!(matches!(
            cfg.check_pool_size(4),
            Err(Error::InfeasibleCapacity { .. })
        ));
    }

    #[test]
    fn zipf_is_deterministic() {
        let spec = ZipfSpec {
            max_fee: 10,
            shape: 0.7,
            m: 500,
            seed: 99,
        };
        assert_eq!(zipf_pool(&spec).unwrap(), zipf_pool(&spec).unwrap());
        let other = ZipfSpec { seed: 100, ..spec };
        assert_ne!(zipf_pool(&spec).unwrap(), zipf_pool(&other).unwrap());
    }

    #[test]
    fn zipf_rejects_bad_specs() {
        let base = ZipfSpec {
            max_fee: 10,
            shape: 0.0,
            m: 10,
            seed: 0,
        };
        assert!(zipf_pool(&ZipfSpec { max_fee: 0, ..base }).is_err());
        assert!(zipf_pool(&ZipfSpec {
            shape: -0.1,
            ..base
        })
        .is_err());
        assert!(zipf_pool(&ZipfSpec { m: 0, ..base }).is_err());
    }

    #[test]
    fn zipf_two_values_converges_to_two_thirds() {
        let spec = ZipfSpec {
            max_fee: 2,
            shape: 1.0,
            m: 200_000,
            seed: 5,
        };
        let p = zipf_pool(&spec).unwrap();
        let ones = p.fees().iter().filter(|&&v| v == 1.0).count() as f64;
        let freq = ones / spec.m as f64;
        // 5 standard errors of a Bernoulli(2/3) mean at this m
        let se = ((2.0 / 9.0) / spec.m as f64).sqrt();
        assert!((freq - 2.0 / 3.0).abs() < 5.0 * se, "freq {freq}");
    }

    #[test]
    fn zipf_uniform_chi_square() {
        // 9 degrees of freedom, 0.999 quantile
        const CHI2_9_999: f64 = 27.877;
        let mut failures = 0;
        for seed in 0..50 {
            let spec = ZipfSpec {
                max_fee: 10,
                shape: 0.0,
                m: 1000,
                seed,
            };
            let pool = zipf_pool(&spec).unwrap();
            let mut counts = [0usize; 10];
            for &fee in pool.fees() {
                counts[fee as usize - 1] += 1;
            }
            let chi2: f64 = counts
                .iter()
                .map(|&c| (c as f64 - 100.0).powi(2) / 100.0)
                .sum();
            if chi2 > CHI2_9_999 {
                failures += 1;
            }
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn zipf_frequencies_converge() {
        for shape in [0.0, 0.5, 1.0] {
            let mut counts = [0usize; 10];
            let m = 10_000;
            for seed in 0..50 {
                let pool = zipf_pool(&ZipfSpec {
                    max_fee: 10,
                    shape,
                    m,
                    seed,
                })
                .unwrap();
                for &fee in pool.fees() {
                    counts[fee as usize - 1] += 1;
                }
                let probs = ZipfSpec {
                    max_fee: 10,
                    shape,
                    m,
                    seed,
                }
                .probabilities();
                let total = ((seed + 1) * m as u64) as f64;
                let worst = counts
                    .iter()
                    .zip(&probs)
                    .map(|(&c, p)| (c as f64 / total - p).abs())
                    .fold(0.0, f64::max);
                assert!(worst < 0.02, "shape {shape} seed {seed}: {worst}");
            }
        }
    }

    #[test]
    fn pool_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = pool(&[3.0, 1.5, 7.0]);
        for name in ["pool.json", "pool.txt", "pool.csv"] {
            let path = dir.path().join(name);
            write_pool(&path, &p).unwrap();
            assert_eq!(read_pool(&path).unwrap(), p);
        }
    }

    #[test]
    fn pool_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        assert!(matches!(read_pool(&missing), Err(Error::Io { .. })));
        let bad = dir.path().join("bad.txt");
        fs::write(&bad, "4\nfour\n").unwrap();
        assert!(matches!(read_pool(&bad), Err(Error::Parse { .. })));
        let neg = dir.path().join("neg.json");
        fs::write(&neg, "[1, -1]").unwrap();
        assert!(matches!(read_pool(&neg), Err(Error::Parse { .. })));
        let text = dir.path().join("ok.txt");
        fs::write(&text, "# fees\n4\n\n1\n").unwrap();
        assert_eq!(read_pool(&text).unwrap(), pool(&[4.0, 1.0]));
    }

    proptest! {
        #[test]
        fn grouping_expands_to_the_pool(fees in prop::collection::vec(1u32..20, 1..60)) {
            let p = pool(&fees.iter().map(|&f| f as f64).collect::<Vec<_>>());
            let lv = group_fee_levels(&p);
            prop_assert_eq!(lv.expand(), p.fees().to_vec());
            prop_assert_eq!(lv.transaction_count(), p.len());
            prop_assert!(lv.levels().windows(2).all(|w| w[0].value > w[1].value));
        }

        #[test]
        fn zipf_output_is_in_range(max_fee in 1u32..50, shape in 0.0f64..2.0, m in 1usize..300, seed: u64) {
            let p = zipf_pool(&ZipfSpec { max_fee, shape, m, seed }).unwrap();
            prop_assert_eq!(p.len(), m);
            for &fee in p.fees() {
                prop_assert!(fee >= 1.0 && fee <= max_fee as f64 && fee.fract() == 0.0);
            }
        }
    }
}
