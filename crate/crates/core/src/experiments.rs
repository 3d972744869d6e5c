//! Parameter sweeps over Zipf-like pools and their CSV/JSON output.
//!
//! Replicate `r` of the `j`-th swept value draws its pool from seed
//! `derive_seed(base_seed, [j, r])`; every strategy is evaluated on that
//! same pool. Metrics are the analytic `Θ_tx` and `Θ_fee`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::mean_std;
use crate::metrics::{effective_fee_throughput, effective_tx_throughput};
use crate::optim::SolverConfig;
use crate::pool::{zipf_pool, GameConfig, ZipfSpec};
use crate::seed::derive_seed;
use crate::strategies::{make_strategy, StrategyKind};

/// CSV header, also the key order of JSON records.
pub const CSV_HEADER: [&str; 9] = [
    "vary_name",
    "vary_value",
    "strategy",
    "theta_tx_mean",
    "theta_tx_std",
    "theta_fee_mean",
    "theta_fee_std",
    "runs",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SweepParam {
    /// Pool size `m`.
    M,
    MaxFee,
    /// Zipf shape `s`.
    S,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::M => "m",
            SweepParam::MaxFee => "maxfee",
            SweepParam::S => "s",
        }
    }

    /// The standard grid for each sweep parameter.
    pub fn standard_grid(self) -> Vec<f64> {
        match self {
            SweepParam::M => vec![100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, 10000.0],
            SweepParam::MaxFee => (1..=20).map(|i| f64::from(5 * i)).collect(),
            SweepParam::S => (0..=14).map(|i| f64::from(i) / 10.0).collect(),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "m" => Ok(SweepParam::M),
            "maxfee" => Ok(SweepParam::MaxFee),
            "s" => Ok(SweepParam::S),
            other => Err(format!(
                "unknown sweep parameter `{other}` (expected m, maxfee or s)"
            )),
        }
    }
}

/// Parameters held fixed while one of `m`, `max_fee`, `s` is swept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepBase {
    pub n: u32,
    pub b: usize,
    pub m: usize,
    pub max_fee: u32,
    pub s: f64,
    /// Replicate pools per swept value.
    pub sim: usize,
    pub seed: u64,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            n: 10,
            b: 100,
            m: 1000,
            max_fee: 10,
            s: 0.0,
            sim: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub vary: SweepParam,
    pub values: Vec<f64>,
    pub base: SweepBase,
    pub strategies: Vec<StrategyKind>,
    pub solver: SolverConfig,
}

impl SweepSpec {
    /// Sweep over the standard grid with the default base parameters and
    /// all four strategies.
    pub fn standard(vary: SweepParam) -> Self {
        Self {
            vary,
            values: vary.standard_grid(),
            base: SweepBase::default(),
            strategies: StrategyKind::ALL.to_vec(),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSweep(msg));
        if self.values.is_empty() {
            return bad("no values to sweep".into());
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("values must be strictly increasing".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategies selected".into());
        }
        if self.base.sim < 1 {
            return bad("sim must be at least 1".into());
        }
        GameConfig::new(self.base.n, self.base.b)?;
        for &v in &self.values {
            let ok = match self.vary {
                SweepParam::M | SweepParam::MaxFee => {
                    v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64
                }
                SweepParam::S => v.is_finite() && v >= 0.0,
            };
            if !ok {
                return bad(format!("{v} is not a valid value for {}", self.vary));
            }
        }
        self.zipf(self.values[0], 0).validate()?;
        self.solver.validate()
    }

    fn zipf(&self, value: f64, seed: u64) -> ZipfSpec {
        let mut spec = ZipfSpec {
            max_fee: self.base.max_fee,
            shape: self.base.s,
            m: self.base.m,
            seed,
        };
        match self.vary {
            SweepParam::M => spec.m = value as usize,
            SweepParam::MaxFee => spec.max_fee = value as u32,
            SweepParam::S => spec.shape = value,
        }
        spec
    }
}

/// Aggregated metrics of one strategy at one swept value. Means and
/// standard deviations are over the replicates that succeeded (`runs`);
/// they are NaN when none did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub vary_name: String,
    pub vary_value: f64,
    pub strategy: StrategyKind,
    pub theta_tx_mean: f64,
    pub theta_tx_std: f64,
    pub theta_fee_mean: f64,
    pub theta_fee_std: f64,
    pub runs: usize,
    pub seed: u64,
}

/// `(Θ_tx, Θ_fee)` of every strategy on one replicate pool.
fn evaluate_cell(spec: &SweepSpec, value: f64, seed: u64) -> Vec<Result<(f64, f64)>> {
    let config = GameConfig::new(spec.base.n, spec.base.b);
    let pool = zipf_pool(&spec.zipf(value, seed));
    spec.strategies
        .iter()
        .map(|&kind| {
            let config = config.as_ref().map_err(clone_error)?;
            let pool = pool.as_ref().map_err(clone_error)?;
            let q = make_strategy(kind, pool, config, &spec.solver)?;
            Ok((
                effective_tx_throughput(&q, config),
                effective_fee_throughput(&q, pool, config)?,
            ))
        })
        .collect()
}

fn clone_error(e: &Error) -> Error {
    Error::InvalidSweep(e.to_string())
}

/// Runs the sweep; one row per (value, strategy), in value-major order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let sim = spec.base.sim;
    let cells: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|j| (0..sim).map(move |r| (j, r)))
        .collect();
    let results: Vec<Vec<Result<(f64, f64)>>> = cells
        .par_iter()
        .map(|&(j, r)| {
            let seed = derive_seed(spec.base.seed, &[j as u64, r as u64]);
            evaluate_cell(spec, spec.values[j], seed)
        })
        .collect();

    let mut rows = Vec::with_capacity(spec.values.len() * spec.strategies.len());
    for (j, &value) in spec.values.iter().enumerate() {
        let replicates = &results[j * sim..(j + 1) * sim];
        for (s, &kind) in spec.strategies.iter().enumerate() {
            let ok: Vec<(f64, f64)> = replicates
                .iter()
                .filter_map(|cell| cell[s].as_ref().ok().copied())
                .collect();
            let (tx_mean, tx_std, fee_mean, fee_std) = if ok.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let tx: Vec<f64> = ok.iter().map(|c| c.0).collect();
                let fee: Vec<f64> = ok.iter().map(|c| c.1).collect();
                let (a, b) = mean_std(&tx);
                let (c, d) = mean_std(&fee);
                (a, b, c, d)
            };
            rows.push(SweepRow {
                vary_name: spec.vary.name().to_string(),
                vary_value: value,
                strategy: kind,
                theta_tx_mean: tx_mean,
                theta_tx_std: tx_std,
                theta_fee_mean: fee_mean,
                theta_fee_std: fee_std,
                runs: ok.len(),
                seed: spec.base.seed,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

/// Rounds to 9 significant digits and prints in plain decimal notation.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

fn row_fields(row: &SweepRow) -> [String; 9] {
    [
        row.vary_name.clone(),
        format_float(row.vary_value),
        row.strategy.name().to_string(),
        format_float(row.theta_tx_mean),
        format_float(row.theta_tx_std),
        format_float(row.theta_fee_mean),
        format_float(row.theta_fee_std),
        row.runs.to_string(),
        row.seed.to_string(),
    ]
}

/// Writes rows as CSV or JSON to any writer.
pub fn write_rows<W: Write>(
    rows: &[SweepRow],
    out: W,
    format: OutputFormat,
) -> std::io::Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_HEADER)?;
            for row in rows {
                w.write_record(row_fields(row))?;
            }
            w.flush()
        }
        OutputFormat::Json => {
            let mut out = out;
            out.write_all(b"[")?;
            for (i, row) in rows.iter().enumerate() {
                out.write_all(if i == 0 { b"\n" } else { b",\n" })?;
                let fields = row_fields(row);
                let mut obj = String::from("{");
                for (k, (key, value)) in CSV_HEADER.iter().zip(&fields).enumerate() {
                    if k > 0 {
                        obj.push(',');
                    }
                    obj.push_str(&format!("\"{key}\":"));
                    obj.push_str(&json_value(k, value));
                }
                obj.push('}');
                out.write_all(obj.as_bytes())?;
            }
            out.write_all(if rows.is_empty() { b"]\n" } else { b"\n]\n" })?;
            out.flush()
        }
    }
}

fn json_value(column: usize, value: &str) -> String {
    match column {
        0 | 2 => serde_json::to_string(value).expect("string serializes"),
        _ if value == "NaN" || value.ends_with("inf") => "null".into(),
        _ => value.to_string(),
    }
}

/// Writes rows to `path`.
pub fn write_results(rows: &[SweepRow], path: &Path, format: OutputFormat) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_rows(rows, BufWriter::new(file), format).map_err(io_err)
}
