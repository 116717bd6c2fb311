//! Accuracy, memory and time measurements.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cp::{cp_als, AlsConfig, AlsOutcome, KruskalModel};
use crate::error::{Error, Result};
use crate::recovery::greedy_match;
use crate::streaming::{Footprint, OctenState};
use crate::tensor::DenseTensor;

/// Ranks up to this size are matched exhaustively by [`congruence`].
pub const EXHAUSTIVE_MATCH_MAX_RANK: usize = 6;

/// Bytes per stored value.
pub const BYTES_PER_ELEMENT: usize = 8;

/// `100 * (1 - ||x - x_hat|| / ||x||)`. Negative when the residual is larger
/// than the signal.
pub fn fitness(x: &DenseTensor, x_hat: &DenseTensor) -> Result<f64> {
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("fitness is undefined for a zero tensor".into()));
    }
    Ok(100.0 * (1.0 - x.distance(x_hat)? / norm))
}

/// Fitness of a model without materializing its reconstruction.
pub fn model_fitness(x: &DenseTensor, m: &KruskalModel) -> Result<f64> {
    let norm = x.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("fitness is undefined for a zero tensor".into()));
    }
    Ok(100.0 * (1.0 - m.residual_norm(x)? / norm))
}

/// Per-component congruence of `est` against `ground`: after matching columns,
/// the product over modes of the absolute cosine between matched columns.
/// Entry `r` belongs to column `r` of `ground`.
pub fn congruence(ground: &KruskalModel, est: &KruskalModel) -> Result<Vec<f64>> {
    if ground.rank() != est.rank() || ground.dims() != est.dims() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare rank {} over {:?} with rank {} over {:?}",
            est.rank(),
            est.dims(),
            ground.rank(),
            ground.dims()
        )));
    }
    let rank = ground.rank();
    let sim: Vec<Vec<f64>> = (0..rank)
        .map(|r| {
            (0..rank)
                .map(|c| {
                    ground
                        .factors()
                        .iter()
                        .zip(est.factors())
                        .map(|(g, e)| {
                            let (x, y) = (g.column(r), e.column(c));
                            let d = x.norm() * y.norm();
                            if d == 0.0 {
                                0.0
                            } else {
                                (x.dot(&y) / d).abs()
                            }
                        })
                        .product()
                })
                .collect()
        })
        .collect();
    let perm = if rank <= EXHAUSTIVE_MATCH_MAX_RANK {
        best_assignment(&sim)
    } else {
        greedy_match(&sim).0
    };
    Ok((0..rank).map(|r| sim[r][perm[r]]).collect())
}

/// Permutation maximizing the total similarity, by enumeration.
fn best_assignment(sim: &[Vec<f64>]) -> Vec<usize> {
    fn search(
        sim: &[Vec<f64>],
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        score: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if row == sim.len() {
            if score > best.0 {
                *best = (score, cur.clone());
            }
            return;
        }
        for c in 0..sim.len() {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                search(sim, row + 1, used, cur, score + sim[row][c], best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    search(sim, 0, &mut vec![false; sim.len()], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// Smallest and mean entry of a congruence vector.
pub fn min_mean(scores: &[f64]) -> (f64, f64) {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, scores.iter().sum::<f64>() / scores.len() as f64)
}

/// The space cost, in elements, `pQ(pT + t_new + R) + (T + t_old)R + Q^N`,
/// where `T` is the sum of the non-temporal extents.
pub fn space_formula(p: usize, q: usize, rank: usize, t_sum: usize, t_old: usize, t_new: usize, order: usize) -> usize {
    p * q * (p * t_sum + t_new + rank) + (t_sum + t_old) * rank + q.pow(order as u32)
}

/// Persistent bytes of a stream, by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountedBytes {
    /// Compression projections, temporal rows included.
    pub replicas: usize,
    pub summaries: usize,
    pub history: usize,
    pub replica_models: usize,
    pub factors: usize,
}

impl AccountedBytes {
    pub fn from_footprint(f: &Footprint) -> AccountedBytes {
        AccountedBytes {
            replicas: (f.projections + f.temporal_projections) * BYTES_PER_ELEMENT,
            summaries: f.summaries * BYTES_PER_ELEMENT,
            history: f.history * BYTES_PER_ELEMENT,
            replica_models: f.replica_models * BYTES_PER_ELEMENT,
            factors: (f.nontemporal_factors + f.temporal_factor) * BYTES_PER_ELEMENT,
        }
    }

    pub fn total(&self) -> usize {
        self.replicas + self.summaries + self.history + self.replica_models + self.factors
    }
}

/// Measured footprint of a live stream next to the formula's prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemoryAccount {
    pub measured: AccountedBytes,
    pub formula_bytes: usize,
}

impl MemoryAccount {
    /// `measured / formula`.
    pub fn ratio(&self) -> f64 {
        self.measured.total() as f64 / self.formula_bytes as f64
    }
}

/// Accounts the state after its latest batch: `t_new` is that batch's length
/// and `t_old` the slices before it.
pub fn memory_account(state: &OctenState) -> MemoryAccount {
    let cfg = state.config();
    let t_new = state.log().last().map_or(0, |r| r.t_new());
    let t_old = state.temporal_len() - t_new;
    let t_sum: usize = state.replicas().nontemporal_dims().iter().sum();
    let elements = space_formula(cfg.p, cfg.q, cfg.rank, t_sum, t_old, t_new, state.order());
    MemoryAccount {
        measured: AccountedBytes::from_footprint(&state.footprint()),
        formula_bytes: elements * BYTES_PER_ELEMENT,
    }
}

/// Runs `f` and returns its result with the elapsed wall-clock time.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// The batch recompute baseline: CP-ALS on the whole tensor.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub outcome: AlsOutcome,
    pub fitness_pct: f64,
    pub time: Duration,
}

pub fn baseline_full_cp(x: &DenseTensor, rank: usize, als: &AlsConfig) -> Result<Baseline> {
    let cfg = AlsConfig { rank, ..als.clone() };
    let (outcome, time) = timed(|| cp_als(x, &cfg));
    let outcome = outcome?;
    let fitness_pct = model_fitness(x, &outcome.model)?;
    Ok(Baseline {
        outcome,
        fitness_pct,
        time,
    })
}

/// One CSV row of a run or sweep. Empty cells are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `batch`, `summary` or `sweep`.
    pub kind: String,
    pub seed: u64,
    /// Extents joined by `x`, e.g. `50x50x50`.
    pub dims: String,
    pub rank: usize,
    pub p: usize,
    pub q: usize,
    pub shared: usize,
    /// Batch index; empty on summary rows.
    pub batch: Option<usize>,
    /// Temporal slices ingested so far.
    pub slices: usize,
    pub fitness_pct: Option<f64>,
    pub congruence_min: Option<f64>,
    pub congruence_mean: Option<f64>,
    pub t_compress: f64,
    pub t_decompose: f64,
    pub t_align: f64,
    pub t_recover: f64,
    pub t_total: f64,
    pub bytes_replicas: usize,
    pub bytes_summaries: usize,
    pub bytes_history: usize,
    pub bytes_replica_models: usize,
    pub bytes_factors: usize,
    pub bytes_total: usize,
    pub bytes_formula: usize,
    pub oracle_fitness_pct: Option<f64>,
    pub oracle_time: Option<f64>,
    /// Swept parameter and its value, on sweep rows.
    pub axis: Option<String>,
    pub value: Option<usize>,
    pub error: Option<String>,
}

impl EvalReport {
    pub fn set_bytes(&mut self, account: &MemoryAccount) {
        let b = &account.measured;
        self.bytes_replicas = b.replicas;
        self.bytes_summaries = b.summaries;
        self.bytes_history = b.history;
        self.bytes_replica_models = b.replica_models;
        self.bytes_factors = b.factors;
        self.bytes_total = b.total();
        self.bytes_formula = account.formula_bytes;
    }
}

/// Column names, in order.
pub const CSV_COLUMNS: &[&str] = &[
    "kind",
    "seed",
    "dims",
    "rank",
    "p",
    "q",
    "shared",
    "batch",
    "slices",
    "fitness_pct",
    "congruence_min",
    "congruence_mean",
    "t_compress",
    "t_decompose",
    "t_align",
    "t_recover",
    "t_total",
    "bytes_replicas",
    "bytes_summaries",
    "bytes_history",
    "bytes_replica_models",
    "bytes_factors",
    "bytes_total",
    "bytes_formula",
    "oracle_fitness_pct",
    "oracle_time",
    "axis",
    "value",
    "error",
];

pub fn write_reports(rows: &[EvalReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(CSV_COLUMNS)?;
    }
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports(r: impl Read) -> Result<Vec<EvalReport>> {
    let mut input = csv::Reader::from_reader(r);
    let header: Vec<String> = input.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Parse(format!("unexpected CSV header {header:?}")));
    }
    Ok(input.deserialize().collect::<Result<Vec<EvalReport>, _>>()?)
}
