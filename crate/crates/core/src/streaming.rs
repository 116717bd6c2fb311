//! The streaming driver.
//!
//! A stream owns a set of compression replicas, their running summaries and
//! the current factor estimate. Every batch goes through the same seven
//! steps:
//!
//! 1. extend the temporal projections by the batch length;
//! 2. compress the batch once per replica (parallel);
//! 3. add the compressed batch to each summary;
//! 4. decompose every summary with CP-ALS (parallel);
//! 5. align the replica models on their shared rows and stack them;
//! 6. solve for the non-temporal factors and the new temporal rows;
//! 7. fold the new rows into the history accumulators and log the batch.
//!
//! An ingest either commits completely or leaves the state untouched.

use std::fmt::Write as _;
use std::ops::Range;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::compression::{compress, ReplicaSet, SummaryState};
use crate::cp::{als_mode_update, cp_als, cp_als_warm, AlsConfig, AlsOutcome, KruskalModel};
use crate::error::{Error, Result};
use crate::recovery::{
    align_replicas, kruskal_check, match_gauge, recover_nontemporal, recover_temporal_append, replica_bound_nmode,
    stack_projections,
};
use crate::rng::{self, Purpose};
use crate::tensor::{DenseTensor, Matrix};

/// Relative solve residual above which a batch is flagged.
pub const RESIDUAL_WARNING: f64 = 1e-3;

/// Parameters of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct OctenConfig {
    pub rank: usize,
    /// Number of replicas.
    pub p: usize,
    /// Compressed extent of every mode.
    pub q: usize,
    /// Leading projection columns common to all replicas.
    pub shared: usize,
    /// The growing mode; `None` means the last one.
    pub temporal_mode: Option<usize>,
    /// Settings for the per-replica decompositions. `rank` is overridden by
    /// the stream rank and `seed` by a per-replica seed.
    pub als: AlsConfig,
    pub seed: u64,
    /// Reject configurations that violate the identifiability bounds.
    pub enforce_bounds: bool,
    /// Worker threads for the per-replica steps; 0 picks `min(p, cores)`.
    pub workers: usize,
    /// Abort a batch whose recovery residual exceeds [`RESIDUAL_WARNING`].
    pub strict: bool,
}

impl OctenConfig {
    pub fn new(rank: usize, p: usize, q: usize, shared: usize) -> OctenConfig {
        OctenConfig {
            rank,
            p,
            q,
            shared,
            temporal_mode: None,
            als: AlsConfig {
                max_iters: 500,
                rel_tol: 1e-10,
                ..AlsConfig::new(rank)
            },
            seed: 0,
            enforce_bounds: false,
            workers: 0,
            strict: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> OctenConfig {
        self.seed = seed;
        self
    }

    /// The temporal mode for a tensor of the given order.
    pub fn temporal_mode_for(&self, order: usize) -> usize {
        self.temporal_mode.unwrap_or(order - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.p == 0 || self.q == 0 {
            return Err(Error::InvalidConfig(format!(
                "rank, p and Q must be positive (R={}, p={}, Q={})",
                self.rank, self.p, self.q
            )));
        }
        if self.shared >= self.q {
            return Err(Error::InvalidConfig(format!(
                "shared = {} must be smaller than Q = {}",
                self.shared, self.q
            )));
        }
        if self.p > 1 && self.shared == 0 {
            return Err(Error::InvalidConfig(
                "more than one replica needs at least one shared column".into(),
            ));
        }
        if self.rank > self.q {
            return Err(Error::InvalidConfig(format!(
                "rank {} exceeds Q = {}",
                self.rank, self.q
            )));
        }
        AlsConfig {
            rank: self.rank,
            ..self.als.clone()
        }
        .validate()
    }

    fn replica_als(&self) -> AlsConfig {
        AlsConfig {
            rank: self.rank,
            ..self.als.clone()
        }
    }

    fn worker_count(&self) -> usize {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        match self.workers {
            0 => self.p.min(cores).max(1),
            w => w,
        }
    }
}

/// Wall-clock time spent in each stage of one ingest.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub compress: Duration,
    pub decompose: Duration,
    pub align: Duration,
    pub recover: Duration,
    pub total: Duration,
}

/// Diagnostics of one ingested batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub batch: usize,
    /// Absolute temporal rows covered by the batch.
    pub rows: Range<usize>,
    /// Column of each replica placed at each stacked position.
    pub permutations: Vec<Vec<usize>>,
    pub min_matched: f64,
    pub max_unmatched: f64,
    pub ties: usize,
    /// ALS sweeps used by each replica.
    pub als_iterations: Vec<usize>,
    /// Worst ALS fit among the replicas.
    pub min_als_fit: f64,
    /// Relative solve residual per mode (temporal mode included).
    pub residuals: Vec<f64>,
    /// Smallest-to-largest singular value ratio per mode.
    pub rank_margins: Vec<f64>,
    /// Not persisted in checkpoints; zero after a reload.
    pub times: StageTimes,
}

impl BatchRecord {
    pub fn t_new(&self) -> usize {
        self.rows.len()
    }

    /// The record as one line of `key=value` pairs.
    pub fn log_line(&self) -> String {
        let mut s = format!(
            "batch={} rows={}..{} t_new={} min_match={:.6e} max_unmatched={:.6e} ties={}",
            self.batch,
            self.rows.start,
            self.rows.end,
            self.t_new(),
            self.min_matched,
            self.max_unmatched,
            self.ties
        );
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(",");
        let _ = write!(
            s,
            " residuals={} rank_margins={} min_als_fit={:.9} als_iters={}",
            join(&self.residuals),
            join(&self.rank_margins),
            self.min_als_fit,
            self.als_iterations
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let perms: Vec<String> = self
            .permutations
            .iter()
            .map(|p| p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(":"))
            .collect();
        let _ = write!(s, " perms={}", perms.join(","));
        let _ = write!(
            s,
            " t_compress={:.6} t_decompose={:.6} t_align={:.6} t_recover={:.6} t_total={:.6}",
            self.times.compress.as_secs_f64(),
            self.times.decompose.as_secs_f64(),
            self.times.align.as_secs_f64(),
            self.times.recover.as_secs_f64(),
            self.times.total.as_secs_f64()
        );
        s
    }
}

/// Element counts of everything a stream keeps between batches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Footprint {
    /// Non-temporal projections of all replicas.
    pub projections: usize,
    /// Temporal projection rows still held (the latest batch).
    pub temporal_projections: usize,
    /// The compressed summaries `Y_p`.
    pub summaries: usize,
    /// The temporal history accumulators `M_p`.
    pub history: usize,
    /// Per-replica compressed models kept to warm-start the next batch.
    pub replica_models: usize,
    pub nontemporal_factors: usize,
    pub temporal_factor: usize,
}

impl Footprint {
    pub fn total(&self) -> usize {
        self.projections
            + self.temporal_projections
            + self.summaries
            + self.history
            + self.replica_models
            + self.nontemporal_factors
            + self.temporal_factor
    }
}

/// The full state of a stream.
#[derive(Clone, Debug)]
pub struct OctenState {
    pub(crate) config: OctenConfig,
    pub(crate) replicas: ReplicaSet,
    pub(crate) summary: SummaryState,
    /// Current factors with unit weights; the temporal one has a row per slice.
    pub(crate) factors: Vec<Matrix>,
    pub(crate) replica_models: Vec<KruskalModel>,
    pub(crate) log: Vec<BatchRecord>,
}

/// Starts a stream from its first batch.
pub fn init_stream(first_batch: &DenseTensor, cfg: OctenConfig) -> Result<OctenState> {
    cfg.validate()?;
    let order = first_batch.order();
    if order < 3 {
        return Err(Error::InvalidShape(format!(
            "streams need tensors of order >= 3, got order {order}"
        )));
    }
    let tm = cfg.temporal_mode_for(order);
    if tm >= order {
        return Err(Error::ModeOutOfRange { mode: tm, order });
    }
    let nontemporal: Vec<usize> = (0..order).filter(|&m| m != tm).map(|m| first_batch.dims()[m]).collect();
    let replicas = ReplicaSet::generate(&nontemporal, tm, cfg.q, cfg.p, cfg.shared, cfg.seed)?;
    let summary = SummaryState::new(cfg.p, cfg.q, order, cfg.rank)?;
    let mut state = OctenState {
        config: cfg,
        replicas,
        summary,
        factors: Vec::new(),
        replica_models: Vec::new(),
        log: Vec::new(),
    };
    state.check_bounds(first_batch.dims()[tm]).map_err(|e| e.in_batch(0))?;
    state.advance(first_batch).map_err(|e| e.in_batch(0))?;
    Ok(state)
}

impl OctenState {
    pub fn config(&self) -> &OctenConfig {
        &self.config
    }

    /// Changes the worker count; results do not depend on it.
    pub fn set_workers(&mut self, workers: usize) {
        self.config.workers = workers;
    }

    pub fn replicas(&self) -> &ReplicaSet {
        &self.replicas
    }

    pub fn summary(&self) -> &SummaryState {
        &self.summary
    }

    pub fn log(&self) -> &[BatchRecord] {
        &self.log
    }

    pub fn order(&self) -> usize {
        self.replicas.order()
    }

    pub fn temporal_mode(&self) -> usize {
        self.replicas.temporal_mode()
    }

    /// Slices ingested so far.
    pub fn temporal_len(&self) -> usize {
        self.replicas.temporal_len()
    }

    pub fn batches(&self) -> usize {
        self.log.len()
    }

    /// Extents of the tensor seen so far.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Current factors, unit weights, in the stream's own gauge.
    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    /// The current estimate with unit-norm columns and weights.
    pub fn model(&self) -> KruskalModel {
        KruskalModel::from_factors(self.factors.clone())
            .expect("stream factors are consistent")
            .normalized()
    }

    /// Per-replica compressed models from the latest batch.
    pub fn replica_models(&self) -> &[KruskalModel] {
        &self.replica_models
    }

    pub fn footprint(&self) -> Footprint {
        let (projections, temporal_projections) = self.replicas.stored_elements();
        let tm = self.temporal_mode();
        let (mut nontemporal_factors, mut temporal_factor) = (0, 0);
        for (m, f) in self.factors.iter().enumerate() {
            if m == tm {
                temporal_factor += f.len();
            } else {
                nontemporal_factors += f.len();
            }
        }
        Footprint {
            projections,
            temporal_projections,
            summaries: self.summary.summary_elements(),
            history: self.summary.history_elements(),
            replica_models: self
                .replica_models
                .iter()
                .map(|m| m.factors().iter().map(|f| f.len()).sum::<usize>() + m.rank())
                .sum(),
            nontemporal_factors,
            temporal_factor,
        }
    }

    /// Ingests a batch of a three-mode stream.
    pub fn ingest_batch(&mut self, batch: &DenseTensor) -> Result<&BatchRecord> {
        if self.order() != 3 || batch.order() != 3 {
            return Err(Error::InvalidShape(format!(
                "ingest_batch handles three-mode streams; this stream has order {} and the batch {}",
                self.order(),
                batch.order()
            ))
            .in_batch(self.batches()));
        }
        self.ingest_batch_nmode(batch)
    }

    /// Ingests a batch of a stream of any order >= 3.
    pub fn ingest_batch_nmode(&mut self, batch: &DenseTensor) -> Result<&BatchRecord> {
        let index = self.batches();
        let mut next = self.clone();
        next.check_batch(batch)
            .and_then(|t_new| next.check_bounds(t_new))
            .and_then(|_| next.advance(batch))
            .map_err(|e| e.in_batch(index))?;
        *self = next;
        Ok(self.log.last().expect("batch just logged"))
    }

    fn check_batch(&self, batch: &DenseTensor) -> Result<usize> {
        let order = self.order();
        if batch.order() != order {
            return Err(Error::DimensionMismatch(format!(
                "batch of order {} for an order-{order} stream",
                batch.order()
            )));
        }
        let tm = self.temporal_mode();
        let expected = self.replicas.nontemporal_dims();
        let got: Vec<usize> = (0..order).filter(|&m| m != tm).map(|m| batch.dims()[m]).collect();
        if got != expected {
            return Err(Error::DimensionMismatch(format!(
                "batch non-temporal extents {got:?}, stream has {expected:?}"
            )));
        }
        Ok(batch.dims()[tm])
    }

    fn check_bounds(&self, t_new: usize) -> Result<()> {
        if !self.config.enforce_bounds {
            return Ok(());
        }
        let cfg = &self.config;
        let dims = self.replicas.nontemporal_dims();
        let required = replica_bound_nmode(&dims, t_new, cfg.q, cfg.shared)?;
        if cfg.p < required {
            return Err(Error::BoundViolation(format!(
                "p = {} is below the replica bound; need p >= {required}",
                cfg.p
            )));
        }
        // Generic factors have full k-rank; the temporal mode is bounded by
        // the number of slices seen once this batch is in.
        let seen = self.temporal_len() + t_new;
        let tm = self.temporal_mode();
        let mut k_ranks: Vec<usize> = dims.iter().map(|&d| d.min(cfg.rank)).collect();
        k_ranks.insert(tm, seen.min(cfg.rank));
        if !kruskal_check(cfg.q, &k_ranks, cfg.rank) {
            return Err(Error::BoundViolation(format!(
                "k-ranks {k_ranks:?} with Q = {} cannot identify rank {}",
                cfg.q, cfg.rank
            )));
        }
        Ok(())
    }

    fn map_replicas<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let p = self.config.p;
        let workers = self.config.worker_count();
        if workers <= 1 {
            return (0..p).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| (0..p).into_par_iter().map(f).collect())
    }

    fn advance(&mut self, batch: &DenseTensor) -> Result<()> {
        let start = Instant::now();
        let index = self.log.len();
        let tm = self.temporal_mode();
        let order = self.order();
        let t_new = batch.dims()[tm];
        let rows = self.replicas.extend_temporal(t_new)?;

        let compressed = self.map_replicas(|p| compress(batch, self.replicas.replica(p), rows.clone()))?;
        self.summary.update(&compressed)?;
        drop(compressed);
        let t_compress = start.elapsed();

        let als = self.config.replica_als();
        let outcomes: Vec<AlsOutcome> = self.map_replicas(|p| {
            let summary = self.summary.summary(p);
            match self.replica_models.get(p) {
                Some(prev) => {
                    // the batch moved the compressed temporal factor; refit it
                    // before the sweeps disturb the others
                    let tm = self.temporal_mode();
                    let mut factors = prev.distributed_factors();
                    factors[tm] = als_mode_update(summary, &factors, tm)?;
                    cp_als_warm(summary, &als, &KruskalModel::from_factors(factors)?)
                }
                None => {
                    let seed = rng::derive_seed(self.config.seed, Purpose::AlsInit, p as u64, 0);
                    cp_als(summary, &als.clone().with_seed(seed))
                }
            }
        })?;
        let t_decompose = start.elapsed();

        let models: Vec<KruskalModel> = outcomes.iter().map(|o| o.model.clone()).collect();
        let mut stack = align_replicas(&models, &self.replicas)?;
        let t_align = start.elapsed();

        let nontemporal: Vec<usize> = (0..order).filter(|&m| m != tm).collect();
        let mut recovered = vec![Matrix::zeros(0, 0); order];
        let mut residuals = vec![0.0; order];
        let mut margins = vec![0.0; order];
        for &m in &nontemporal {
            let proj = stack_projections(&self.replicas, m, 0..0)?;
            let r = recover_nontemporal(&stack, &proj, m)?;
            residuals[m] = r.relative_residual;
            margins[m] = r.rank_margin;
            recovered[m] = r.factor;
        }
        if !self.factors.is_empty() {
            // Express this batch in the gauge of the stored factors so that
            // the history accumulators and the old temporal rows stay valid.
            let (perm, scales) = match_gauge(&recovered, &self.factors, &nontemporal);
            stack.regauge(&perm, &scales);
            for &m in &nontemporal {
                let mut f = recovered[m].select_columns(perm.iter());
                for (r, mut col) in f.column_iter_mut().enumerate() {
                    col *= scales[m][perm[r]];
                }
                recovered[m] = f;
            }
        }
        // Each replica's own temporal factor carries that replica's ALS
        // error; refit it against the consensus factors before the append.
        let blocks = self.map_replicas(|p| {
            let rep = self.replicas.replica(p);
            let mut f = vec![Matrix::zeros(0, 0); order];
            for &m in &nontemporal {
                f[m] = rep.projection(m)?.transpose() * &recovered[m];
            }
            f[tm] = stack.block(tm, p);
            als_mode_update(self.summary.summary(p), &f, tm)
        })?;
        for (p, b) in blocks.iter().enumerate() {
            stack.set_block(tm, p, b);
        }
        let temporal = recover_temporal_append(&stack, &self.replicas, &mut self.summary, rows.clone())?;
        residuals[tm] = temporal.relative_residual;
        margins[tm] = temporal.rank_margin;

        for (m, &res) in residuals.iter().enumerate() {
            if res > RESIDUAL_WARNING {
                if self.config.strict {
                    return Err(Error::ResidualExceeded {
                        mode: m,
                        residual: res,
                        threshold: RESIDUAL_WARNING,
                    });
                }
                log::warn!("batch {index}: mode {m} recovery residual {res:.3e} exceeds {RESIDUAL_WARNING:.0e}");
            }
        }

        let old_temporal = if self.factors.is_empty() {
            Matrix::zeros(0, self.config.rank)
        } else {
            std::mem::replace(&mut self.factors[tm], Matrix::zeros(0, 0))
        };
        let mut grown = Matrix::zeros(old_temporal.nrows() + t_new, self.config.rank);
        grown.rows_mut(0, old_temporal.nrows()).copy_from(&old_temporal);
        grown.rows_mut(old_temporal.nrows(), t_new).copy_from(&temporal.factor);
        recovered[tm] = grown;
        self.factors = recovered;
        self.replicas.retire_temporal_before(rows.start);
        self.replica_models = models;
        let t_total = start.elapsed();

        let record = BatchRecord {
            batch: index,
            rows,
            permutations: stack.permutations().to_vec(),
            min_matched: stack.min_matched_similarity(),
            max_unmatched: stack.max_unmatched_similarity(),
            ties: stack.ties(),
            als_iterations: outcomes.iter().map(|o| o.iterations).collect(),
            min_als_fit: outcomes.iter().map(|o| o.fit).fold(f64::INFINITY, f64::min),
            residuals,
            rank_margins: margins,
            times: StageTimes {
                compress: t_compress,
                decompose: t_decompose - t_compress,
                align: t_align - t_decompose,
                recover: t_total - t_align,
                total: t_total,
            },
        };
        log::info!("{}", record.log_line());
        self.log.push(record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cp::model_fit;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth(dims: &[usize], rank: usize, seed: u64) -> KruskalModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KruskalModel::from_factors(
            dims.iter()
                .map(|&d| Matrix::from_fn(d, rank, |_, _| rng.random::<f64>()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_batch_stream() {
        let x = truth(&[12, 12, 6], 3, 1).reconstruct();
        let state = init_stream(&x, OctenConfig::new(3, 4, 6, 2).with_seed(3)).unwrap();
        assert_eq!(state.dims(), vec![12, 12, 6]);
        assert_eq!(state.batches(), 1);
        eprintln!(
            "{} fit {}",
            state.log()[0].log_line(),
            model_fit(&x, &state.model()).unwrap()
        );
        assert!(model_fit(&x, &state.model()).unwrap() > 0.999);
    }

    #[test]
    fn batches_grow_the_temporal_factor() {
        let x = truth(&[12, 12, 9], 3, 2).reconstruct();
        let cfg = OctenConfig::new(3, 4, 6, 2).with_seed(5);
        let mut state = init_stream(&x.slice_mode(2, 0..4).unwrap(), cfg).unwrap();
        state.ingest_batch(&x.slice_mode(2, 4..5).unwrap()).unwrap();
        state.ingest_batch(&x.slice_mode(2, 5..9).unwrap()).unwrap();
        assert_eq!(state.dims(), vec![12, 12, 9]);
        assert_eq!(state.log()[2].rows, 5..9);
        assert!(model_fit(&x, &state.model()).unwrap() > 0.999);
    }

    #[test]
    fn wrong_batch_is_rejected_without_side_effects() {
        let x = truth(&[10, 10, 4], 2, 3).reconstruct();
        let mut state = init_stream(&x, OctenConfig::new(2, 3, 5, 2)).unwrap();
        let bad = DenseTensor::zeros(Shape::new(vec![10, 9, 2]).unwrap());
        let err = state.ingest_batch(&bad).unwrap_err();
        assert!(matches!(err, Error::Batch { batch: 1, .. }), "{err}");
        assert_eq!(state.temporal_len(), 4);
        assert_eq!(state.replicas().extensions(), 1);
    }

    #[test]
    fn bounds_are_enforced_when_asked() {
        let x = truth(&[30, 30, 5], 3, 4).reconstruct();
        let mut cfg = OctenConfig::new(3, 2, 10, 2);
        cfg.enforce_bounds = true;
        let err = init_stream(&x, cfg).unwrap_err();
        assert!(err.to_string().contains("need p >= 4"), "{err}");
    }

    #[test]
    fn two_mode_streams_are_rejected() {
        let x = DenseTensor::from_fn(Shape::new(vec![4, 4]).unwrap(), |i| (i[0] + i[1]) as f64);
        assert!(init_stream(&x, OctenConfig::new(1, 1, 2, 0)).is_err());
    }

    #[test]
    fn log_line_is_key_value() {
        let x = truth(&[8, 8, 3], 2, 6).reconstruct();
        let state = init_stream(&x, OctenConfig::new(2, 3, 4, 1)).unwrap();
        let line = state.log()[0].log_line();
        assert!(line.starts_with("batch=0 rows=0..3 t_new=3 "));
        assert!(line.split(' ').all(|kv| kv.contains('=')));
    }
}
