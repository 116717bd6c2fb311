use std::ops::Range;
use std::path::Path;

use octen::checkpoint;
use octen::cp::KruskalModel;
use octen::eval::{self, congruence, memory_account, min_mean, model_fitness, EvalReport};
use octen::streaming::{init_stream, BatchRecord, OctenConfig, OctenState};
use octen::tensor::DenseTensor;

use super::{create_dir, dataset, dims_label, located};
use crate::config::Settings;
use crate::error::{CliError, Result};

pub const REPORT_FILE: &str = "report.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.octs";
pub const MODEL_FILE: &str = "model.kruskal";

pub struct RunOutcome {
    /// Batch rows, then the summary row once the stream is complete.
    pub rows: Vec<EvalReport>,
    pub state: OctenState,
    /// False when `stop_after` ended the run early.
    pub complete: bool,
}

/// Streams one tensor through a fresh or resumed state.
pub(crate) struct Stream<'a> {
    pub x: &'a DenseTensor,
    pub truth: Option<&'a KruskalModel>,
    pub cfg: OctenConfig,
    pub ranges: Vec<Range<usize>>,
    pub no_timings: bool,
}

impl<'a> Stream<'a> {
    pub fn new(
        x: &'a DenseTensor,
        truth: Option<&'a KruskalModel>,
        cfg: OctenConfig,
        batch: usize,
        no_timings: bool,
    ) -> Result<Stream<'a>> {
        let tm = cfg.temporal_mode_for(x.order());
        if tm >= x.order() {
            return Err(CliError::Config(format!(
                "temporal mode {} exceeds the tensor order {}",
                tm + 1,
                x.order()
            )));
        }
        let k = x.dims()[tm];
        let ranges = (0..k).step_by(batch).map(|s| s..(s + batch).min(k)).collect();
        Ok(Stream {
            x,
            truth,
            cfg,
            ranges,
            no_timings,
        })
    }

    fn temporal_mode(&self) -> usize {
        self.cfg.temporal_mode_for(self.x.order())
    }

    /// Ingests batch `b` (0 starts the stream).
    pub fn step(&self, state: Option<&mut OctenState>, b: usize) -> Result<Option<OctenState>> {
        let batch = self.x.slice_mode(self.temporal_mode(), self.ranges[b].clone())?;
        match state {
            None => Ok(Some(init_stream(&batch, self.cfg.clone())?)),
            Some(s) => {
                let record = s.ingest_batch_nmode(&batch)?;
                log::info!("{}", record.log_line());
                Ok(None)
            }
        }
    }

    /// Scores the state against everything ingested so far.
    pub fn report(&self, state: &OctenState, kind: &str) -> Result<EvalReport> {
        let cfg = state.config();
        let slices = state.temporal_len();
        let seen = self.x.slice_mode(self.temporal_mode(), 0..slices)?;
        let model = state.model();
        let (congruence_min, congruence_mean) = match self.truth {
            Some(t) => {
                let mut factors = t.factors().to_vec();
                let tm = self.temporal_mode();
                factors[tm] = factors[tm].rows(0, slices).into_owned();
                let (lo, mean) = min_mean(&congruence(&KruskalModel::new(factors, t.lambda().to_vec())?, &model)?);
                (Some(lo), Some(mean))
            }
            None => (None, None),
        };
        let mut row = EvalReport {
            kind: kind.into(),
            seed: cfg.seed,
            dims: dims_label(self.x.dims()),
            rank: cfg.rank,
            p: cfg.p,
            q: cfg.q,
            shared: cfg.shared,
            slices,
            fitness_pct: Some(model_fitness(&seen, &model)?),
            congruence_min,
            congruence_mean,
            ..EvalReport::default()
        };
        row.set_bytes(&memory_account(state));
        Ok(row)
    }

    pub fn batch_row(&self, state: &OctenState) -> Result<EvalReport> {
        let record = state.log().last().expect("an ingested batch");
        let mut row = self.report(state, "batch")?;
        row.batch = Some(record.batch);
        if !self.no_timings {
            set_times(&mut row, record);
        }
        Ok(row)
    }

    /// The closing row: final scores, summed stage times and the oracle.
    pub fn summary_row(&self, state: &OctenState, batch_rows: &[EvalReport], oracle: bool) -> Result<EvalReport> {
        let mut row = self.report(state, "summary")?;
        for b in batch_rows {
            row.t_compress += b.t_compress;
            row.t_decompose += b.t_decompose;
            row.t_align += b.t_align;
            row.t_recover += b.t_recover;
            row.t_total += b.t_total;
        }
        if oracle {
            let base = eval::baseline_full_cp(
                self.x,
                state.config().rank,
                &state.config().als.clone().with_seed(state.config().seed),
            )?;
            row.oracle_fitness_pct = Some(base.fitness_pct);
            row.oracle_time = Some(if self.no_timings { 0.0 } else { base.time.as_secs_f64() });
        }
        Ok(row)
    }

    /// Runs the remaining batches without writing anything.
    pub fn run_to_end(&self) -> Result<(OctenState, Vec<EvalReport>)> {
        let mut state = self.step(None, 0)?.expect("a fresh state");
        let mut rows = vec![self.batch_row(&state)?];
        for b in 1..self.ranges.len() {
            self.step(Some(&mut state), b)?;
            rows.push(self.batch_row(&state)?);
        }
        Ok((state, rows))
    }
}

fn set_times(row: &mut EvalReport, record: &BatchRecord) {
    let t = &record.times;
    row.t_compress = t.compress.as_secs_f64();
    row.t_decompose = t.decompose.as_secs_f64();
    row.t_align = t.align.as_secs_f64();
    row.t_recover = t.recover.as_secs_f64();
    row.t_total = t.total.as_secs_f64();
}

/// Streams the tensor, writing `report.csv`, `checkpoint.octs` and, once
/// complete, `model.kruskal` to the output directory.
pub fn run(s: &Settings) -> Result<RunOutcome> {
    let out = s.out()?.to_path_buf();
    let cfg = s.octen_config()?;
    let batch = s.batch()?;
    let data = dataset(s, s.seed)?;
    let stream = Stream::new(&data.tensor, data.truth.as_ref(), cfg, batch, s.no_timings)?;
    create_dir(&out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let report = out.join(REPORT_FILE);

    let (mut state, mut rows) = match s.resume.then(|| resume(&stream, &ckpt, &report)).transpose()? {
        Some(Some(resumed)) => resumed,
        _ => {
            if s.resume {
                log::warn!("no checkpoint in {}; starting from the first batch", out.display());
            }
            let state = stream.step(None, 0)?.expect("a fresh state");
            let rows = vec![stream.batch_row(&state)?];
            (state, rows)
        }
    };
    state.set_workers(s.workers);

    let total = stream.ranges.len();
    let stop = s.stop_after.unwrap_or(total).min(total);
    while state.batches() < stop {
        if s.checkpoint_every > 0 && state.batches() % s.checkpoint_every == 0 {
            save(&state, &rows, &ckpt, &report)?;
        }
        let next = state.batches();
        stream.step(Some(&mut state), next)?;
        rows.push(stream.batch_row(&state)?);
    }
    let complete = state.batches() == total;
    if complete {
        let summary = stream.summary_row(&state, &rows, s.oracle)?;
        rows.push(summary);
        let model = out.join(MODEL_FILE);
        octen::io::save_kruskal(&state.model(), &model).map_err(|e| located(&model, e))?;
    }
    save(&state, &rows, &ckpt, &report)?;
    Ok(RunOutcome { rows, state, complete })
}

fn save(state: &OctenState, rows: &[EvalReport], ckpt: &Path, report: &Path) -> Result<()> {
    checkpoint::save_to(state, ckpt).map_err(|e| located(ckpt, e))?;
    let file = std::fs::File::create(report).map_err(CliError::io(report))?;
    eval::write_reports(rows, file).map_err(|e| located(report, e))
}

/// Reloads a checkpoint and the report rows it covers.
fn resume(stream: &Stream, ckpt: &Path, report: &Path) -> Result<Option<(OctenState, Vec<EvalReport>)>> {
    if !ckpt.exists() {
        return Ok(None);
    }
    let mut state = checkpoint::load_from(ckpt).map_err(|e| located(ckpt, e))?;
    state.set_workers(stream.cfg.workers);
    if state.config() != &stream.cfg {
        return Err(CliError::Config(format!(
            "{} was written with different settings",
            ckpt.display()
        )));
    }
    let done = state.batches();
    let tm = stream.temporal_mode();
    let consistent = done >= 1
        && done <= stream.ranges.len()
        && state.temporal_len() == stream.ranges[done - 1].end
        && (0..stream.x.order()).all(|m| m == tm || state.dims()[m] == stream.x.dims()[m]);
    if !consistent {
        return Err(CliError::Config(format!(
            "{} does not match the input tensor and batch size",
            ckpt.display()
        )));
    }
    let file = std::fs::File::open(report).map_err(CliError::io(report))?;
    let rows: Vec<EvalReport> = eval::read_reports(file)
        .map_err(|e| located(report, e))?
        .into_iter()
        .filter(|r| r.kind == "batch" && r.batch.is_some_and(|b| b < done))
        .collect();
    if rows.len() != done {
        return Err(CliError::Config(format!(
            "{} holds {} batch rows but the checkpoint covers {done} batches",
            report.display(),
            rows.len()
        )));
    }
    log::info!("resuming after batch {} of {}", done, stream.ranges.len());
    Ok(Some((state, rows)))
}
