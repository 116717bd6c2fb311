use octen::eval::{self, EvalReport};

use super::run::Stream;
use super::{create_dir, dataset, dims_label, located};
use crate::args::Axis;
use crate::config::Settings;
use crate::error::{CliError, Result};

pub const SWEEP_FILE: &str = "sweep.csv";

/// One complete run per value and seed, merged into `sweep.csv`. A failing
/// run becomes a row with its error message; the sweep carries on.
pub fn sweep(s: &Settings) -> Result<Vec<EvalReport>> {
    let axis = s
        .axis
        .ok_or_else(|| CliError::Config("missing setting `axis`".into()))?;
    let values = s.values.clone().unwrap_or_default();
    if values.is_empty() {
        return Err(CliError::Config("a sweep needs at least one value".into()));
    }
    if s.repeats == 0 {
        return Err(CliError::Config("repeats must be at least 1".into()));
    }
    let out = s.out()?.to_path_buf();
    let batch = s.batch()?;
    create_dir(&out)?;

    let mut rows = Vec::new();
    for seed in (0..s.repeats as u64).map(|i| s.seed.wrapping_add(i)) {
        let data = dataset(s, seed)?;
        let oracle = match s.oracle {
            true => Some(eval::baseline_full_cp(
                &data.tensor,
                s.rank()?,
                &s.als()?.with_seed(seed),
            )?),
            false => None,
        };
        for &value in &values {
            let mut point = Settings { seed, ..s.clone() };
            match axis {
                Axis::P => point.p = Some(value),
                Axis::Q => point.q = Some(value),
                Axis::Shared => point.shared = Some(value),
            }
            let mut row = match one_run(&point, &data, batch) {
                Ok(row) => row,
                Err(e) => {
                    log::warn!("{}={value} seed={seed}: {e}", axis.name());
                    EvalReport {
                        seed,
                        dims: dims_label(data.tensor.dims()),
                        rank: point.rank.unwrap_or(0),
                        p: point.p.unwrap_or(0),
                        q: point.q.unwrap_or(0),
                        shared: point.shared.unwrap_or(0),
                        error: Some(e.to_string()),
                        ..EvalReport::default()
                    }
                }
            };
            row.kind = "sweep".into();
            row.axis = Some(axis.name().into());
            row.value = Some(value);
            if let Some(base) = &oracle {
                row.oracle_fitness_pct = Some(base.fitness_pct);
                row.oracle_time = Some(if s.no_timings { 0.0 } else { base.time.as_secs_f64() });
            }
            rows.push(row);
        }
    }
    let path = out.join(SWEEP_FILE);
    let file = std::fs::File::create(&path).map_err(CliError::io(&path))?;
    eval::write_reports(&rows, file).map_err(|e| located(&path, e))?;
    Ok(rows)
}

fn one_run(s: &Settings, data: &super::Dataset, batch: usize) -> Result<EvalReport> {
    let stream = Stream::new(
        &data.tensor,
        data.truth.as_ref(),
        s.octen_config()?,
        batch,
        s.no_timings,
    )?;
    let (state, batch_rows) = stream.run_to_end()?;
    stream.summary_row(&state, &batch_rows, false)
}
