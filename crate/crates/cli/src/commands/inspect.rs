use std::io::Write;
use std::path::Path;

use octen::checkpoint;
use octen::eval::{self, CSV_COLUMNS};
use octen::io::DENSE_MAGIC;

use super::located;
use crate::config::ConfigFile;
use crate::error::{CliError, Result};

/// Describes a checkpoint, dense tensor, Kruskal model, report CSV or
/// settings file, recognised by content.
pub fn inspect(path: &Path, mut w: impl Write) -> Result<()> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    let text = if bytes.starts_with(checkpoint::MAGIC) {
        checkpoint_text(&bytes).map_err(|e| located(path, e))?
    } else if bytes.starts_with(DENSE_MAGIC) {
        let x = octen::io::read_dense(&bytes[..]).map_err(|e| located(path, e))?;
        let (lo, hi) = x
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        format!(
            "dense tensor\n  dims      {:?}\n  entries   {}\n  norm      {:.6e}\n  range     [{lo:.6e}, {hi:.6e}]\n",
            x.dims(),
            x.data().len(),
            x.frobenius_norm()
        )
    } else if bytes.starts_with(b"kruskal") {
        let m = octen::io::read_kruskal(&bytes[..]).map_err(|e| located(path, e))?;
        format!(
            "kruskal model\n  dims      {:?}\n  rank      {}\n  lambda    {:?}\n",
            m.dims(),
            m.rank(),
            m.lambda()
        )
    } else if bytes.starts_with(CSV_COLUMNS.join(",").as_bytes()) {
        let rows = eval::read_reports(&bytes[..]).map_err(|e| located(path, e))?;
        let mut s = format!("report with {} rows\n", rows.len());
        for r in &rows {
            s.push_str(&format!(
                "  {:<8} batch={:<4} slices={:<5} fitness={:<10} congruence_min={:<10} bytes={}{}\n",
                r.kind,
                r.batch.map_or("-".into(), |b| b.to_string()),
                r.slices,
                r.fitness_pct.map_or("-".into(), |f| format!("{f:.4}")),
                r.congruence_min.map_or("-".into(), |c| format!("{c:.6}")),
                r.bytes_total,
                r.oracle_fitness_pct
                    .map_or(String::new(), |f| format!(" oracle_fitness={f:.4}"))
                    + &r.error.as_ref().map_or(String::new(), |e| format!(" error={e}")),
            ));
        }
        s
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| CliError::Config(format!("{}: unrecognised file", path.display())))?;
        ConfigFile::parse(&text, "")?;
        let mut s = String::from("settings\n");
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line.split_once('=').expect("validated above");
            s.push_str(&format!("  {:<16} {}\n", k.trim(), v.trim()));
        }
        s
    };
    w.write_all(text.as_bytes()).map_err(CliError::io("<stdout>"))
}

fn checkpoint_text(bytes: &[u8]) -> octen::Result<String> {
    let state = checkpoint::load(bytes)?;
    let c = state.config();
    let f = eval::memory_account(&state);
    let mut s = format!(
        "checkpoint (format version {})\n  dims      {:?}\n  temporal  mode {} ({} slices)\n  batches   {}\n  rank={} p={} q={} shared={} seed={}\n  als       max_iters={} rel_tol={:e} restarts={}\n  bytes     {} (formula {})\n",
        checkpoint::VERSION,
        state.dims(),
        state.temporal_mode() + 1,
        state.temporal_len(),
        state.batches(),
        c.rank,
        c.p,
        c.q,
        c.shared,
        c.seed,
        c.als.max_iters,
        c.als.rel_tol,
        c.als.n_restarts,
        f.measured.total(),
        f.formula_bytes,
    );
    for record in state.log() {
        s.push_str("  ");
        s.push_str(&record.log_line());
        s.push('\n');
    }
    Ok(s)
}
