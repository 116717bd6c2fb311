//! Binary checkpoints of a stream.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OCTS" | version u32 | crc64 u64 | payload length u64 | payload
//! payload = section*   section = tag u32 | length u64 | bytes
//! ```
//!
//! The sections are, in order: config (1), replicas (2), summaries (3),
//! model (4) and log (5). Matrices are stored row-major. The checksum is CRC-64/ECMA-182 over the payload.
//! Worker counts and stage timings are deliberately not stored, so the bytes
//! depend only on the numerical state.

use std::io::{Cursor, Read};
use std::ops::Range;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use crc::{Crc, CRC_64_ECMA_182};

use crate::compression::{CompressionReplica, ReplicaSet, SummaryState};
use crate::cp::{AlsConfig, KruskalModel};
use crate::error::{Error, Result};
use crate::streaming::{BatchRecord, OctenConfig, OctenState, StageTimes};
use crate::tensor::{DenseTensor, Matrix, Shape};

pub const MAGIC: &[u8; 4] = b"OCTS";
pub const VERSION: u32 = 1;
const CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);

const CONFIG: u32 = 1;
const REPLICAS: u32 = 2;
const SUMMARIES: u32 = 3;
const MODEL: u32 = 4;
const LOG: u32 = 5;

/// Serializes the state.
pub fn save(state: &OctenState) -> Vec<u8> {
    let mut payload = Vec::new();
    section(&mut payload, CONFIG, |w| put_config(w, &state.config));
    section(&mut payload, REPLICAS, |w| put_replicas(w, &state.replicas));
    section(&mut payload, SUMMARIES, |w| put_summaries(w, &state.summary));
    section(&mut payload, MODEL, |w| {
        put_matrices(w, &state.factors);
        put_len(w, state.replica_models.len());
        for m in &state.replica_models {
            put_matrices(w, m.factors());
            put_f64s(w, m.lambda());
        }
    });
    section(&mut payload, LOG, |w| {
        put_len(w, state.log.len());
        for r in &state.log {
            put_record(w, r);
        }
    });

    let mut out = Vec::with_capacity(payload.len() + 24);
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();
    out.write_u64::<LE>(CRC.checksum(&payload)).unwrap();
    put_len(&mut out, payload.len());
    out.extend_from_slice(&payload);
    out
}

/// Restores a state written by [`save`].
pub fn load(bytes: &[u8]) -> Result<OctenState> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("not a stream checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let crc = r.read_u64::<LE>().map_err(truncated)?;
    let len = r.read_u64::<LE>().map_err(truncated)?;
    let payload = &bytes[r.position() as usize..];
    if payload.len() as u64 != len {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, header says {len}",
            payload.len()
        )));
    }
    if CRC.checksum(payload) != crc {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }

    let mut r = Cursor::new(payload);
    let config = get_config(&mut open_section(&mut r, CONFIG)?)?;
    let replicas = get_replicas(&mut open_section(&mut r, REPLICAS)?)?;
    let summary = get_summaries(&mut open_section(&mut r, SUMMARIES)?)?;
    let mut m = open_section(&mut r, MODEL)?;
    let factors = get_matrices(&mut m)?;
    let count = get_len(&mut m)?;
    let mut replica_models = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let f = get_matrices(&mut m)?;
        let lambda = get_f64s(&mut m)?;
        replica_models.push(KruskalModel::new(f, lambda).map_err(|e| Error::Corrupt(e.to_string()))?);
    }
    let mut l = open_section(&mut r, LOG)?;
    let count = get_len(&mut l)?;
    let mut log = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        log.push(get_record(&mut l)?);
    }
    if (r.position() as usize) != payload.len() {
        return Err(Error::Corrupt("trailing bytes after the last section".into()));
    }

    let order = replicas.order();
    if factors.len() != order
        || summary.summaries().len() != replicas.p()
        || factors[replicas.temporal_mode()].nrows() != replicas.temporal_len()
        || log.len() != summary.batches_seen()
    {
        return Err(Error::Corrupt("sections disagree with each other".into()));
    }
    Ok(OctenState {
        config,
        replicas,
        summary,
        factors,
        replica_models,
        log,
    })
}

/// Writes a checkpoint file.
pub fn save_to(state: &OctenState, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, save(state))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_from(path: impl AsRef<std::path::Path>) -> Result<OctenState> {
    load(&std::fs::read(path)?)
}

fn truncated(e: std::io::Error) -> Error {
    Error::Corrupt(format!("truncated checkpoint: {e}"))
}

fn section(out: &mut Vec<u8>, tag: u32, body: impl FnOnce(&mut Vec<u8>)) {
    let mut buf = Vec::new();
    body(&mut buf);
    out.write_u32::<LE>(tag).unwrap();
    put_len(out, buf.len());
    out.extend_from_slice(&buf);
}

fn open_section<'a>(r: &mut Cursor<&'a [u8]>, tag: u32) -> Result<Cursor<&'a [u8]>> {
    let found = r.read_u32::<LE>().map_err(truncated)?;
    if found != tag {
        return Err(Error::Corrupt(format!("expected section {tag}, found {found}")));
    }
    let len = get_len(r)?;
    let start = r.position() as usize;
    let data: &'a [u8] = r.get_ref();
    let body = start
        .checked_add(len)
        .and_then(|end| data.get(start..end))
        .ok_or_else(|| Error::Corrupt(format!("section {tag} overruns the payload")))?;
    r.set_position((start + len) as u64);
    Ok(Cursor::new(body))
}

fn put_len(w: &mut Vec<u8>, n: usize) {
    w.write_u64::<LE>(n as u64).unwrap();
}

fn get_len(r: &mut Cursor<&[u8]>) -> Result<usize> {
    let n = r.read_u64::<LE>().map_err(truncated)?;
    usize::try_from(n).map_err(|_| Error::Corrupt(format!("length {n} out of range")))
}

/// A count of `width`-byte items, checked against the bytes left.
fn get_count(r: &mut Cursor<&[u8]>, width: usize) -> Result<usize> {
    let n = get_len(r)?;
    let left = r.get_ref().len() - r.position() as usize;
    if n.checked_mul(width).is_none_or(|b| b > left) {
        return Err(Error::Corrupt(format!("{n} items do not fit in {left} bytes")));
    }
    Ok(n)
}

fn put_bool(w: &mut Vec<u8>, b: bool) {
    w.write_u8(b as u8).unwrap();
}

fn get_bool(r: &mut Cursor<&[u8]>) -> Result<bool> {
    match r.read_u8().map_err(truncated)? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::Corrupt(format!("invalid flag byte {b}"))),
    }
}

fn put_f64(w: &mut Vec<u8>, x: f64) {
    w.write_f64::<LE>(x).unwrap();
}

fn get_f64(r: &mut Cursor<&[u8]>) -> Result<f64> {
    r.read_f64::<LE>().map_err(truncated)
}

fn put_f64s(w: &mut Vec<u8>, xs: &[f64]) {
    put_len(w, xs.len());
    for &x in xs {
        put_f64(w, x);
    }
}

fn get_f64s(r: &mut Cursor<&[u8]>) -> Result<Vec<f64>> {
    let n = get_count(r, 8)?;
    (0..n).map(|_| get_f64(r)).collect()
}

fn put_lens(w: &mut Vec<u8>, xs: &[usize]) {
    put_len(w, xs.len());
    for &x in xs {
        put_len(w, x);
    }
}

fn get_lens(r: &mut Cursor<&[u8]>) -> Result<Vec<usize>> {
    let n = get_count(r, 8)?;
    (0..n).map(|_| get_len(r)).collect()
}

fn put_matrix(w: &mut Vec<u8>, m: &Matrix) {
    put_len(w, m.nrows());
    put_len(w, m.ncols());
    for row in m.row_iter() {
        for &x in row.iter() {
            put_f64(w, x);
        }
    }
}

fn get_matrix(r: &mut Cursor<&[u8]>) -> Result<Matrix> {
    let rows = get_len(r)?;
    let cols = get_len(r)?;
    let left = r.get_ref().len() - r.position() as usize;
    if rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .is_none_or(|b| b > left)
    {
        return Err(Error::Corrupt(format!("{rows}x{cols} matrix does not fit")));
    }
    let data = (0..rows * cols).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

fn put_matrices(w: &mut Vec<u8>, ms: &[Matrix]) {
    put_len(w, ms.len());
    for m in ms {
        put_matrix(w, m);
    }
}

fn get_matrices(r: &mut Cursor<&[u8]>) -> Result<Vec<Matrix>> {
    let n = get_count(r, 16)?;
    (0..n).map(|_| get_matrix(r)).collect()
}

fn put_config(w: &mut Vec<u8>, c: &OctenConfig) {
    for n in [c.rank, c.p, c.q, c.shared] {
        put_len(w, n);
    }
    w.write_i64::<LE>(c.temporal_mode.map_or(-1, |m| m as i64)).unwrap();
    put_len(w, c.als.rank);
    put_len(w, c.als.max_iters);
    put_f64(w, c.als.rel_tol);
    put_len(w, c.als.n_restarts);
    w.write_u64::<LE>(c.als.seed).unwrap();
    put_bool(w, c.als.line_search);
    w.write_u64::<LE>(c.seed).unwrap();
    put_bool(w, c.enforce_bounds);
    put_bool(w, c.strict);
}

fn get_config(r: &mut Cursor<&[u8]>) -> Result<OctenConfig> {
    let (rank, p, q, shared) = (get_len(r)?, get_len(r)?, get_len(r)?, get_len(r)?);
    let tm = r.read_i64::<LE>().map_err(truncated)?;
    let als = AlsConfig {
        rank: get_len(r)?,
        max_iters: get_len(r)?,
        rel_tol: get_f64(r)?,
        n_restarts: get_len(r)?,
        seed: r.read_u64::<LE>().map_err(truncated)?,
        line_search: get_bool(r)?,
    };
    let seed = r.read_u64::<LE>().map_err(truncated)?;
    let config = OctenConfig {
        rank,
        p,
        q,
        shared,
        temporal_mode: usize::try_from(tm).ok(),
        als,
        seed,
        enforce_bounds: get_bool(r)?,
        workers: 0,
        strict: get_bool(r)?,
    };
    config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(config)
}

fn put_replicas(w: &mut Vec<u8>, rs: &ReplicaSet) {
    w.write_u64::<LE>(rs.seed()).unwrap();
    put_len(w, rs.temporal_len());
    put_len(w, rs.extensions());
    put_len(w, rs.p());
    for rep in rs.replicas() {
        put_len(w, rep.temporal_mode());
        put_len(w, rep.temporal_start());
        put_len(w, rep.shared());
        put_matrices(w, rep.mats());
    }
}

fn get_replicas(r: &mut Cursor<&[u8]>) -> Result<ReplicaSet> {
    let seed = r.read_u64::<LE>().map_err(truncated)?;
    let temporal_len = get_len(r)?;
    let extensions = get_len(r)?;
    let p = get_count(r, 32)?;
    let mut replicas = Vec::with_capacity(p);
    for id in 0..p {
        let tm = get_len(r)?;
        let start = get_len(r)?;
        let shared = get_len(r)?;
        let mats = get_matrices(r)?;
        replicas.push(CompressionReplica::from_parts(id, mats, tm, start, shared)?);
    }
    ReplicaSet::from_parts(replicas, seed, temporal_len, extensions)
}

fn put_summaries(w: &mut Vec<u8>, s: &SummaryState) {
    put_len(w, s.batches_seen());
    put_len(w, s.summaries().len());
    for y in s.summaries() {
        put_lens(w, y.dims());
        put_f64s(w, y.data());
    }
    put_matrices(w, s.history());
}

fn get_summaries(r: &mut Cursor<&[u8]>) -> Result<SummaryState> {
    let batches = get_len(r)?;
    let p = get_count(r, 16)?;
    let mut summaries = Vec::with_capacity(p);
    for _ in 0..p {
        let dims = get_lens(r)?;
        let data = get_f64s(r)?;
        let shape = Shape::new(dims).map_err(|e| Error::Corrupt(e.to_string()))?;
        summaries.push(DenseTensor::from_vec(shape, data).map_err(|e| Error::Corrupt(e.to_string()))?);
    }
    let history = get_matrices(r)?;
    SummaryState::from_parts(summaries, history, batches)
}

fn put_record(w: &mut Vec<u8>, rec: &BatchRecord) {
    put_len(w, rec.batch);
    put_len(w, rec.rows.start);
    put_len(w, rec.rows.end);
    put_len(w, rec.permutations.len());
    for p in &rec.permutations {
        put_lens(w, p);
    }
    put_f64(w, rec.min_matched);
    put_f64(w, rec.max_unmatched);
    put_len(w, rec.ties);
    put_lens(w, &rec.als_iterations);
    put_f64(w, rec.min_als_fit);
    put_f64s(w, &rec.residuals);
    put_f64s(w, &rec.rank_margins);
}

fn get_record(r: &mut Cursor<&[u8]>) -> Result<BatchRecord> {
    let batch = get_len(r)?;
    let rows: Range<usize> = get_len(r)?..get_len(r)?;
    let n = get_count(r, 8)?;
    let permutations = (0..n).map(|_| get_lens(r)).collect::<Result<Vec<_>>>()?;
    Ok(BatchRecord {
        batch,
        rows,
        permutations,
        min_matched: get_f64(r)?,
        max_unmatched: get_f64(r)?,
        ties: get_len(r)?,
        als_iterations: get_lens(r)?,
        min_als_fit: get_f64(r)?,
        residuals: get_f64s(r)?,
        rank_margins: get_f64s(r)?,
        times: StageTimes::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streaming::init_stream;
    use crate::synth::SynthSpec;

    fn small_state() -> OctenState {
        let (x, _) = SynthSpec::new(vec![8, 8, 4], 2, 3).generate().unwrap();
        init_stream(&x, OctenConfig::new(2, 3, 4, 1).with_seed(2)).unwrap()
    }

    #[test]
    fn init_only_state_round_trips() {
        let bytes = save(&small_state());
        assert_eq!(&bytes[..4], MAGIC);
        let again = save(&load(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = save(&small_state());
        for cut in [0, 3, 10, 30, bytes.len() - 1] {
            let err = load(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn flipped_bit_fails_the_checksum() {
        let mut bytes = save(&small_state());
        let i = bytes.len() / 2;
        bytes[i] ^= 0x10;
        assert!(matches!(load(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn newer_versions_are_rejected() {
        let mut bytes = save(&small_state());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(load(&bytes), Err(Error::Version { found: 2, supported: 1 })));
    }
}
