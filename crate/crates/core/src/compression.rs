//! Random compression replicas and the additive summary update.
//!
//! Each of the `p` replicas owns one `I_n × Q` projection per non-temporal
//! mode and a temporal projection that grows by `t_new` rows per batch. The
//! leading `shared` columns of every projection are the same draw in all
//! replicas; that common block is what later lets the per-replica
//! decompositions be put into a common column order and scale.
//!
//! A batch `X_new` is compressed as
//! `Z_p = X_new ×_0 U_pᵀ ×_1 V_pᵀ ... ×_t W_p[new rows]ᵀ` and folded into the
//! running summary as `Y_p ← Y_p + Z_p`. Because the non-temporal projections
//! never change and new slices meet fresh temporal rows, `Y_p` always equals
//! the one-shot compression of everything ingested so far.

use std::ops::Range;

use rand::Rng;
use rand_distr::Uniform;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::{DenseTensor, Matrix, Shape};

/// One replica's projection matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionReplica {
    id: usize,
    /// Per-mode projections; the temporal entry only holds retained rows.
    mats: Vec<Matrix>,
    temporal_mode: usize,
    /// Absolute temporal index of the first retained row.
    temporal_start: usize,
    shared: usize,
}

impl CompressionReplica {
    /// 0-based replica index; replica 0 is the alignment reference.
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shared(&self) -> usize {
        self.shared
    }

    pub fn q(&self) -> usize {
        self.mats[0].ncols()
    }

    pub fn order(&self) -> usize {
        self.mats.len()
    }

    pub fn temporal_mode(&self) -> usize {
        self.temporal_mode
    }

    /// Projection for a non-temporal mode.
    pub fn projection(&self, mode: usize) -> Result<&Matrix> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        if mode == self.temporal_mode {
            return Err(Error::InvalidConfig(format!(
                "mode {mode} is temporal; use temporal_rows"
            )));
        }
        Ok(&self.mats[mode])
    }

    /// Temporal projection rows for absolute slice indices `rows`.
    pub fn temporal_rows(&self, rows: Range<usize>) -> Result<Matrix> {
        let w = &self.mats[self.temporal_mode];
        let end = self.temporal_start + w.nrows();
        if rows.start < self.temporal_start || rows.end > end || rows.start > rows.end {
            return Err(Error::DimensionMismatch(format!(
                "temporal rows {rows:?} not retained (have {}..{end})",
                self.temporal_start
            )));
        }
        Ok(w.rows(rows.start - self.temporal_start, rows.len()).clone_owned())
    }

    /// All retained temporal rows.
    pub fn temporal(&self) -> &Matrix {
        &self.mats[self.temporal_mode]
    }

    pub fn temporal_start(&self) -> usize {
        self.temporal_start
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }
}

/// The `p` replicas of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaSet {
    replicas: Vec<CompressionReplica>,
    seed: u64,
    q: usize,
    shared: usize,
    temporal_mode: usize,
    /// Total temporal slices seen, retained or not.
    temporal_len: usize,
    /// Number of temporal extensions so far; keys the random streams.
    extensions: usize,
}

/// Projection entries are i.i.d. uniform on (-1, 1). Zero-mean entries keep the
/// compressed factor columns well separated; nonnegative entries would map
/// every nonnegative column close to the same direction and stall ALS.
fn entry_distribution() -> Uniform<f64> {
    Uniform::new(-1.0, 1.0).expect("valid bounds")
}

fn draw_block(seed: u64, rows: usize, q: usize, shared: &Matrix, private: (usize, usize, usize)) -> Matrix {
    let (replica, mode, batch) = private;
    let mut rng = rng::substream(seed, Purpose::PrivateColumns, replica as u64, mode as u64, batch as u64);
    let entry = entry_distribution();
    let mut m = Matrix::zeros(rows, q);
    m.columns_mut(0, shared.ncols()).copy_from(shared);
    for c in shared.ncols()..q {
        for r in 0..rows {
            m[(r, c)] = rng.sample(entry);
        }
    }
    m
}

fn draw_shared(seed: u64, rows: usize, shared: usize, mode: usize, batch: usize) -> Matrix {
    let mut rng = rng::substream(seed, Purpose::SharedColumns, mode as u64, batch as u64, 0);
    let entry = entry_distribution();
    let mut m = Matrix::zeros(rows, shared);
    for c in 0..shared {
        for r in 0..rows {
            m[(r, c)] = rng.sample(entry);
        }
    }
    m
}

impl ReplicaSet {
    /// Draws `p` replicas for a tensor whose non-temporal extents are
    /// `nontemporal_dims` (in mode order, skipping `temporal_mode`). Entries
    /// are i.i.d. uniform(-1,1); the temporal projections start empty.
    pub fn generate(
        nontemporal_dims: &[usize],
        temporal_mode: usize,
        q: usize,
        p: usize,
        shared: usize,
        seed: u64,
    ) -> Result<ReplicaSet> {
        let order = nontemporal_dims.len() + 1;
        if order < 2 {
            return Err(Error::InvalidShape("need at least one non-temporal mode".into()));
        }
        if temporal_mode >= order {
            return Err(Error::ModeOutOfRange {
                mode: temporal_mode,
                order,
            });
        }
        if q == 0 || p == 0 {
            return Err(Error::InvalidConfig(format!(
                "need Q >= 1 and p >= 1, got Q={q}, p={p}"
            )));
        }
        if shared > q {
            return Err(Error::InvalidConfig(format!("shared = {shared} exceeds Q = {q}")));
        }
        if nontemporal_dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero extent in {nontemporal_dims:?}")));
        }
        let mode_dims = full_dims(nontemporal_dims, temporal_mode, 0);
        let shared_blocks: Vec<Matrix> = mode_dims
            .iter()
            .enumerate()
            .map(|(m, &d)| draw_shared(seed, d, shared, m, 0))
            .collect();
        let replicas = (0..p)
            .map(|id| CompressionReplica {
                id,
                mats: mode_dims
                    .iter()
                    .enumerate()
                    .map(|(m, &d)| draw_block(seed, d, q, &shared_blocks[m], (id, m, 0)))
                    .collect(),
                temporal_mode,
                temporal_start: 0,
                shared,
            })
            .collect();
        Ok(ReplicaSet {
            replicas,
            seed,
            q,
            shared,
            temporal_mode,
            temporal_len: 0,
            extensions: 0,
        })
    }

    /// Appends `t_new` fresh temporal rows to every replica and returns their
    /// absolute index range. The shared block of the new rows is drawn once.
    pub fn extend_temporal(&mut self, t_new: usize) -> Result<Range<usize>> {
        if t_new == 0 {
            return Err(Error::InvalidConfig("temporal extension needs t_new >= 1".into()));
        }
        let batch = self.extensions + 1;
        let tm = self.temporal_mode;
        let shared = draw_shared(self.seed, t_new, self.shared, tm, batch);
        for rep in &mut self.replicas {
            let fresh = draw_block(self.seed, t_new, self.q, &shared, (rep.id, tm, batch));
            let old = &rep.mats[tm];
            let mut grown = Matrix::zeros(old.nrows() + t_new, self.q);
            grown.rows_mut(0, old.nrows()).copy_from(old);
            grown.rows_mut(old.nrows(), t_new).copy_from(&fresh);
            rep.mats[tm] = grown;
        }
        let range = self.temporal_len..self.temporal_len + t_new;
        self.temporal_len += t_new;
        self.extensions = batch;
        Ok(range)
    }

    /// Drops temporal rows with absolute index below `row`.
    pub fn retire_temporal_before(&mut self, row: usize) {
        let tm = self.temporal_mode;
        for rep in &mut self.replicas {
            if row <= rep.temporal_start {
                continue;
            }
            let drop = (row - rep.temporal_start).min(rep.mats[tm].nrows());
            let keep = rep.mats[tm].nrows() - drop;
            rep.mats[tm] = rep.mats[tm].rows(drop, keep).clone_owned();
            rep.temporal_start += drop;
        }
    }

    pub fn replicas(&self) -> &[CompressionReplica] {
        &self.replicas
    }

    pub fn replica(&self, id: usize) -> &CompressionReplica {
        &self.replicas[id]
    }

    pub fn p(&self) -> usize {
        self.replicas.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn shared(&self) -> usize {
        self.shared
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn order(&self) -> usize {
        self.replicas[0].order()
    }

    pub fn temporal_mode(&self) -> usize {
        self.temporal_mode
    }

    /// Total temporal slices seen.
    pub fn temporal_len(&self) -> usize {
        self.temporal_len
    }

    pub fn extensions(&self) -> usize {
        self.extensions
    }

    /// Extents of the non-temporal modes, in mode order.
    pub fn nontemporal_dims(&self) -> Vec<usize> {
        let r = &self.replicas[0];
        (0..r.order())
            .filter(|&m| m != self.temporal_mode)
            .map(|m| r.mats[m].nrows())
            .collect()
    }

    /// Number of `f64` values held by all projections `(non-temporal, temporal)`.
    pub fn stored_elements(&self) -> (usize, usize) {
        let tm = self.temporal_mode;
        self.replicas.iter().fold((0, 0), |(a, b), r| {
            let nt: usize = (0..r.order()).filter(|&m| m != tm).map(|m| r.mats[m].len()).sum();
            (a + nt, b + r.mats[tm].len())
        })
    }

    pub(crate) fn from_parts(
        replicas: Vec<CompressionReplica>,
        seed: u64,
        temporal_len: usize,
        extensions: usize,
    ) -> Result<ReplicaSet> {
        let first = replicas
            .first()
            .ok_or_else(|| Error::Corrupt("replica set without replicas".into()))?;
        let (q, shared, tm) = (first.q(), first.shared, first.temporal_mode);
        if replicas
            .iter()
            .enumerate()
            .any(|(i, r)| r.id != i || r.q() != q || r.shared != shared || r.temporal_mode != tm)
        {
            return Err(Error::Corrupt("inconsistent replicas".into()));
        }
        Ok(ReplicaSet {
            replicas,
            seed,
            q,
            shared,
            temporal_mode: tm,
            temporal_len,
            extensions,
        })
    }
}

impl CompressionReplica {
    pub(crate) fn from_parts(
        id: usize,
        mats: Vec<Matrix>,
        temporal_mode: usize,
        temporal_start: usize,
        shared: usize,
    ) -> Result<CompressionReplica> {
        if temporal_mode >= mats.len() || mats.iter().any(|m| m.ncols() != mats[0].ncols()) {
            return Err(Error::Corrupt(format!("malformed replica {id}")));
        }
        Ok(CompressionReplica {
            id,
            mats,
            temporal_mode,
            temporal_start,
            shared,
        })
    }
}

fn full_dims(nontemporal: &[usize], temporal_mode: usize, temporal: usize) -> Vec<usize> {
    let mut dims = nontemporal.to_vec();
    dims.insert(temporal_mode, temporal);
    dims
}

/// `t ×_0 P_0ᵀ ×_1 P_1ᵀ ...`, compressing mode 0 first and then ascending.
/// `temporal_rows` picks the temporal projection rows matching `t`'s slices.
pub fn compress(t: &DenseTensor, replica: &CompressionReplica, temporal_rows: Range<usize>) -> Result<DenseTensor> {
    if t.order() != replica.order() {
        return Err(Error::DimensionMismatch(format!(
            "order-{} tensor against an order-{} replica",
            t.order(),
            replica.order()
        )));
    }
    let mut out = t.clone();
    for mode in 0..t.order() {
        let owned;
        let proj = if mode == replica.temporal_mode {
            owned = replica.temporal_rows(temporal_rows.clone())?;
            &owned
        } else {
            &replica.mats[mode]
        };
        if proj.nrows() != t.dims()[mode] {
            return Err(Error::DimensionMismatch(format!(
                "mode {mode} has extent {} but the projection has {} rows",
                t.dims()[mode],
                proj.nrows()
            )));
        }
        out = out.mode_n_product(&proj.transpose(), mode)?;
    }
    Ok(out)
}

/// Per-replica running summaries `Y_p` and temporal-history accumulators
/// `M_p = Σ_batches W_batch,pᵀ C_batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryState {
    summaries: Vec<DenseTensor>,
    history: Vec<Matrix>,
    batches_seen: usize,
}

impl SummaryState {
    pub fn new(p: usize, q: usize, order: usize, rank: usize) -> Result<SummaryState> {
        let shape = Shape::new(vec![q; order])?;
        Ok(SummaryState {
            summaries: vec![DenseTensor::zeros(shape); p],
            history: vec![Matrix::zeros(q, rank); p],
            batches_seen: 0,
        })
    }

    /// `Y_p ← Y_p + Z_p` for every replica. Nothing changes on error.
    pub fn update(&mut self, batch: &[DenseTensor]) -> Result<()> {
        if batch.len() != self.summaries.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} compressed batches for {} replicas",
                batch.len(),
                self.summaries.len()
            )));
        }
        if let Some(z) = batch.iter().zip(&self.summaries).find(|(z, y)| z.shape() != y.shape()) {
            return Err(Error::DimensionMismatch(format!(
                "summary update of shape {}, expected {}",
                z.0.shape(),
                z.1.shape()
            )));
        }
        for (y, z) in self.summaries.iter_mut().zip(batch) {
            y.add_assign(z)?;
        }
        self.batches_seen += 1;
        Ok(())
    }

    pub fn summaries(&self) -> &[DenseTensor] {
        &self.summaries
    }

    pub fn summary(&self, replica: usize) -> &DenseTensor {
        &self.summaries[replica]
    }

    pub fn history(&self) -> &[Matrix] {
        &self.history
    }

    pub(crate) fn history_mut(&mut self) -> &mut [Matrix] {
        &mut self.history
    }

    pub fn batches_seen(&self) -> usize {
        self.batches_seen
    }

    /// `f64` values held by the summaries.
    pub fn summary_elements(&self) -> usize {
        self.summaries.iter().map(|s| s.data().len()).sum()
    }

    /// `f64` values held by the history accumulators.
    pub fn history_elements(&self) -> usize {
        self.history.iter().map(|h| h.len()).sum()
    }

    pub(crate) fn from_parts(
        summaries: Vec<DenseTensor>,
        history: Vec<Matrix>,
        batches_seen: usize,
    ) -> Result<SummaryState> {
        if summaries.len() != history.len() || summaries.is_empty() {
            return Err(Error::Corrupt("summary and history counts differ".into()));
        }
        Ok(SummaryState {
            summaries,
            history,
            batches_seen,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rank1_outer;

    fn shared_block_identical(rs: &ReplicaSet) -> bool {
        let s = rs.shared();
        let first = rs.replica(0);
        rs.replicas().iter().all(|r| {
            r.mats()
                .iter()
                .zip(first.mats())
                .all(|(a, b)| a.columns(0, s) == b.columns(0, s))
        })
    }

    #[test]
    fn full_sharing_gives_identical_replicas() {
        let rs = ReplicaSet::generate(&[6, 5], 2, 4, 2, 4, 1).unwrap();
        assert_eq!(rs.replica(0).mats(), rs.replica(1).mats());
    }

    #[test]
    fn no_sharing_gives_distinct_columns() {
        let rs = ReplicaSet::generate(&[6, 5], 2, 4, 3, 0, 1).unwrap();
        for a in rs.replicas() {
            for b in rs.replicas().iter().filter(|b| b.id() != a.id()) {
                let u = a.projection(0).unwrap();
                let v = b.projection(0).unwrap();
                for i in 0..4 {
                    for j in 0..4 {
                        assert_ne!(u.column(i), v.column(j));
                    }
                }
            }
        }
    }

    #[test]
    fn smallest_table_configuration() {
        let rs = ReplicaSet::generate(&[50, 50], 2, 30, 20, 5, 42).unwrap();
        assert_eq!(rs.p(), 20);
        assert!(rs
            .replicas()
            .iter()
            .all(|r| r.projection(0).unwrap().shape() == (50, 30)));
        assert!(shared_block_identical(&rs));
        let u = rs.replica(3).projection(1).unwrap();
        assert!(u.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn shared_exceeding_q_is_rejected() {
        assert!(ReplicaSet::generate(&[6, 5], 2, 4, 2, 5, 1).is_err());
    }

    #[test]
    fn temporal_extension() {
        let mut rs = ReplicaSet::generate(&[6, 5], 2, 4, 3, 2, 9).unwrap();
        let twin = rs.clone();
        assert_eq!(rs.extend_temporal(5).unwrap(), 0..5);
        let first_rows = rs.replica(1).temporal().clone();
        assert_eq!(rs.extend_temporal(5).unwrap(), 5..10);
        assert_eq!(rs.replica(1).temporal().nrows(), 10);
        assert_eq!(rs.replica(1).temporal().rows(0, 5), first_rows);
        assert!(shared_block_identical(&rs));

        let mut again = twin;
        again.extend_temporal(5).unwrap();
        again.extend_temporal(5).unwrap();
        assert_eq!(again, rs);
        assert!(rs.extend_temporal(0).is_err());
    }

    #[test]
    fn retired_rows_are_unavailable() {
        let mut rs = ReplicaSet::generate(&[3, 3], 2, 2, 2, 1, 0).unwrap();
        rs.extend_temporal(4).unwrap();
        rs.extend_temporal(2).unwrap();
        let keep = rs.replica(0).temporal_rows(4..6).unwrap();
        rs.retire_temporal_before(4);
        assert_eq!(rs.temporal_len(), 6);
        assert!(rs.replica(0).temporal_rows(0..4).is_err());
        assert_eq!(rs.replica(0).temporal_rows(4..6).unwrap(), keep);
        assert_eq!(rs.stored_elements(), (2 * (3 * 2 + 3 * 2), 2 * 2 * 2));
    }

    fn identity_replica(n: usize) -> CompressionReplica {
        CompressionReplica::from_parts(0, vec![Matrix::identity(n, n); 3], 2, 0, 0).unwrap()
    }

    #[test]
    fn identity_compression_is_identity() {
        let t = DenseTensor::from_fn(Shape::new([3, 3, 3]).unwrap(), |ix| {
            (ix[0] * 9 + ix[1] * 3 + ix[2]) as f64
        });
        assert_eq!(compress(&t, &identity_replica(3), 0..3).unwrap(), t);
        let z = DenseTensor::zeros(t.shape().clone());
        assert!(compress(&z, &identity_replica(3), 0..3)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_compresses_to_rank_one() {
        let mut rs = ReplicaSet::generate(&[4, 5], 2, 3, 1, 1, 5).unwrap();
        rs.extend_temporal(6).unwrap();
        let a = [0.5, -1.0, 2.0, 0.25];
        let b = [1.0, 0.0, 3.0, -0.5, 0.5];
        let c = [1.0, 2.0, -1.0, 0.5, 0.0, 1.5];
        let t = rank1_outer(&[&a, &b, &c]).unwrap();
        let r = rs.replica(0);
        let got = compress(&t, r, 0..6).unwrap();
        let project = |m: &Matrix, v: &[f64]| -> Vec<f64> {
            (m.transpose() * Matrix::from_column_slice(v.len(), 1, v))
                .as_slice()
                .to_vec()
        };
        let ua = project(r.projection(0).unwrap(), &a);
        let vb = project(r.projection(1).unwrap(), &b);
        let wc = project(r.temporal(), &c);
        let expect = rank1_outer(&[&ua, &vb, &wc]).unwrap();
        assert!(got.distance(&expect).unwrap() < 1e-10);
    }

    #[test]
    fn summary_additivity() {
        let mut rs = ReplicaSet::generate(&[6, 6], 2, 4, 2, 1, 11).unwrap();
        let x = DenseTensor::from_fn(Shape::new([6, 6, 7]).unwrap(), |ix| {
            ((ix[0] * 31 + ix[1] * 17 + ix[2] * 7) % 13) as f64 / 13.0 - 0.3
        });
        let old = x.slice_mode(2, 0..4).unwrap();
        let new = x.slice_mode(2, 4..7).unwrap();
        let r_old = rs.extend_temporal(4).unwrap();
        let r_new = rs.extend_temporal(3).unwrap();
        for rep in rs.replicas() {
            let mut lhs = compress(&old, rep, r_old.clone()).unwrap();
            lhs.add_assign(&compress(&new, rep, r_new.clone()).unwrap()).unwrap();
            let rhs = compress(&x, rep, 0..7).unwrap();
            assert!(lhs.distance(&rhs).unwrap() <= 1e-10 * rhs.frobenius_norm());
        }
    }

    #[test]
    fn summary_updates() {
        let mut s = SummaryState::new(2, 3, 3, 2).unwrap();
        let shape = Shape::new([3, 3, 3]).unwrap();
        let z0 = DenseTensor::zeros(shape.clone());
        s.update(&[z0.clone(), z0.clone()]).unwrap();
        assert!(s.summary(0).data().iter().all(|&v| v == 0.0));
        assert_eq!(s.batches_seen(), 1);
        assert_eq!(s.summary_elements(), 2 * 27);

        let a = DenseTensor::from_fn(shape.clone(), |ix| ix[0] as f64 + 0.1);
        let b = DenseTensor::from_fn(shape.clone(), |ix| ix[2] as f64 * 0.3);
        let mut split = s.clone();
        split.update(&[a.clone(), a.clone()]).unwrap();
        split.update(&[b.clone(), b.clone()]).unwrap();
        let mut ab = a.clone();
        ab.add_assign(&b).unwrap();
        s.update(&[ab.clone(), ab]).unwrap();
        assert!(split.summary(1).distance(s.summary(1)).unwrap() < 1e-12);

        let wrong = DenseTensor::zeros(Shape::new([3, 3, 2]).unwrap());
        assert!(s.update(&[wrong.clone(), wrong]).is_err());
    }
}
