//! Factor matching across replicas and least-squares recovery of the full
//! factors from the stacked compressed ones.
//!
//! Replica `p` decomposes its summary into factors `Ã_p ≈ P_pᵀ A Π_p D_p`:
//! the true factor projected by that replica's compression matrix, up to a
//! column permutation and scaling. The first `shared` rows of every `Ã_p` are
//! projections by the common column block, so they agree across replicas
//! once permutation and scale are undone. [`align_replicas`] uses those rows
//! to bring every replica into the column order and scale of replica 0, and
//! stacks the results into `Ã_s = [Ã_0; ...; Ã_{p-1}]` (`pQ × R`). With the
//! matching stacked projection `P̃ = [P_0ᵀ; ...; P_{p-1}ᵀ]` the full factor is
//! the least-squares solution of `P̃ A = Ã_s`.

use std::ops::Range;

use crate::compression::{ReplicaSet, SummaryState};
use crate::cp::KruskalModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Matrix;

/// Two match scores closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Shared rows with a smaller norm cannot anchor a match.
pub const DEGENERATE_SHARED_NORM: f64 = 1e-12;

/// Per-mode stacked factors of all replicas in the reference gauge.
#[derive(Clone, Debug)]
pub struct AlignedStack {
    stacks: Vec<Matrix>,
    /// `permutations[p][r]` is the column of replica `p` placed at position `r`.
    permutations: Vec<Vec<usize>>,
    /// `scales[p][mode][r]` multiplies that column.
    scales: Vec<Vec<Vec<f64>>>,
    q: usize,
    min_matched: f64,
    max_unmatched: f64,
    ties: usize,
}

impl AlignedStack {
    pub fn stack(&self, mode: usize) -> &Matrix {
        &self.stacks[mode]
    }

    pub fn stacks(&self) -> &[Matrix] {
        &self.stacks
    }

    /// Rows of `mode`'s stack that came from replica `p`.
    pub fn block(&self, mode: usize, p: usize) -> Matrix {
        self.stacks[mode].rows(p * self.q, self.q).clone_owned()
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    pub fn scales(&self) -> &[Vec<Vec<f64>>] {
        &self.scales
    }

    pub fn reference(&self) -> usize {
        0
    }

    pub fn p(&self) -> usize {
        self.permutations.len()
    }

    pub fn rank(&self) -> usize {
        self.stacks[0].ncols()
    }

    /// Smallest similarity among accepted matches.
    pub fn min_matched_similarity(&self) -> f64 {
        self.min_matched
    }

    /// Largest similarity among rejected pairs.
    pub fn max_unmatched_similarity(&self) -> f64 {
        self.max_unmatched
    }

    /// Matches resolved by index because the scores were tied.
    pub fn ties(&self) -> usize {
        self.ties
    }

    /// Replaces the rows of `mode`'s stack that came from replica `p`.
    pub fn set_block(&mut self, mode: usize, p: usize, block: &Matrix) {
        self.stacks[mode].rows_mut(p * self.q, self.q).copy_from(block);
    }

    /// Re-expresses every stack in another gauge: new column `r` is old
    /// column `perm[r]` scaled by `scales[mode][perm[r]]`.
    pub fn regauge(&mut self, perm: &[usize], scales: &[Vec<f64>]) {
        for (stack, s) in self.stacks.iter_mut().zip(scales) {
            let mut out = stack.select_columns(perm.iter());
            for (r, mut col) in out.column_iter_mut().enumerate() {
                col *= s[perm[r]];
            }
            *stack = out;
        }
    }
}

fn shared_rows(f: &Matrix, shared: usize) -> Matrix {
    f.rows(0, shared).clone_owned()
}

fn abs_cosine(a: &Matrix, i: usize, b: &Matrix, j: usize) -> f64 {
    let (x, y) = (a.column(i), b.column(j));
    let denom = x.norm() * y.norm();
    if denom == 0.0 {
        0.0
    } else {
        (x.dot(&y) / denom).abs()
    }
}

/// Greedy one-to-one matching on a similarity matrix `sim[r][c]`, best pair
/// first. Returns `perm[r] = c`, the number of ties broken by index, and the
/// similarity extrema `(min matched, max unmatched)`.
pub fn greedy_match(sim: &[Vec<f64>]) -> (Vec<usize>, usize, f64, f64) {
    let n = sim.len();
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut ties = 0;
    let mut min_matched = f64::INFINITY;
    for _ in 0..n {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut tied = false;
        for r in (0..n).filter(|&r| perm[r] == usize::MAX) {
            for c in (0..n).filter(|&c| !used[c]) {
                let s = sim[r][c];
                match best {
                    None => best = Some((r, c, s)),
                    Some((_, _, b)) if s > b + TIE_TOLERANCE => {
                        best = Some((r, c, s));
                        tied = false;
                    }
                    Some((br, bc, b)) if (s - b).abs() <= TIE_TOLERANCE && (br == r || bc == c) => {
                        tied = true;
                    }
                    _ => {}
                }
            }
        }
        let (r, c, s) = best.expect("unassigned rows remain");
        if tied {
            ties += 1;
            log::debug!("ambiguous column match for component {r}; kept column {c}");
        }
        perm[r] = c;
        used[c] = true;
        min_matched = min_matched.min(s);
    }
    let mut max_unmatched = f64::NEG_INFINITY;
    for (r, row) in sim.iter().enumerate() {
        for (c, &s) in row.iter().enumerate() {
            if perm[r] != c {
                max_unmatched = max_unmatched.max(s);
            }
        }
    }
    (perm, ties, min_matched, max_unmatched)
}

/// Brings every replica decomposition into replica 0's column order and
/// scale by matching their shared-projection rows, then stacks them.
///
/// Each model is first normalized and its weights split as `λ^(1/N)` over the
/// modes. Columns are matched by the product over modes of the absolute
/// cosine between shared rows; each mode's scale is then the least-squares
/// factor mapping the candidate's shared rows onto the reference's.
pub fn align_replicas(models: &[KruskalModel], rs: &ReplicaSet) -> Result<AlignedStack> {
    let p = models.len();
    if p == 0 || p != rs.p() {
        return Err(Error::Alignment(format!("{p} models for {} replicas", rs.p())));
    }
    let rank = models[0].rank();
    let order = models[0].order();
    let q = rs.q();
    if models
        .iter()
        .any(|m| m.rank() != rank || m.order() != order || m.dims().iter().any(|&d| d != q))
    {
        return Err(Error::Alignment(format!(
            "every replica model must be rank {rank} over a {q}^{order} summary"
        )));
    }
    let shared = rs.shared();
    if p > 1 && shared == 0 {
        return Err(Error::Alignment(
            "matching replicas needs at least one shared column".into(),
        ));
    }

    let distributed: Vec<Vec<Matrix>> = models.iter().map(|m| m.distributed_factors()).collect();
    let reference: Vec<Matrix> = distributed[0].iter().map(|f| shared_rows(f, shared)).collect();
    let check_rows = |rows: &[Matrix], who: usize| -> Result<()> {
        for (mode, f) in rows.iter().enumerate() {
            for (r, col) in f.column_iter().enumerate() {
                if col.norm() < DEGENERATE_SHARED_NORM {
                    return Err(Error::Alignment(format!(
                        "replica {who}, mode {mode}, component {r}: shared rows are degenerate"
                    )));
                }
            }
        }
        Ok(())
    };
    if p > 1 {
        check_rows(&reference, 0)?;
    }

    let mut stacks: Vec<Matrix> = (0..order).map(|_| Matrix::zeros(p * q, rank)).collect();
    let mut permutations = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let (mut min_matched, mut max_unmatched, mut ties) = (f64::INFINITY, f64::NEG_INFINITY, 0);

    for (id, factors) in distributed.iter().enumerate() {
        let (perm, scale) = if id == 0 {
            ((0..rank).collect::<Vec<_>>(), vec![vec![1.0; rank]; order])
        } else {
            let cand: Vec<Matrix> = factors.iter().map(|f| shared_rows(f, shared)).collect();
            check_rows(&cand, id)?;
            let sim: Vec<Vec<f64>> = (0..rank)
                .map(|r| {
                    (0..rank)
                        .map(|c| (0..order).map(|m| abs_cosine(&reference[m], r, &cand[m], c)).product())
                        .collect()
                })
                .collect();
            let (perm, t, lo, hi) = greedy_match(&sim);
            ties += t;
            min_matched = min_matched.min(lo);
            max_unmatched = max_unmatched.max(hi);
            let scale: Vec<Vec<f64>> = (0..order)
                .map(|m| {
                    (0..rank)
                        .map(|r| {
                            let x = cand[m].column(perm[r]);
                            reference[m].column(r).dot(&x) / x.norm_squared()
                        })
                        .collect()
                })
                .collect();
            (perm, scale)
        };
        for (m, f) in factors.iter().enumerate() {
            let mut block = stacks[m].rows_mut(id * q, q);
            for r in 0..rank {
                block.set_column(r, &(f.column(perm[r]) * scale[m][r]));
            }
        }
        // Report scales in the caller's frame: per original column.
        let mut by_column = vec![vec![0.0; rank]; order];
        for m in 0..order {
            for r in 0..rank {
                by_column[m][perm[r]] = scale[m][r];
            }
        }
        permutations.push(perm);
        scales.push(by_column);
    }
    if p == 1 {
        min_matched = 1.0;
        max_unmatched = 0.0;
    }
    Ok(AlignedStack {
        stacks,
        permutations,
        scales,
        q,
        min_matched,
        max_unmatched,
        ties,
    })
}

/// Row-stack of every replica's projection for one mode, transposed.
#[derive(Clone, Debug)]
pub struct StackedProjection {
    mode: usize,
    matrix: Matrix,
    q: usize,
    shared: usize,
}

impl StackedProjection {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    /// Smallest replica count for which the stack can have full column rank.
    pub fn required_p(&self) -> usize {
        let dim = self.matrix.ncols();
        if self.q > self.shared {
            dim.saturating_sub(self.shared).div_ceil(self.q - self.shared).max(1)
        } else {
            usize::MAX
        }
    }
}

/// `[P_0ᵀ; ...; P_{p-1}ᵀ]` for `mode`. For the temporal mode `temporal_rows`
/// selects which slices' rows are stacked; it is ignored otherwise.
pub fn stack_projections(rs: &ReplicaSet, mode: usize, temporal_rows: Range<usize>) -> Result<StackedProjection> {
    let q = rs.q();
    let mut blocks = Vec::with_capacity(rs.p());
    for rep in rs.replicas() {
        let m = if mode == rs.temporal_mode() {
            rep.temporal_rows(temporal_rows.clone())?
        } else {
            rep.projection(mode)?.clone()
        };
        blocks.push(m);
    }
    let dim = blocks[0].nrows();
    let mut matrix = Matrix::zeros(rs.p() * q, dim);
    for (i, b) in blocks.iter().enumerate() {
        matrix.rows_mut(i * q, q).copy_from(&b.transpose());
    }
    Ok(StackedProjection {
        mode,
        matrix,
        q,
        shared: rs.shared(),
    })
}

/// A recovered factor block plus solve diagnostics.
#[derive(Clone, Debug)]
pub struct Recovered {
    pub factor: Matrix,
    pub relative_residual: f64,
    pub rank_margin: f64,
}

fn solve(proj: &StackedProjection, rhs: &Matrix) -> Result<Recovered> {
    let (rows, dim) = proj.matrix.shape();
    if rows < dim {
        return Err(Error::ReplicaBound {
            mode: proj.mode,
            rows,
            dim,
            required_p: proj.required_p(),
        });
    }
    if rhs.nrows() != rows {
        return Err(Error::DimensionMismatch(format!(
            "stacked factor has {} rows, projection has {rows}",
            rhs.nrows()
        )));
    }
    let ls = linalg::lstsq(&proj.matrix, rhs);
    if ls.rank < dim {
        return Err(Error::RankDeficient {
            mode: proj.mode,
            rank: ls.rank,
            required: dim,
        });
    }
    Ok(Recovered {
        factor: ls.solution,
        relative_residual: ls.relative_residual,
        rank_margin: ls.rank_margin,
    })
}

/// Least-squares solution of `P̃ A = Ã_s` for one mode.
pub fn recover_nontemporal(stack: &AlignedStack, proj: &StackedProjection, mode: usize) -> Result<Recovered> {
    if proj.mode != mode {
        return Err(Error::DimensionMismatch(format!(
            "projection for mode {} used to recover mode {mode}",
            proj.mode
        )));
    }
    solve(proj, stack.stack(mode))
}

/// Solves for the temporal rows of the newest batch.
///
/// The temporal stack mixes every slice seen so far. Subtracting each
/// replica's history `M_p = Σ_old W_oldᵀ C_old` leaves `W_newᵀ C_new`, which
/// is solved against the stacked new-batch projection. On success the
/// history accumulators absorb the new rows: `M_p ← M_p + W_new,pᵀ C_new`.
/// The stack must already be in the gauge of the rows that built `M_p`.
pub fn recover_temporal_append(
    stack: &AlignedStack,
    rs: &ReplicaSet,
    summary: &mut SummaryState,
    new_rows: Range<usize>,
) -> Result<Recovered> {
    let tm = rs.temporal_mode();
    let q = rs.q();
    let mut rhs = stack.stack(tm).clone();
    for (p, hist) in summary.history().iter().enumerate() {
        if hist.shape() != (q, stack.rank()) {
            return Err(Error::DimensionMismatch(format!(
                "history of replica {p} is {}x{}, expected {q}x{}",
                hist.nrows(),
                hist.ncols(),
                stack.rank()
            )));
        }
        let mut block = rhs.rows_mut(p * q, q);
        block -= hist;
    }
    let proj = stack_projections(rs, tm, new_rows.clone())?;
    let out = solve(&proj, &rhs)?;
    for (rep, hist) in rs.replicas().iter().zip(summary.history_mut()) {
        let w = rep.temporal_rows(new_rows.clone())?;
        *hist += w.transpose() * &out.factor;
    }
    Ok(out)
}

/// Gauge that maps `current` factors onto `previous` ones: `perm[r]` is the
/// current column placed at position `r`, `scales[m][c]` multiplies current
/// column `c` of mode `m`. Only the modes in `modes` are compared; the
/// remaining modes receive the reciprocal product so that the model is
/// unchanged.
pub fn match_gauge(current: &[Matrix], previous: &[Matrix], modes: &[usize]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let rank = current[modes[0]].ncols();
    let sim: Vec<Vec<f64>> = (0..rank)
        .map(|r| {
            (0..rank)
                .map(|c| {
                    modes
                        .iter()
                        .map(|&m| abs_cosine(&previous[m], r, &current[m], c))
                        .product()
                })
                .collect()
        })
        .collect();
    let (perm, _, _, _) = greedy_match(&sim);
    let mut scales = vec![vec![1.0; rank]; current.len()];
    for r in 0..rank {
        let c = perm[r];
        let mut product = 1.0;
        for &m in modes {
            let x = current[m].column(c);
            let n2 = x.norm_squared();
            let s = if n2 > 0.0 {
                previous[m].column(r).dot(&x) / n2
            } else {
                1.0
            };
            let s = if s.is_finite() && s != 0.0 { s } else { 1.0 };
            scales[m][c] = s;
            product *= s;
        }
        for m in (0..current.len()).filter(|m| !modes.contains(m)) {
            scales[m][c] = 1.0 / product;
        }
    }
    (perm, scales)
}

/// `Σ_n min(Q, k_n) >= 2R + N - 1`; with three modes this is the familiar
/// `min(Q,r_A) + min(Q,r_B) + min(Q,r_C) >= 2R + 2`.
pub fn kruskal_check(q: usize, k_ranks: &[usize], rank: usize) -> bool {
    let lhs: usize = k_ranks.iter().map(|&k| k.min(q)).sum();
    lhs >= 2 * rank + k_ranks.len().saturating_sub(1)
}

/// Kruskal rank by exhaustive search over column subsets. Intended for the
/// small ranks used in CP models.
pub fn kruskal_rank(m: &Matrix) -> usize {
    let n = m.ncols();
    let mut k = 0;
    'size: for size in 1..=n.min(m.nrows()) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            if linalg::numerical_rank(&m.select_columns(subset.iter())) < size {
                break 'size;
            }
            // next combination
            let mut i = size;
            while i > 0 && subset[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            subset[i - 1] += 1;
            for j in i..size {
                subset[j] = subset[j - 1] + 1;
            }
        }
        k = size;
    }
    k
}

/// Minimum replica count `ceil(max((I - shared)/(Q - shared), J/Q, K/Q))`.
pub fn replica_bound(i: usize, j: usize, k_batch: usize, q: usize, shared: usize) -> Result<usize> {
    if q <= shared {
        return Err(Error::InvalidConfig(format!(
            "replica bound needs Q > shared, got Q = {q}, shared = {shared}"
        )));
    }
    Ok(i.saturating_sub(shared)
        .div_ceil(q - shared)
        .max(j.div_ceil(q))
        .max(k_batch.div_ceil(q))
        .max(1))
}

/// [`replica_bound`] for any number of non-temporal modes: the first mode
/// takes the shared-corrected ratio, the others `I_n / Q`.
pub fn replica_bound_nmode(nontemporal: &[usize], k_batch: usize, q: usize, shared: usize) -> Result<usize> {
    let (&first, rest) = nontemporal
        .split_first()
        .ok_or_else(|| Error::InvalidConfig("no non-temporal modes".into()))?;
    let base = replica_bound(first, 0, k_batch, q, shared)?;
    Ok(rest.iter().map(|d| d.div_ceil(q)).fold(base, usize::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{compress, ReplicaSet};
    use crate::cp::{cp_als, AlsConfig};
    use crate::tensor::DenseTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random::<f64>())
    }

    /// Compressed-factor models that every replica would produce exactly.
    fn exact_models(rs: &ReplicaSet, truth: &[Matrix], rows: Range<usize>) -> Vec<KruskalModel> {
        rs.replicas()
            .iter()
            .map(|rep| {
                let f = truth
                    .iter()
                    .enumerate()
                    .map(|(m, a)| {
                        let proj = if m == rs.temporal_mode() {
                            rep.temporal_rows(rows.clone()).unwrap()
                        } else {
                            rep.projection(m).unwrap().clone()
                        };
                        proj.transpose() * a
                    })
                    .collect();
                KruskalModel::from_factors(f).unwrap().normalized()
            })
            .collect()
    }

    #[test]
    fn identical_models_align_trivially() {
        let mut rs = ReplicaSet::generate(&[5, 5], 2, 4, 3, 2, 1).unwrap();
        rs.extend_temporal(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = KruskalModel::from_factors(vec![
            random_matrix(&mut rng, 4, 2),
            random_matrix(&mut rng, 4, 2),
            random_matrix(&mut rng, 4, 2),
        ])
        .unwrap();
        let stack = align_replicas(&[m.clone(), m.clone(), m], &rs).unwrap();
        for p in 0..3 {
            assert_eq!(stack.permutations()[p], vec![0, 1]);
            for s in stack.scales()[p].iter().flatten() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn known_permutation_and_scale_are_undone() {
        let mut rs = ReplicaSet::generate(&[6, 6], 2, 4, 2, 2, 4).unwrap();
        rs.extend_temporal(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth: Vec<Matrix> = [6, 6, 5].iter().map(|&d| random_matrix(&mut rng, d, 3)).collect();
        let models = exact_models(&rs, &truth, 0..5);
        // replica 1 with columns permuted and positively rescaled (lambda compensates)
        let perm = [2, 0, 1];
        let permuted = models[1].permuted(&perm);
        let (mut f, mut l) = permuted.into_parts();
        let diag = [2.0, 0.5, 3.0];
        for mode in 0..3 {
            for r in 0..3 {
                let mut col = f[mode].column_mut(r);
                col *= diag[r];
            }
        }
        for r in 0..3 {
            l[r] /= diag[r].powi(3);
        }
        let scrambled = KruskalModel::new(f, l).unwrap();
        let base = align_replicas(&models, &rs).unwrap();
        let stack = align_replicas(&[models[0].clone(), scrambled], &rs).unwrap();
        // position r of the reference is column perm^-1(r) of the scrambled model
        let inverse: Vec<usize> = (0..3).map(|r| perm.iter().position(|&x| x == r).unwrap()).collect();
        assert_eq!(stack.permutations()[1], inverse);
        for mode in 0..3 {
            assert!((stack.stack(mode) - base.stack(mode)).amax() < 1e-9);
        }
    }

    #[test]
    fn independent_als_runs_align() {
        let mut rs = ReplicaSet::generate(&[8, 8], 2, 6, 3, 2, 21).unwrap();
        let range = rs.extend_temporal(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<Matrix> = [8, 8, 8].iter().map(|&d| random_matrix(&mut rng, d, 2)).collect();
        let x = KruskalModel::from_factors(truth).unwrap().reconstruct();
        let summaries: Vec<DenseTensor> = rs
            .replicas()
            .iter()
            .map(|r| compress(&x, r, range.clone()).unwrap())
            .collect();
        let run = |seed| {
            let models: Vec<KruskalModel> = summaries
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let cfg = AlsConfig {
                        max_iters: 2000,
                        rel_tol: 1e-14,
                        ..AlsConfig::new(2).with_seed(seed + i as u64)
                    };
                    cp_als(s, &cfg).unwrap().model
                })
                .collect();
            align_replicas(&models, &rs).unwrap()
        };
        let (a, b) = (run(100), run(900));
        // the column order of each run follows its own reference replica
        let cos = |mode: usize, r: usize, c: usize| {
            let (x, y) = (a.stack(mode).column(r), b.stack(mode).column(c));
            (x.dot(&y) / (x.norm() * y.norm())).abs()
        };
        let swap = cos(0, 0, 1) > cos(0, 0, 0);
        for mode in 0..3 {
            for r in 0..2 {
                let c = cos(mode, r, if swap { 1 - r } else { r });
                assert!(c > 1.0 - 1e-6, "mode {mode} column {r}: {c}");
            }
        }
    }

    #[test]
    fn greedy_agrees_with_exhaustive_matching() {
        fn best_total(sim: &[Vec<f64>]) -> f64 {
            let n = sim.len();
            let mut idx: Vec<usize> = (0..n).collect();
            let mut best = f64::NEG_INFINITY;
            permute(&mut idx, 0, &mut |p| {
                best = best.max((0..n).map(|r| sim[r][p[r]]).sum());
            });
            best
        }
        fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
            if k == v.len() {
                f(v);
                return;
            }
            for i in k..v.len() {
                v.swap(k, i);
                permute(v, k + 1, f);
                v.swap(k, i);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for n in 1..=6 {
            for _ in 0..20 {
                // a planted matching plus small cross-talk, as after a good decomposition
                let truth: Vec<usize> = {
                    let mut t: Vec<usize> = (0..n).collect();
                    for i in (1..n).rev() {
                        t.swap(i, rng.random_range(0..=i));
                    }
                    t
                };
                let sim: Vec<Vec<f64>> = (0..n)
                    .map(|r| {
                        (0..n)
                            .map(|c| {
                                if truth[r] == c {
                                    0.9 + 0.1 * rng.random::<f64>()
                                } else {
                                    0.6 * rng.random::<f64>()
                                }
                            })
                            .collect()
                    })
                    .collect();
                let (perm, _, _, _) = greedy_match(&sim);
                assert_eq!(perm, truth);
                let total: f64 = (0..n).map(|r| sim[r][perm[r]]).sum();
                assert!((total - best_total(&sim)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_stack_recovers_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rs = ReplicaSet::generate(&[10, 4], 2, 4, 4, 1, 8).unwrap();
        let proj = stack_projections(&rs, 0, 0..0).unwrap();
        assert_eq!(proj.matrix().shape(), (16, 10));
        let a0 = Matrix::from_fn(10, 3, |_, _| rng.random::<f64>() - 0.5);
        let rhs = proj.matrix() * &a0;
        let stack = AlignedStack {
            stacks: vec![rhs.clone(), rhs.clone(), rhs],
            permutations: vec![vec![0, 1, 2]; 4],
            scales: vec![vec![vec![1.0; 3]; 3]; 4],
            q: 4,
            min_matched: 1.0,
            max_unmatched: 0.0,
            ties: 0,
        };
        let got = recover_nontemporal(&stack, &proj, 0).unwrap();
        for r in 0..3 {
            let err = (got.factor.column(r) - a0.column(r)).norm() / a0.column(r).norm();
            assert!(err < 1e-8);
        }
    }

    #[test]
    fn identity_projection_is_passthrough() {
        let rep = crate::compression::CompressionReplica::from_parts(
            0,
            vec![Matrix::identity(3, 3), Matrix::identity(3, 3), Matrix::zeros(0, 3)],
            2,
            0,
            0,
        )
        .unwrap();
        let rs = ReplicaSet::from_parts(vec![rep], 0, 0, 0).unwrap();
        let proj = stack_projections(&rs, 0, 0..0).unwrap();
        assert_eq!(proj.matrix(), &Matrix::identity(3, 3));
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let stack = AlignedStack {
            stacks: vec![a.clone(), a.clone(), a.clone()],
            permutations: vec![vec![0, 1]],
            scales: vec![vec![vec![1.0; 2]; 3]],
            q: 3,
            min_matched: 1.0,
            max_unmatched: 0.0,
            ties: 0,
        };
        let got = recover_nontemporal(&stack, &proj, 0).unwrap().factor;
        assert!((got - a).amax() < 1e-12);
    }

    #[test]
    fn duplicate_replicas_are_rank_deficient() {
        let rs = ReplicaSet::generate(&[6, 6], 2, 4, 3, 4, 2).unwrap();
        let proj = stack_projections(&rs, 0, 0..0).unwrap();
        let stack = AlignedStack {
            stacks: vec![Matrix::zeros(12, 2); 3],
            permutations: vec![vec![0, 1]; 3],
            scales: vec![vec![vec![1.0; 2]; 3]; 3],
            q: 4,
            min_matched: 1.0,
            max_unmatched: 0.0,
            ties: 0,
        };
        assert!(matches!(
            recover_nontemporal(&stack, &proj, 0),
            Err(Error::RankDeficient {
                mode: 0,
                rank: 4,
                required: 6
            })
        ));
        let few = ReplicaSet::generate(&[20, 6], 2, 4, 3, 1, 2).unwrap();
        let proj = stack_projections(&few, 0, 0..0).unwrap();
        assert!(matches!(
            recover_nontemporal(&stack, &proj, 0),
            Err(Error::ReplicaBound { required_p: 7, .. })
        ));
    }

    #[test]
    fn desk_scale_projection_has_full_rank() {
        let rs = ReplicaSet::generate(&[50, 50], 2, 30, 20, 5, 13).unwrap();
        let proj = stack_projections(&rs, 0, 0..0).unwrap();
        assert_eq!(proj.matrix().shape(), (600, 50));
        assert_eq!(linalg::numerical_rank(proj.matrix()), 50);
    }

    #[test]
    fn temporal_first_batch_reduces_to_plain_solve() {
        let mut rs = ReplicaSet::generate(&[6, 6], 2, 4, 3, 1, 30).unwrap();
        let rows = rs.extend_temporal(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<Matrix> = [6, 6, 5].iter().map(|&d| random_matrix(&mut rng, d, 2)).collect();
        let models = exact_models(&rs, &truth, rows.clone());
        let stack = align_replicas(&models, &rs).unwrap();
        let mut summary = SummaryState::new(3, 4, 3, 2).unwrap();
        let appended = recover_temporal_append(&stack, &rs, &mut summary, rows.clone()).unwrap();
        let proj = stack_projections(&rs, 2, rows.clone()).unwrap();
        let plain = recover_nontemporal(&stack, &proj, 2).unwrap();
        assert!((appended.factor.clone() - plain.factor).amax() < 1e-12);
        for (rep, hist) in rs.replicas().iter().zip(summary.history()) {
            let expect = rep.temporal_rows(rows.clone()).unwrap().transpose() * &appended.factor;
            assert!((hist - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn kruskal_condition() {
        assert!(kruskal_check(30, &[5, 5, 5], 5));
        assert!(!kruskal_check(1, &[1, 1, 1], 1));
        assert!(kruskal_check(4, &[4, 4, 4], 5));
        assert!(!kruskal_check(4, &[4, 4, 3], 5));
    }

    #[test]
    fn kruskal_rank_examples() {
        let generic = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(kruskal_rank(&generic), 3);
        // two parallel columns cap the k-rank at 1 even though the rank is 2
        let parallel = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0]);
        assert_eq!(kruskal_rank(&parallel), 1);
    }

    #[test]
    fn replica_bound_cases() {
        assert_eq!(replica_bound(1000, 1000, 100, 50, 10).unwrap(), 25);
        assert_eq!(replica_bound(7, 7, 7, 7, 0).unwrap(), 1);
        assert!(replica_bound(10, 10, 10, 5, 5).is_err());
        assert_eq!(replica_bound_nmode(&[30, 30], 5, 10, 2).unwrap(), 4);
    }
}
