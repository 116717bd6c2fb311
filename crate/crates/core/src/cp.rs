//! CP decomposition by alternating least squares.
//!
//! Each sweep visits the modes in order and replaces factor `n` by the exact
//! least-squares minimizer with every other factor held fixed:
//!
//! ```text
//! A_n <- X_(n) (A_{N-1} ⊙ ... ⊙ A_{n+1} ⊙ A_{n-1} ⊙ ... ⊙ A_0) · H⁺,
//! H    = ⊛_{m≠n} A_mᵀ A_m
//! ```
//!
//! where `⊛` is the Hadamard product and `H⁺` the Moore-Penrose inverse. The
//! Khatri-Rao product is never formed; [`mttkrp`] contracts the tensor
//! against the factor rows directly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Purpose};
use crate::tensor::{DenseTensor, Matrix, Shape};

/// Columns whose norm falls below this are treated as collapsed.
pub const DEGENERATE_COLUMN_NORM: f64 = 1e-14;

/// A rank-R CP model: unit-norm factor columns plus per-component weights.
#[derive(Clone, Debug, PartialEq)]
pub struct KruskalModel {
    factors: Vec<Matrix>,
    lambda: Vec<f64>,
}

impl KruskalModel {
    pub fn new(factors: Vec<Matrix>, lambda: Vec<f64>) -> Result<KruskalModel> {
        if factors.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "a Kruskal model needs at least 2 factors, got {}",
                factors.len()
            )));
        }
        let rank = lambda.len();
        if rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if let Some((n, f)) = factors
            .iter()
            .enumerate()
            .find(|(_, f)| f.ncols() != rank || f.nrows() == 0)
        {
            return Err(Error::DimensionMismatch(format!(
                "factor {n} is {}x{}, expected {rank} columns",
                f.nrows(),
                f.ncols()
            )));
        }
        Ok(KruskalModel { factors, lambda })
    }

    /// A model with unit weights whose scale lives entirely in the factors.
    pub fn from_factors(factors: Vec<Matrix>) -> Result<KruskalModel> {
        let rank = factors.first().map_or(0, |f| f.ncols());
        KruskalModel::new(factors, vec![1.0; rank])
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &Matrix {
        &self.factors[mode]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn into_parts(self) -> (Vec<Matrix>, Vec<f64>) {
        (self.factors, self.lambda)
    }

    /// Moves every column norm into `lambda`. Zero columns are left alone.
    pub fn normalize(&mut self) {
        for f in &mut self.factors {
            for (r, mut col) in f.column_iter_mut().enumerate() {
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                    self.lambda[r] *= norm;
                }
            }
        }
    }

    pub fn normalized(&self) -> KruskalModel {
        let mut m = self.clone();
        m.normalize();
        m
    }

    /// Factors with `lambda^(1/N)` folded into every mode, after normalizing.
    /// Weights are nonnegative after normalization, so the root is real.
    pub fn distributed_factors(&self) -> Vec<Matrix> {
        let m = self.normalized();
        let n = m.order() as f64;
        m.factors
            .iter()
            .map(|f| {
                let mut f = f.clone();
                for (r, mut col) in f.column_iter_mut().enumerate() {
                    let w = m.lambda[r];
                    col *= w.signum() * w.abs().powf(1.0 / n);
                }
                f
            })
            .collect()
    }

    /// Reorders components so that new component `r` is old component `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> KruskalModel {
        let factors = self.factors.iter().map(|f| f.select_columns(perm.iter())).collect();
        let lambda = perm.iter().map(|&p| self.lambda[p]).collect();
        KruskalModel { factors, lambda }
    }

    /// `Σ_r λ_r a_r^(0) ∘ ... ∘ a_r^(N-1)`.
    pub fn reconstruct(&self) -> DenseTensor {
        let shape = Shape::new(self.dims()).expect("factor row counts are positive");
        let mut out = vec![0.0; shape.numel()];
        let a0 = self.factors[0].as_slice();
        let i0 = self.factors[0].nrows();
        let rank = self.rank();
        let mut w = vec![0.0; rank];
        for_each_fiber(&shape, |o, idx| {
            outer_weights(&self.factors, idx, None, Some(&self.lambda), &mut w);
            for (i, slot) in out[o * i0..(o + 1) * i0].iter_mut().enumerate() {
                *slot = (0..rank).map(|c| a0[i + c * i0] * w[c]).sum();
            }
        });
        DenseTensor::from_vec(shape, out).expect("reconstruction is finite for finite factors")
    }

    /// `||t - reconstruct(self)||_F` without materializing the reconstruction.
    pub fn residual_norm(&self, t: &DenseTensor) -> Result<f64> {
        if t.dims() != self.dims().as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "model of shape {:?} against tensor {}",
                self.dims(),
                t.shape()
            )));
        }
        let data = t.data();
        let a0 = self.factors[0].as_slice();
        let i0 = self.factors[0].nrows();
        let rank = self.rank();
        let mut w = vec![0.0; rank];
        let mut acc = 0.0;
        for_each_fiber(t.shape(), |o, idx| {
            outer_weights(&self.factors, idx, None, Some(&self.lambda), &mut w);
            for (i, &x) in data[o * i0..(o + 1) * i0].iter().enumerate() {
                let v: f64 = (0..rank).map(|c| a0[i + c * i0] * w[c]).sum();
                acc += (x - v) * (x - v);
            }
        });
        Ok(acc.sqrt())
    }
}

/// Calls `f(o, idx)` for every mode-0 fiber, where `o` is the fiber number and
/// `idx[1..]` holds its indices on modes `1..N`.
fn for_each_fiber(shape: &Shape, mut f: impl FnMut(usize, &[usize])) {
    let dims = shape.dims();
    let fibers = shape.numel() / dims[0];
    let mut idx = vec![0; dims.len()];
    for o in 0..fibers {
        f(o, &idx);
        for m in 1..dims.len() {
            idx[m] += 1;
            if idx[m] < dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }
}

/// `w[c] = λ_c ∏_{m>=1, m≠skip} A_m(idx[m], c)`.
fn outer_weights(factors: &[Matrix], idx: &[usize], skip: Option<usize>, lambda: Option<&[f64]>, w: &mut [f64]) {
    match lambda {
        Some(l) => w.copy_from_slice(l),
        None => w.fill(1.0),
    }
    for (m, f) in factors.iter().enumerate().skip(1) {
        if Some(m) == skip {
            continue;
        }
        let rows = f.nrows();
        let s = f.as_slice();
        for (c, wc) in w.iter_mut().enumerate() {
            *wc *= s[idx[m] + c * rows];
        }
    }
}

/// Matricized tensor times Khatri-Rao product: `X_(mode) (⊙_{m≠mode} A_m)`,
/// with the Khatri-Rao chain in the layout's column order.
pub fn mttkrp(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
    t.shape().check_mode(mode)?;
    if factors.len() != t.order() {
        return Err(Error::DimensionMismatch(format!(
            "{} factors for an order-{} tensor",
            factors.len(),
            t.order()
        )));
    }
    let rank = factors[0].ncols();
    for (m, f) in factors.iter().enumerate() {
        if f.nrows() != t.dims()[m] || f.ncols() != rank {
            return Err(Error::DimensionMismatch(format!(
                "factor {m} is {}x{}, tensor mode has extent {} and rank is {rank}",
                f.nrows(),
                f.ncols(),
                t.dims()[m]
            )));
        }
    }
    let i0 = t.dims()[0];
    let data = t.data();
    let mut out = Matrix::zeros(t.dims()[mode], rank);
    let mut w = vec![0.0; rank];
    let a0 = factors[0].as_slice();
    for_each_fiber(t.shape(), |o, idx| {
        outer_weights(factors, idx, Some(mode), None, &mut w);
        let fiber = &data[o * i0..(o + 1) * i0];
        if mode == 0 {
            let out_s = out.as_mut_slice();
            for (c, &wc) in w.iter().enumerate() {
                if wc == 0.0 {
                    continue;
                }
                for (d, &x) in out_s[c * i0..(c + 1) * i0].iter_mut().zip(fiber) {
                    *d += x * wc;
                }
            }
        } else {
            for (c, &wc) in w.iter().enumerate() {
                let col = &a0[c * i0..(c + 1) * i0];
                let dot: f64 = fiber.iter().zip(col).map(|(x, a)| x * a).sum();
                out[(idx[mode], c)] += dot * wc;
            }
        }
    });
    Ok(out)
}

/// Least-squares minimizer for factor `mode` with every other factor fixed,
/// for the model `[[A_0, ..., A_{N-1}]]` with unit weights.
pub fn als_mode_update(t: &DenseTensor, factors: &[Matrix], mode: usize) -> Result<Matrix> {
    let m = mttkrp(t, factors, mode)?;
    let rank = factors[0].ncols();
    let mut gram = Matrix::from_element(rank, rank, 1.0);
    for (n, f) in factors.iter().enumerate() {
        if n != mode {
            gram.component_mul_assign(&f.tr_mul(f));
        }
    }
    Ok(m * linalg::pinv(&gram))
}

/// Settings for [`cp_als`].
#[derive(Clone, Debug, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// After every sweep, search the line through the sweep's start and end
    /// for the exact residual minimizer and keep it when it lowers the
    /// residual. Leaves the per-sweep objective monotone.
    pub line_search: bool,
}

impl AlsConfig {
    pub fn new(rank: usize) -> AlsConfig {
        AlsConfig {
            rank,
            max_iters: 100,
            rel_tol: 1e-8,
            n_restarts: 3,
            seed: 0,
            line_search: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> AlsConfig {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.max_iters == 0 || self.n_restarts == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and n_restarts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`cp_als`]: the best model over all restarts.
#[derive(Clone, Debug)]
pub struct AlsOutcome {
    pub model: KruskalModel,
    pub fit: f64,
    pub iterations: usize,
    /// `||t - model||_F` after every sweep of the winning restart.
    pub objective_history: Vec<f64>,
    /// Number of collapsed columns that had to be redrawn.
    pub reseeded_columns: usize,
}

/// CP-ALS; keeps the best fit over restarts. The first restart starts from
/// a generalized eigendecomposition when the rank allows it, the others from
/// uniform(0,1) factors.
pub fn cp_als(t: &DenseTensor, cfg: &AlsConfig) -> Result<AlsOutcome> {
    let norm = check_problem(t, cfg)?;
    let mut best: Option<AlsOutcome> = None;
    for restart in 0..cfg.n_restarts {
        let init = match restart {
            0 => gevd_start(t, cfg.rank).unwrap_or_else(|| random_start(t, cfg, 0)),
            r => random_start(t, cfg, r as u64),
        };
        let outcome = als_run(t, cfg, norm, restart as u64, init)?;
        if best.as_ref().is_none_or(|b| outcome.fit > b.fit) {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// CP-ALS started from `init` instead of random factors; a single run, so
/// `n_restarts` is ignored. Used to continue a decomposition after the
/// tensor has changed a little.
pub fn cp_als_warm(t: &DenseTensor, cfg: &AlsConfig, init: &KruskalModel) -> Result<AlsOutcome> {
    let norm = check_problem(t, cfg)?;
    if init.rank() != cfg.rank || init.dims() != t.dims() {
        return Err(Error::DimensionMismatch(format!(
            "warm start of rank {} over {:?} for a rank-{} problem over {}",
            init.rank(),
            init.dims(),
            cfg.rank,
            t.shape()
        )));
    }
    als_run(t, cfg, norm, 0, init.normalized().factors)
}

fn check_problem(t: &DenseTensor, cfg: &AlsConfig) -> Result<f64> {
    cfg.validate()?;
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("cannot decompose the zero tensor".into()));
    }
    let dims = t.dims();
    let total: usize = dims.iter().product();
    let bound = dims.iter().map(|d| total / d).min().unwrap_or(0);
    if cfg.rank > bound {
        return Err(Error::InvalidConfig(format!(
            "rank {} exceeds the solvability bound {bound} for shape {}",
            cfg.rank,
            t.shape()
        )));
    }
    Ok(norm)
}

fn random_start(t: &DenseTensor, cfg: &AlsConfig, restart: u64) -> Vec<Matrix> {
    let mut init = rng::substream(cfg.seed, Purpose::AlsInit, restart, 0, 0);
    t.dims()
        .iter()
        .map(|&d| {
            let mut f = Matrix::from_fn(d, cfg.rank, |_, _| init.random::<f64>());
            for mut col in f.column_iter_mut() {
                let n = col.norm();
                col /= n;
            }
            f
        })
        .collect()
}

/// Algebraic start from a generalized eigendecomposition of two mixtures of
/// the frontal slices. Exact for a noiseless tensor whose rank is at most the
/// first two extents; `None` when that does not hold or the pencil is
/// degenerate.
fn gevd_start(t: &DenseTensor, rank: usize) -> Option<Vec<Matrix>> {
    let dims = t.dims();
    let (i, j) = (dims[0], dims[1]);
    let k: usize = dims[2..].iter().product();
    if rank > i || rank > j || k < 2 {
        return None;
    }
    let u = linalg::leading_left(&t.matricize(0).ok()?, rank)?;
    let v = linalg::leading_left(&t.matricize(1).ok()?, rank)?;
    // every slice is u^T x_c v = a diag(c) b^T in the projected bases
    let slices: Vec<Matrix> = t
        .data()
        .chunks_exact(i * j)
        .map(|x| u.transpose() * Matrix::from_column_slice(i, j, x) * &v)
        .collect();
    let stacked = Matrix::from_fn(k, rank * rank, |c, e| slices[c].as_slice()[e]);
    let w = linalg::leading_left(&stacked, 2)?;
    let mix = |col: usize| {
        slices
            .iter()
            .enumerate()
            .fold(Matrix::zeros(rank, rank), |acc, (c, g)| acc + g * w[(c, col)])
    };
    let (s1, s2) = (mix(0), mix(1));
    // s1 s2^-1 = a (d1 / d2) a^-1
    let pencil = &s1 * linalg::pinv(&s2);
    let mut a_hat = Matrix::zeros(rank, rank);
    for (r, z) in pencil.complex_eigenvalues().iter().enumerate() {
        let shifted = &pencil - Matrix::identity(rank, rank) * z.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t?;
        let smallest = svd.singular_values.argmin().0;
        a_hat.set_column(r, &v_t.row(smallest).transpose());
    }
    let b_hat = s1.transpose() * linalg::pinv(&a_hat.transpose());
    let mut factors: Vec<Matrix> = dims.iter().map(|&d| Matrix::from_element(d, rank, 1.0)).collect();
    factors[0] = &u * a_hat;
    factors[1] = &v * b_hat;
    for mode in 2..dims.len() {
        factors[mode] = als_mode_update(t, &factors, mode).ok()?;
    }
    for f in &mut factors {
        for mut col in f.column_iter_mut() {
            let n = col.norm();
            if !(n.is_finite() && n > DEGENERATE_COLUMN_NORM) {
                return None;
            }
            col /= n;
        }
    }
    Some(factors)
}

fn als_run(t: &DenseTensor, cfg: &AlsConfig, norm: f64, restart: u64, mut factors: Vec<Matrix>) -> Result<AlsOutcome> {
    let rank = cfg.rank;
    let mut lambda = vec![1.0; rank];
    let mut reseed = rng::substream(cfg.seed, Purpose::Reseed, restart, 0, 0);
    let mut reseeded = 0;
    let mut history = Vec::new();
    let mut fit = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut sweep_start: Option<Vec<Matrix>> = None;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        for mode in 0..t.order() {
            let mut updated = als_mode_update(t, &factors, mode)?;
            for (r, mut col) in updated.column_iter_mut().enumerate() {
                let n = col.norm();
                if !n.is_finite() {
                    return Err(Error::NonFinite { iteration: iter });
                }
                if n < DEGENERATE_COLUMN_NORM {
                    log::debug!("ALS column {r} of mode {mode} collapsed at sweep {iter}; redrawing");
                    reseeded += 1;
                    for v in col.iter_mut() {
                        *v = reseed.random::<f64>();
                    }
                    let n = col.norm();
                    col /= n;
                    lambda[r] = 0.0;
                } else {
                    col /= n;
                    lambda[r] = n;
                }
            }
            factors[mode] = updated;
        }
        let model = KruskalModel {
            factors: factors.clone(),
            lambda: lambda.clone(),
        };
        let mut residual = model.residual_norm(t)?;
        if !residual.is_finite() {
            return Err(Error::NonFinite { iteration: iter });
        }
        if let Some(start) = sweep_start.as_ref().filter(|_| iter >= 2) {
            // Extrapolate along the direction of this sweep: start + step * (end - start).
            let end = weighted(&model);
            if let Some(step) = exact_step(t, start, &end)? {
                let trial = KruskalModel {
                    factors: end.iter().zip(start).map(|(e, s)| s + (e - s) * step).collect(),
                    lambda: vec![1.0; rank],
                }
                .normalized();
                let trial_residual = trial.residual_norm(t)?;
                if trial_residual < residual && trial.lambda.iter().all(|&l| l > 0.0) {
                    residual = trial_residual;
                    factors = trial.factors;
                    lambda = trial.lambda;
                }
            }
        }
        if cfg.line_search {
            sweep_start = Some(weighted(&KruskalModel {
                factors: factors.clone(),
                lambda: lambda.clone(),
            }));
        }
        history.push(residual);
        let new_fit = 1.0 - residual / norm;
        let converged = (new_fit - fit).abs() < cfg.rel_tol;
        fit = new_fit;
        if converged {
            break;
        }
    }
    Ok(AlsOutcome {
        model: KruskalModel { factors, lambda },
        fit,
        iterations,
        objective_history: history,
        reseeded_columns: reseeded,
    })
}

/// The step `mu > 0` minimizing `||t - [[start + mu (end - start)]]||`, when
/// it beats the plain update at `mu = 1`.
///
/// The model along the line is a polynomial of degree N in `mu`, so the
/// squared residual is one of degree 2N; its minimizer is among the real
/// roots of the derivative.
fn exact_step(t: &DenseTensor, start: &[Matrix], end: &[Matrix]) -> Result<Option<f64>> {
    let order = start.len();
    let dirs: Vec<Matrix> = end.iter().zip(start).map(|(e, s)| e - s).collect();
    let pick = |mask: usize, n: usize| if mask >> n & 1 == 1 { &dirs[n] } else { &start[n] };
    let mut poly = vec![0.0; 2 * order + 1];
    poly[0] = t.frobenius_norm().powi(2);
    // <t, part(mask)>: the mode-0 choice only enters after the contraction
    for rest in (0..1usize << order).step_by(2) {
        let factors: Vec<Matrix> = (0..order).map(|n| pick(rest, n).clone()).collect();
        let k = mttkrp(t, &factors, 0)?;
        for bit in 0..2 {
            let mask = rest | bit;
            poly[mask.count_ones() as usize] -= 2.0 * k.dot(pick(mask, 0));
        }
    }
    // <part(m1), part(m2)> from Hadamard products of cross Grams
    let grams: Vec<[Matrix; 4]> = (0..order)
        .map(|n| {
            let (s, d) = (&start[n], &dirs[n]);
            [
                s.transpose() * s,
                s.transpose() * d,
                d.transpose() * s,
                d.transpose() * d,
            ]
        })
        .collect();
    for m1 in 0..1usize << order {
        for m2 in 0..1usize << order {
            let mut h = grams[0][(m1 & 1) * 2 + (m2 & 1)].clone();
            for (n, g) in grams.iter().enumerate().skip(1) {
                h.component_mul_assign(&g[(m1 >> n & 1) * 2 + (m2 >> n & 1)]);
            }
            poly[(m1.count_ones() + m2.count_ones()) as usize] += h.sum();
        }
    }
    let eval = |mu: f64| poly.iter().rev().fold(0.0, |acc, &c| acc * mu + c);
    let deriv: Vec<f64> = poly.iter().enumerate().skip(1).map(|(m, &c)| m as f64 * c).collect();
    let lead = *deriv.last().expect("positive degree");
    if !(lead > 0.0) || !lead.is_finite() {
        return Ok(None);
    }
    // companion matrix of the monic derivative
    let deg = deriv.len() - 1;
    let companion = Matrix::from_fn(deg, deg, |i, j| {
        if i == 0 {
            -deriv[deg - 1 - j] / lead
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let plain = eval(1.0);
    let best = companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * (1.0 + z.re.abs()) && z.re > 0.0 && z.re.is_finite())
        .map(|z| (z.re, eval(z.re)))
        .filter(|&(_, value)| value < plain)
        .min_by(|x, y| x.1.total_cmp(&y.1));
    Ok(best.map(|(mu, _)| mu).filter(|&mu| mu != 1.0))
}

/// Factors with the weights folded into the last mode.
fn weighted(m: &KruskalModel) -> Vec<Matrix> {
    let mut out = m.factors.clone();
    let last = out.last_mut().expect("at least two modes");
    for (mut col, &l) in last.column_iter_mut().zip(&m.lambda) {
        col *= l;
    }
    out
}

/// `1 - ||t - reconstruct(m)||_F / ||t||_F`.
pub fn model_fit(t: &DenseTensor, m: &KruskalModel) -> Result<f64> {
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("fit is undefined for a zero tensor".into()));
    }
    Ok(1.0 - m.residual_norm(t)? / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{khatri_rao_chain, rank1_outer};

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn rank_one_is_fit_exactly() {
        let a = [1.0, 2.0, 0.5, -1.0];
        let b = [0.3, 0.1, 2.0, 1.0];
        let c = [1.0, 1.0, -2.0, 0.7];
        let t = rank1_outer(&[&a, &b, &c]).unwrap();
        let out = cp_als(&t, &AlsConfig::new(1).with_seed(3)).unwrap();
        assert!(out.fit >= 0.999999, "fit {}", out.fit);
    }

    #[test]
    fn indicator_tensor_gives_basis_columns() {
        let e = [1.0, 0.0, 0.0];
        let t = rank1_outer(&[&e, &e, &e]).unwrap();
        let out = cp_als(&t, &AlsConfig::new(1)).unwrap();
        assert!((out.model.lambda()[0] - 1.0).abs() < 1e-12);
        for f in out.model.factors() {
            assert!((f[(0, 0)].abs() - 1.0).abs() < 1e-12);
            assert!(f[(1, 0)].abs() < 1e-12 && f[(2, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn algebraic_start_is_exact_on_noiseless_data() {
        let truth = crate::synth::SynthSpec::new(vec![7, 6, 5], 4, 2)
            .ground_truth()
            .unwrap();
        let t = truth.reconstruct();
        let start = KruskalModel::from_factors(gevd_start(&t, 4).unwrap()).unwrap();
        let scores = crate::eval::congruence(&truth, &start).unwrap();
        assert!(scores.iter().all(|&c| c > 1.0 - 1e-8), "{scores:?}");
        assert!(gevd_start(&t, 7).is_none());
    }

    #[test]
    fn line_search_polynomial_matches_explicit_residuals() {
        let mut g = rng::substream(5, Purpose::Synthetic, 0, 0, 0);
        let mut m = |r, c| Matrix::from_fn(r, c, |_, _| g.random::<f64>() - 0.5);
        let t = KruskalModel::from_factors(vec![m(4, 2), m(3, 2), m(5, 2)])
            .unwrap()
            .reconstruct();
        let start = vec![m(4, 2), m(3, 2), m(5, 2)];
        let end = vec![m(4, 2), m(3, 2), m(5, 2)];
        let along = |mu: f64| {
            let f = end.iter().zip(&start).map(|(e, s)| s + (e - s) * mu).collect();
            KruskalModel::from_factors(f).unwrap().residual_norm(&t).unwrap()
        };
        if let Some(mu) = exact_step(&t, &start, &end).unwrap() {
            assert!(along(mu) < along(1.0));
            for probe in [0.5 * mu, 0.9 * mu, 1.1 * mu, 2.0 * mu] {
                assert!(along(mu) <= along(probe) + 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_single_and_zero() {
        let f = vec![column(&[1.0, 2.0]), column(&[3.0, -1.0]), column(&[0.5])];
        let m = KruskalModel::from_factors(f).unwrap();
        let direct = rank1_outer(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5]]).unwrap();
        assert_eq!(m.reconstruct(), direct);

        let z = KruskalModel::new(m.factors().to_vec(), vec![0.0]).unwrap();
        assert!(z.reconstruct().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_values() {
        let t = rank1_outer(&[&[1.0, 2.0], &[3.0, 1.0], &[1.0, 1.0]]).unwrap();
        let exact =
            KruskalModel::from_factors(vec![column(&[1.0, 2.0]), column(&[3.0, 1.0]), column(&[1.0, 1.0])]).unwrap();
        assert!((model_fit(&t, &exact).unwrap() - 1.0).abs() < 1e-15);
        let zero = KruskalModel::new(exact.factors().to_vec(), vec![0.0]).unwrap();
        assert_eq!(model_fit(&t, &zero).unwrap(), 0.0);

        // ||t|| = 10 and a residual of norm 1 gives 0.9
        let t10 = rank1_outer(&[&[10.0], &[1.0]]).unwrap();
        let m9 = KruskalModel::from_factors(vec![column(&[9.0]), column(&[1.0])]).unwrap();
        assert!((model_fit(&t10, &m9).unwrap() - 0.9).abs() < 1e-15);

        let zt = DenseTensor::zeros(t.shape().clone());
        assert!(model_fit(&zt, &exact).is_err());
    }

    #[test]
    fn rejects_zero_tensor_and_oversized_rank() {
        let z = DenseTensor::zeros(Shape::new([2, 2, 2]).unwrap());
        assert!(matches!(cp_als(&z, &AlsConfig::new(1)), Err(Error::Degenerate(_))));
        let t = rank1_outer(&[&[1.0, 2.0], &[1.0, 1.0]]).unwrap();
        assert!(matches!(cp_als(&t, &AlsConfig::new(3)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn mttkrp_matches_explicit_khatri_rao() {
        let t = DenseTensor::from_fn(Shape::new([3, 4, 2, 2]).unwrap(), |ix| {
            (ix[0] as f64 - 1.0) * 0.5 + (ix[1] * ix[2]) as f64 - ix[3] as f64 * 0.25
        });
        let factors: Vec<Matrix> = t
            .dims()
            .iter()
            .enumerate()
            .map(|(m, &d)| Matrix::from_fn(d, 3, |i, c| ((i + 2 * c + m) % 5) as f64 - 1.5))
            .collect();
        for mode in 0..4 {
            let chain: Vec<&Matrix> = (0..4).rev().filter(|&m| m != mode).map(|m| &factors[m]).collect();
            let kr = khatri_rao_chain(&chain).unwrap();
            let expect = t.matricize(mode).unwrap() * kr;
            let got = mttkrp(&t, &factors, mode).unwrap();
            assert!((got - expect).amax() < 1e-12);
        }
    }

    #[test]
    fn distributed_factors_preserve_reconstruction() {
        let m = KruskalModel::new(
            vec![
                Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
                Matrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 1.0]),
                Matrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 0.5]),
            ],
            vec![2.0, 0.5],
        )
        .unwrap();
        let d = KruskalModel::from_factors(m.distributed_factors()).unwrap();
        let diff = m.reconstruct().distance(&d.reconstruct()).unwrap();
        assert!(diff < 1e-12);
    }
}
