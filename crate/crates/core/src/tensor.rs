//! Dense and sparse N-mode tensors and the multilinear kernels built on them.
//!
//! Storage is a flat `Vec<f64>` with the first index varying fastest, so the
//! entry at multi-index `(i_0, ..., i_{N-1})` lives at
//! `i_0 + I_0 * (i_1 + I_1 * (i_2 + ...))`. Modes are 0-based throughout the
//! API.
//!
//! Mode-n matricization follows the usual convention: the row is `i_n` and the
//! column enumerates the remaining modes in ascending order with the lowest
//! mode varying fastest. Under that layout a rank-R model unfolds as
//! `X_(n) = A_n (A_{N-1} ⊙ ... ⊙ A_{n+1} ⊙ A_{n-1} ⊙ ... ⊙ A_0)^T`.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Column-major dense matrix of `f64`.
pub type Matrix = DMatrix<f64>;

/// Extents of an N-mode tensor, `N >= 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Shape> {
        let dims = dims.into();
        if dims.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "order must be at least 2, got {}",
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
        }
        Ok(Shape { dims })
    }

    /// A shape whose extent along `mode` is zero. This is only useful as the
    /// identity element of [`DenseTensor::concat`].
    pub fn empty_along(dims: impl Into<Vec<usize>>, mode: usize) -> Result<Shape> {
        let mut dims = dims.into();
        if mode >= dims.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: dims.len(),
            });
        }
        dims[mode] = 1;
        let mut shape = Shape::new(dims)?;
        shape.dims[mode] = 0;
        Ok(shape)
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, mode: usize) -> usize {
        self.dims[mode]
    }

    /// Number of stored entries.
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat offset of a multi-index. Panics on out-of-range indices in debug
    /// builds only.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.order());
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.dims).rev() {
            debug_assert!(i < d);
            off = off * d + i;
        }
        off
    }

    /// Inverse of [`Shape::offset`].
    pub fn unravel(&self, mut offset: usize, index: &mut [usize]) {
        for (slot, &d) in index.iter_mut().zip(&self.dims) {
            *slot = offset % d;
            offset /= d;
        }
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            })
        } else {
            Ok(())
        }
    }

    fn with_dim(&self, mode: usize, extent: usize) -> Shape {
        let mut dims = self.dims.clone();
        dims[mode] = extent;
        Shape { dims }
    }

    /// Products of the extents before and after `mode`.
    fn split(&self, mode: usize) -> (usize, usize) {
        let inner = self.dims[..mode].iter().product();
        let outer = self.dims[mode + 1..].iter().product();
        (inner, outer)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("x"))
    }
}

/// Dense N-mode array of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: Shape) -> DenseTensor {
        let data = vec![0.0; shape.numel()];
        DenseTensor { shape, data }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<DenseTensor> {
        if data.len() != shape.numel() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for shape {shape} ({} entries)",
                data.len(),
                shape.numel()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite value at offset {pos}")));
        }
        Ok(DenseTensor { shape, data })
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> DenseTensor {
        let mut index = vec![0; shape.order()];
        let data = (0..shape.numel())
            .map(|off| {
                shape.unravel(off, &mut index);
                f(&index)
            })
            .collect();
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.shape.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.shape.offset(index);
        self.data[off] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {} to {}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::DimensionMismatch(format!(
                "cannot compare {} with {}",
                other.shape, self.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Mode-`mode` unfolding: an `I_mode x prod(other dims)` matrix.
    pub fn matricize(&self, mode: usize) -> Result<Matrix> {
        self.shape.check_mode(mode)?;
        let rows = self.shape.dim(mode);
        let (inner, outer) = self.shape.split(mode);
        let cols = inner * outer;
        let mut out = Matrix::zeros(rows, cols);
        // Column index of (inner j, outer o) is j + inner * o.
        for o in 0..outer {
            for i in 0..rows {
                let src = &self.data[(o * rows + i) * inner..(o * rows + i + 1) * inner];
                for (j, &v) in src.iter().enumerate() {
                    out[(i, j + inner * o)] = v;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::matricize`].
    pub fn dematricize(m: &Matrix, shape: &Shape, mode: usize) -> Result<DenseTensor> {
        shape.check_mode(mode)?;
        let rows = shape.dim(mode);
        let (inner, outer) = shape.split(mode);
        if m.nrows() != rows || m.ncols() != inner * outer {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix cannot fold into mode {mode} of {shape}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut data = vec![0.0; shape.numel()];
        for o in 0..outer {
            for i in 0..rows {
                let dst = &mut data[(o * rows + i) * inner..(o * rows + i + 1) * inner];
                for (j, slot) in dst.iter_mut().enumerate() {
                    *slot = m[(i, j + inner * o)];
                }
            }
        }
        DenseTensor::from_vec(shape.clone(), data)
    }

    /// Mode-n product `self ×_mode m`, where `result(.., q, ..) = Σ_i m(q, i) self(.., i, ..)`.
    pub fn mode_n_product(&self, m: &Matrix, mode: usize) -> Result<DenseTensor> {
        self.shape.check_mode(mode)?;
        let extent = self.shape.dim(mode);
        if m.ncols() != extent {
            return Err(Error::DimensionMismatch(format!(
                "mode-{mode} product needs {extent} matrix columns, got {}",
                m.ncols()
            )));
        }
        let q = m.nrows();
        if q == 0 {
            return Err(Error::DimensionMismatch("mode product with an empty matrix".into()));
        }
        let (inner, outer) = self.shape.split(mode);
        let mut data = vec![0.0; inner * q * outer];
        for o in 0..outer {
            let src = &self.data[o * extent * inner..(o + 1) * extent * inner];
            let dst = &mut data[o * q * inner..(o + 1) * q * inner];
            for i in 0..extent {
                let fiber = &src[i * inner..(i + 1) * inner];
                for r in 0..q {
                    let w = m[(r, i)];
                    if w == 0.0 {
                        continue;
                    }
                    for (d, &s) in dst[r * inner..(r + 1) * inner].iter_mut().zip(fiber) {
                        *d += w * s;
                    }
                }
            }
        }
        DenseTensor::from_vec(self.shape.with_dim(mode, q), data)
    }

    /// Concatenates `other` after `self` along `mode`.
    pub fn concat(&self, other: &DenseTensor, mode: usize) -> Result<DenseTensor> {
        self.shape.check_mode(mode)?;
        if self.order() != other.order()
            || self
                .dims()
                .iter()
                .zip(other.dims())
                .enumerate()
                .any(|(m, (a, b))| m != mode && a != b)
        {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate {} and {} along mode {mode}",
                self.shape, other.shape
            )));
        }
        let (inner, outer) = self.shape.split(mode);
        let (a_ext, b_ext) = (self.shape.dim(mode), other.shape.dim(mode));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for o in 0..outer {
            data.extend_from_slice(&self.data[o * a_ext * inner..(o + 1) * a_ext * inner]);
            data.extend_from_slice(&other.data[o * b_ext * inner..(o + 1) * b_ext * inner]);
        }
        let shape = self.shape.with_dim(mode, a_ext + b_ext);
        Ok(DenseTensor { shape, data })
    }

    /// The sub-tensor whose `mode` index lies in `range`.
    pub fn slice_mode(&self, mode: usize, range: Range<usize>) -> Result<DenseTensor> {
        self.shape.check_mode(mode)?;
        let extent = self.shape.dim(mode);
        if range.start >= range.end || range.end > extent {
            return Err(Error::DimensionMismatch(format!(
                "slice {range:?} outside mode {mode} of extent {extent}"
            )));
        }
        let (inner, outer) = self.shape.split(mode);
        let mut data = Vec::with_capacity(inner * outer * range.len());
        for o in 0..outer {
            let base = o * extent * inner;
            data.extend_from_slice(&self.data[base + range.start * inner..base + range.end * inner]);
        }
        let shape = self.shape.with_dim(mode, range.len());
        Ok(DenseTensor { shape, data })
    }
}

/// Coordinate-format tensor holding only its nonzero entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    shape: Shape,
    entries: Vec<(Vec<usize>, f64)>,
}

impl SparseTensor {
    pub fn new(shape: Shape, entries: Vec<(Vec<usize>, f64)>) -> Result<SparseTensor> {
        let mut seen = std::collections::HashSet::with_capacity(entries.len());
        for (index, value) in &entries {
            if index.len() != shape.order() || index.iter().zip(shape.dims()).any(|(&i, &d)| i >= d) {
                return Err(Error::DimensionMismatch(format!(
                    "index {index:?} outside shape {shape}"
                )));
            }
            if !value.is_finite() {
                return Err(Error::Degenerate(format!("non-finite value at {index:?}")));
            }
            if !seen.insert(shape.offset(index)) {
                return Err(Error::InvalidShape(format!("duplicate index {index:?}")));
            }
        }
        Ok(SparseTensor { shape, entries })
    }

    pub fn from_dense(t: &DenseTensor) -> SparseTensor {
        let mut index = vec![0; t.order()];
        let entries = t
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(off, &v)| {
                t.shape().unravel(off, &mut index);
                (index.clone(), v)
            })
            .collect();
        SparseTensor {
            shape: t.shape().clone(),
            entries,
        }
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut t = DenseTensor::zeros(self.shape.clone());
        for (index, value) in &self.entries {
            t.set(index, *value);
        }
        t
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Kronecker product: block `(i, j)` of the result is `x(i, j) * y`.
pub fn kronecker(x: &Matrix, y: &Matrix) -> Matrix {
    let (yr, yc) = y.shape();
    Matrix::from_fn(x.nrows() * yr, x.ncols() * yc, |i, j| {
        x[(i / yr, j / yc)] * y[(i % yr, j % yc)]
    })
}

/// Khatri-Rao (column-wise Kronecker) product; column `r` is `x(:,r) ⊗ y(:,r)`.
pub fn khatri_rao(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let yr = y.nrows();
    Ok(Matrix::from_fn(x.nrows() * yr, x.ncols(), |i, r| {
        x[(i / yr, r)] * y[(i % yr, r)]
    }))
}

/// Left-to-right chain `m_0 ⊙ m_1 ⊙ ... ⊙ m_k`.
pub fn khatri_rao_chain(mats: &[&Matrix]) -> Result<Matrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| Error::InvalidShape("empty Khatri-Rao chain".into()))?;
    rest.iter().try_fold((*first).clone(), |acc, m| khatri_rao(&acc, m))
}

/// Outer product `v_0 ∘ v_1 ∘ ... ∘ v_{N-1}`.
pub fn rank1_outer(vectors: &[&[f64]]) -> Result<DenseTensor> {
    if vectors.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "outer product needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let shape = Shape::new(vectors.iter().map(|v| v.len()).collect::<Vec<_>>())?;
    Ok(DenseTensor::from_fn(shape, |idx| {
        idx.iter().zip(vectors).map(|(&i, v)| v[i]).product()
    }))
}
