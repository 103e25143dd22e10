//! Dimension-reducing linear operators.
//!
//! A [`LinearMap`] stands for an `N × M` weight matrix `W` applied as
//! `forward(x) = W′x` (length N → length M) and `adjoint(u) = W u`
//! (length M → length N).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest `N · M` that [`LinearMap::materialize`] builds by default.
pub const DEFAULT_MATERIALIZE_CAP: usize = 1 << 26;

/// Row-major `rows × cols` matrix (N rows, M columns).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!("matrix dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = W′x`.
    fn transpose_mul(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (row, &xn) in self.data.chunks_exact(self.cols).zip(x) {
            if xn != 0.0 {
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += w * xn;
                }
            }
        }
    }

    /// `out = W u`.
    fn mul(&self, u: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = row.iter().zip(u).map(|(w, v)| w * v).sum();
        }
    }

    /// `W′ diag(d) W` as a full symmetric matrix.
    fn weighted_gram(&self, d: &[f64]) -> DMatrix<f64> {
        let m = self.cols;
        let mut upper = vec![0.0; m * m];
        for (row, &dn) in self.data.chunks_exact(m).zip(d) {
            for i in 0..m {
                let c = dn * row[i];
                if c == 0.0 {
                    continue;
                }
                let dst = &mut upper[i * m + i..(i + 1) * m];
                for (o, &w) in dst.iter_mut().zip(&row[i..]) {
                    *o += c * w;
                }
            }
        }
        DMatrix::from_fn(m, m, |i, j| if i <= j { upper[i * m + j] } else { upper[j * m + i] })
    }
}

/// Low-frequency block of the orthonormal 2-D DCT-II of an image.
///
/// Pixels are flattened row-major (`N = height · width`), kept coefficients
/// row-major within the `keep_h × keep_w` block (`M = keep_h · keep_w`).
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedDct2D {
    height: usize,
    width: usize,
    keep_h: usize,
    keep_w: usize,
    basis_h: Vec<f64>,
    basis_w: Vec<f64>,
}

/// Rows `k < keep` of the orthonormal DCT-II matrix of size `len`.
fn dct_basis(len: usize, keep: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(keep * len);
    let l = len as f64;
    for k in 0..keep {
        let scale = if k == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() };
        for n in 0..len {
            out.push(scale * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / l).cos());
        }
    }
    out
}

impl TruncatedDct2D {
    pub fn new(height: usize, width: usize, keep_h: usize, keep_w: usize) -> Result<Self> {
        if height == 0 || width == 0 || keep_h == 0 || keep_w == 0 || keep_h > height || keep_w > width {
            return Err(Error::InvalidArgument(format!(
                "invalid DCT geometry: image {height}x{width}, keep {keep_h}x{keep_w}"
            )));
        }
        Ok(Self {
            height,
            width,
            keep_h,
            keep_w,
            basis_h: dct_basis(height, keep_h),
            basis_w: dct_basis(width, keep_w),
        })
    }

    pub fn params(&self) -> (usize, usize, usize, usize) {
        (self.height, self.width, self.keep_h, self.keep_w)
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let (h, w, kh, kw) = (self.height, self.width, self.keep_h, self.keep_w);
        // rows: t[i, l] = Σ_j x[i, j] Cw[l, j]
        let mut t = vec![0.0; h * kw];
        for i in 0..h {
            let xr = &x[i * w..(i + 1) * w];
            for l in 0..kw {
                let cw = &self.basis_w[l * w..(l + 1) * w];
                t[i * kw + l] = xr.iter().zip(cw).map(|(a, b)| a * b).sum();
            }
        }
        // columns: u[k, l] = Σ_i Ch[k, i] t[i, l]
        out.fill(0.0);
        for k in 0..kh {
            let ch = &self.basis_h[k * h..(k + 1) * h];
            let dst = &mut out[k * kw..(k + 1) * kw];
            for (i, &c) in ch.iter().enumerate() {
                for (o, &v) in dst.iter_mut().zip(&t[i * kw..(i + 1) * kw]) {
                    *o += c * v;
                }
            }
        }
    }

    fn adjoint(&self, u: &[f64], out: &mut [f64]) {
        let (h, w, kh, kw) = (self.height, self.width, self.keep_h, self.keep_w);
        // t[i, l] = Σ_k Ch[k, i] u[k, l]
        let mut t = vec![0.0; h * kw];
        for k in 0..kh {
            let ch = &self.basis_h[k * h..(k + 1) * h];
            let ur = &u[k * kw..(k + 1) * kw];
            for (i, &c) in ch.iter().enumerate() {
                for (o, &v) in t[i * kw..(i + 1) * kw].iter_mut().zip(ur) {
                    *o += c * v;
                }
            }
        }
        // x[i, j] = Σ_l t[i, l] Cw[l, j]
        out.fill(0.0);
        for i in 0..h {
            let dst = &mut out[i * w..(i + 1) * w];
            for l in 0..kw {
                let c = t[i * kw + l];
                for (o, &b) in dst.iter_mut().zip(&self.basis_w[l * w..(l + 1) * w]) {
                    *o += c * b;
                }
            }
        }
    }

    /// Diagonal of `W′ diag(d) W`, computed separably.
    fn weighted_gram_diagonal(&self, d: &[f64]) -> Vec<f64> {
        let (h, w, kh, kw) = (self.height, self.width, self.keep_h, self.keep_w);
        let sq_w: Vec<f64> = self.basis_w.iter().map(|v| v * v).collect();
        let sq_h: Vec<f64> = self.basis_h.iter().map(|v| v * v).collect();
        let mut t = vec![0.0; h * kw];
        for i in 0..h {
            let dr = &d[i * w..(i + 1) * w];
            for l in 0..kw {
                t[i * kw + l] = dr.iter().zip(&sq_w[l * w..(l + 1) * w]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; kh * kw];
        for k in 0..kh {
            for i in 0..h {
                let c = sq_h[k * h + i];
                for l in 0..kw {
                    out[k * kw + l] += c * t[i * kw + l];
                }
            }
        }
        out
    }
}

/// An `N × M` operator used as `W′x` (forward) and `W u` (adjoint).
#[derive(Clone, Debug, PartialEq)]
pub enum LinearMap {
    Dense(DenseMatrix),
    TruncatedDct2D(TruncatedDct2D),
}

impl From<DenseMatrix> for LinearMap {
    fn from(m: DenseMatrix) -> Self {
        LinearMap::Dense(m)
    }
}

impl From<TruncatedDct2D> for LinearMap {
    fn from(m: TruncatedDct2D) -> Self {
        LinearMap::TruncatedDct2D(m)
    }
}

impl LinearMap {
    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        DenseMatrix::new(rows, cols, data).map(LinearMap::Dense)
    }

    pub fn truncated_dct(height: usize, width: usize, keep_h: usize, keep_w: usize) -> Result<Self> {
        TruncatedDct2D::new(height, width, keep_h, keep_w).map(LinearMap::TruncatedDct2D)
    }

    /// N, the input (visible) dimension.
    pub fn n_in(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.rows,
            LinearMap::TruncatedDct2D(d) => d.height * d.width,
        }
    }

    /// M, the feature dimension.
    pub fn n_out(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.cols,
            LinearMap::TruncatedDct2D(d) => d.keep_h * d.keep_w,
        }
    }

    pub fn as_dense(&self) -> Option<&DenseMatrix> {
        match self {
            LinearMap::Dense(m) => Some(m),
            LinearMap::TruncatedDct2D(_) => None,
        }
    }

    pub fn as_dense_mut(&mut self) -> Option<&mut DenseMatrix> {
        match self {
            LinearMap::Dense(m) => Some(m),
            LinearMap::TruncatedDct2D(_) => None,
        }
    }

    /// `W′x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_in(), x.len())?;
        let mut out = vec![0.0; self.n_out()];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// `W u`.
    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_out(), u.len())?;
        let mut out = vec![0.0; self.n_in()];
        self.adjoint_into(u, &mut out);
        Ok(out)
    }

    /// Unchecked [`forward`](Self::forward) into a caller buffer.
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in());
        debug_assert_eq!(out.len(), self.n_out());
        match self {
            LinearMap::Dense(m) => m.transpose_mul(x, out),
            LinearMap::TruncatedDct2D(d) => d.forward(x, out),
        }
    }

    /// Unchecked [`adjoint`](Self::adjoint) into a caller buffer.
    pub(crate) fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n_out());
        debug_assert_eq!(out.len(), self.n_in());
        match self {
            LinearMap::Dense(m) => m.mul(u, out),
            LinearMap::TruncatedDct2D(d) => d.adjoint(u, out),
        }
    }

    /// `W′ diag(d) W`, formed explicitly.
    pub(crate) fn weighted_gram(&self, d: &[f64]) -> DMatrix<f64> {
        match self {
            LinearMap::Dense(m) => m.weighted_gram(d),
            LinearMap::TruncatedDct2D(_) => {
                let m = self.n_out();
                let mut e = vec![0.0; m];
                let mut wide = vec![0.0; self.n_in()];
                let mut col = vec![0.0; m];
                let mut out = DMatrix::zeros(m, m);
                for j in 0..m {
                    e[j] = 1.0;
                    self.adjoint_into(&e, &mut wide);
                    for (v, dn) in wide.iter_mut().zip(d) {
                        *v *= dn;
                    }
                    self.forward_into(&wide, &mut col);
                    out.column_mut(j).copy_from_slice(&col);
                    e[j] = 0.0;
                }
                out
            }
        }
    }

    /// Diagonal of `W′ diag(d) W`.
    pub(crate) fn weighted_gram_diagonal(&self, d: &[f64]) -> Vec<f64> {
        match self {
            LinearMap::Dense(m) => {
                let mut out = vec![0.0; m.cols];
                for (row, &dn) in m.data.chunks_exact(m.cols).zip(d) {
                    for (o, &w) in out.iter_mut().zip(row) {
                        *o += dn * w * w;
                    }
                }
                out
            }
            LinearMap::TruncatedDct2D(t) => t.weighted_gram_diagonal(d),
        }
    }

    /// Dense `N × M` copy of the operator, refusing more than
    /// [`DEFAULT_MATERIALIZE_CAP`] entries.
    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.materialize_with_cap(DEFAULT_MATERIALIZE_CAP)
    }

    pub fn materialize_with_cap(&self, cap: usize) -> Result<DenseMatrix> {
        let (rows, cols) = (self.n_in(), self.n_out());
        if rows.saturating_mul(cols) > cap {
            return Err(Error::TooLarge { rows, cols, cap });
        }
        match self {
            LinearMap::Dense(m) => Ok(m.clone()),
            LinearMap::TruncatedDct2D(d) => {
                let mut data = vec![0.0; rows * cols];
                for i in 0..d.height {
                    for j in 0..d.width {
                        let dst = &mut data[(i * d.width + j) * cols..(i * d.width + j + 1) * cols];
                        for k in 0..d.keep_h {
                            let ch = d.basis_h[k * d.height + i];
                            for l in 0..d.keep_w {
                                dst[k * d.keep_w + l] = ch * d.basis_w[l * d.width + j];
                            }
                        }
                    }
                }
                DenseMatrix::new(rows, cols, data)
            }
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
