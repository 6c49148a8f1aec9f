use std::fmt;

use crate::error::{Error, Result};

/// Dense symmetric matrix, stored in full row-major order.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from the lower triangle produced by `f(i, j)` with `j <= i`.
    pub fn from_lower_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Builds a matrix from rows. Off-diagonal pairs must agree to a relative
    /// 1e-12; the stored matrix is the exact average of each pair.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::EmptyInput);
        }
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("matrix entries must be finite".into()));
            }
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (rows[i][j], rows[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Domain(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_lower_fn(dim, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        SymMatrix { dim: self.dim, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// `x' M x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let row = self.row(i);
            acc += x[i] * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    /// Plain matrix product, used for residual checks.
    pub fn matmul(&self, other: &SymMatrix) -> Vec<Vec<f64>> {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| self.get(i, k) * other.get(k, j)).sum()).collect())
            .collect()
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(self)
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries((0..self.dim).map(|i| self.row(i))).finish()
    }
}

/// Lower-triangular Cholesky factor `L` with `M = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(m: &SymMatrix) -> Result<Self> {
        let n = m.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = m.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            // Relative pivot floor catches exact collinearity that rounding
            // would otherwise leave as a tiny positive pivot.
            if !(d > 1e-13 * m.get(j, j).abs()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Cholesky { dim: n, lower: l })
    }

    /// Entry `(i, j)` of the lower factor (zero above the diagonal).
    pub fn lower(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.lower[i * self.dim + j]
        }
    }

    fn forward(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    fn backward(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * b[k];
            }
            b[i] = s / self.lower[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `x' M⁻¹ x`, evaluated as `‖L⁻¹x‖²` so the result is never negative.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        let mut y = x.to_vec();
        self.forward(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut cols = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            cols.push(self.solve(&e));
        }
        SymMatrix::from_lower_fn(n, |i, j| 0.5 * (cols[j][i] + cols[i][j]))
    }
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn invert_spd(m: &SymMatrix) -> Result<SymMatrix> {
    Ok(Cholesky::new(m)?.inverse())
}
