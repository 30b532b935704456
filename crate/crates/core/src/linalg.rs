//! Small dense least-squares kernel: Householder QR with in-order rank detection.

use alloc::vec;
use alloc::vec::Vec;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally long columns.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Self {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            assert_eq!(c.len(), rows, "ragged columns");
            data.extend_from_slice(c);
        }
        Self {
            rows,
            cols: columns.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.col(j)) {
                *o += x * vj;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    // Scaled to avoid overflow on extreme inputs.
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = a.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * libm::sqrt(ss)
}

/// Householder QR of a tall matrix.
///
/// Columns are processed in their given order. A column whose remaining norm
/// falls below `eps * max(rows, cols) * max_j ||a_j||` is reported as the
/// first dependent column instead of being factored.
#[derive(Debug, Clone)]
pub struct Qr {
    /// Householder vectors below the diagonal, `R` on and above it.
    qr: Matrix,
    tau: Vec<f64>,
}

impl Qr {
    pub fn factor(mut a: Matrix) -> Result<Self, RankDeficient> {
        let (n, p) = (a.rows, a.cols);
        if n < p {
            return Err(RankDeficient { column: n });
        }
        let max_norm = (0..p).map(|j| norm(a.col(j))).fold(0.0f64, f64::max);
        let tol = f64::EPSILON * n.max(p) as f64 * max_norm;
        let mut tau = vec![0.0; p];
        for k in 0..p {
            let alpha = norm(&a.col(k)[k..]);
            if !(alpha > tol) {
                return Err(RankDeficient { column: k });
            }
            // Reflect x = a[k.., k] onto -sign(x0)·||x||·e1.
            let x0 = a.get(k, k);
            let beta = if x0 >= 0.0 { -alpha } else { alpha };
            let v0 = x0 - beta;
            {
                let col = a.col_mut(k);
                for x in &mut col[k + 1..] {
                    *x /= v0;
                }
                col[k] = beta;
            }
            let t = (beta - x0) / beta;
            tau[k] = t;
            for j in k + 1..p {
                let (left, right) = a.data.split_at_mut(j * n);
                let vk = &left[k * n..(k + 1) * n];
                let cj = &mut right[..n];
                let mut s = cj[k];
                for i in k + 1..n {
                    s += vk[i] * cj[i];
                }
                s *= t;
                cj[k] -= s;
                for i in k + 1..n {
                    cj[i] -= s * vk[i];
                }
            }
        }
        Ok(Self { qr: a, tau })
    }

    pub fn cols(&self) -> usize {
        self.qr.cols
    }

    /// Overwrites `y` with `Qᵀ y`.
    pub fn apply_qt(&self, y: &mut [f64]) {
        let n = self.qr.rows;
        for k in 0..self.qr.cols {
            let v = self.qr.col(k);
            let mut s = y[k];
            for i in k + 1..n {
                s += v[i] * y[i];
            }
            s *= self.tau[k];
            y[k] -= s;
            for i in k + 1..n {
                y[i] -= s * v[i];
            }
        }
    }

    /// Least-squares coefficients for `y`.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        qty.truncate(self.qr.cols);
        self.solve_upper(&mut qty);
        qty
    }

    /// Solves `R x = b` in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        let p = self.qr.cols;
        for i in (0..p).rev() {
            let mut s = b[i];
            for j in i + 1..p {
                s -= self.qr.get(i, j) * b[j];
            }
            b[i] = s / self.qr.get(i, i);
        }
    }

    /// Solves `Rᵀ x = b` in place.
    pub fn solve_upper_transpose(&self, b: &mut [f64]) {
        let p = self.qr.cols;
        for i in 0..p {
            let mut s = b[i];
            for j in 0..i {
                s -= self.qr.get(j, i) * b[j];
            }
            b[i] = s / self.qr.get(i, i);
        }
    }

    /// Column `j` of `(AᵀA)⁻¹`, plus `z` with `Rᵀ z = e_j` (so `‖z‖² = [(AᵀA)⁻¹]_jj`).
    pub fn inverse_gram_column(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        let mut z = vec![0.0; self.qr.cols];
        z[j] = 1.0;
        self.solve_upper_transpose(&mut z);
        let mut c = z.clone();
        self.solve_upper(&mut c);
        (c, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficient {
    /// Index of the first column found dependent on its predecessors.
    pub column: usize,
}

/// Cholesky solve of a symmetric positive-definite system, row-major `p × p`.
pub fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * p + i] = libm::sqrt(s);
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut x = b.to_vec();
    for i in 0..p {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * p + k] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = x[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}
