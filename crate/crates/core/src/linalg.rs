//! Dense least-squares helpers.
//!
//! [`ColumnQr`] factors a design column by column in a fixed order and drops
//! any column already in the span of the earlier ones, so collinearity is
//! resolved deterministically. Orthogonalization is classical Gram-Schmidt
//! applied twice, which keeps `Q` orthonormal to working precision.

use nalgebra::{DMatrix, DVector};

/// Default relative tolerance for declaring a column dependent.
pub const DROP_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedColumn {
    /// Index of the column in the input design.
    pub column: usize,
    /// Norm of the part orthogonal to the retained columns.
    pub residual_norm: f64,
    /// Linear combination of retained columns reproducing this one:
    /// `(input column index, coefficient)` pairs with non-negligible weight.
    pub witness: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct ColumnQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    kept: Vec<usize>,
    dropped: Vec<DroppedColumn>,
}

impl ColumnQr {
    pub fn factor(x: &DMatrix<f64>) -> ColumnQr {
        ColumnQr::factor_with_tol(x, DROP_TOL)
    }

    pub fn factor_with_tol(x: &DMatrix<f64>, tol: f64) -> ColumnQr {
        let (m, n) = x.shape();
        let mut q_cols: Vec<DVector<f64>> = Vec::new();
        let mut r_cols: Vec<Vec<f64>> = Vec::new();
        let mut kept = Vec::new();
        let mut pending_drops = Vec::new();
        for j in 0..n {
            let col = x.column(j).into_owned();
            let norm = col.norm();
            let mut v = col.clone();
            let mut coef = vec![0.0; q_cols.len()];
            for _ in 0..2 {
                for (k, qk) in q_cols.iter().enumerate() {
                    let c = qk.dot(&v);
                    v.axpy(-c, qk, 1.0);
                    coef[k] += c;
                }
            }
            let resid = v.norm();
            if resid <= tol * norm.max(1.0) || m == 0 {
                pending_drops.push((j, resid, coef));
                continue;
            }
            coef.push(resid);
            r_cols.push(coef);
            q_cols.push(v / resid);
            kept.push(j);
        }
        let r_dim = kept.len();
        let q = if r_dim == 0 { DMatrix::zeros(m, 0) } else { DMatrix::from_columns(&q_cols) };
        let mut r = DMatrix::zeros(r_dim, r_dim);
        for (j, c) in r_cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                r[(i, j)] = *v;
            }
        }
        let mut qr = ColumnQr { q, r, kept, dropped: Vec::new() };
        // Witness coefficients: solve R c = Q^T x_j restricted to the columns
        // that were retained before the dropped column was reached.
        for (j, resid, coef) in pending_drops {
            let k = coef.len();
            let mut c = coef.clone();
            for i in (0..k).rev() {
                let mut s = c[i];
                for l in i + 1..k {
                    s -= qr.r[(i, l)] * c[l];
                }
                c[i] = s / qr.r[(i, i)];
            }
            let witness = c
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > 1e-8)
                .map(|(i, v)| (qr.kept[i], *v))
                .collect();
            qr.dropped.push(DroppedColumn { column: j, residual_norm: resid, witness });
        }
        qr
    }

    pub fn rank(&self) -> usize {
        self.kept.len()
    }

    /// Input column indices of retained columns, in order.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn dropped(&self) -> &[DroppedColumn] {
        &self.dropped
    }

    /// Position of an input column among the retained ones.
    pub fn position(&self, column: usize) -> Option<usize> {
        self.kept.iter().position(|&c| c == column)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Least-squares coefficients of the retained columns.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * y;
        back_substitute(&self.r, &qty)
    }

    /// Row `h` of the estimator map for retained position `k`: coefficient
    /// `k` equals `h . y` for every outcome vector `y`.
    pub fn estimator_row(&self, k: usize) -> DVector<f64> {
        let n = self.rank();
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        // Solve R^T z = e_k by forward substitution.
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let mut s = e[i];
            for l in 0..i {
                s -= self.r[(l, i)] * z[l];
            }
            z[i] = s / self.r[(i, i)];
        }
        &self.q * z
    }

    /// Diagonal of the hat matrix.
    pub fn leverage(&self) -> Vec<f64> {
        self.q.row_iter().map(|row| row.norm_squared()).collect()
    }

    /// Ratio of the largest to smallest diagonal magnitude of `R`; a cheap
    /// lower bound on the design's condition number.
    pub fn condition_estimate(&self) -> f64 {
        let d: Vec<f64> = (0..self.rank()).map(|i| self.r[(i, i)].abs()).collect();
        if d.is_empty() {
            return f64::INFINITY;
        }
        let max = d.iter().cloned().fold(0.0, f64::max);
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

/// Solve `R x = b` for upper-triangular `R`.
pub fn back_substitute(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.ncols();
    let mut x = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for l in i + 1..n {
            s -= r[(i, l)] * x[l];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Sample mean and standard deviation (`n - 1` denominator).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
