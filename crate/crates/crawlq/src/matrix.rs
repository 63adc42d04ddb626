//! Dense real-matrix algebra: Kronecker products and sums, repeated Kronecker
//! powers, LU-based linear solves and left null vectors.
//!
//! Everything downstream (generator assembly, stationary solver, sojourn
//! recursions) is written in terms of these operations. Matrices are row-major
//! and dense; the state spaces this crate targets stay below ~2·10^4, so no
//! sparse machinery is warranted.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from nested rows. Panics on ragged input or non-finite entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        let m = DenseMatrix { rows: r, cols: c, data };
        m.assert_finite();
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m.assert_finite();
        m
    }

    /// Column vector with the given entries.
    pub fn col_vec(v: &[f64]) -> Self {
        DenseMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// Row vector with the given entries.
    pub fn row_vec(v: &[f64]) -> Self {
        DenseMatrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    /// Column of ones.
    pub fn ones_col(n: usize) -> Self {
        DenseMatrix {
            rows: n,
            cols: 1,
            data: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn assert_finite(&self) {
        assert!(
            self.data.iter().all(|x| x.is_finite()),
            "matrix contains non-finite entries"
        );
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    /// Matrix product, cache-friendly ikj loop.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Row vector times matrix: `v * self`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (k, &a) in v.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = self.row(k);
            for (o, b) in out.iter_mut().zip(row) {
                *o += a * b;
            }
        }
        out
    }

    /// Matrix times column vector: `self * v`.
    pub fn right_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

/// Kronecker product `A ⊗ B`.
pub fn kron_product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            for p in 0..b.rows {
                let orow = (i * b.rows + p) * out.cols + j * b.cols;
                let brow = &b.data[p * b.cols..(p + 1) * b.cols];
                for (q, &bpq) in brow.iter().enumerate() {
                    out.data[orow + q] += aij * bpq;
                }
            }
        }
    }
    out
}

/// Kronecker sum `A ⊕ B = A ⊗ I + I ⊗ B` for square `A`, `B`.
pub fn kron_sum(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() || !b.is_square() {
        return Err(Error::Dimension(format!(
            "kron_sum needs square inputs, got {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = kron_product(a, &DenseMatrix::identity(b.rows));
    out.add_assign(&kron_product(&DenseMatrix::identity(a.rows), b));
    Ok(out)
}

/// `v^{⊗l}`; `l = 0` yields the 1-dimensional vector (1).
pub fn kron_vec_power(v: &[f64], l: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..l {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &a in &out {
            for &b in v {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

/// `M^{⊕l}` (l-fold Kronecker sum of a square matrix); `l = 0` yields the 1x1 zero.
pub fn kron_sum_power_sq(m: &DenseMatrix, l: usize) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::Dimension("kron_sum_power_sq needs a square matrix".into()));
    }
    if l == 0 {
        return Ok(DenseMatrix::zeros(1, 1));
    }
    let mut out = m.clone();
    for _ in 1..l {
        out = kron_sum(&out, m)?;
    }
    Ok(out)
}

/// Kronecker-sum power of a column vector:
/// `Σ_{j=1..l} I_{R^{j-1}} ⊗ c ⊗ I_{R^{l-j}}`, mapping dimension `R^l → R^{l-1}`.
pub fn kron_sum_power_col(c: &DenseMatrix, l: usize) -> DenseMatrix {
    assert_eq!(c.cols, 1, "kron_sum_power_col expects a column vector");
    assert!(l >= 1, "kron_sum_power_col needs l >= 1");
    let r = c.rows;
    let mut out = DenseMatrix::zeros(r.pow(l as u32), r.pow(l as u32 - 1));
    for j in 1..=l {
        let pre = r.pow((j - 1) as u32);
        let post = r.pow((l - j) as u32);
        // term I_pre ⊗ c ⊗ I_post: (u, rj, w) -> (u, w) weighted by c[rj]
        for u in 0..pre {
            for rj in 0..r {
                let cv = c.get(rj, 0);
                if cv == 0.0 {
                    continue;
                }
                for w in 0..post {
                    let row = (u * r + rj) * post + w;
                    let col = u * post + w;
                    out.data[row * out.cols + col] += cv;
                }
            }
        }
    }
    out
}

/// LU factorization with partial pivoting.
pub struct LuFactors {
    lu: DenseMatrix,
    piv: Vec<usize>,
    /// crude condition estimate max|U_ii| / min|U_ii|
    cond_estimate: f64,
}

impl LuFactors {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("LU factorization needs a square matrix".into()));
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let tiny = scale * (n as f64) * f64::EPSILON * 1e-2;
        let mut umax: f64 = 0.0;
        let mut umin = f64::INFINITY;
        for k in 0..n {
            // pivot search
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..n {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny {
                return Err(Error::Singular {
                    condition: if umin > 0.0 { umax / umin.max(f64::MIN_POSITIVE) } else { f64::INFINITY },
                });
            }
            if p != k {
                piv.swap(k, p);
                for j in 0..n {
                    let t = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, t);
                }
            }
            let d = lu.get(k, k);
            umax = umax.max(d.abs());
            umin = umin.min(d.abs());
            for i in k + 1..n {
                let f = lu.get(i, k) / d;
                lu.set(i, k, f);
                if f == 0.0 {
                    continue;
                }
                for j in k + 1..n {
                    let v = lu.get(i, j) - f * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(LuFactors {
            lu,
            piv,
            cond_estimate: umax / umin.max(f64::MIN_POSITIVE),
        })
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    /// Solve `A x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu.get(i, k) * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu.get(i, k) * x[k];
            }
            x[i] = s / self.lu.get(i, i);
        }
        x
    }

    /// Solve `A X = B` column by column.
    pub fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        let n = self.lu.rows;
        assert_eq!(b.rows, n);
        let mut x = DenseMatrix::zeros(n, b.cols);
        let mut col = vec![0.0; n];
        for j in 0..b.cols {
            for i in 0..n {
                col[i] = b.get(i, j);
            }
            let sol = self.solve_vec(&col);
            for i in 0..n {
                x.set(i, j, sol[i]);
            }
        }
        x
    }
}

/// Solve `A X = B` with a verified residual `‖AX−B‖∞ ≤ 1e−10·‖B‖∞`
/// (one step of iterative refinement before giving up).
pub fn solve_linear(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let lu = LuFactors::factor(a)?;
    let mut x = lu.solve(b);
    let bnorm = b.max_abs();
    let tol = 1e-10 * bnorm;
    let resid = a.matmul(&x).sub(b);
    if resid.max_abs() > tol {
        let corr = lu.solve(&resid);
        x = x.sub(&corr);
        let resid2 = a.matmul(&x).sub(b);
        if resid2.max_abs() > tol {
            return Err(Error::Singular {
                condition: lu.cond_estimate(),
            });
        }
    }
    x.assert_finite();
    Ok(x)
}

/// Solve `X A = B` (right division) via the transposed system.
pub fn solve_linear_right(b: &DenseMatrix, a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(solve_linear(&a.transpose(), &b.transpose())?.transpose())
}

/// Left null vector of an irreducible generator: `θ Q = 0`, `θ e = 1`, `θ ≥ 0`.
///
/// One equation of the transposed system is replaced by the normalization row;
/// no eigensolver is involved.
pub fn solve_left_null(q: &DenseMatrix) -> Result<Vec<f64>> {
    solve_left_null_weighted(q, &vec![1.0; q.rows()])
}

/// Left null vector of `q` normalized by `θ · weights = 1`.
pub fn solve_left_null_weighted(q: &DenseMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    if !q.is_square() {
        return Err(Error::Dimension("left null vector needs a square matrix".into()));
    }
    let n = q.rows();
    assert_eq!(weights.len(), n);
    let mut m = q.transpose();
    for j in 0..n {
        m.set(n - 1, j, weights[j]);
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let lu = LuFactors::factor(&m).map_err(|e| match e {
        Error::Singular { .. } => Error::DegenerateChain,
        other => other,
    })?;
    let mut theta = lu.solve_vec(&rhs);
    // one refinement pass against the full system
    let resid: Vec<f64> = {
        let mut r = m.right_mul(&theta);
        for (i, ri) in r.iter_mut().enumerate() {
            *ri -= rhs[i];
        }
        r
    };
    let corr = lu.solve_vec(&resid);
    for (t, c) in theta.iter_mut().zip(&corr) {
        *t -= c;
    }
    // clamp round-off negatives
    for t in theta.iter_mut() {
        if *t < 0.0 {
            if *t < -1e-9 {
                return Err(Error::DegenerateChain);
            }
            *t = 0.0;
        }
    }
    let total: f64 = theta.iter().zip(weights).map(|(t, w)| t * w).sum();
    if !(total.is_finite()) || total <= 0.0 {
        return Err(Error::DegenerateChain);
    }
    for t in theta.iter_mut() {
        *t /= total;
    }
    Ok(theta)
}

/// `max_i |v_i|`.
pub fn max_abs_vec(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
