//! Moded batch Markovian arrival processes.
//!
//! A [`BatchProcess`] is a finite family `D_0..D_Kmax` of rate matrices over a
//! modulating chain; a [`ModedArrival`] is one such family per robot-activation
//! mode, all sharing the modulating state space. Four construction recipes are
//! provided: independent per-robot processes, thinning of a common process,
//! marked batches attributed to robots, and direct per-mode matrices.
//!
//! Published example matrices contain small defects (negative batch entries,
//! row-sum gaps, a sign typo on a diagonal); `repair` validation applies a
//! deterministic, logged correction so those models remain usable.

use crate::error::{Error, Result};
use crate::matrix::{kron_product, solve_left_null, solve_linear, DenseMatrix};

/// Tolerance for strict validation of generator-type invariants.
pub const ARRIVAL_VALIDATION_TOL: f64 = 1e-9;

/// Largest per-entry clamp / per-row rebalance accepted in repair mode.
pub const DEFAULT_REPAIR_CAP: f64 = 0.1;

/// The lag-1 correlation formula divides by a variance the source leaves
/// unsuperscripted; it is taken to be the same mode's inter-group variance.
/// Surfaced in CLI output so the assumption is never silent.
pub const C_COR_DENOMINATOR_NOTE: &str =
    "c_cor denominator variance taken as the same mode's inter-group variance v";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    Strict,
    Repair,
}

/// One logged correction applied in repair mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Repair {
    /// Negative entry clamped to zero: (batch index k, row, col, old value).
    ClampedNegative { k: usize, row: usize, col: usize, value: f64 },
    /// Non-negative diagonal of `D_0` flipped in sign: (row, old value).
    FlippedDiagonal { row: usize, value: f64 },
    /// `D_0` diagonal shifted so the row of `D(1)` sums to zero: (row, shift).
    RebalancedRow { row: usize, shift: f64 },
}

impl std::fmt::Display for Repair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Repair::ClampedNegative { k, row, col, value } => {
                write!(f, "clamped negative entry D_{k}[{row}][{col}] = {value} to 0")
            }
            Repair::FlippedDiagonal { row, value } => {
                write!(f, "flipped sign of D_0 diagonal [{row}][{row}] = {value}")
            }
            Repair::RebalancedRow { row, shift } => {
                write!(f, "shifted D_0 diagonal [{row}][{row}] by {shift:+e} to balance the row")
            }
        }
    }
}

/// A batch Markovian arrival process with finite maximum batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchProcess {
    d: Vec<DenseMatrix>,
}

impl BatchProcess {
    /// Validate a `D_0..D_Kmax` family.
    ///
    /// `strict` rejects any invariant violated beyond [`ARRIVAL_VALIDATION_TOL`];
    /// `repair` clamps small negative entries, flips a wrong-signed `D_0`
    /// diagonal, and rebalances the diagonal so `D(1)` has exact zero row sums,
    /// reporting every correction. Defects beyond `repair_cap` are irreparable.
    pub fn validate(
        d: Vec<DenseMatrix>,
        mode: ValidationMode,
        repair_cap: f64,
    ) -> Result<(Self, Vec<Repair>)> {
        if d.is_empty() {
            return Err(Error::InvalidArrival(vec!["no matrices given".into()]));
        }
        let w = d[0].rows();
        let mut errors = Vec::new();
        for (k, m) in d.iter().enumerate() {
            if m.rows() != w || m.cols() != w {
                errors.push(format!("D_{k} is {}x{}, expected {w}x{w}", m.rows(), m.cols()));
            }
        }
        if !errors.is_empty() {
            return Err(Error::InvalidArrival(errors));
        }
        let mut d = d;
        let mut log = Vec::new();
        match mode {
            ValidationMode::Strict => {
                for (k, m) in d.iter().enumerate() {
                    for i in 0..w {
                        for j in 0..w {
                            let v = m.get(i, j);
                            if !(k == 0 && i == j) && v < -ARRIVAL_VALIDATION_TOL {
                                errors.push(format!("negative entry D_{k}[{i}][{j}] = {v}"));
                            }
                            if k == 0 && i == j && v >= 0.0 {
                                errors.push(format!("non-negative diagonal D_0[{i}][{i}] = {v}"));
                            }
                        }
                    }
                }
                let d1 = total_matrix(&d);
                for (i, s) in d1.row_sums().iter().enumerate() {
                    if s.abs() > ARRIVAL_VALIDATION_TOL {
                        errors.push(format!("row {i} of D(1) sums to {s:+e}, expected 0"));
                    }
                }
                if !errors.is_empty() {
                    return Err(Error::InvalidArrival(errors));
                }
            }
            ValidationMode::Repair => {
                for (k, m) in d.iter_mut().enumerate() {
                    for i in 0..w {
                        for j in 0..w {
                            let v = m.get(i, j);
                            if k == 0 && i == j {
                                continue;
                            }
                            if v < 0.0 {
                                if v < -repair_cap {
                                    return Err(Error::Irreparable(format!(
                                        "negative entry D_{k}[{i}][{j}] = {v} exceeds the repair cap {repair_cap}"
                                    )));
                                }
                                if v < -ARRIVAL_VALIDATION_TOL {
                                    log.push(Repair::ClampedNegative { k, row: i, col: j, value: v });
                                }
                                m.set(i, j, 0.0);
                            }
                        }
                    }
                }
                for i in 0..w {
                    let v = d[0].get(i, i);
                    if v >= 0.0 {
                        log.push(Repair::FlippedDiagonal { row: i, value: v });
                        d[0].set(i, i, -v);
                    }
                }
                for i in 0..w {
                    let defect: f64 = d.iter().map(|m| m.row(i).iter().sum::<f64>()).sum();
                    if defect.abs() > repair_cap {
                        return Err(Error::Irreparable(format!(
                            "row {i} of D(1) sums to {defect:+e}, beyond the repair cap {repair_cap}"
                        )));
                    }
                    if defect.abs() > ARRIVAL_VALIDATION_TOL {
                        log.push(Repair::RebalancedRow { row: i, shift: -defect });
                    }
                    let v = d[0].get(i, i);
                    d[0].set(i, i, v - defect);
                }
            }
        }
        // canonicalize within tolerance: exact zero row sums, no negatives
        for (k, m) in d.iter_mut().enumerate() {
            for i in 0..w {
                for j in 0..w {
                    if !(k == 0 && i == j) && m.get(i, j) < 0.0 {
                        m.set(i, j, 0.0);
                    }
                }
            }
        }
        for i in 0..w {
            let defect: f64 = d.iter().map(|m| m.row(i).iter().sum::<f64>()).sum();
            let v = d[0].get(i, i);
            d[0].set(i, i, v - defect);
            if d[0].get(i, i) >= 0.0 {
                return Err(Error::InvalidArrival(vec![format!(
                    "state {i} has no outgoing rate (D_0 diagonal {})",
                    d[0].get(i, i)
                )]));
            }
        }
        let bp = BatchProcess { d };
        if !bp.is_irreducible() {
            return Err(Error::InvalidArrival(vec!["D(1) is not irreducible".into()]));
        }
        Ok((bp, log))
    }

    pub fn from_validated(d: Vec<DenseMatrix>) -> Result<Self> {
        Ok(Self::validate(d, ValidationMode::Strict, DEFAULT_REPAIR_CAP)?.0)
    }

    /// Poisson process as the 1x1 special case.
    pub fn poisson(rate: f64) -> Self {
        BatchProcess {
            d: vec![
                DenseMatrix::from_rows(&[vec![-rate]]),
                DenseMatrix::from_rows(&[vec![rate]]),
            ],
        }
    }

    /// Modulating state-space size.
    pub fn dim(&self) -> usize {
        self.d[0].rows()
    }

    /// Largest batch size carried by the family.
    pub fn kmax(&self) -> usize {
        self.d.len() - 1
    }

    /// `D_k`, a zero matrix beyond the stored family.
    pub fn mat(&self, k: usize) -> DenseMatrix {
        self.d
            .get(k)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(self.dim(), self.dim()))
    }

    pub fn mats(&self) -> &[DenseMatrix] {
        &self.d
    }

    /// `D(1) = Σ_k D_k`, the generator of the modulating chain.
    pub fn total(&self) -> DenseMatrix {
        total_matrix(&self.d)
    }

    /// `D'(1) = Σ_k k · D_k`.
    pub fn rate_matrix(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.dim(), self.dim());
        for (k, m) in self.d.iter().enumerate().skip(1) {
            out.add_assign(&m.scale(k as f64));
        }
        out
    }

    fn is_irreducible(&self) -> bool {
        let d1 = self.total();
        let n = self.dim();
        let reach = |transpose: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let v = if transpose { d1.get(j, i) } else { d1.get(i, j) };
                    if i != j && v > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.iter().all(|&s| s)
        };
        reach(false) && reach(true)
    }

    /// Stationary vector and the standard arrival statistics.
    pub fn stats(&self) -> Result<ArrivalStats> {
        let theta = solve_left_null(&self.total())?;
        let e = DenseMatrix::ones_col(self.dim());
        let lambda: f64 = self
            .rate_matrix()
            .right_mul(&vec![1.0; self.dim()])
            .iter()
            .zip(&theta)
            .map(|(x, t)| x * t)
            .sum();
        let neg_d0 = self.d[0].neg();
        let lambda_g: f64 = neg_d0
            .right_mul(&vec![1.0; self.dim()])
            .iter()
            .zip(&theta)
            .map(|(x, t)| x * t)
            .sum();
        if lambda_g <= 0.0 {
            return Err(Error::InvalidArrival(vec!["group rate is not positive".into()]));
        }
        let inv_e = solve_linear(&neg_d0, &e)?;
        let var_g = 2.0 / lambda_g * dot(&theta, inv_e.data()) - 1.0 / (lambda_g * lambda_g);
        // theta (-D0)^{-1} (D(1) - D_0) (-D0)^{-1} e
        let mid = self.total().sub(&self.d[0]).matmul(&inv_e);
        let inner = solve_linear(&neg_d0, &mid)?;
        let c_cor = (lambda_g * dot(&theta, inner.data()) - 1.0) / (var_g * lambda_g * lambda_g);
        Ok(ArrivalStats {
            theta,
            lambda,
            lambda_g,
            var_g,
            c_cor,
        })
    }
}

fn total_matrix(d: &[DenseMatrix]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(d[0].rows(), d[0].cols());
    for m in d {
        out.add_assign(m);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stationary statistics of one mode's arrival process.
#[derive(Debug, Clone)]
pub struct ArrivalStats {
    /// Stationary vector of the modulating chain.
    pub theta: Vec<f64>,
    /// Fundamental rate (pages per unit time).
    pub lambda: f64,
    /// Group (batch) rate.
    pub lambda_g: f64,
    /// Variance of inter-group times.
    pub var_g: f64,
    /// Lag-1 correlation of inter-group times.
    pub c_cor: f64,
}

/// Family of batch processes indexed by the number of active robots.
#[derive(Debug, Clone, PartialEq)]
pub struct ModedArrival {
    modes: Vec<BatchProcess>,
}

impl ModedArrival {
    /// Direct per-mode construction: mode `l` (1-based) uses `modes[l-1]`.
    pub fn compose_direct(modes: Vec<BatchProcess>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidArrival(vec!["no modes given".into()]));
        }
        let w = modes[0].dim();
        if modes.iter().any(|m| m.dim() != w) {
            return Err(Error::Dimension(
                "all modes must share the modulating state space".into(),
            ));
        }
        Ok(ModedArrival { modes })
    }

    /// Independent per-robot processes; robots `1..=l` deliver in mode `l`,
    /// the rest keep moving without delivering.
    ///
    /// Every term enters as a Kronecker-sum summand over the product state
    /// space, so each mode's `D(1)` stays a generator.
    pub fn compose_independent(processes: Vec<BatchProcess>) -> Result<Self> {
        if processes.is_empty() {
            return Err(Error::InvalidArrival(vec!["no processes given".into()]));
        }
        let n = processes.len();
        let dims: Vec<usize> = processes.iter().map(|p| p.dim()).collect();
        let lift = |m: &DenseMatrix, pos: usize| -> DenseMatrix {
            let pre: usize = dims[..pos].iter().product();
            let post: usize = dims[pos + 1..].iter().product();
            kron_product(
                &kron_product(&DenseMatrix::identity(pre), m),
                &DenseMatrix::identity(post),
            )
        };
        let w: usize = dims.iter().product();
        let kmax_all = processes.iter().map(|p| p.kmax()).max().unwrap();
        let mut modes = Vec::with_capacity(n);
        for l in 1..=n {
            let mut d: Vec<DenseMatrix> = (0..=kmax_all).map(|_| DenseMatrix::zeros(w, w)).collect();
            for (r, proc_) in processes.iter().enumerate() {
                if r < l {
                    for k in 0..=proc_.kmax() {
                        d[k].add_assign(&lift(&proc_.mat(k), r));
                    }
                } else {
                    d[0].add_assign(&lift(&proc_.total(), r));
                }
            }
            while d.len() > 1 && d.last().unwrap().is_zero() {
                d.pop();
            }
            let (bp, _) = BatchProcess::validate(d, ValidationMode::Strict, DEFAULT_REPAIR_CAP)?;
            modes.push(bp);
        }
        Ok(ModedArrival { modes })
    }

    /// Thinning of a common process: mode `l` accepts each batch with
    /// probability `q[l-1]`; rejected batches become phase transitions.
    pub fn compose_thinned(bp: &BatchProcess, q: &[f64]) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidArrival(vec!["no thinning probabilities".into()]));
        }
        let mut prev = 0.0;
        for (i, &qi) in q.iter().enumerate() {
            if !(qi > prev && qi <= 1.0) {
                return Err(Error::InvalidArrival(vec![format!(
                    "thinning probabilities must satisfy 0 < q_1 < … < q_N = 1; q[{i}] = {qi}"
                )]));
            }
            prev = qi;
        }
        if (q[q.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArrival(vec![format!(
                "last thinning probability must be 1, got {}",
                q[q.len() - 1]
            )]));
        }
        let d1 = bp.total();
        let mut modes = Vec::with_capacity(q.len());
        for &ql in q {
            let mut d = Vec::with_capacity(bp.kmax() + 1);
            d.push(bp.mat(0).scale(ql).add(&d1.scale(1.0 - ql)));
            for k in 1..=bp.kmax() {
                d.push(bp.mat(k).scale(ql));
            }
            let (m, _) = BatchProcess::validate(d, ValidationMode::Strict, DEFAULT_REPAIR_CAP)?;
            modes.push(m);
        }
        Ok(ModedArrival { modes })
    }

    /// Marked-batch construction: batches of robots above `l` are folded into
    /// the no-arrival matrix of mode `l`.
    pub fn compose_bmmap(d0: &DenseMatrix, robot_batches: &[Vec<DenseMatrix>]) -> Result<Self> {
        if robot_batches.is_empty() {
            return Err(Error::InvalidArrival(vec!["no robots given".into()]));
        }
        let n = robot_batches.len();
        let w = d0.rows();
        let kmax = robot_batches.iter().map(|b| b.len()).max().unwrap();
        let get = |m: usize, k: usize| -> DenseMatrix {
            robot_batches[m]
                .get(k - 1)
                .cloned()
                .unwrap_or_else(|| DenseMatrix::zeros(w, w))
        };
        let mut modes = Vec::with_capacity(n);
        for l in 1..=n {
            let mut dl0 = d0.clone();
            for m in l..n {
                for k in 1..=kmax {
                    dl0.add_assign(&get(m, k));
                }
            }
            let mut d = vec![dl0];
            for k in 1..=kmax {
                let mut dk = DenseMatrix::zeros(w, w);
                for m in 0..l {
                    dk.add_assign(&get(m, k));
                }
                d.push(dk);
            }
            while d.len() > 1 && d.last().unwrap().is_zero() {
                d.pop();
            }
            let (bp, _) = BatchProcess::validate(d, ValidationMode::Strict, DEFAULT_REPAIR_CAP)?;
            modes.push(bp);
        }
        Ok(ModedArrival { modes })
    }

    /// Number of modes (available robots).
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Modulating state-space size shared by all modes.
    pub fn dim(&self) -> usize {
        self.modes[0].dim()
    }

    /// Mode `l`, 1-based.
    pub fn mode(&self, l: usize) -> &BatchProcess {
        &self.modes[l - 1]
    }

    pub fn modes(&self) -> &[BatchProcess] {
        &self.modes
    }

    /// Largest batch size over all modes.
    pub fn kmax(&self) -> usize {
        self.modes.iter().map(|m| m.kmax()).max().unwrap()
    }
}
