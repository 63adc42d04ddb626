//! Phase-type distributions for service and obsolescence times.
//!
//! A `PhaseType` is the absorption time of a transient CTMC with initial row
//! vector `init` and sub-generator `subgen`; the exit column `-subgen · e` is
//! derived. The representation excludes an atom at zero (`init` sums to 1).

use crate::error::{Error, Result};
use crate::matrix::{solve_linear, DenseMatrix};

/// Tolerance used for stochasticity and sign checks; paper-sourced matrices
/// are printed to limited precision.
pub const PH_VALIDATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseType {
    init: Vec<f64>,
    subgen: DenseMatrix,
    exit: Vec<f64>,
}

impl PhaseType {
    /// Validate an (init, subgen) pair into a `PhaseType`.
    ///
    /// Collects every violated invariant rather than stopping at the first.
    pub fn validate(init: Vec<f64>, subgen: DenseMatrix) -> Result<Self> {
        let mut violations = Vec::new();
        let m = init.len();
        if subgen.rows() != m || subgen.cols() != m {
            return Err(Error::InvalidPhaseType(vec![format!(
                "init has dimension {} but subgen is {}x{}",
                m,
                subgen.rows(),
                subgen.cols()
            )]));
        }
        if m == 0 {
            return Err(Error::InvalidPhaseType(vec!["empty representation".into()]));
        }
        if init.iter().any(|x| !x.is_finite()) || subgen.data().iter().any(|x| !x.is_finite()) {
            violations.push("non-finite entries".to_string());
        }
        for (i, &b) in init.iter().enumerate() {
            if b < -PH_VALIDATION_TOL {
                violations.push(format!("init[{i}] = {b} is negative"));
            }
        }
        let total: f64 = init.iter().sum();
        if (total - 1.0).abs() > PH_VALIDATION_TOL {
            violations.push(format!("init sums to {total}, expected 1"));
        }
        for i in 0..m {
            if subgen.get(i, i) >= 0.0 {
                violations.push(format!("diagonal entry subgen[{i}][{i}] = {} is not negative", subgen.get(i, i)));
            }
            for j in 0..m {
                if i != j && subgen.get(i, j) < -PH_VALIDATION_TOL {
                    violations.push(format!("off-diagonal subgen[{i}][{j}] = {} is negative", subgen.get(i, j)));
                }
            }
        }
        let exit: Vec<f64> = (0..m).map(|i| -subgen.row(i).iter().sum::<f64>()).collect();
        let mut any_positive = false;
        for (i, &x) in exit.iter().enumerate() {
            if x < -PH_VALIDATION_TOL {
                violations.push(format!("row {i} of subgen sums to {} > 0", -x));
            }
            if x > 0.0 {
                any_positive = true;
            }
        }
        if !any_positive {
            violations.push("exit vector has no positive component".to_string());
        }
        // all phases transient <=> subgen nonsingular
        if violations.is_empty()
            && solve_linear(&subgen.neg(), &DenseMatrix::ones_col(m)).is_err()
        {
            violations.push("subgen is singular (recurrent phase)".to_string());
        }
        if !violations.is_empty() {
            return Err(Error::InvalidPhaseType(violations));
        }
        let exit = exit.into_iter().map(|x| x.max(0.0)).collect();
        Ok(PhaseType { init, subgen, exit })
    }

    pub fn exponential(rate: f64) -> Self {
        assert!(rate > 0.0);
        PhaseType {
            init: vec![1.0],
            subgen: DenseMatrix::from_rows(&[vec![-rate]]),
            exit: vec![rate],
        }
    }

    pub fn dim(&self) -> usize {
        self.init.len()
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn init_row(&self) -> DenseMatrix {
        DenseMatrix::row_vec(&self.init)
    }

    pub fn subgen(&self) -> &DenseMatrix {
        &self.subgen
    }

    /// Exit column `-subgen · e`.
    pub fn exit(&self) -> &[f64] {
        &self.exit
    }

    pub fn exit_col(&self) -> DenseMatrix {
        DenseMatrix::col_vec(&self.exit)
    }

    /// Mean absorption time `init · (-subgen)^{-1} · e`.
    pub fn mean(&self) -> f64 {
        let x = solve_linear(&self.subgen.neg(), &DenseMatrix::ones_col(self.dim()))
            .expect("validated sub-generator is nonsingular");
        self.init.iter().zip(x.data()).map(|(b, v)| b * v).sum()
    }

    /// Variance `2 · init · subgen^{-2} · e − mean²`.
    pub fn variance(&self) -> f64 {
        let neg = self.subgen.neg();
        let x = solve_linear(&neg, &DenseMatrix::ones_col(self.dim())).unwrap();
        let x2 = solve_linear(&neg, &x).unwrap();
        let second: f64 = self.init.iter().zip(x2.data()).map(|(b, v)| 2.0 * b * v).sum();
        second - self.mean().powi(2)
    }

    /// Squared coefficient of variation `variance / mean²`.
    pub fn scv(&self) -> f64 {
        self.variance() / self.mean().powi(2)
    }

    /// Scale the sub-generator by `s > 0`; the mean scales by `1/s`.
    pub fn scale(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::InvalidPhaseType(vec![format!("scale factor {s} must be positive")]));
        }
        Ok(PhaseType {
            init: self.init.clone(),
            subgen: self.subgen.scale(s),
            exit: self.exit.iter().map(|x| x * s).collect(),
        })
    }
}
