//! The JSON model-file format: arrival construction, service and obsolescence
//! laws, capacity, and cost coefficients. Unknown keys are rejected; a parsed
//! file canonicalizes back to an equivalent document.

use crate::arrivals::{BatchProcess, ModedArrival, Repair, ValidationMode, DEFAULT_REPAIR_CAP};
use crate::error::{Error, Result};
use crate::generator::QueueModel;
use crate::matrix::DenseMatrix;
use crate::optimizer::CostCoefficients;
use crate::ph::PhaseType;
use serde::{Deserialize, Serialize};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub arrival: ArrivalSpec,
    pub service: PhSpec,
    pub obsolescence: PhSpec,
    #[serde(rename = "K")]
    pub capacity: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostCoefficients>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArrivalSpec {
    /// `modes[l-1][k]` is `D_k` for mode `l`.
    Direct { modes: Vec<Vec<Rows>> },
    /// `processes[r][k]` is robot `r+1`'s `D_k`.
    Independent { processes: Vec<Vec<Rows>> },
    /// A common process plus thinning probabilities.
    Thinned { process: Vec<Rows>, q: Vec<f64> },
    /// Marked batches: `robot_batches[r][k-1]` is robot `r+1`'s `D_k`.
    Bmmap { d0: Rows, robot_batches: Vec<Vec<Rows>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhSpec {
    pub init: Vec<f64>,
    pub subgen: Rows,
}

impl PhSpec {
    fn to_ph(&self) -> Result<PhaseType> {
        PhaseType::validate(self.init.clone(), rows_to_matrix(&self.subgen)?)
    }

    fn from_ph(ph: &PhaseType) -> Self {
        PhSpec {
            init: ph.init().to_vec(),
            subgen: matrix_to_rows(ph.subgen()),
        }
    }
}

fn rows_to_matrix(rows: &Rows) -> Result<DenseMatrix> {
    if rows.is_empty() {
        return Err(Error::ModelFile("empty matrix".into()));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::ModelFile("ragged matrix rows".into()));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::ModelFile("non-finite matrix entry".into()));
    }
    Ok(DenseMatrix::from_rows(rows))
}

fn matrix_to_rows(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn family_to_matrices(family: &[Rows]) -> Result<Vec<DenseMatrix>> {
    family.iter().map(rows_to_matrix).collect()
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validation_mode(&self) -> ValidationMode {
        self.validation.unwrap_or(ValidationMode::Strict)
    }

    /// Build the queueing model, applying the file's validation mode to every
    /// arrival matrix family. Returns the per-mode repair logs.
    pub fn to_model(&self) -> Result<(QueueModel, Vec<(usize, Repair)>)> {
        self.to_model_with(self.validation_mode())
    }

    pub fn to_model_with(&self, mode: ValidationMode) -> Result<(QueueModel, Vec<(usize, Repair)>)> {
        let mut log = Vec::new();
        // validate every family before failing so the error lists defects of
        // all modes at once
        let mut validate_families = |families: &[Vec<Rows>]| -> Result<Vec<BatchProcess>> {
            let mut out = Vec::new();
            let mut errors = Vec::new();
            for (l, family) in families.iter().enumerate() {
                match family_to_matrices(family)
                    .and_then(|d| BatchProcess::validate(d, mode, DEFAULT_REPAIR_CAP))
                {
                    Ok((bp, repairs)) => {
                        log.extend(repairs.into_iter().map(|r| (l + 1, r)));
                        out.push(bp);
                    }
                    Err(e) => match prefix_mode(e, l + 1) {
                        Error::InvalidArrival(v) => errors.extend(v),
                        other => errors.push(other.to_string()),
                    },
                }
            }
            if errors.is_empty() {
                Ok(out)
            } else {
                Err(Error::InvalidArrival(errors))
            }
        };
        let arrival = match &self.arrival {
            ArrivalSpec::Direct { modes } => {
                ModedArrival::compose_direct(validate_families(modes)?)?
            }
            ArrivalSpec::Independent { processes } => {
                ModedArrival::compose_independent(validate_families(processes)?)?
            }
            ArrivalSpec::Thinned { process, q } => {
                let (bp, repairs) =
                    BatchProcess::validate(family_to_matrices(process)?, mode, DEFAULT_REPAIR_CAP)?;
                log.extend(repairs.into_iter().map(|r| (0, r)));
                ModedArrival::compose_thinned(&bp, q)?
            }
            ArrivalSpec::Bmmap { d0, robot_batches } => {
                let d0 = rows_to_matrix(d0)?;
                let batches: Vec<Vec<DenseMatrix>> = robot_batches
                    .iter()
                    .map(|fam| family_to_matrices(fam))
                    .collect::<Result<_>>()?;
                ModedArrival::compose_bmmap(&d0, &batches)?
            }
        };
        let service = self.service.to_ph()?;
        let obsolescence = self.obsolescence.to_ph()?;
        let model = QueueModel::new(arrival, service, obsolescence, self.capacity)?;
        Ok((model, log))
    }

    /// Canonical document for a validated model: the arrival is emitted in
    /// direct form with the post-repair matrices.
    pub fn canonicalize(model: &QueueModel, cost: Option<CostCoefficients>) -> Self {
        let modes = model
            .arrival()
            .modes()
            .iter()
            .map(|bp| bp.mats().iter().map(matrix_to_rows).collect())
            .collect();
        ModelFile {
            arrival: ArrivalSpec::Direct { modes },
            service: PhSpec::from_ph(model.service()),
            obsolescence: PhSpec::from_ph(model.obsolescence()),
            capacity: model.capacity(),
            cost,
            validation: Some(ValidationMode::Strict),
        }
    }
}

fn prefix_mode(e: Error, mode: usize) -> Error {
    match e {
        Error::InvalidArrival(v) => {
            Error::InvalidArrival(v.into_iter().map(|s| format!("mode {mode}: {s}")).collect())
        }
        Error::Irreparable(s) => Error::Irreparable(format!("mode {mode}: {s}")),
        other => other,
    }
}
