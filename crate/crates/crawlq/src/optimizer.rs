//! Cost evaluation and exhaustive threshold-policy optimization.
//!
//! The cost of a policy is
//! `J = λ(c_loss·P_loss + c_obs·P_obs) + a·V̄⁽¹⁾ + c_rob·N_act + c_star·P_star`.
//!
//! `optimize` enumerates, for every requested mode subset, all strict
//! threshold tuples; a subset's table row is the best policy *constructible
//! from that subset*, i.e. coincident thresholds may squeeze interior modes
//! out (the largest and smallest mode always keep a non-empty range). Policy
//! evaluations run in parallel but the reduction is an ordered fold, so
//! results are bit-identical to a sequential run.

use crate::error::{Error, Result};
use crate::generator::{build_generator, QueueModel};
use crate::measures::{self, PerformanceReport};
use crate::ph::PhaseType;
use crate::policy::{enumerate_policies, ThresholdPolicy};
use crate::solver::solve_general;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostCoefficients {
    pub c_loss: f64,
    pub c_obs: f64,
    pub a: f64,
    pub c_rob: f64,
    pub c_star: f64,
}

impl CostCoefficients {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_loss", self.c_loss),
            ("c_obs", self.c_obs),
            ("a", self.a),
            ("c_rob", self.c_rob),
            ("c_star", self.c_star),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::ModelFile(format!(
                    "cost coefficient {name} must be a non-negative real, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Cost of a completed report.
pub fn cost(report: &PerformanceReport, coeff: &CostCoefficients) -> Result<f64> {
    let v1 = report
        .v1_bar
        .ok_or_else(|| Error::IncompleteReport("mean response time undefined".into()))?;
    Ok(report.lambda * (coeff.c_loss * report.p_loss + coeff.c_obs * report.p_obs)
        + coeff.a * v1
        + coeff.c_rob * report.n_act
        + coeff.c_star * report.p_star)
}

/// Solve one policy end to end.
pub fn evaluate_policy(
    model: &QueueModel,
    policy: &ThresholdPolicy,
    coeff: &CostCoefficients,
) -> Result<(PerformanceReport, f64)> {
    let bg = build_generator(model, policy)?;
    let sol = solve_general(&bg)?;
    let report = measures::report(model, policy, &sol)?;
    let j = cost(&report, coeff)?;
    Ok((report, j))
}

#[derive(Debug, Clone)]
pub enum SubsetSpec {
    /// Every non-empty subset of `{1..N}`.
    All,
    /// An explicit list of mode subsets.
    Explicit(Vec<Vec<usize>>),
}

/// One row of the per-subset table.
#[derive(Debug, Clone)]
pub struct SubsetRow {
    /// Allowed modes, ascending (presentation order).
    pub subset: Vec<usize>,
    /// Best policy constructible from the subset (may use fewer modes).
    pub policy: ThresholdPolicy,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub best_policy: ThresholdPolicy,
    pub best_cost: f64,
    pub best_report: PerformanceReport,
    pub table: Vec<SubsetRow>,
    /// Every strict policy evaluated, with its cost (threshold → J curves).
    pub all_policies: Vec<(ThresholdPolicy, f64)>,
    /// `(1 − C*/min_r C_r)·100`, present when all single-mode rows were evaluated.
    pub relative_profit: Option<f64>,
    /// Subsets that could not be evaluated, with the reason.
    pub skipped: Vec<(Vec<usize>, String)>,
}

impl OptimizationResult {
    /// Fixed-mode costs `C_r` keyed by mode, from the singleton rows.
    pub fn fixed_costs(&self) -> BTreeMap<usize, f64> {
        self.table
            .iter()
            .filter(|row| row.subset.len() == 1)
            .map(|row| (row.subset[0], row.cost))
            .collect()
    }
}

/// Relative profit of control versus the best fixed mode, in percent.
pub fn relative_profit(best_cost: f64, fixed_costs: &[f64]) -> f64 {
    let min_fixed = fixed_costs.iter().cloned().fold(f64::INFINITY, f64::min);
    (1.0 - best_cost / min_fixed) * 100.0
}

fn canonical_subsets(spec: &SubsetSpec, n_modes: usize) -> Result<Vec<Vec<usize>>> {
    let mut subsets: Vec<Vec<usize>> = match spec {
        SubsetSpec::All => {
            let mut out = Vec::new();
            for mask in 1u32..(1 << n_modes) {
                let subset: Vec<usize> =
                    (1..=n_modes).filter(|m| mask & (1 << (m - 1)) != 0).collect();
                out.push(subset);
            }
            out
        }
        SubsetSpec::Explicit(list) => {
            let mut out = Vec::new();
            for s in list {
                let mut s: Vec<usize> = s.clone();
                s.sort_unstable();
                s.dedup();
                if s.is_empty() {
                    return Err(Error::InvalidPolicy("empty mode subset".into()));
                }
                if s.iter().any(|&m| m == 0 || m > n_modes) {
                    return Err(Error::InvalidPolicy(format!(
                        "subset {s:?} references a mode outside 1..={n_modes}"
                    )));
                }
                out.push(s);
            }
            out
        }
    };
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets.dedup();
    Ok(subsets)
}

/// Sub-subsets of `s` (ascending) that keep both endpoints.
fn closure_members(s: &[usize]) -> Vec<Vec<usize>> {
    let lo = s[0];
    let hi = s[s.len() - 1];
    let interior: Vec<usize> = if s.len() > 2 {
        s[1..s.len() - 1].to_vec()
    } else {
        Vec::new()
    };
    let mut out = Vec::new();
    for mask in 0u32..(1 << interior.len()) {
        let mut member = vec![lo];
        for (idx, &m) in interior.iter().enumerate() {
            if mask & (1 << idx) != 0 {
                member.push(m);
            }
        }
        if hi != lo {
            member.push(hi);
        }
        out.push(member);
    }
    out.sort();
    out.dedup();
    out
}

fn better(a: &(ThresholdPolicy, f64), b: &(ThresholdPolicy, f64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && a.0.canonical_cmp(&b.0) == std::cmp::Ordering::Less)
}

/// Exhaustively evaluate threshold policies over mode subsets.
pub fn optimize(
    model: &QueueModel,
    coeff: &CostCoefficients,
    subsets: &SubsetSpec,
) -> Result<OptimizationResult> {
    coeff.validate()?;
    let n = model.arrival().n_modes();
    let requested = canonical_subsets(subsets, n)?;
    if requested.is_empty() {
        return Err(Error::InvalidPolicy("no subsets to optimize over".into()));
    }

    // strict enumerations needed: the requested subsets plus their closures
    let mut needed: Vec<Vec<usize>> = Vec::new();
    for s in &requested {
        for member in closure_members(s) {
            needed.push(member);
        }
    }
    needed.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    needed.dedup();

    let mut strict_best: BTreeMap<Vec<usize>, (ThresholdPolicy, f64)> = BTreeMap::new();
    let mut all_policies = Vec::new();
    let mut skipped: Vec<(Vec<usize>, String)> = Vec::new();
    for subset in &needed {
        let policies = enumerate_policies(subset, model.capacity());
        if policies.is_empty() {
            skipped.push((
                subset.clone(),
                format!("no strict threshold tuples for {} modes with K={}", subset.len(), model.capacity()),
            ));
            continue;
        }
        let evals: Vec<(ThresholdPolicy, Result<f64>)> = policies
            .into_par_iter()
            .map(|p| {
                let j = evaluate_policy(model, &p, coeff).map(|(_, j)| j);
                (p, j)
            })
            .collect();
        let mut best: Option<(ThresholdPolicy, f64)> = None;
        let mut failure: Option<String> = None;
        for (p, j) in evals {
            match j {
                Ok(j) => {
                    all_policies.push((p.clone(), j));
                    let cand = (p, j);
                    if best.as_ref().is_none_or(|b| better(&cand, b)) {
                        best = Some(cand);
                    }
                }
                Err(e) => failure = Some(format!("{p}: {e}")),
            }
        }
        match (best, failure) {
            (Some(b), _) => {
                strict_best.insert(subset.clone(), b);
            }
            (None, Some(why)) => skipped.push((subset.clone(), why)),
            (None, None) => unreachable!("non-empty enumeration"),
        }
    }

    let mut table = Vec::new();
    for s in &requested {
        let mut best: Option<(ThresholdPolicy, f64)> = None;
        for member in closure_members(s) {
            if let Some(b) = strict_best.get(&member) {
                if best.as_ref().is_none_or(|cur| better(b, cur)) {
                    best = Some(b.clone());
                }
            }
        }
        match best {
            Some((policy, cost)) => table.push(SubsetRow {
                subset: s.clone(),
                policy,
                cost,
            }),
            None => {
                if !skipped.iter().any(|(sub, _)| sub == s) {
                    skipped.push((s.clone(), "no feasible policies".into()));
                }
            }
        }
    }
    if table.is_empty() {
        let reasons = skipped
            .iter()
            .map(|(s, why)| format!("{s:?}: {why}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::SolveFailed(format!("every subset was skipped ({reasons})")));
    }

    let mut best_row: Option<&SubsetRow> = None;
    for row in &table {
        let cand = (row.policy.clone(), row.cost);
        if best_row.is_none_or(|b| better(&cand, &(b.policy.clone(), b.cost))) {
            best_row = Some(row);
        }
    }
    let best_row = best_row.expect("non-empty table");
    let best_policy = best_row.policy.clone();
    let best_cost = best_row.cost;
    let (best_report, _) = evaluate_policy(model, &best_policy, coeff)?;

    let fixed: Vec<f64> = (1..=n)
        .filter_map(|m| {
            table
                .iter()
                .find(|row| row.subset.len() == 1 && row.subset[0] == m)
                .map(|row| row.cost)
        })
        .collect();
    let relative = if fixed.len() == n {
        Some(relative_profit(best_cost, &fixed))
    } else {
        None
    };

    Ok(OptimizationResult {
        best_policy,
        best_cost,
        best_report,
        table,
        all_policies,
        relative_profit: relative,
        skipped,
    })
}

/// One row of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// The swept value (K, scale factor, or rate α₁).
    pub param: f64,
    /// Derived statistic: mean service time, mean obsolescence time, or the
    /// varied distribution's variance, depending on the sweep.
    pub derived: f64,
    pub best_policy: ThresholdPolicy,
    pub best_cost: f64,
    /// Fixed-mode costs `C_r`, r = 1..N.
    pub fixed_costs: Vec<f64>,
    pub relative_profit: f64,
}

fn sweep_point(model: &QueueModel, coeff: &CostCoefficients, param: f64, derived: f64) -> Result<SweepRow> {
    let res = optimize(model, coeff, &SubsetSpec::All)?;
    let fixed = res.fixed_costs().values().cloned().collect::<Vec<f64>>();
    let profit = res
        .relative_profit
        .ok_or_else(|| Error::SolveFailed("missing fixed-mode rows in sweep".into()))?;
    Ok(SweepRow {
        param,
        derived,
        best_policy: res.best_policy,
        best_cost: res.best_cost,
        fixed_costs: fixed,
        relative_profit: profit,
    })
}

/// Vary the buffer capacity K.
pub fn sweep_capacity(
    model: &QueueModel,
    coeff: &CostCoefficients,
    capacities: &[usize],
) -> Result<Vec<SweepRow>> {
    capacities
        .iter()
        .map(|&k| {
            let m = model.with_capacity(k)?;
            sweep_point(&m, coeff, k as f64, m.service().mean())
        })
        .collect()
}

/// Scale the service sub-generator by each factor (mean scales inversely).
pub fn sweep_scale_service(
    model: &QueueModel,
    coeff: &CostCoefficients,
    scales: &[f64],
) -> Result<Vec<SweepRow>> {
    scales
        .iter()
        .map(|&s| {
            let m = model.with_service(model.service().scale(s)?)?;
            sweep_point(&m, coeff, s, m.service().mean())
        })
        .collect()
}

/// Scale the obsolescence sub-generator by each factor.
pub fn sweep_scale_obsolescence(
    model: &QueueModel,
    coeff: &CostCoefficients,
    scales: &[f64],
) -> Result<Vec<SweepRow>> {
    scales
        .iter()
        .map(|&s| {
            let m = model.with_obsolescence(model.obsolescence().scale(s)?)?;
            sweep_point(&m, coeff, s, m.obsolescence().mean())
        })
        .collect()
}

/// Replace a phase-type law by the two-rate hyper-exponential
/// `((0.9, 0.1), diag(-α₁, -α₂))` with `α₂` chosen to preserve `mean`.
pub fn hyperexp_preserving_mean(alpha1: f64, mean: f64) -> Result<PhaseType> {
    let denom = mean * alpha1 - 0.9;
    if denom <= 0.0 {
        return Err(Error::InvalidPhaseType(vec![format!(
            "alpha1 = {alpha1} too small: needs alpha1 > {}",
            0.9 / mean
        )]));
    }
    let alpha2 = 0.1 * alpha1 / denom;
    PhaseType::validate(
        vec![0.9, 0.1],
        crate::matrix::DenseMatrix::from_rows(&[vec![-alpha1, 0.0], vec![0.0, -alpha2]]),
    )
}

/// Vary the service-time variance at fixed mean via the hyper-exponential family.
pub fn sweep_service_variance(
    model: &QueueModel,
    coeff: &CostCoefficients,
    alpha1s: &[f64],
) -> Result<Vec<SweepRow>> {
    let mean = model.service().mean();
    alpha1s
        .iter()
        .map(|&a1| {
            let ph = hyperexp_preserving_mean(a1, mean)?;
            let derived = ph.variance();
            let m = model.with_service(ph)?;
            sweep_point(&m, coeff, a1, derived)
        })
        .collect()
}

/// Vary the obsolescence-time variance at fixed mean.
pub fn sweep_obsolescence_variance(
    model: &QueueModel,
    coeff: &CostCoefficients,
    alpha1s: &[f64],
) -> Result<Vec<SweepRow>> {
    let mean = model.obsolescence().mean();
    alpha1s
        .iter()
        .map(|&a1| {
            let ph = hyperexp_preserving_mean(a1, mean)?;
            let derived = ph.variance();
            let m = model.with_obsolescence(ph)?;
            sweep_point(&m, coeff, a1, derived)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing;

    #[test]
    fn zero_coefficients_give_zero_cost() {
        let model = testing::example1_model(3);
        let pol = ThresholdPolicy::single(2, 3);
        let zero = CostCoefficients {
            c_loss: 0.0,
            c_obs: 0.0,
            a: 0.0,
            c_rob: 0.0,
            c_star: 0.0,
        };
        let (_, j) = evaluate_policy(&model, &pol, &zero).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn cost_is_affine_in_each_coefficient() {
        let model = testing::example1_model(4);
        let pol = ThresholdPolicy::new(&[3, 1], &[1], 4).unwrap();
        let coeff = testing::example1_cost();
        let (report, j) = evaluate_policy(&model, &pol, &coeff).unwrap();
        let mut doubled = coeff;
        doubled.c_loss *= 2.0;
        let j2 = cost(&report, &doubled).unwrap();
        let diff = j2 - j;
        let expect = report.lambda * coeff.c_loss * report.p_loss;
        assert!((diff - expect).abs() < 1e-12);
    }

    #[test]
    fn fixed_mode_three_cost_matches_published_value() {
        let model = testing::example1_model(5);
        let (_, j) = evaluate_policy(
            &model,
            &ThresholdPolicy::single(3, 5),
            &testing::example1_cost(),
        )
        .unwrap();
        assert!((j - 89.40).abs() / 89.40 < 0.01, "C_3 = {j}");
    }

    #[test]
    fn example1_pair_optimum() {
        let model = testing::example1_model(5);
        let res = optimize(
            &model,
            &testing::example1_cost(),
            &SubsetSpec::Explicit(vec![vec![3, 1]]),
        )
        .unwrap();
        assert_eq!(res.table.len(), 1);
        let row = &res.table[0];
        assert_eq!(row.policy.thresholds(), &[2]);
        assert!((row.cost - 63.54).abs() / 63.54 < 0.02, "J = {}", row.cost);
        // degenerate single-subset optimization equals the fixed-mode cost
        let single = optimize(
            &model,
            &testing::example1_cost(),
            &SubsetSpec::Explicit(vec![vec![2]]),
        )
        .unwrap();
        let (_, c2) = evaluate_policy(
            &model,
            &ThresholdPolicy::single(2, 5),
            &testing::example1_cost(),
        )
        .unwrap();
        assert_eq!(single.table[0].cost, c2);
    }

    #[test]
    fn monotone_in_the_subset_list() {
        let model = testing::example1_model(4);
        let coeff = testing::example1_cost();
        let narrow = optimize(&model, &coeff, &SubsetSpec::Explicit(vec![vec![3, 1]])).unwrap();
        let wide = optimize(
            &model,
            &coeff,
            &SubsetSpec::Explicit(vec![vec![3, 1], vec![4, 1]]),
        )
        .unwrap();
        assert!(wide.best_cost <= narrow.best_cost);
    }

    #[test]
    fn optimize_is_deterministic() {
        let model = testing::example1_model(4);
        let coeff = testing::example1_cost();
        let a = optimize(&model, &coeff, &SubsetSpec::All).unwrap();
        let b = optimize(&model, &coeff, &SubsetSpec::All).unwrap();
        // and bit-identical on a single-threaded pool
        let c = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| optimize(&model, &coeff, &SubsetSpec::All).unwrap());
        for other in [&b, &c] {
            assert_eq!(a.best_policy, other.best_policy);
            assert_eq!(a.best_cost.to_bits(), other.best_cost.to_bits());
            for (ra, rb) in a.table.iter().zip(&other.table) {
                assert_eq!(ra.subset, rb.subset);
                assert_eq!(ra.policy, rb.policy);
                assert_eq!(ra.cost.to_bits(), rb.cost.to_bits());
            }
        }
    }

    #[test]
    fn relative_profit_examples() {
        let r = relative_profit(63.54, &[149.91, 110.0, 89.40, 130.31]);
        assert!((r - 28.9).abs() < 0.1, "r = {r}");
        let r = relative_profit(563.51, &[666.28, 657.07, 639.03, 621.25]);
        assert!((r - 9.29).abs() < 0.05, "r = {r}");
        assert_eq!(relative_profit(89.40, &[149.91, 110.0, 89.40, 130.31]), 0.0);
    }

    #[test]
    fn hyperexp_family_preserves_mean() {
        let ph = hyperexp_preserving_mean(1.521, 0.657).unwrap();
        assert!((ph.mean() - 0.657).abs() < 1e-12);
        assert!(hyperexp_preserving_mean(1.0, 0.657).is_err());
    }

    #[test]
    fn capacity_sweep_row_shape() {
        let model = testing::example1_model(5);
        let rows = sweep_capacity(&model, &testing::example1_cost(), &[2, 3]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].param, 2.0);
        assert_eq!(rows[0].fixed_costs.len(), 4);
        assert!(rows[1].best_cost < rows[0].best_cost);
    }
}
