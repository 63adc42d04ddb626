//! Scalar performance measures of the solved chain: starvation, robot
//! activity, effective arrival rate, loss, obsolescence and success
//! probabilities, assembled into a [`PerformanceReport`] together with the
//! sojourn means.
//!
//! The loss probability has two routes: the closed-form level sum and the
//! total-probability decomposition over (queue length, batch size, position).
//! Both are computed; if they ever disagree beyond 1e-10 the decomposition
//! wins and the report carries a warning.

use crate::error::{Error, Result};
use crate::generator::QueueModel;
use crate::matrix::kron_sum_power_col;
use crate::policy::ThresholdPolicy;
use crate::sojourn;
use crate::solver::StationarySolution;

/// All scalar measures plus the sojourn means.
#[derive(Debug, Clone)]
pub struct PerformanceReport {
    /// Probability of an empty system (idle indexing engine).
    pub p_star: f64,
    /// Per-mode activity probabilities, index `n-1` for mode `n`.
    pub phi: Vec<f64>,
    /// Mean number of active robots.
    pub n_act: f64,
    /// Effective fundamental rate (pages per unit time).
    pub lambda: f64,
    pub p_loss: f64,
    pub p_obs: f64,
    pub p_success: f64,
    /// Mean sojourn of an arbitrary page (lost pages count as zero).
    pub v_bar: f64,
    /// Mean response time of successfully served pages.
    pub v1_bar: Option<f64>,
    /// Mean time to obsolescence of pages that obsolesce.
    pub v2_bar: Option<f64>,
    pub warnings: Vec<String>,
}

/// `p_i · ((A e) ⊗ e_m)` over the level layout (modulating, rest).
fn arrival_contraction(p_i: &[f64], rate_per_state: &[f64]) -> f64 {
    let w = rate_per_state.len();
    let m = p_i.len() / w;
    let mut total = 0.0;
    for (x, &r) in rate_per_state.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let chunk: f64 = p_i[x * m..(x + 1) * m].iter().sum();
        total += r * chunk;
    }
    total
}

/// Starvation probability `p_0 · e`.
pub fn starvation(sol: &StationarySolution) -> f64 {
    sol.level_mass(0)
}

/// Per-mode activity probabilities and the mean active-robot count.
pub fn active_robots(
    sol: &StationarySolution,
    model: &QueueModel,
    pol: &ThresholdPolicy,
) -> (Vec<f64>, f64) {
    let n = model.arrival().n_modes();
    let mut phi = vec![0.0; n];
    for i in 0..=model.capacity() {
        phi[pol.active_mode(i) - 1] += sol.level_mass(i);
    }
    let n_act = phi.iter().enumerate().map(|(idx, p)| (idx + 1) as f64 * p).sum();
    (phi, n_act)
}

/// Effective arrival rate `Σ_i p_i (Σ_k k 𝒟_k^{(χ(i))} ⊗ I) e`.
pub fn effective_rate(sol: &StationarySolution, model: &QueueModel, pol: &ThresholdPolicy) -> f64 {
    let w = model.arrival().dim();
    let ones = vec![1.0; w];
    (0..=model.capacity())
        .map(|i| {
            let rates = model.arrival().mode(pol.active_mode(i)).rate_matrix().right_mul(&ones);
            arrival_contraction(sol.level(i), &rates)
        })
        .sum()
}

/// Loss probability by the closed-form level sum.
pub fn loss_probability_formula(
    sol: &StationarySolution,
    model: &QueueModel,
    pol: &ThresholdPolicy,
    lambda: f64,
) -> f64 {
    let k_cap = model.capacity();
    let w = model.arrival().dim();
    let ones = vec![1.0; w];
    let mut accepted = 0.0;
    for i in 0..=k_cap {
        let mode = model.arrival().mode(pol.active_mode(i));
        let mut inner = vec![0.0; w];
        for k in 0..=(k_cap - i).min(mode.kmax()) {
            let coef = k as f64 - (k_cap - i) as f64;
            if coef == 0.0 {
                continue;
            }
            for (t, v) in inner.iter_mut().zip(mode.mat(k).right_mul(&ones)) {
                *t += coef * v;
            }
        }
        accepted += arrival_contraction(sol.level(i), &inner);
    }
    1.0 - accepted / lambda
}

/// Loss probability by the total-probability decomposition: mixes the batch
/// size distribution seen by an arbitrary page with the per-position
/// admission fraction `Φ = min(1, (K-i)/k)`. Independent of the closed form.
pub fn loss_probability_decomposition(
    sol: &StationarySolution,
    model: &QueueModel,
    pol: &ThresholdPolicy,
) -> f64 {
    let k_cap = model.capacity();
    let w = model.arrival().dim();
    let ones = vec![1.0; w];
    let kmax = (1..=model.arrival().n_modes())
        .map(|l| model.arrival().mode(l).kmax())
        .max()
        .unwrap();

    // per-level arrival weights p_i (D_k ⊗ I) e
    let weight = |i: usize, k: usize| -> f64 {
        let mode = model.arrival().mode(pol.active_mode(i));
        arrival_contraction(sol.level(i), &mode.mat(k).right_mul(&ones))
    };

    // the denominator of the batch-size mixing distribution, recomputed
    let mut lambda_dec = 0.0;
    for i in 0..=k_cap {
        for l in 1..=kmax {
            lambda_dec += l as f64 * weight(i, l);
        }
    }

    let mut admitted = 0.0;
    for k in 1..=kmax {
        let a_k: f64 = (0..=k_cap).map(|i| weight(i, k)).sum();
        if a_k <= f64::MIN_POSITIVE {
            continue;
        }
        let p_k = k as f64 * a_k / lambda_dec;
        for i in 0..=k_cap {
            let p_ik = weight(i, k) / a_k;
            let phi = if k <= k_cap - i {
                1.0
            } else {
                (k_cap - i) as f64 / k as f64
            };
            admitted += p_ik * p_k * phi;
        }
    }
    1.0 - admitted
}

/// Obsolescence and success probabilities (rate ratios).
pub fn obsolescence_and_success(
    sol: &StationarySolution,
    model: &QueueModel,
    lambda: f64,
) -> (f64, f64) {
    let k_cap = model.capacity();
    let w = model.arrival().dim();
    let m = model.service().dim();
    let r = model.obsolescence().dim();

    let mut obs_rate = 0.0;
    for i in 2..=k_cap {
        let clocks = i - 1;
        let exit = kron_sum_power_col(&model.obsolescence().exit_col(), clocks);
        let g = exit.right_mul(&vec![1.0; r.pow((clocks - 1) as u32)]);
        let p_i = sol.level(i);
        let tail = g.len();
        let mut total = 0.0;
        for head in 0..(w * m) {
            let seg = &p_i[head * tail..(head + 1) * tail];
            total += seg.iter().zip(&g).map(|(p, gg)| p * gg).sum::<f64>();
        }
        obs_rate += total;
    }

    let mut success_rate = 0.0;
    for i in 1..=k_cap {
        let p_i = sol.level(i);
        let s0 = model.service().exit();
        let tail = r.pow((i - 1) as u32);
        let mut total = 0.0;
        for x in 0..w {
            for (j, &s) in s0.iter().enumerate() {
                let seg = &p_i[(x * m + j) * tail..(x * m + j + 1) * tail];
                total += s * seg.iter().sum::<f64>();
            }
        }
        success_rate += total;
    }
    (obs_rate / lambda, success_rate / lambda)
}

/// Full report for a solved model, sojourn means included.
pub fn report(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
) -> Result<PerformanceReport> {
    let mut warnings = Vec::new();
    let p_star = starvation(sol);
    let (phi, n_act) = active_robots(sol, model, pol);
    let lambda = effective_rate(sol, model, pol);
    if !(lambda > 0.0) {
        return Err(Error::Undefined("effective arrival rate is zero".into()));
    }
    let loss_formula = loss_probability_formula(sol, model, pol, lambda);
    let loss_decomp = loss_probability_decomposition(sol, model, pol);
    let p_loss = if (loss_formula - loss_decomp).abs() > 1e-10 {
        warnings.push(format!(
            "loss formula ({loss_formula:.12e}) and decomposition ({loss_decomp:.12e}) disagree; using the decomposition"
        ));
        loss_decomp
    } else {
        loss_formula
    };
    let (p_obs, p_success) = obsolescence_and_success(sol, model, lambda);

    let means = sojourn::mean_sojourns(model, pol, sol, lambda, p_success, p_obs)?;
    Ok(PerformanceReport {
        p_star,
        phi,
        n_act,
        lambda,
        p_loss,
        p_obs,
        p_success,
        v_bar: means.v_bar,
        v1_bar: means.v1_bar,
        v2_bar: means.v2_bar,
        warnings,
    })
}
