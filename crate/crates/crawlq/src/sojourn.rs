//! Sojourn-time transforms and means for the tagged page.
//!
//! The conditional vectors `v^{(1)}_i(u)` / `v^{(2)}_i(u)` give the
//! probability that a Poisson(u) catastrophe misses the remaining sojourn of
//! a page with `i` pages ahead of it, split by outcome (served vs obsolesced).
//!
//! Dimension convention, enforced by shape assertions on every recursion
//! step: `v_i` lives on service phase × (i-1 ahead-in-buffer clocks) × the
//! tagged page's own clock, so `dim v_i = M · R^i`. The tagged page's clock is
//! always the trailing factor; it is dropped the moment the page enters
//! service (the `i = 1` departure block is `S₀β ⊗ e_R`).

use crate::error::{Error, Result};
use crate::generator::{departure_block, local_subgen, QueueModel};
use crate::matrix::{kron_product, kron_vec_power, solve_linear, DenseMatrix};
use crate::policy::ThresholdPolicy;
use crate::solver::StationarySolution;

/// Conditioning probabilities below this are reported as undefined.
pub const CONDITIONING_FLOOR: f64 = 1e-14;

/// The conditional LST vectors at one transform argument.
#[derive(Debug, Clone)]
pub struct LstVectors {
    pub u: f64,
    /// `v^{(1)}_i(u)`, i = 0..K-1, dimension M·R^i.
    pub v1: Vec<Vec<f64>>,
    /// `v^{(2)}_i(u)`, same shapes.
    pub v2: Vec<Vec<f64>>,
}

/// Transform values at one argument.
#[derive(Debug, Clone, Copy)]
pub struct LstPoint {
    pub u: f64,
    /// Unconditional transform (lost pages contribute their point mass at 0).
    pub v: f64,
    pub v1: Option<f64>,
    pub v2: Option<f64>,
}

/// Mean sojourn times.
#[derive(Debug, Clone, Copy)]
pub struct SojournMeans {
    pub v_bar: f64,
    pub v1_bar: Option<f64>,
    pub v2_bar: Option<f64>,
}

/// Departure-ahead operator for a tagged page with `i` pages ahead,
/// mapping `M R^i → M R^{i-1}`.
fn tagged_departure(model: &QueueModel, i: usize) -> DenseMatrix {
    let r = model.obsolescence().dim();
    assert!(i >= 1);
    if i == 1 {
        // the page ahead is in service; on completion the tagged page enters
        // service and its own clock is discarded
        let s0_beta = model
            .service()
            .exit_col()
            .matmul(&model.service().init_row());
        kron_product(&s0_beta, &DenseMatrix::ones_col(r))
    } else {
        kron_product(&departure_block(model, i - 1), &DenseMatrix::identity(r))
    }
}

/// Own-clock absorption column `(I_{M R^{i-1}} ⊗ Γ₀) e`, dimension `M R^i`.
fn own_absorption(model: &QueueModel, i: usize) -> Vec<f64> {
    let m = model.service().dim();
    let r = model.obsolescence().dim();
    let head = m * r.pow((i - 1) as u32);
    let exit = model.obsolescence().exit();
    let mut out = Vec::with_capacity(head * r);
    for _ in 0..head {
        out.extend_from_slice(exit);
    }
    out
}

/// Compute the `v^{(m)}_i(u)` recursions for i = 0..K-1.
pub fn lst_vectors(model: &QueueModel, u: f64) -> Result<LstVectors> {
    assert!(u >= 0.0, "transform argument must be non-negative");
    let k_cap = model.capacity();
    let m = model.service().dim();
    let r = model.obsolescence().dim();

    let mut v1: Vec<Vec<f64>> = Vec::with_capacity(k_cap);
    let mut v2: Vec<Vec<f64>> = Vec::with_capacity(k_cap);
    // i = 0: the tagged page is in service
    let u_minus_s = DenseMatrix::identity(m).scale(u).sub(model.service().subgen());
    v1.push(
        solve_linear(&u_minus_s, &model.service().exit_col())?
            .data()
            .to_vec(),
    );
    v2.push(vec![0.0; m]);

    for i in 1..k_cap {
        let dim = m * r.pow(i as u32);
        let a = local_subgen(model, i);
        assert_eq!(a.rows(), dim, "local sub-generator shape at i={i}");
        let shifted = DenseMatrix::identity(dim).scale(u).sub(&a);
        let bhat = tagged_departure(model, i);
        assert_eq!((bhat.rows(), bhat.cols()), (dim, v1[i - 1].len()));
        let mut rhs = DenseMatrix::zeros(dim, 2);
        let r1 = bhat.right_mul(&v1[i - 1]);
        let c = own_absorption(model, i);
        let r2: Vec<f64> = bhat
            .right_mul(&v2[i - 1])
            .iter()
            .zip(&c)
            .map(|(a, b)| a + b)
            .collect();
        for j in 0..dim {
            rhs.set(j, 0, r1[j]);
            rhs.set(j, 1, r2[j]);
        }
        let sol = solve_linear(&shifted, &rhs)?;
        v1.push((0..dim).map(|j| sol.get(j, 0)).collect());
        v2.push((0..dim).map(|j| sol.get(j, 1)).collect());
    }
    Ok(LstVectors { u, v1, v2 })
}

/// Mean vectors `w^{(m)}_i = -d v^{(m)}_i / du` at `u = 0`, obtained by
/// differentiating the transform recursions (algebraically identical to the
/// expanded corollary formulas, cross-checked against finite differences).
fn mean_vectors(model: &QueueModel) -> Result<(LstVectors, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let at_zero = lst_vectors(model, 0.0)?;
    let k_cap = model.capacity();
    let m = model.service().dim();
    let r = model.obsolescence().dim();

    let mut w1: Vec<Vec<f64>> = Vec::with_capacity(k_cap);
    let mut w2: Vec<Vec<f64>> = Vec::with_capacity(k_cap);
    w1.push(
        solve_linear(&model.service().subgen().neg(), &DenseMatrix::ones_col(m))?
            .data()
            .to_vec(),
    );
    w2.push(vec![0.0; m]);

    for i in 1..k_cap {
        let dim = m * r.pow(i as u32);
        let neg_a = local_subgen(model, i).neg();
        let bhat = tagged_departure(model, i);
        let mut rhs = DenseMatrix::zeros(dim, 2);
        let r1: Vec<f64> = bhat
            .right_mul(&w1[i - 1])
            .iter()
            .zip(&at_zero.v1[i])
            .map(|(a, b)| a + b)
            .collect();
        let r2: Vec<f64> = bhat
            .right_mul(&w2[i - 1])
            .iter()
            .zip(&at_zero.v2[i])
            .map(|(a, b)| a + b)
            .collect();
        for j in 0..dim {
            rhs.set(j, 0, r1[j]);
            rhs.set(j, 1, r2[j]);
        }
        let sol = solve_linear(&neg_a, &rhs)?;
        w1.push((0..dim).map(|j| sol.get(j, 0)).collect());
        w2.push((0..dim).map(|j| sol.get(j, 1)).collect());
    }
    Ok((at_zero, w1, w2))
}

/// `y[h] = Σ_g tail[g] · v[h·T + g]` — contraction of the trailing factor.
fn contract_tail(v: &[f64], head: usize, tail: &[f64]) -> Vec<f64> {
    let t = tail.len();
    assert_eq!(v.len(), head * t, "contraction shape mismatch");
    (0..head)
        .map(|h| v[h * t..(h + 1) * t].iter().zip(tail).map(|(a, b)| a * b).sum())
        .collect()
}

/// Mix conditional vectors over the arrival position distribution:
/// `Σ_{i<K} Σ_k p_{i,k} Σ_{l≤min(k,K-i)} (1/k) 𝒞_{i,l} vec_{i+l-1}`,
/// returning the totals for the two outcome families.
fn aggregate(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
    lambda: f64,
    vecs1: &[Vec<f64>],
    vecs2: &[Vec<f64>],
) -> (f64, f64) {
    let k_cap = model.capacity();
    let w = model.arrival().dim();
    let m = model.service().dim();
    let r = model.obsolescence().dim();
    let beta = model.service().init();
    let gamma = model.obsolescence().init();
    let ones_w = vec![1.0; w];

    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for i in 0..k_cap {
        let mode = model.arrival().mode(pol.active_mode(i));
        let head = if i == 0 { 1 } else { m * r.pow((i - 1) as u32) };
        let p_i = sol.level(i);
        for k in 1..=mode.kmax() {
            let de = mode.mat(k).right_mul(&ones_w);
            if de.iter().all(|&x| x == 0.0) {
                continue;
            }
            // p_{i,k} = (k/λ) p_i (𝒟_k e ⊗ I_head)
            let mut q = vec![0.0; head];
            for (x, &dx) in de.iter().enumerate() {
                if dx == 0.0 {
                    continue;
                }
                for j in 0..head {
                    q[j] += dx * p_i[x * head + j];
                }
            }
            let scale = k as f64 / lambda;
            for l in 1..=k.min(k_cap - i) {
                let weight = scale / k as f64;
                let (s1, s2) = if i == 0 {
                    // 𝒞_{0,l} = β ⊗ γ^{⊗(l-1)}: full contraction to a scalar
                    let mix = {
                        let tail = kron_vec_power(gamma, l - 1);
                        let mut out = Vec::with_capacity(m * tail.len());
                        for &b in beta {
                            for &g in &tail {
                                out.push(b * g);
                            }
                        }
                        out
                    };
                    let a: f64 = mix.iter().zip(&vecs1[l - 1]).map(|(a, b)| a * b).sum();
                    let b: f64 = mix.iter().zip(&vecs2[l - 1]).map(|(a, b)| a * b).sum();
                    (q[0] * a, q[0] * b)
                } else {
                    // 𝒞_{i,l} = I_head ⊗ γ^{⊗l}
                    let tail = kron_vec_power(gamma, l);
                    let y1 = contract_tail(&vecs1[i + l - 1], head, &tail);
                    let y2 = contract_tail(&vecs2[i + l - 1], head, &tail);
                    (
                        q.iter().zip(&y1).map(|(a, b)| a * b).sum(),
                        q.iter().zip(&y2).map(|(a, b)| a * b).sum(),
                    )
                };
                t1 += weight * s1;
                t2 += weight * s2;
            }
        }
    }
    (t1, t2)
}

/// Transform values at one argument.
pub fn transforms_at(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
    lambda: f64,
    p_success: f64,
    p_obs: f64,
    p_loss: f64,
    u: f64,
) -> Result<LstPoint> {
    let vecs = lst_vectors(model, u)?;
    let (t1, t2) = aggregate(model, pol, sol, lambda, &vecs.v1, &vecs.v2);
    Ok(LstPoint {
        u,
        v: t1 + t2 + p_loss,
        v1: conditioned(t1, p_success),
        v2: conditioned(t2, p_obs),
    })
}

/// Mean sojourn times via the mean-vector recursions.
pub fn mean_sojourns(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
    lambda: f64,
    p_success: f64,
    p_obs: f64,
) -> Result<SojournMeans> {
    let (_, w1, w2) = mean_vectors(model)?;
    let (t1, t2) = aggregate(model, pol, sol, lambda, &w1, &w2);
    Ok(SojournMeans {
        v_bar: t1 + t2,
        v1_bar: conditioned(t1, p_success),
        v2_bar: conditioned(t2, p_obs),
    })
}

fn conditioned(total: f64, prob: f64) -> Option<f64> {
    if prob < CONDITIONING_FLOOR {
        None
    } else {
        Some(total / prob)
    }
}

/// Ordinary-arrival (batch-free) transform formulas, written as displayed for
/// the tridiagonal case; used to cross-check the general path.
pub fn ordinary_transforms_at(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
    p_success: f64,
    p_obs: f64,
    u: f64,
) -> Result<LstPoint> {
    ordinary_mix(model, pol, sol, p_success, p_obs, OrdinaryVectors::Lst(u))
}

/// Ordinary-arrival mean formulas.
pub fn ordinary_means(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
    p_success: f64,
    p_obs: f64,
) -> Result<SojournMeans> {
    let point = ordinary_mix(model, pol, sol, p_success, p_obs, OrdinaryVectors::Means)?;
    Ok(SojournMeans {
        v_bar: point.v,
        v1_bar: point.v1,
        v2_bar: point.v2,
    })
}

enum OrdinaryVectors {
    Lst(f64),
    Means,
}

fn ordinary_mix(
    model: &QueueModel,
    pol: &ThresholdPolicy,
    sol: &StationarySolution,
    p_success: f64,
    p_obs: f64,
    which: OrdinaryVectors,
) -> Result<LstPoint> {
    if model.arrival().kmax() > 1 {
        return Err(Error::WrongSolver {
            offset: model.arrival().kmax(),
        });
    }
    let (vec1, vec2, u) = match which {
        OrdinaryVectors::Lst(u) => {
            let v = lst_vectors(model, u)?;
            (v.v1, v.v2, u)
        }
        OrdinaryVectors::Means => {
            let (_, w1, w2) = mean_vectors(model)?;
            (w1, w2, 0.0)
        }
    };
    let k_cap = model.capacity();
    let w = model.arrival().dim();
    let m = model.service().dim();
    let r = model.obsolescence().dim();
    let beta = model.service().init();
    let gamma = model.obsolescence().init();
    let ones_w = vec![1.0; w];

    // λ = Σ_i p_i (𝒟_1^{(χ(i))} ⊗ I) e
    let mut lambda = 0.0;
    for i in 0..=k_cap {
        let de = model.arrival().mode(pol.active_mode(i)).mat(1).right_mul(&ones_w);
        let head = if i == 0 { 1 } else { m * r.pow((i - 1) as u32) };
        let p_i = sol.level(i);
        for (x, &dx) in de.iter().enumerate() {
            lambda += dx * p_i[x * head..(x + 1) * head].iter().sum::<f64>();
        }
    }

    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for i in 0..k_cap {
        let de = model.arrival().mode(pol.active_mode(i)).mat(1).right_mul(&ones_w);
        let head = if i == 0 { 1 } else { m * r.pow((i - 1) as u32) };
        let p_i = sol.level(i);
        let mut q = vec![0.0; head];
        for (x, &dx) in de.iter().enumerate() {
            for j in 0..head {
                q[j] += dx * p_i[x * head + j];
            }
        }
        if i == 0 {
            let s1: f64 = beta.iter().zip(&vec1[0]).map(|(a, b)| a * b).sum();
            let s2: f64 = beta.iter().zip(&vec2[0]).map(|(a, b)| a * b).sum();
            t1 += q[0] * s1;
            t2 += q[0] * s2;
        } else {
            let y1 = contract_tail(&vec1[i], head, gamma);
            let y2 = contract_tail(&vec2[i], head, gamma);
            t1 += q.iter().zip(&y1).map(|(a, b)| a * b).sum::<f64>();
            t2 += q.iter().zip(&y2).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let v1 = if p_success < CONDITIONING_FLOOR {
        None
    } else {
        Some(t1 / (lambda * p_success))
    };
    let v2 = if p_obs < CONDITIONING_FLOOR {
        None
    } else {
        Some(t2 / (lambda * p_obs))
    };
    Ok(LstPoint {
        u,
        v: (t1 + t2) / lambda,
        v1,
        v2,
    })
}
