//! Stationary distribution of the level-structured chain.
//!
//! [`solve_general`] runs the five-step backward recursion (G matrices, folded
//! blocks, F matrices, boundary solve, propagation); it exploits the block
//! band structure and never forms the full generator. [`solve_qbd`] is the
//! specialization for ordinary (batch-free) arrivals where the generator is
//! block tridiagonal. Every "inverse" in the recursions is a factor-and-solve.

use crate::error::{Error, Result};
use crate::generator::BlockGenerator;
use crate::matrix::{max_abs_vec, solve_linear, solve_linear_right, solve_left_null_weighted, DenseMatrix};

/// Round-off clamp: stationary entries this far below zero are zeroed,
/// anything lower is a hard error.
pub const NEGATIVE_CLAMP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    General,
    Qbd,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    p: Vec<Vec<f64>>,
    residual: f64,
    method: SolveMethod,
}

impl StationarySolution {
    /// Per-level stationary row vectors `p_0..p_K`.
    pub fn levels(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.p[i]
    }

    /// Mass of level `i`.
    pub fn level_mass(&self, i: usize) -> f64 {
        self.p[i].iter().sum()
    }

    /// Mean queue length `Σ i · p_i e`.
    pub fn mean_queue_length(&self) -> f64 {
        self.p
            .iter()
            .enumerate()
            .map(|(i, pi)| i as f64 * pi.iter().sum::<f64>())
            .sum()
    }

    /// Max-norm of `p · Q`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }
}

/// General solver for banded level generators.
pub fn solve_general(bg: &BlockGenerator) -> Result<StationarySolution> {
    let k = bg.capacity();
    let dims = bg.level_dims().to_vec();
    let band = bg.upper_bandwidth();

    // Step 1: G_i, i = K-1 .. 0, with the running product G_{i+l}·…·G_{i+1}.
    let mut g: Vec<Option<DenseMatrix>> = vec![None; k];
    for i in (0..k).rev() {
        let mut a = bg
            .block(i + 1, i + 1)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(dims[i + 1], dims[i + 1]))
            .neg();
        let mut prod: Option<DenseMatrix> = None; // G_{i+l}…G_{i+1}
        for l in 1..=band.min(k - 1 - i) {
            let gl = g[i + l].as_ref().expect("computed in later iteration");
            prod = Some(match prod {
                None => gl.clone(),
                Some(p) => gl.matmul(&p),
            });
            if let Some(q) = bg.block(i + 1, i + 1 + l) {
                a = a.sub(&q.matmul(prod.as_ref().unwrap()));
            }
        }
        let rhs = bg
            .block(i + 1, i)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(dims[i + 1], dims[i]));
        g[i] = Some(solve_linear(&a, &rhs).map_err(|e| wrap_step(e, "G recursion", i))?);
    }

    // Step 2: folded blocks Q̄_{i,l} for 0 <= i <= l <= K.
    // Q̄_{i,K} = Q_{i,K}; Q̄_{i,l} = Q_{i,l} + Q̄_{i,l+1} G_l.
    let mut folded: Vec<Vec<DenseMatrix>> = vec![Vec::new(); k + 1];
    for l in (0..=k).rev() {
        let mut col = Vec::with_capacity(l + 1);
        for i in 0..=l {
            let base = bg
                .block(i, l)
                .cloned()
                .unwrap_or_else(|| DenseMatrix::zeros(dims[i], dims[l]));
            let q = if l == k {
                base
            } else {
                base.add(&folded[l + 1][i].matmul(g[l].as_ref().unwrap()))
            };
            col.push(q);
        }
        folded[l] = col;
    }

    // Step 3: F_l = Σ_{i<l} F_i Q̄_{i,l} (-Q̄_{l,l})^{-1}, F_0 = I.
    let mut f: Vec<DenseMatrix> = Vec::with_capacity(k + 1);
    f.push(DenseMatrix::identity(dims[0]));
    for l in 1..=k {
        let mut s = DenseMatrix::zeros(dims[0], dims[l]);
        for i in 0..l {
            s.add_assign(&f[i].matmul(&folded[l][i]));
        }
        let fl = solve_linear_right(&s, &folded[l][l].neg())
            .map_err(|e| wrap_step(e, "F recursion", l))?;
        f.push(fl);
    }

    // Step 4: boundary p_0 Q̄_{0,0} = 0 normalized by p_0 Σ_l F_l e = 1.
    let mut norm = vec![0.0; dims[0]];
    for fl in &f {
        let sums = fl.row_sums();
        for (n, s) in norm.iter_mut().zip(&sums) {
            *n += s;
        }
    }
    let p0 = solve_left_null_weighted(&folded[0][0], &norm)
        .map_err(|e| wrap_step(e, "boundary solve", 0))?;

    // Step 5: p_i = p_0 F_i.
    let p: Vec<Vec<f64>> = f.iter().map(|fi| fi.left_mul(&p0)).collect();
    finalize(bg, p, SolveMethod::General)
}

/// QBD solver for block-tridiagonal generators (ordinary arrivals).
pub fn solve_qbd(bg: &BlockGenerator) -> Result<StationarySolution> {
    let band = bg.upper_bandwidth();
    if band > 1 {
        return Err(Error::WrongSolver { offset: band });
    }
    let k = bg.capacity();
    let dims = bg.level_dims().to_vec();
    let block = |i: usize, j: usize| {
        bg.block(i, j)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(dims[i], dims[j]))
    };

    // G_{K-1} = -(Q_{K,K})^{-1} Q_{K,K-1}; backward for the rest.
    let mut g: Vec<Option<DenseMatrix>> = vec![None; k];
    for i in (0..k).rev() {
        let mut a = block(i + 1, i + 1);
        if i + 2 <= k {
            a = a.add(&block(i + 1, i + 2).matmul(g[i + 1].as_ref().unwrap()));
        }
        g[i] = Some(
            solve_linear(&a.neg(), &block(i + 1, i))
                .map_err(|e| wrap_step(e, "QBD G recursion", i))?,
        );
    }

    // F_i = F_{i-1} Q_{i-1,i} [-(Q_{i,i} + Q_{i,i+1} G_i)]^{-1}, F_0 = I.
    let mut f: Vec<DenseMatrix> = Vec::with_capacity(k + 1);
    f.push(DenseMatrix::identity(dims[0]));
    for i in 1..=k {
        let mut a = block(i, i);
        if i < k {
            a = a.add(&block(i, i + 1).matmul(g[i].as_ref().unwrap()));
        }
        let fi = solve_linear_right(&f[i - 1].matmul(&block(i - 1, i)), &a.neg())
            .map_err(|e| wrap_step(e, "QBD F recursion", i))?;
        f.push(fi);
    }

    let boundary = block(0, 0).add(&block(0, 1).matmul(g[0].as_ref().unwrap()));
    let mut norm = vec![0.0; dims[0]];
    for fl in &f {
        for (n, s) in norm.iter_mut().zip(fl.row_sums()) {
            *n += s;
        }
    }
    let p0 = solve_left_null_weighted(&boundary, &norm)
        .map_err(|e| wrap_step(e, "QBD boundary solve", 0))?;
    let p: Vec<Vec<f64>> = f.iter().map(|fi| fi.left_mul(&p0)).collect();
    finalize(bg, p, SolveMethod::Qbd)
}

/// Dense left-null-space oracle over the assembled generator.
pub fn solve_dense_oracle(bg: &BlockGenerator) -> Result<StationarySolution> {
    let q = crate::generator::assemble_dense(bg)?;
    let flat = crate::matrix::solve_left_null(&q)?;
    let mut p = Vec::with_capacity(bg.level_dims().len());
    let mut off = 0;
    for &d in bg.level_dims() {
        p.push(flat[off..off + d].to_vec());
        off += d;
    }
    finalize(bg, p, SolveMethod::General)
}

fn wrap_step(e: Error, step: &str, level: usize) -> Error {
    match e {
        Error::Singular { condition } => Error::SolveFailed(format!(
            "singular intermediate in {step} at level {level} (condition estimate {condition:.3e})"
        )),
        other => other,
    }
}

fn finalize(bg: &BlockGenerator, mut p: Vec<Vec<f64>>, method: SolveMethod) -> Result<StationarySolution> {
    for (i, pi) in p.iter_mut().enumerate() {
        for v in pi.iter_mut() {
            if *v < 0.0 {
                if *v < -NEGATIVE_CLAMP {
                    return Err(Error::SolveFailed(format!(
                        "stationary probability {v:.3e} at level {i} below the clamp threshold"
                    )));
                }
                *v = 0.0;
            }
        }
    }
    let total: f64 = p.iter().map(|pi| pi.iter().sum::<f64>()).sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::SolveFailed(format!("normalization mass {total}")));
    }
    for pi in p.iter_mut() {
        for v in pi.iter_mut() {
            *v /= total;
        }
    }
    let mut residual: f64 = 0.0;
    for j in 0..=bg.capacity() {
        residual = residual.max(max_abs_vec(&bg.residual_at(&p, j)));
    }
    if residual >= 1e-9 {
        return Err(Error::SolveFailed(format!("residual {residual:.3e} exceeds 1e-9")));
    }
    Ok(StationarySolution { p, residual, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_generator, QueueModel};
    use crate::policy::ThresholdPolicy;
    use crate::testing;

    fn mm12() -> (QueueModel, ThresholdPolicy) {
        use crate::arrivals::{BatchProcess, ModedArrival};
        use crate::ph::PhaseType;
        let model = QueueModel::new(
            ModedArrival::compose_direct(vec![BatchProcess::poisson(1.0)]).unwrap(),
            PhaseType::exponential(1.0),
            PhaseType::exponential(1.0),
            2,
        )
        .unwrap();
        let pol = ThresholdPolicy::single(1, 2);
        (model, pol)
    }

    #[test]
    fn mm12_closed_form_both_solvers() {
        let (model, pol) = mm12();
        let bg = build_generator(&model, &pol).unwrap();
        for sol in [solve_general(&bg).unwrap(), solve_qbd(&bg).unwrap()] {
            assert!((sol.level_mass(0) - 0.4).abs() < 1e-12);
            assert!((sol.level_mass(1) - 0.4).abs() < 1e-12);
            assert!((sol.level_mass(2) - 0.2).abs() < 1e-12);
            assert!(sol.residual() < 1e-12);
        }
    }

    #[test]
    fn general_matches_dense_oracle_on_example1() {
        let model = testing::example1_model(5);
        let pol = ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap();
        let bg = build_generator(&model, &pol).unwrap();
        let a = solve_general(&bg).unwrap();
        let b = solve_dense_oracle(&bg).unwrap();
        let mut max_diff: f64 = 0.0;
        for i in 0..=5 {
            for (x, y) in a.level(i).iter().zip(b.level(i)) {
                max_diff = max_diff.max((x - y).abs());
            }
        }
        assert!(max_diff < 1e-10, "max |Δp| = {max_diff}");
        assert!(a.residual() < 1e-10);
    }

    #[test]
    fn qbd_matches_general_on_ordinary_models() {
        let mut next = testing::uniform_stream(7);
        for trial in 0..10 {
            let model = testing::random_model(&mut next, true);
            let n = model.arrival().n_modes();
            let pol = if n > 1 {
                ThresholdPolicy::new(&[n, 1], &[0], model.capacity()).unwrap()
            } else {
                ThresholdPolicy::single(1, model.capacity())
            };
            let bg = build_generator(&model, &pol).unwrap();
            assert!(bg.is_tridiagonal(), "trial {trial} should be ordinary");
            let a = solve_general(&bg).unwrap();
            let b = solve_qbd(&bg).unwrap();
            for i in 0..=model.capacity() {
                for (x, y) in a.level(i).iter().zip(b.level(i)) {
                    assert!((x - y).abs() < 1e-10, "trial {trial} level {i}");
                }
            }
        }
    }

    #[test]
    fn qbd_rejects_batch_models() {
        let model = testing::example1_model(5);
        let bg = build_generator(&model, &ThresholdPolicy::single(4, 5)).unwrap();
        match solve_qbd(&bg) {
            Err(Error::WrongSolver { offset }) => assert!(offset >= 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_models_match_dense_oracle() {
        let mut next = testing::uniform_stream(1234);
        for trial in 0..12 {
            let model = testing::random_model(&mut next, false);
            let n = model.arrival().n_modes();
            let pol = if n > 1 {
                ThresholdPolicy::new(&[n, 1], &[model.capacity() - 1], model.capacity()).unwrap()
            } else {
                ThresholdPolicy::single(1, model.capacity())
            };
            let bg = build_generator(&model, &pol).unwrap();
            let a = solve_general(&bg).unwrap();
            let b = solve_dense_oracle(&bg).unwrap();
            for i in 0..=model.capacity() {
                for (x, y) in a.level(i).iter().zip(b.level(i)) {
                    assert!((x - y).abs() < 1e-10, "trial {trial} level {i}: {x} vs {y}");
                }
            }
            let total: f64 = (0..=model.capacity()).map(|i| a.level_mass(i)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
