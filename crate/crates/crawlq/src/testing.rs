//! Shared fixtures for the test suites: the two published example models and
//! a deterministic random-model generator.

use crate::arrivals::{BatchProcess, ModedArrival, ValidationMode, DEFAULT_REPAIR_CAP};
use crate::generator::QueueModel;
use crate::matrix::DenseMatrix;
use crate::optimizer::CostCoefficients;
use crate::ph::PhaseType;

/// The first numeric example's per-mode matrices exactly as published,
/// defects included (negative batch entries, a row-sum gap, a sign typo).
pub fn example1_raw() -> Vec<Vec<DenseMatrix>> {
    let m = |r: &[[f64; 2]; 2]| DenseMatrix::from_rows(&[r[0].to_vec(), r[1].to_vec()]);
    vec![
        vec![
            m(&[[-10.0, 2.0], [0.0, -0.5]]),
            m(&[[0.05, 3.0], [0.29, 0.005]]),
            m(&[[0.05, 4.9], [0.2, 0.005]]),
        ],
        vec![
            m(&[[-5.65, 1.1], [0.0, -0.85]]),
            m(&[[-0.01, 2.5], [0.25, 0.0]]),
            m(&[[-0.02, 0.5], [0.25, 0.0]]),
            m(&[[0.02, 1.5], [0.1, 0.25]]),
        ],
        vec![
            m(&[[-2.48, 0.48], [0.48, 3.48]]),
            m(&[[1.5, 0.0], [0.0, 2.25]]),
            m(&[[0.5, 0.0], [0.0, 0.75]]),
        ],
        vec![
            m(&[[-1.45, 0.45], [0.6, -2.6]]),
            m(&[[0.25, 0.0], [0.0, 0.5]]),
            m(&[[0.0, 0.0], [0.0, 0.0]]),
            m(&[[0.0, 0.0], [0.0, 0.0]]),
            m(&[[0.75, 0.0], [0.0, 1.5]]),
        ],
    ]
}

/// Example-1 model after the documented repairs, at the given capacity.
pub fn example1_model(capacity: usize) -> QueueModel {
    let modes: Vec<BatchProcess> = example1_raw()
        .into_iter()
        .map(|d| {
            BatchProcess::validate(d, ValidationMode::Repair, DEFAULT_REPAIR_CAP)
                .expect("repairable")
                .0
        })
        .collect();
    let arrival = ModedArrival::compose_direct(modes).unwrap();
    let service = PhaseType::validate(
        vec![0.4, 0.6],
        DenseMatrix::from_rows(&[vec![-3.0, 1.0], vec![2.0, -3.0]]),
    )
    .unwrap();
    let obsolescence = PhaseType::validate(
        vec![0.3, 0.7],
        DenseMatrix::from_rows(&[vec![-0.6, 0.4], vec![0.1, -0.3]]),
    )
    .unwrap();
    QueueModel::new(arrival, service, obsolescence, capacity).unwrap()
}

pub fn example1_cost() -> CostCoefficients {
    CostCoefficients {
        c_loss: 5.0,
        c_obs: 10.0,
        a: 2.0,
        c_rob: 20.0,
        c_star: 300.0,
    }
}

/// The trace-fitted model: MAP of batches with the no-arrival diagonal
/// balanced against the batch matrix's row sums, batch sizes 1..=8 with the
/// empirical size distribution, hyper-exponential service, exponential
/// obsolescence, K = 20, four proportional modes.
pub fn table5_model() -> QueueModel {
    let a = DenseMatrix::from_rows(&[vec![0.0037, 6.58e-5], vec![1.3e-4, 0.0064]]);
    let d0 = DenseMatrix::from_rows(&[vec![-(0.0037 + 6.58e-5), 0.0], vec![0.0, -(1.3e-4 + 0.0064)]]);
    let dk = [
        0.040445227,
        0.18404232,
        0.26405114,
        0.5057307,
        8.8163983e-4,
        7.7143486e-4,
        0.0018734847,
        0.00220405,
    ];
    let mut base = vec![d0];
    for d in dk {
        base.push(a.scale(d));
    }
    let modes: Vec<BatchProcess> = (1..=4)
        .map(|r| {
            let family: Vec<DenseMatrix> = base.iter().map(|m| m.scale(r as f64)).collect();
            BatchProcess::from_validated(family).unwrap()
        })
        .collect();
    let arrival = ModedArrival::compose_direct(modes).unwrap();
    let service = PhaseType::validate(
        vec![0.0057, 0.9943],
        DenseMatrix::from_rows(&[vec![-0.0014, 0.0], vec![0.0, -0.2409]]),
    )
    .unwrap();
    QueueModel::new(arrival, service, PhaseType::exponential(0.0005), 20).unwrap()
}

pub fn table5_cost() -> CostCoefficients {
    CostCoefficients {
        c_loss: 200.0,
        c_obs: 250.0,
        a: 3.0,
        c_rob: 20.0,
        c_star: 600.0,
    }
}

/// Deterministic random small model: W̄, M, R ≤ 2, K ≤ 5; `ordinary` restricts
/// batches to size 1. `next` supplies uniforms in [0, 1).
pub fn random_model(next: &mut impl FnMut() -> f64, ordinary: bool) -> QueueModel {
    let w = 1 + (next() * 2.0) as usize;
    let m = 1 + (next() * 2.0) as usize;
    let r = 1 + (next() * 2.0) as usize;
    let k = 2 + (next() * 4.0) as usize;
    let kmax = if ordinary { 1 } else { 1 + (next() * 3.0) as usize };
    let n_modes = 1 + (next() * 2.0) as usize;

    let mut modes = Vec::new();
    for l in 1..=n_modes {
        let scale = l as f64;
        let mut d: Vec<DenseMatrix> = Vec::new();
        d.push(DenseMatrix::zeros(w, w));
        for _ in 1..=kmax {
            d.push(DenseMatrix::from_fn(w, w, |_, _| scale * (0.1 + next())));
        }
        let mut d0 = DenseMatrix::from_fn(w, w, |i, j| if i == j { 0.0 } else { 0.2 + next() });
        for i in 0..w {
            let total: f64 =
                d0.row(i).iter().sum::<f64>() + d.iter().map(|mk| mk.row(i).iter().sum::<f64>()).sum::<f64>();
            d0.set(i, i, -total);
        }
        d[0] = d0;
        modes.push(BatchProcess::from_validated(d).unwrap());
    }
    let arrival = ModedArrival::compose_direct(modes).unwrap();

    let service = random_ph(next, m, 1.0);
    let obsolescence = random_ph(next, r, 0.4);
    QueueModel::new(arrival, service, obsolescence, k).unwrap()
}

pub fn random_ph(next: &mut impl FnMut() -> f64, dim: usize, rate_scale: f64) -> PhaseType {
    let mut init: Vec<f64> = (0..dim).map(|_| 0.1 + next()).collect();
    let total: f64 = init.iter().sum();
    for b in init.iter_mut() {
        *b /= total;
    }
    let mut sub = DenseMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            0.0
        } else {
            rate_scale * next()
        }
    });
    for i in 0..dim {
        let exit = rate_scale * (0.2 + next());
        let off: f64 = sub.row(i).iter().sum();
        sub.set(i, i, -(off + exit));
    }
    PhaseType::validate(init, sub).unwrap()
}

/// Deterministic uniform stream for reproducible randomized tests.
pub fn uniform_stream(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    }
}
