//! Level-structured generator of the queue-length chain.
//!
//! The chain tracks (queue length i, modulating state, service phase,
//! obsolescence clock of each buffered page). Level `i` has dimension
//! `W̄ · M^{a_i} · R^{b_i}` with `a_i = min(i,1)`, `b_i = max(i-1, 0)`:
//! the page in service carries no obsolescence clock, each of the `i-1`
//! buffered pages carries one, ordered by arrival with newest last.
//!
//! Non-zero blocks sit on the first subdiagonal (service completion or an
//! obsolescence) and a band of superdiagonals up to the largest batch size;
//! batches overflowing the buffer are folded into the last admissible block
//! (partial admission).

use crate::arrivals::ModedArrival;
use crate::error::{Error, Result};
use crate::matrix::{
    kron_product, kron_sum, kron_sum_power_col, kron_sum_power_sq, kron_vec_power, DenseMatrix,
};
use crate::ph::PhaseType;
use crate::policy::ThresholdPolicy;
use std::collections::BTreeMap;

/// Default cap on the total number of states for dense work.
pub const DEFAULT_STATE_CAP: usize = 20_000;

/// Complete model of the controlled queue.
#[derive(Debug, Clone)]
pub struct QueueModel {
    arrival: ModedArrival,
    service: PhaseType,
    obsolescence: PhaseType,
    capacity: usize,
}

impl QueueModel {
    pub fn new(
        arrival: ModedArrival,
        service: PhaseType,
        obsolescence: PhaseType,
        capacity: usize,
    ) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Dimension("capacity K must be at least 1".into()));
        }
        Ok(QueueModel {
            arrival,
            service,
            obsolescence,
            capacity,
        })
    }

    pub fn arrival(&self) -> &ModedArrival {
        &self.arrival
    }

    pub fn service(&self) -> &PhaseType {
        &self.service
    }

    pub fn obsolescence(&self) -> &PhaseType {
        &self.obsolescence
    }

    /// Total capacity K (buffer K-1 plus the server).
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn with_capacity(&self, capacity: usize) -> Result<Self> {
        QueueModel::new(self.arrival.clone(), self.service.clone(), self.obsolescence.clone(), capacity)
    }

    pub fn with_service(&self, service: PhaseType) -> Result<Self> {
        QueueModel::new(self.arrival.clone(), service, self.obsolescence.clone(), self.capacity)
    }

    pub fn with_obsolescence(&self, obsolescence: PhaseType) -> Result<Self> {
        QueueModel::new(self.arrival.clone(), self.service.clone(), obsolescence, self.capacity)
    }

    /// Dimension of level `i`.
    pub fn level_dim(&self, i: usize) -> Result<usize> {
        let w = self.arrival.dim();
        let m = self.service.dim();
        let r = self.obsolescence.dim();
        if i == 0 {
            return Ok(w);
        }
        let mut d = w.checked_mul(m);
        for _ in 1..i {
            d = d.and_then(|x| x.checked_mul(r));
        }
        d.ok_or(Error::StateSpaceCap {
            states: usize::MAX,
            cap: DEFAULT_STATE_CAP,
            k: self.capacity,
            r,
        })
    }

    pub fn level_dims(&self) -> Result<Vec<usize>> {
        (0..=self.capacity).map(|i| self.level_dim(i)).collect()
    }

    pub fn total_states(&self) -> Result<usize> {
        let mut total = 0usize;
        for d in self.level_dims()? {
            total = total.checked_add(d).ok_or(Error::StateSpaceCap {
                states: usize::MAX,
                cap: DEFAULT_STATE_CAP,
                k: self.capacity,
                r: self.obsolescence.dim(),
            })?;
        }
        Ok(total)
    }
}

/// The generator as a map of non-zero blocks.
#[derive(Debug, Clone)]
pub struct BlockGenerator {
    capacity: usize,
    level_dims: Vec<usize>,
    blocks: BTreeMap<(usize, usize), DenseMatrix>,
}

impl BlockGenerator {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn level_dims(&self) -> &[usize] {
        &self.level_dims
    }

    pub fn total_states(&self) -> usize {
        self.level_dims.iter().sum()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&DenseMatrix> {
        self.blocks.get(&(i, j))
    }

    pub fn blocks(&self) -> &BTreeMap<(usize, usize), DenseMatrix> {
        &self.blocks
    }

    /// Largest superdiagonal offset with a stored block.
    pub fn upper_bandwidth(&self) -> usize {
        self.blocks
            .keys()
            .filter(|(i, j)| j > i)
            .map(|(i, j)| j - i)
            .max()
            .unwrap_or(0)
    }

    pub fn is_tridiagonal(&self) -> bool {
        self.upper_bandwidth() <= 1
    }

    /// Row vector of a level times the block column: `Σ_i p_i Q_{i,j}`.
    pub fn residual_at(&self, p: &[Vec<f64>], j: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.level_dims[j]];
        for i in 0..=self.capacity {
            if let Some(b) = self.block(i, j) {
                let contrib = b.left_mul(&p[i]);
                for (a, c) in acc.iter_mut().zip(&contrib) {
                    *a += c;
                }
            }
        }
        acc
    }
}

/// Batches of size `from` and beyond, `Σ_{r ≥ from} D_r` — the mass folded
/// into the last admissible block under partial admission.
fn batch_tail_sum(bp: &crate::arrivals::BatchProcess, from: usize) -> DenseMatrix {
    let w = bp.dim();
    let mut out = DenseMatrix::zeros(w, w);
    for r in from..=bp.kmax() {
        out.add_assign(&bp.mat(r));
    }
    out
}

/// Service-departure block `ℬ_i` mapping `M R^i → M R^{i-1}`:
/// the served page leaves and the oldest buffered page enters service with a
/// fresh phase (its clock is discarded), or one of the `i` clocks absorbs.
pub(crate) fn departure_block(model: &QueueModel, i: usize) -> DenseMatrix {
    let m = model.service.dim();
    let r = model.obsolescence.dim();
    assert!(i >= 1);
    let s0_beta = model.service.exit_col().matmul(&model.service.init_row());
    let first = kron_product(
        &kron_product(&s0_beta, &DenseMatrix::ones_col(r)),
        &DenseMatrix::identity(r.pow((i - 1) as u32)),
    );
    let second = kron_product(
        &DenseMatrix::identity(m),
        &kron_sum_power_col(&model.obsolescence.exit_col(), i),
    );
    first.add(&second)
}

/// Local sub-generator `𝒜_i = S ⊕ Γ^{⊕i}` (service phase plus `i` clocks).
pub(crate) fn local_subgen(model: &QueueModel, i: usize) -> DenseMatrix {
    if i == 0 {
        return model.service.subgen().clone();
    }
    kron_sum(
        model.service.subgen(),
        &kron_sum_power_sq(model.obsolescence.subgen(), i).expect("square"),
    )
    .expect("square inputs")
}

/// Assemble the block generator for a model under a policy.
pub fn build_generator(model: &QueueModel, policy: &ThresholdPolicy) -> Result<BlockGenerator> {
    build_generator_capped(model, policy, DEFAULT_STATE_CAP)
}

pub fn build_generator_capped(
    model: &QueueModel,
    policy: &ThresholdPolicy,
    state_cap: usize,
) -> Result<BlockGenerator> {
    if policy.capacity() != model.capacity {
        return Err(Error::Dimension(format!(
            "policy capacity {} does not match model capacity {}",
            policy.capacity(),
            model.capacity
        )));
    }
    if policy.max_mode() > model.arrival.n_modes() {
        return Err(Error::Dimension(format!(
            "policy uses mode {} but the arrival process has {} modes",
            policy.max_mode(),
            model.arrival.n_modes()
        )));
    }
    let dims = model.level_dims()?;
    let total = model.total_states()?;
    if total > state_cap {
        return Err(Error::StateSpaceCap {
            states: total,
            cap: state_cap,
            k: model.capacity,
            r: model.obsolescence.dim(),
        });
    }

    let k_cap = model.capacity;
    let w = model.arrival.dim();
    let m = model.service.dim();
    let r = model.obsolescence.dim();
    let beta = model.service.init_row();
    let gamma: Vec<f64> = model.obsolescence.init().to_vec();
    let mut blocks = BTreeMap::new();
    let mut insert = |key: (usize, usize), mat: DenseMatrix| {
        debug_assert_eq!(
            (mat.rows(), mat.cols()),
            (dims[key.0], dims[key.1]),
            "block {key:?} has wrong shape"
        );
        if !mat.is_zero() {
            blocks.insert(key, mat);
        }
    };

    // level 0
    let chi0 = policy.active_mode(0);
    let d0 = model.arrival.mode(chi0);
    insert((0, 0), d0.mat(0));
    for j in 1..k_cap {
        let head = kron_product(&d0.mat(j), &beta);
        let tail = DenseMatrix::row_vec(&kron_vec_power(&gamma, j - 1));
        insert((0, j), kron_product(&head, &tail));
    }
    {
        let lump = batch_tail_sum(d0, k_cap);
        let head = kron_product(&lump, &beta);
        let tail = DenseMatrix::row_vec(&kron_vec_power(&gamma, k_cap - 1));
        insert((0, k_cap), kron_product(&head, &tail));
    }

    // levels 1..=K
    for i in 1..=k_cap {
        let chii = policy.active_mode(i);
        let di = model.arrival.mode(chii);
        if i == 1 {
            insert((1, 0), kron_product(&DenseMatrix::identity(w), &model.service.exit_col()));
        } else {
            insert(
                (i, i - 1),
                kron_product(&DenseMatrix::identity(w), &departure_block(model, i - 1)),
            );
        }
        let local = local_subgen(model, i - 1);
        if i < k_cap {
            insert((i, i), kron_sum(&di.mat(0), &local)?);
        } else {
            insert((i, i), kron_sum(&di.total(), &local)?);
        }
        let mid = DenseMatrix::identity(m * r.pow((i - 1) as u32));
        for l in 1..k_cap.saturating_sub(i) {
            let tail = DenseMatrix::row_vec(&kron_vec_power(&gamma, l));
            insert((i, i + l), kron_product(&kron_product(&di.mat(l), &mid), &tail));
        }
        if i < k_cap {
            let l = k_cap - i;
            let lump = batch_tail_sum(di, l);
            let tail = DenseMatrix::row_vec(&kron_vec_power(&gamma, l));
            insert((i, k_cap), kron_product(&kron_product(&lump, &mid), &tail));
        }
    }

    let bg = BlockGenerator {
        capacity: k_cap,
        level_dims: dims,
        blocks,
    };
    verify_generator(&bg)?;
    Ok(bg)
}

/// Row sums vanish and off-diagonal entries are non-negative.
fn verify_generator(bg: &BlockGenerator) -> Result<()> {
    for i in 0..=bg.capacity {
        let mut sums = vec![0.0; bg.level_dims[i]];
        for j in 0..=bg.capacity {
            if let Some(b) = bg.block(i, j) {
                for (s, v) in sums.iter_mut().zip(b.row_sums()) {
                    *s += v;
                }
                let diag_block = i == j;
                for (row, x) in b.data().chunks(b.cols()).enumerate() {
                    for (col, &v) in x.iter().enumerate() {
                        if v < -1e-12 && !(diag_block && row == col) {
                            return Err(Error::SolveFailed(format!(
                                "negative off-diagonal {v} in block ({i},{j}) at ({row},{col})"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(bad) = sums.iter().find(|s| s.abs() > 1e-9) {
            return Err(Error::SolveFailed(format!(
                "generator row sums of level {i} reach {bad:+e}"
            )));
        }
    }
    Ok(())
}

/// Densely assembled generator, for oracle/testing use.
pub fn assemble_dense(bg: &BlockGenerator) -> Result<DenseMatrix> {
    assemble_dense_capped(bg, DEFAULT_STATE_CAP)
}

pub fn assemble_dense_capped(bg: &BlockGenerator, cap: usize) -> Result<DenseMatrix> {
    let total = bg.total_states();
    if total > cap {
        return Err(Error::StateSpaceCap {
            states: total,
            cap,
            k: bg.capacity,
            r: 0,
        });
    }
    let mut offsets = vec![0usize; bg.level_dims.len() + 1];
    for (i, d) in bg.level_dims.iter().enumerate() {
        offsets[i + 1] = offsets[i] + d;
    }
    let mut q = DenseMatrix::zeros(total, total);
    for (&(i, j), b) in bg.blocks() {
        for bi in 0..b.rows() {
            for bj in 0..b.cols() {
                let v = b.get(bi, bj);
                if v != 0.0 {
                    q.set(offsets[i] + bi, offsets[j] + bj, v);
                }
            }
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrivals::BatchProcess;

    pub(crate) fn scalar_model(lambda: f64, mu: f64, theta: f64, k: usize) -> QueueModel {
        let arrival = ModedArrival::compose_direct(vec![BatchProcess::poisson(lambda)]).unwrap();
        QueueModel::new(
            arrival,
            PhaseType::exponential(mu),
            PhaseType::exponential(theta),
            k,
        )
        .unwrap()
    }

    use crate::testing::example1_model;

    #[test]
    fn scalar_birth_death_oracle() {
        let model = scalar_model(1.0, 2.0, 0.5, 2);
        let pol = ThresholdPolicy::single(1, 2);
        let bg = build_generator(&model, &pol).unwrap();
        let q = assemble_dense(&bg).unwrap();
        let expect = DenseMatrix::from_rows(&[
            vec![-1.0, 1.0, 0.0],
            vec![2.0, -3.0, 1.0],
            vec![0.0, 2.5, -2.5],
        ]);
        assert_eq!(q.rows(), 3);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (q.get(i, j) - expect.get(i, j)).abs() < 1e-12,
                    "Q[{i}][{j}] = {}",
                    q.get(i, j)
                );
            }
        }
    }

    #[test]
    fn level_dims_follow_dimension_formula() {
        let model = example1_model(5);
        assert_eq!(model.level_dims().unwrap(), vec![2, 4, 8, 16, 32, 64]);
        let bg = build_generator(&model, &ThresholdPolicy::single(3, 5)).unwrap();
        let b33 = bg.block(3, 3).unwrap();
        assert_eq!((b33.rows(), b33.cols()), (16, 16));
    }

    #[test]
    fn generator_rows_vanish_on_repaired_model() {
        let model = example1_model(5);
        let pol = ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap();
        let bg = build_generator(&model, &pol).unwrap();
        let q = assemble_dense(&bg).unwrap();
        for (i, s) in q.row_sums().iter().enumerate() {
            assert!(s.abs() < 1e-9, "row {i} sums to {s}");
        }
        let min_off = (0..q.rows())
            .flat_map(|i| (0..q.cols()).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| q.get(i, j))
            .fold(f64::INFINITY, f64::min);
        assert!(min_off >= 0.0, "negative off-diagonal {min_off}");
    }

    #[test]
    fn policy_changes_touch_only_arrival_blocks() {
        let model = example1_model(5);
        let a = build_generator(&model, &ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap()).unwrap();
        let b = build_generator(&model, &ThresholdPolicy::new(&[3, 1], &[3], 5).unwrap()).unwrap();
        // subdiagonal blocks are policy-independent
        for i in 1..=5usize {
            assert_eq!(a.block(i, i - 1), b.block(i, i - 1), "block ({i},{})", i - 1);
        }
        // the two policies agree on levels where the active mode agrees
        for i in 0..=5usize {
            let same_mode = (if i <= 2 { 3 } else { 1 }) == (if i <= 3 { 3 } else { 1 });
            if same_mode {
                assert_eq!(a.block(i, i), b.block(i, i), "diagonal block {i}");
            } else {
                assert_ne!(a.block(i, i), b.block(i, i), "diagonal block {i}");
            }
        }
    }

    #[test]
    fn exponential_obsolescence_gives_scalar_reneging_rates() {
        // R=1: the subdiagonal block is S0·beta + (i-1)·theta·I
        let model = QueueModel::new(
            ModedArrival::compose_direct(vec![BatchProcess::poisson(1.0)]).unwrap(),
            PhaseType::validate(
                vec![0.4, 0.6],
                DenseMatrix::from_rows(&[vec![-3.0, 1.0], vec![2.0, -3.0]]),
            )
            .unwrap(),
            PhaseType::exponential(0.25),
            4,
        )
        .unwrap();
        let bg = build_generator(&model, &ThresholdPolicy::single(1, 4)).unwrap();
        for i in 2..=4usize {
            let block = bg.block(i, i - 1).unwrap();
            let s0_beta = model
                .service()
                .exit_col()
                .matmul(&model.service().init_row());
            let expect = s0_beta.add(&DenseMatrix::identity(2).scale(0.25 * (i as f64 - 1.0)));
            assert_eq!(block, &expect, "level {i}");
        }
    }

    #[test]
    fn table5_first_superdiagonal_block_shape() {
        // R = 1 model: Q_{0,1} = D_1 ⊗ β has shape W x W·M
        let a = DenseMatrix::from_rows(&[vec![0.0037, 6.58e-5], vec![1.3e-4, 0.0064]]);
        let d0 = DenseMatrix::from_rows(&[vec![-0.0037658, 0.0], vec![0.0, -0.00653]]);
        let bp = BatchProcess::from_validated(vec![d0, a.clone()]).unwrap();
        let arrival = ModedArrival::compose_direct(vec![bp]).unwrap();
        let service = PhaseType::validate(
            vec![0.0057, 0.9943],
            DenseMatrix::from_rows(&[vec![-0.0014, 0.0], vec![0.0, -0.2409]]),
        )
        .unwrap();
        let model =
            QueueModel::new(arrival, service, PhaseType::exponential(0.0005), 20).unwrap();
        let bg = build_generator(&model, &ThresholdPolicy::single(1, 20)).unwrap();
        let b01 = bg.block(0, 1).unwrap();
        assert_eq!((b01.rows(), b01.cols()), (2, 4));
        for w in 0..2 {
            for w2 in 0..2 {
                for m in 0..2 {
                    let want = a.get(w, w2) * model.service().init()[m];
                    assert!((b01.get(w, w2 * 2 + m) - want).abs() < 1e-15);
                }
            }
        }
        assert_eq!(bg.total_states(), 82);
    }

    #[test]
    fn state_cap_is_enforced() {
        let model = example1_model(5);
        let pol = ThresholdPolicy::single(1, 5);
        match build_generator_capped(&model, &pol, 100) {
            Err(Error::StateSpaceCap { states, cap, .. }) => {
                assert_eq!(states, 126);
                assert_eq!(cap, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_small_models_have_vanishing_row_sums() {
        let mut next = crate::testing::uniform_stream(42);
        for trial in 0..25 {
            let model = crate::testing::random_model(&mut next, trial % 2 == 0);
            let n = model.arrival().n_modes();
            let pol = if n > 1 {
                ThresholdPolicy::new(&[n, 1], &[model.capacity() / 2], model.capacity()).unwrap()
            } else {
                ThresholdPolicy::single(1, model.capacity())
            };
            let bg = build_generator(&model, &pol).unwrap();
            let q = assemble_dense(&bg).unwrap();
            for s in q.row_sums() {
                assert!(s.abs() < 1e-9, "trial {trial}: row sum {s}");
            }
        }
    }
}
