//! Discrete-event Monte-Carlo oracle of the same system: moded batch
//! arrivals, phase-type service, per-page phase-type obsolescence clocks,
//! partial admission, instantaneous threshold mode switching.
//!
//! One run is one single-threaded event loop over a seeded counter-based RNG
//! with independent substreams for arrivals, service, and obsolescence, so a
//! report is a pure function of (model, policy, config). On a queue-length
//! change the modulating chain's exponential sojourn is re-drawn from the new
//! mode's rate; agreement with the analytic solution validates that reading.

use crate::error::{Error, Result};
use crate::generator::QueueModel;
use crate::ph::PhaseType;
use crate::policy::ThresholdPolicy;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::{BinaryHeap, VecDeque};

/// 99% two-sided Student-t quantile at 29 degrees of freedom.
const T_995_29: f64 = 2.756;
const N_BATCH_WINDOWS: usize = 30;

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    /// Number of batch arrivals to simulate.
    pub n_arrivals: usize,
    /// Fraction of batches discarded as warm-up.
    pub warmup: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n_arrivals: usize, seed: u64) -> Self {
        SimConfig {
            n_arrivals,
            warmup: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_arrivals < 10_000 {
            return Err(Error::Dimension(format!(
                "simulation needs at least 10^4 batch arrivals, got {}",
                self.n_arrivals
            )));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Dimension(format!("warmup fraction {} out of [0,1)", self.warmup)));
        }
        Ok(())
    }
}

/// Point estimate with the half-width of a 99% batch-means interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub value: f64,
    pub half_width: f64,
}

impl SimEstimate {
    pub fn covers(&self, x: f64) -> bool {
        (self.value - x).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub p_star: SimEstimate,
    pub p_loss: SimEstimate,
    pub p_obs: SimEstimate,
    pub p_success: SimEstimate,
    pub n_act: SimEstimate,
    pub lambda: SimEstimate,
    pub v1_bar: SimEstimate,
    pub v2_bar: SimEstimate,
    pub mean_queue: SimEstimate,
    /// Whole-run page counts (warm-up included).
    pub pages_arrived: u64,
    pub pages_admitted: u64,
    pub pages_lost: u64,
    pub pages_served: u64,
    pub pages_obsolesced: u64,
    pub pages_in_system_at_end: u64,
}

/// Draw one absorption time of the phase-type law.
pub fn sample_ph(ph: &PhaseType, rng: &mut impl RngCore) -> f64 {
    let dim = ph.dim();
    let mut state = {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = dim - 1;
        for (i, &b) in ph.init().iter().enumerate() {
            acc += b;
            if u < acc {
                chosen = i;
                break;
            }
        }
        chosen
    };
    let mut total = 0.0;
    loop {
        let row = ph.subgen().row(state);
        let rate = -row[state];
        total += sample_exp(rate, rng);
        // jump: off-diagonal rates then absorption
        let u: f64 = rng.gen::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = None;
        for (j, &v) in row.iter().enumerate() {
            if j == state {
                continue;
            }
            acc += v;
            if u < acc {
                next = Some(j);
                break;
            }
        }
        match next {
            Some(j) => state = j,
            None => return total,
        }
    }
}

fn sample_exp(rate: f64, rng: &mut impl RngCore) -> f64 {
    debug_assert!(rate > 0.0);
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

#[derive(Debug, Clone, Copy)]
struct Page {
    id: u64,
    arrival: f64,
    deadline: f64,
}

struct HeapEntry {
    time: f64,
    id: u64,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.id == other.id
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap by time, then id
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.id.cmp(&self.id))
    }
}

#[derive(Default, Clone, Copy)]
struct Cumulative {
    time: f64,
    time_empty: f64,
    mode_time: f64,
    queue_time: f64,
    arrived: u64,
    lost: u64,
    served: u64,
    obsolesced: u64,
    sojourn_served: f64,
    sojourn_obsolesced: f64,
}

/// Run the simulation.
pub fn simulate(model: &QueueModel, pol: &ThresholdPolicy, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    if pol.capacity() != model.capacity() {
        return Err(Error::Dimension("policy and model capacities differ".into()));
    }
    let k_cap = model.capacity();
    let warmup_batches = (cfg.warmup * cfg.n_arrivals as f64).round() as usize;
    let measured = cfg.n_arrivals - warmup_batches;
    let mut rng_arr = substream(cfg.seed, 1);
    let mut rng_svc = substream(cfg.seed, 2);
    let mut rng_obs = substream(cfg.seed, 3);

    let mut t = 0.0;
    let mut nu = 0usize;
    let mut mode = pol.active_mode(0);
    let mut queue: VecDeque<Page> = VecDeque::new();
    let mut server: Option<(Page, f64)> = None; // page, completion time
    let mut obs_heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut batches = 0usize;

    let mut cum = Cumulative::default();
    let mut snapshots: Vec<Cumulative> = Vec::with_capacity(N_BATCH_WINDOWS + 2);
    let mut total_admitted = 0u64;
    let mut total_arrived = 0u64;
    let mut total_lost = 0u64;
    let mut total_served = 0u64;
    let mut total_obsolesced = 0u64;

    let exit_rate = |mode: usize, nu: usize| -> f64 {
        -model.arrival().mode(mode).mat(0).get(nu, nu)
    };
    let mut next_mod = t + sample_exp(exit_rate(mode, nu), &mut rng_arr);

    let window_of = |batch_idx: usize| -> usize {
        // 0-based measured batch index -> window 0..N_BATCH_WINDOWS
        (batch_idx * N_BATCH_WINDOWS / measured).min(N_BATCH_WINDOWS - 1)
    };
    let mut current_window: Option<usize> = None;

    loop {
        let queue_len = queue.len() + server.is_some() as usize;
        debug_assert_eq!(mode, pol.active_mode(queue_len), "mode trace consistency");

        // next event among modulating transition, service completion,
        // first live obsolescence deadline
        let svc_time = server.map(|(_, c)| c).unwrap_or(f64::INFINITY);
        let obs_time = loop {
            match obs_heap.peek() {
                Some(e) if queue.iter().any(|p| p.id == e.id) => break e.time,
                Some(_) => {
                    obs_heap.pop();
                }
                None => break f64::INFINITY,
            }
        };
        let te = next_mod.min(svc_time).min(obs_time);
        debug_assert!(te >= t);

        // advance time-average integrals
        let dt = te - t;
        cum.time += dt;
        if queue_len == 0 {
            cum.time_empty += dt;
        }
        cum.mode_time += mode as f64 * dt;
        cum.queue_time += queue_len as f64 * dt;
        t = te;

        if te == next_mod {
            // modulating transition, possibly delivering a batch
            let bp = model.arrival().mode(mode);
            let rate = exit_rate(mode, nu);
            let u: f64 = rng_arr.gen::<f64>() * rate;
            let mut acc = 0.0;
            let mut hit: Option<(usize, usize)> = None; // (k, nu')
            'scan: for k in 0..=bp.kmax() {
                let row = bp.mat(k);
                for j in 0..bp.dim() {
                    if k == 0 && j == nu {
                        continue;
                    }
                    acc += row.get(nu, j);
                    if u < acc {
                        hit = Some((k, j));
                        break 'scan;
                    }
                }
            }
            // round-off tail: treat as the last positive transition
            let (k, nu_next) = hit.unwrap_or((0, nu));
            nu = nu_next;
            if k > 0 {
                batches += 1;
                let in_window = batches > warmup_batches;
                let queue_len = queue.len() + server.is_some() as usize;
                let admit = k.min(k_cap - queue_len);
                total_arrived += k as u64;
                total_lost += (k - admit) as u64;
                total_admitted += admit as u64;
                if in_window {
                    cum.arrived += k as u64;
                    cum.lost += (k - admit) as u64;
                }
                for _ in 0..admit {
                    let id = next_id;
                    next_id += 1;
                    let page = Page {
                        id,
                        arrival: t,
                        deadline: f64::INFINITY,
                    };
                    if server.is_none() && queue.is_empty() {
                        let svc = sample_ph(model.service(), &mut rng_svc);
                        server = Some((page, t + svc));
                    } else {
                        let mut page = page;
                        page.deadline = t + sample_ph(model.obsolescence(), &mut rng_obs);
                        obs_heap.push(HeapEntry {
                            time: page.deadline,
                            id,
                        });
                        queue.push_back(page);
                    }
                }
                if in_window {
                    let idx = batches - warmup_batches - 1;
                    let w = window_of(idx);
                    if current_window != Some(w) {
                        current_window = Some(w);
                        snapshots.push(cum);
                    }
                }
                if batches == cfg.n_arrivals {
                    snapshots.push(cum);
                    break;
                }
            }
            let queue_len = queue.len() + server.is_some() as usize;
            mode = pol.active_mode(queue_len);
            next_mod = t + sample_exp(exit_rate(mode, nu), &mut rng_arr);
        } else if te == svc_time {
            let (page, _) = server.take().expect("busy server");
            total_served += 1;
            if batches > warmup_batches {
                cum.served += 1;
                cum.sojourn_served += t - page.arrival;
            }
            if let Some(next_page) = queue.pop_front() {
                let svc = sample_ph(model.service(), &mut rng_svc);
                server = Some((next_page, t + svc));
            }
            let queue_len = queue.len() + server.is_some() as usize;
            let new_mode = pol.active_mode(queue_len);
            if new_mode != mode {
                mode = new_mode;
                next_mod = t + sample_exp(exit_rate(mode, nu), &mut rng_arr);
            }
        } else {
            // obsolescence of a buffered page
            let entry = obs_heap.pop().expect("peeked entry");
            let pos = queue
                .iter()
                .position(|p| p.id == entry.id)
                .expect("live entry points at a buffered page");
            let page = queue.remove(pos).unwrap();
            total_obsolesced += 1;
            if batches > warmup_batches {
                cum.obsolesced += 1;
                cum.sojourn_obsolesced += t - page.arrival;
            }
            let queue_len = queue.len() + server.is_some() as usize;
            let new_mode = pol.active_mode(queue_len);
            if new_mode != mode {
                mode = new_mode;
                next_mod = t + sample_exp(exit_rate(mode, nu), &mut rng_arr);
            }
        }
    }

    let in_system = queue.len() as u64 + server.is_some() as u64;
    debug_assert_eq!(total_admitted, total_served + total_obsolesced + in_system);

    // per-window deltas
    let windows: Vec<(Cumulative, Cumulative)> = snapshots
        .windows(2)
        .map(|pair| (pair[0], pair[1]))
        .collect();
    let first = snapshots.first().copied().unwrap_or_default();
    let last = snapshots.last().copied().unwrap_or_default();

    let estimate = |overall: f64, per_window: &dyn Fn(&Cumulative, &Cumulative) -> f64| -> SimEstimate {
        let values: Vec<f64> = windows
            .iter()
            .map(|(a, b)| per_window(a, b))
            .filter(|v| v.is_finite())
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        SimEstimate {
            value: overall,
            half_width: T_995_29 * (var / n).sqrt(),
        }
    };

    let horizon = last.time - first.time;
    let d_arrived = (last.arrived - first.arrived) as f64;
    let report = SimReport {
        p_star: estimate((last.time_empty - first.time_empty) / horizon, &|a, b| {
            (b.time_empty - a.time_empty) / (b.time - a.time)
        }),
        p_loss: estimate(((last.lost - first.lost) as f64) / d_arrived, &|a, b| {
            (b.lost - a.lost) as f64 / (b.arrived - a.arrived) as f64
        }),
        p_obs: estimate(((last.obsolesced - first.obsolesced) as f64) / d_arrived, &|a, b| {
            (b.obsolesced - a.obsolesced) as f64 / (b.arrived - a.arrived) as f64
        }),
        p_success: estimate(((last.served - first.served) as f64) / d_arrived, &|a, b| {
            (b.served - a.served) as f64 / (b.arrived - a.arrived) as f64
        }),
        n_act: estimate((last.mode_time - first.mode_time) / horizon, &|a, b| {
            (b.mode_time - a.mode_time) / (b.time - a.time)
        }),
        lambda: estimate(d_arrived / horizon, &|a, b| {
            (b.arrived - a.arrived) as f64 / (b.time - a.time)
        }),
        v1_bar: estimate(
            (last.sojourn_served - first.sojourn_served) / (last.served - first.served) as f64,
            &|a, b| (b.sojourn_served - a.sojourn_served) / (b.served - a.served) as f64,
        ),
        v2_bar: estimate(
            (last.sojourn_obsolesced - first.sojourn_obsolesced)
                / (last.obsolesced - first.obsolesced) as f64,
            &|a, b| {
                (b.sojourn_obsolesced - a.sojourn_obsolesced) / (b.obsolesced - a.obsolesced) as f64
            },
        ),
        mean_queue: estimate((last.queue_time - first.queue_time) / horizon, &|a, b| {
            (b.queue_time - a.queue_time) / (b.time - a.time)
        }),
        pages_arrived: total_arrived,
        pages_admitted: total_admitted,
        pages_lost: total_lost,
        pages_served: total_served,
        pages_obsolesced: total_obsolesced,
        pages_in_system_at_end: in_system,
    };
    Ok(report)
}

fn substream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrivals::{BatchProcess, ModedArrival};
    use crate::generator::build_generator;
    use crate::measures;
    use crate::solver::solve_general;
    use crate::testing;

    fn mm12_model() -> QueueModel {
        QueueModel::new(
            ModedArrival::compose_direct(vec![BatchProcess::poisson(1.0)]).unwrap(),
            PhaseType::exponential(1.0),
            PhaseType::exponential(1.0),
            2,
        )
        .unwrap()
    }

    #[test]
    fn sample_ph_means() {
        let mut rng = substream(42, 9);
        let exp = PhaseType::exponential(2.0);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| sample_ph(&exp, &mut rng)).sum::<f64>() / n as f64;
        let sigma = 0.5 / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma, "mean {mean}");

        let obso = crate::ph::PhaseType::validate(
            vec![0.3, 0.7],
            crate::matrix::DenseMatrix::from_rows(&[vec![-0.6, 0.4], vec![0.1, -0.3]]),
        )
        .unwrap();
        let mean: f64 = (0..n).map(|_| sample_ph(&obso, &mut rng)).sum::<f64>() / n as f64;
        let sigma = obso.variance().sqrt() / (n as f64).sqrt();
        assert!((mean - 5.0).abs() < 3.0 * sigma, "mean {mean}");

        // squared coefficient of variation of the service law
        let svc = crate::ph::PhaseType::validate(
            vec![0.4, 0.6],
            crate::matrix::DenseMatrix::from_rows(&[vec![-3.0, 1.0], vec![2.0, -3.0]]),
        )
        .unwrap();
        let samples: Vec<f64> = (0..n).map(|_| sample_ph(&svc, &mut rng)).collect();
        let m1 = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - m1).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let scv = var / (m1 * m1);
        assert!((scv - svc.scv()).abs() / svc.scv() < 0.1, "scv {scv} vs {}", svc.scv());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let model = mm12_model();
        let pol = ThresholdPolicy::single(1, 2);
        let cfg = SimConfig::new(20_000, 42);
        let a = simulate(&model, &pol, &cfg).unwrap();
        let b = simulate(&model, &pol, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, &pol, &SimConfig::new(20_000, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn conservation_identity() {
        let model = testing::example1_model(5);
        let pol = ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap();
        let rep = simulate(&model, &pol, &SimConfig::new(30_000, 7)).unwrap();
        assert_eq!(
            rep.pages_admitted,
            rep.pages_served + rep.pages_obsolesced + rep.pages_in_system_at_end
        );
        assert_eq!(rep.pages_arrived, rep.pages_admitted + rep.pages_lost);
    }

    #[test]
    fn mm12_matches_closed_form() {
        let model = mm12_model();
        let pol = ThresholdPolicy::single(1, 2);
        let rep = simulate(&model, &pol, &SimConfig::new(200_000, 42)).unwrap();
        assert!(rep.p_star.covers(0.4), "{:?}", rep.p_star);
        assert!(rep.p_loss.covers(0.2), "{:?}", rep.p_loss);
        assert!(rep.p_obs.covers(0.2), "{:?}", rep.p_obs);
        assert!(rep.p_success.covers(0.6), "{:?}", rep.p_success);
        assert!(rep.v2_bar.covers(0.5), "{:?}", rep.v2_bar);
    }

    #[test]
    fn agrees_with_analytic_solution_on_a_batch_model() {
        let model = testing::example1_model(5);
        let pol = ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap();
        let sol = solve_general(&build_generator(&model, &pol).unwrap()).unwrap();
        let analytic = measures::report(&model, &pol, &sol).unwrap();
        let rep = simulate(&model, &pol, &SimConfig::new(150_000, 2024)).unwrap();
        assert!(rep.p_star.covers(analytic.p_star), "{:?} vs {}", rep.p_star, analytic.p_star);
        assert!(rep.p_loss.covers(analytic.p_loss), "{:?} vs {}", rep.p_loss, analytic.p_loss);
        assert!(rep.p_obs.covers(analytic.p_obs), "{:?} vs {}", rep.p_obs, analytic.p_obs);
        assert!(rep.n_act.covers(analytic.n_act), "{:?} vs {}", rep.n_act, analytic.n_act);
        assert!(
            rep.v1_bar.covers(analytic.v1_bar.unwrap()),
            "{:?} vs {:?}",
            rep.v1_bar,
            analytic.v1_bar
        );
        assert!(
            rep.lambda.covers(analytic.lambda),
            "{:?} vs {}",
            rep.lambda,
            analytic.lambda
        );
    }

    #[test]
    fn agrees_with_analytics_on_the_trace_model_optimum() {
        let model = testing::table5_model();
        let pol = ThresholdPolicy::new(&[4, 1], &[2], 20).unwrap();
        let sol = solve_general(&build_generator(&model, &pol).unwrap()).unwrap();
        let analytic = measures::report(&model, &pol, &sol).unwrap();
        let rep = simulate(&model, &pol, &SimConfig::new(300_000, 11)).unwrap();
        assert!(rep.p_star.covers(analytic.p_star), "{:?} vs {}", rep.p_star, analytic.p_star);
        assert!(rep.p_loss.covers(analytic.p_loss), "{:?} vs {}", rep.p_loss, analytic.p_loss);
        assert!(rep.p_obs.covers(analytic.p_obs), "{:?} vs {}", rep.p_obs, analytic.p_obs);
        assert!(rep.p_success.covers(analytic.p_success));
        assert!(rep.n_act.covers(analytic.n_act), "{:?} vs {}", rep.n_act, analytic.n_act);
        assert!(rep.v1_bar.covers(analytic.v1_bar.unwrap()));
        assert!(rep.v2_bar.covers(analytic.v2_bar.unwrap()));
        assert!(rep.mean_queue.covers(sol.mean_queue_length()));
    }

    #[test]
    fn rejects_tiny_runs() {
        let model = mm12_model();
        let pol = ThresholdPolicy::single(1, 2);
        assert!(simulate(&model, &pol, &SimConfig::new(100, 1)).is_err());
    }
}
