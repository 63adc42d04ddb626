//! Acceptance suite: every criterion prints one PASS line (run with
//! `cargo test -p crawlq --test acceptance -- --nocapture` to see them).
//!
//! The two checked-in model fixtures drive the published-value checks; the
//! randomized checks use deterministic seeds throughout.

use crawlq::generator::{build_generator, QueueModel};
use crawlq::measures;
use crawlq::modelfile::ModelFile;
use crawlq::optimizer::{self, CostCoefficients, SubsetSpec};
use crawlq::policy::ThresholdPolicy;
use crawlq::simulator::{simulate, SimConfig, SimReport};
use crawlq::sojourn;
use crawlq::solver::{solve_dense_oracle, solve_general, solve_qbd, StationarySolution};
use crawlq::testing;
use std::path::PathBuf;
use std::time::Instant;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
}

fn load(name: &str) -> (QueueModel, CostCoefficients) {
    let file = ModelFile::load(&fixture(name)).expect("fixture parses");
    let cost = file.cost.expect("fixture carries cost coefficients");
    let (model, _) = file.to_model().expect("fixture builds");
    (model, cost)
}

fn pass(criterion: u32, msg: &str) {
    println!("ACCEPTANCE {criterion} PASS - {msg}");
}

fn solve(model: &QueueModel, pol: &ThresholdPolicy) -> StationarySolution {
    solve_general(&build_generator(model, pol).expect("generator builds")).expect("solver runs")
}

fn default_policy(model: &QueueModel) -> ThresholdPolicy {
    let n = model.arrival().n_modes();
    if n > 1 {
        ThresholdPolicy::new(&[n, 1], &[model.capacity() / 2], model.capacity()).unwrap()
    } else {
        ThresholdPolicy::single(1, model.capacity())
    }
}

#[test]
fn criterion_1_phase_type_moments() {
    let (ex1, _) = load("example1.json");
    assert!((ex1.service().mean() - 0.657).abs() < 1e-3, "service mean {}", ex1.service().mean());
    assert!(
        (ex1.obsolescence().mean() - 5.0).abs() < 1e-9,
        "obsolescence mean {}",
        ex1.obsolescence().mean()
    );
    let (t5, _) = load("table5.json");
    assert!((t5.service().mean() - 8.2).abs() < 0.05, "service mean {}", t5.service().mean());
    pass(1, "phase-type means 0.657 / 5.0 / 8.2 reproduced");
}

#[test]
fn criterion_2_arrival_statistics() {
    let (ex1, _) = load("example1.json");
    let tol = [0.005, 0.02, 0.005, 0.005];
    let want = [1.28, 2.41, 3.125, 4.64];
    for l in 1..=4 {
        let got = ex1.arrival().mode(l).stats().unwrap().lambda;
        assert!(
            (got - want[l - 1]).abs() < tol[l - 1],
            "example-1 mode {l}: {got} vs {}",
            want[l - 1]
        );
    }
    let (t5, _) = load("table5.json");
    let want = [0.0153, 0.0307, 0.046, 0.061];
    for l in 1..=4 {
        let got = t5.arrival().mode(l).stats().unwrap().lambda;
        assert!(
            (got - want[l - 1]).abs() < 0.0005,
            "trace model mode {l}: {got} vs {}",
            want[l - 1]
        );
    }
    pass(2, "fundamental rates reproduced for both models (sign repair included)");
}

#[test]
fn criterion_3_trace_model_optimization() {
    let started = Instant::now();
    let (model, coeff) = load("table5.json");
    assert_eq!(model.total_states().unwrap(), 82);
    let res = optimizer::optimize(&model, &coeff, &SubsetSpec::All).unwrap();

    let fixed = res.fixed_costs();
    let want_fixed = [(1, 666.28), (2, 657.07), (3, 639.03), (4, 621.25)];
    for (mode, want) in want_fixed {
        let got = fixed[&mode];
        assert!((got - want).abs() / want < 0.005, "C_{mode} = {got} vs {want}");
    }

    assert!(
        (res.best_cost - 563.51).abs() / 563.51 < 0.005,
        "J* = {} vs 563.51",
        res.best_cost
    );
    assert_eq!(res.best_policy.modes(), &[4, 1]);
    assert_eq!(res.best_policy.thresholds(), &[2]);

    let published: &[(&[usize], f64)] = &[
        (&[1], 666.28),
        (&[2], 657.07),
        (&[3], 639.03),
        (&[4], 621.25),
        (&[1, 2], 624.97),
        (&[1, 3], 591.72),
        (&[1, 4], 563.51),
        (&[2, 3], 622.81),
        (&[2, 4], 593.29),
        (&[3, 4], 609.66),
        (&[1, 2, 3], 591.72),
        (&[1, 2, 4], 563.51),
        (&[1, 3, 4], 563.51),
        (&[2, 3, 4], 593.29),
        (&[1, 2, 3, 4], 563.51),
    ];
    for (subset, want) in published {
        let row = res
            .table
            .iter()
            .find(|r| r.subset == *subset)
            .unwrap_or_else(|| panic!("missing subset row {subset:?}"));
        assert!(
            (row.cost - want).abs() / want < 0.005,
            "subset {subset:?}: {} vs {want}",
            row.cost
        );
    }
    let profit = res.relative_profit.unwrap();
    assert!(profit > 9.0, "relative profit {profit}%");
    // the optimal mix keeps the robot count strictly between the extremes
    let rep = &res.best_report;
    assert!(rep.n_act > 1.0 && rep.n_act < 4.0, "n_act = {}", rep.n_act);
    let phi_total: f64 = rep.phi.iter().sum();
    assert!((phi_total - 1.0).abs() < 1e-10);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    pass(
        3,
        &format!(
            "all 15 trace-model rows within 0.5%, J*={:.2} at modes=4,1 t=2, profit {profit:.2}% ({elapsed:.2?})",
            res.best_cost
        ),
    );
}

#[test]
fn criterion_4_example1_tables() {
    let (model, coeff) = load("example1.json");
    assert_eq!(model.total_states().unwrap(), 126);
    let res = optimizer::optimize(&model, &coeff, &SubsetSpec::All).unwrap();

    // the printed {1,3,4} row duplicates the {2,3,4} row in the source table;
    // its computed value must instead equal the four-mode row, which the
    // source prints as the same collapsed policy (see REPRODUCTION_NOTES.md)
    let documented_miss: &[usize] = &[1, 3, 4];

    let published: &[(&[usize], f64)] = &[
        (&[1], 149.91),
        (&[2], 110.0),
        (&[3], 89.405),
        (&[4], 130.312),
        (&[1, 2], 103.54),
        (&[1, 3], 63.54),
        (&[1, 4], 74.47),
        (&[2, 3], 76.21),
        (&[2, 4], 86.13),
        (&[3, 4], 94.14),
        (&[1, 2, 3], 63.54),
        (&[1, 2, 4], 73.69),
        (&[1, 3, 4], 80.50),
        (&[2, 3, 4], 80.50),
        (&[1, 2, 3, 4], 67.52),
    ];
    let mut misses = Vec::new();
    for (subset, want) in published {
        let row = res.table.iter().find(|r| r.subset == *subset).unwrap();
        if (row.cost - want).abs() / want >= 0.02 {
            misses.push((subset.to_vec(), row.cost, *want));
        }
    }
    assert_eq!(
        misses.len(),
        1,
        "expected exactly the documented miss, got {misses:?}"
    );
    assert_eq!(misses[0].0, documented_miss);

    // the paper's own four-mode row corroborates the computed value
    let three = res.table.iter().find(|r| r.subset == [1, 3, 4]).unwrap();
    let four = res.table.iter().find(|r| r.subset == [1, 2, 3, 4]).unwrap();
    assert!((three.cost - four.cost).abs() < 1e-9);
    assert!((three.cost - 67.52).abs() / 67.52 < 0.02);

    // bold row and best fixed mode
    let bold = res.table.iter().find(|r| r.subset == [1, 3]).unwrap();
    assert!((bold.cost - 63.54).abs() / 63.54 < 0.02);
    assert_eq!(bold.policy.thresholds(), &[2]);
    assert_eq!(res.best_policy.modes(), &[3, 1]);
    assert!((res.fixed_costs()[&3] - 89.40).abs() / 89.40 < 0.02);

    // mandatory fallback for the missed row: simulator agreement on the
    // repaired model (criterion 6 semantics, same tolerances)
    let pol = ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap();
    let sol = solve(&model, &pol);
    let analytic = measures::report(&model, &pol, &sol).unwrap();
    let sim = simulate(&model, &pol, &SimConfig::new(1_000_000, 42)).unwrap();
    assert_sim_close(&sim, &analytic, "example-1 fallback");

    // buffer-size sweep rows (reproduction attempted for small K; the state
    // space at K=10 is 4094 and stays under the dense cap, larger K does not)
    let published_k: &[(usize, f64, [f64; 4])] = &[
        (1, 147.5, [244.7, 233.4, 187.2, 258.8]),
        (2, 96.8, [199.2, 174.0, 128.8, 194.4]),
        (3, 79.1, [172.6, 140.3, 105.4, 160.0]),
        (4, 68.3, [158.1, 121.7, 94.7, 140.6]),
        (5, 63.5, [149.9, 110.0, 89.4, 130.3]),
    ];
    let ks: Vec<usize> = published_k.iter().map(|(k, _, _)| *k).collect();
    let rows = optimizer::sweep_capacity(&model, &coeff, &ks).unwrap();
    for ((k, want_best, want_fixed), row) in published_k.iter().zip(&rows) {
        assert!(
            (row.best_cost - want_best).abs() / want_best < 0.02,
            "K={k}: C*={} vs {want_best}",
            row.best_cost
        );
        for (got, want) in row.fixed_costs.iter().zip(want_fixed) {
            assert!((got - want).abs() / want < 0.02, "K={k}: {got} vs {want}");
        }
    }
    pass(
        4,
        "14/15 published rows within 2%; the known duplicated row documented and \
         covered by the simulator fallback; buffer sweep K=1..5 within 2%",
    );
}

#[test]
fn criterion_5_conservation_and_little() {
    let mut next = testing::uniform_stream(31);
    for trial in 0..100 {
        let model = testing::random_model(&mut next, trial % 3 == 0);
        let pol = default_policy(&model);
        let sol = solve(&model, &pol);
        let rep = measures::report(&model, &pol, &sol).unwrap();
        let total = rep.p_loss + rep.p_obs + rep.p_success;
        assert!(
            (total - 1.0).abs() < 1e-8,
            "trial {trial}: loss+obs+success = {total}"
        );
        let lhs = sol.mean_queue_length();
        let rhs = rep.lambda * rep.v_bar;
        assert!(
            (lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-12),
            "trial {trial}: Little {lhs} vs {rhs}"
        );
    }
    pass(5, "conservation (1e-8) and Little's law (1e-6 rel) on 100 random models");
}

fn assert_sim_close(sim: &SimReport, analytic: &measures::PerformanceReport, label: &str) {
    assert!(
        sim.p_star.covers(analytic.p_star),
        "{label}: p_star {:?} vs {}",
        sim.p_star,
        analytic.p_star
    );
    assert!(
        sim.p_loss.covers(analytic.p_loss),
        "{label}: p_loss {:?} vs {}",
        sim.p_loss,
        analytic.p_loss
    );
    assert!(
        sim.p_obs.covers(analytic.p_obs),
        "{label}: p_obs {:?} vs {}",
        sim.p_obs,
        analytic.p_obs
    );
    assert!(
        sim.n_act.covers(analytic.n_act),
        "{label}: n_act {:?} vs {}",
        sim.n_act,
        analytic.n_act
    );
    assert!(
        sim.v1_bar.covers(analytic.v1_bar.unwrap()),
        "{label}: v1_bar {:?} vs {:?}",
        sim.v1_bar,
        analytic.v1_bar
    );
}

#[test]
fn criterion_6_simulator_cross_validation() {
    use crawlq::arrivals::{BatchProcess, ModedArrival};
    use crawlq::ph::PhaseType;
    // scalar closed-form case
    let mm12 = QueueModel::new(
        ModedArrival::compose_direct(vec![BatchProcess::poisson(1.0)]).unwrap(),
        PhaseType::exponential(1.0),
        PhaseType::exponential(1.0),
        2,
    )
    .unwrap();
    let pol = ThresholdPolicy::single(1, 2);
    let sim = simulate(&mm12, &pol, &SimConfig::new(1_000_000, 42)).unwrap();
    let sol = solve(&mm12, &pol);
    let analytic = measures::report(&mm12, &pol, &sol).unwrap();
    assert!((analytic.p_star - 0.4).abs() < 1e-12);
    assert_sim_close(&sim, &analytic, "M/M/1/2");

    let mut next = testing::uniform_stream(606);
    for trial in 0..5 {
        let model = testing::random_model(&mut next, trial % 2 == 0);
        let pol = default_policy(&model);
        let sol = solve(&model, &pol);
        let analytic = measures::report(&model, &pol, &sol).unwrap();
        let sim = simulate(&model, &pol, &SimConfig::new(1_000_000, 42 + trial)).unwrap();
        assert_sim_close(&sim, &analytic, &format!("random model {trial}"));
    }
    pass(6, "simulated measures inside 99% CIs on the closed-form and 5 random models");
}

#[test]
fn criterion_7_solver_equivalences() {
    let mut max_qbd: f64 = 0.0;
    let mut next = testing::uniform_stream(117);
    for _ in 0..10 {
        let model = testing::random_model(&mut next, true);
        let pol = default_policy(&model);
        let bg = build_generator(&model, &pol).unwrap();
        let a = solve_general(&bg).unwrap();
        let b = solve_qbd(&bg).unwrap();
        for i in 0..=model.capacity() {
            for (x, y) in a.level(i).iter().zip(b.level(i)) {
                max_qbd = max_qbd.max((x - y).abs());
            }
        }
    }
    assert!(max_qbd < 1e-10, "max QBD deviation {max_qbd}");

    let mut max_dense: f64 = 0.0;
    let (ex1, _) = load("example1.json");
    let (t5, _) = load("table5.json");
    let cases = vec![
        (ex1.clone(), ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap()),
        (ex1, ThresholdPolicy::single(4, 5)),
        (t5, ThresholdPolicy::new(&[4, 1], &[2], 20).unwrap()),
    ];
    let mut checked = cases.len();
    for (model, pol) in cases {
        assert!(model.total_states().unwrap() < 2000);
        let bg = build_generator(&model, &pol).unwrap();
        let a = solve_general(&bg).unwrap();
        let b = solve_dense_oracle(&bg).unwrap();
        for i in 0..=model.capacity() {
            for (x, y) in a.level(i).iter().zip(b.level(i)) {
                max_dense = max_dense.max((x - y).abs());
            }
        }
    }
    let mut next = testing::uniform_stream(118);
    for _ in 0..10 {
        let model = testing::random_model(&mut next, false);
        let pol = default_policy(&model);
        let bg = build_generator(&model, &pol).unwrap();
        let a = solve_general(&bg).unwrap();
        let b = solve_dense_oracle(&bg).unwrap();
        for i in 0..=model.capacity() {
            for (x, y) in a.level(i).iter().zip(b.level(i)) {
                max_dense = max_dense.max((x - y).abs());
            }
        }
        checked += 1;
    }
    assert!(max_dense < 1e-10, "max dense-oracle deviation {max_dense}");
    pass(
        7,
        &format!(
            "QBD vs general max-dev {max_qbd:.2e}; general vs dense null-space max-dev {max_dense:.2e} on {checked} models"
        ),
    );
}

#[test]
fn criterion_8_transform_sanity() {
    let (ex1, _) = load("example1.json");
    let (t5, _) = load("table5.json");
    let cases = vec![
        (ex1.clone(), ThresholdPolicy::new(&[3, 1], &[2], 5).unwrap()),
        (ex1, ThresholdPolicy::single(2, 5)),
        (t5, ThresholdPolicy::new(&[4, 1], &[2], 20).unwrap()),
    ];
    for (model, pol) in cases {
        let sol = solve(&model, &pol);
        let rep = measures::report(&model, &pol, &sol).unwrap();
        let at = |u: f64| {
            sojourn::transforms_at(
                &model, &pol, &sol, rep.lambda, rep.p_success, rep.p_obs, rep.p_loss, u,
            )
            .unwrap()
        };
        let v0 = at(0.0);
        assert!((v0.v - 1.0).abs() < 1e-10, "v(0) = {}", v0.v);

        // second-order one-sided difference: -v'(0) ≈ (3v(0) - 4v(h) + v(2h)) / 2h
        for h in [1e-5, 1e-6] {
            let vh = at(h);
            let v2h = at(2.0 * h);
            let fd = (3.0 * v0.v - 4.0 * vh.v + v2h.v) / (2.0 * h);
            assert!(
                (fd - rep.v_bar).abs() / rep.v_bar < 1e-4,
                "h={h}: finite difference {fd} vs {}",
                rep.v_bar
            );
            let fd1 = (3.0 * v0.v1.unwrap() - 4.0 * vh.v1.unwrap() + v2h.v1.unwrap()) / (2.0 * h);
            assert!(
                (fd1 - rep.v1_bar.unwrap()).abs() / rep.v1_bar.unwrap() < 1e-4,
                "h={h}: conditional finite difference {fd1} vs {:?}",
                rep.v1_bar
            );
        }

        let formula = measures::loss_probability_formula(&sol, &model, &pol, rep.lambda);
        let decomp = measures::loss_probability_decomposition(&sol, &model, &pol);
        assert!(
            (formula - decomp).abs() < 1e-10,
            "loss routes differ: {formula} vs {decomp}"
        );
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
    }
    pass(8, "v(0)=1, means match finite differences (1e-4 rel), loss routes agree (1e-10)");
}
