//! End-to-end acceptance checks. Each test prints one ACCEPT line naming the
//! check and its outcome, so `cargo test --test acceptance -- --nocapture`
//! doubles as a verification report. Tolerances here are part of the
//! contract; do not loosen them to make a failing run pass.

use std::time::Instant;

use ndarray::Array1;
use wrmdp::bounds;
use wrmdp::harness::{self, Experiment, ExperimentConfig, RATE_BAND};
use wrmdp::instances;
use wrmdp::learn::{self, Criterion};
use wrmdp::mdp::{mc_average_cost, DeterministicPolicy};
use wrmdp::metrics::{self, DiscreteMeasure};
use wrmdp::quantize;
use wrmdp::solve;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn accept(code: &str, name: &str, detail: &str) {
    println!("ACCEPT {code} {name}: PASS ({detail})");
}

fn config(experiment: Experiment, seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        experiment: experiment.name().to_string(),
        seeds,
        n_states: None,
        n_actions: None,
        beta: None,
        eps: None,
        bins: None,
        schedule: vec![],
        scales: vec![],
        noise: None,
        out_dir: None,
    }
}

/// The exact configs the acceptance runs use; the determinism check replays
/// every one of them.
fn acceptance_configs() -> Vec<ExperimentConfig> {
    vec![
        config(Experiment::Continuity, (0..200).collect()),
        config(Experiment::RobustnessDiscounted, (0..200).collect()),
        config(Experiment::RobustnessAverage, (0..200).collect()),
        config(Experiment::QuantizationRate, (0..20).collect()),
        config(Experiment::RestartRate, (0..40).collect()),
        config(Experiment::SingleTrajectoryRate, (0..40).collect()),
        config(Experiment::NoiseEmpiricalRate, (0..60).collect()),
        config(Experiment::JointModelNoise, (0..20).collect()),
        config(Experiment::InvariantMeasure, (0..100).collect()),
    ]
}

fn sup_gap(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
}

#[test]
fn c01_discounted_solver_matches_brute_force() {
    let t0 = Instant::now();
    let beta = 0.9;
    let (n, m) = (6usize, 3usize);
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let model = instances::random_mdp(n, m, seed);
        let sol = solve::solve_discounted(&model, beta, 1e-10).unwrap();
        // enumerate every deterministic stationary policy and evaluate it
        // exactly; the pointwise minimum is the optimal value function
        let mut best = Array1::from_elem(n, f64::INFINITY);
        for idx in 0..m.pow(n as u32) {
            let mut assignment = Vec::with_capacity(n);
            let mut rest = idx;
            for _ in 0..n {
                assignment.push(rest % m);
                rest /= m;
            }
            let v = solve::policy_evaluation_discounted(
                &model,
                &DeterministicPolicy(assignment),
                beta,
            )
            .unwrap();
            best.zip_mut_with(&v, |b, x| *b = b.min(*x));
        }
        worst = worst.max(sup_gap(&sol.value, &best));
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(worst <= 1e-8, "worst gap to brute force {worst}");
    assert!(dt < 30.0, "took {dt:.1}s, budget 30s");
    accept(
        "c01",
        "discounted-solver-vs-enumeration",
        &format!("50 models, worst gap {worst:.2e}, {dt:.1}s"),
    );
}

#[test]
fn c02_average_solver_matches_simulation_and_discount_ladder() {
    let t0 = Instant::now();
    let (n, m, eps) = (7usize, 3usize, 0.3);
    let mut worst_mc = 0.0f64;
    let mut worst_vd = 0.0f64;
    for seed in 0..50u64 {
        let inst = instances::random_minorized_mdp(n, m, eps, seed);
        let trip = solve::solve_acoe_minorization(&inst.model, eps, &inst.rho, 1e-10).unwrap();
        let mc =
            mc_average_cost(&inst.model, &trip.policy, 0, 150_000, 4, 1000 + seed).unwrap();
        worst_mc = worst_mc.max((mc - trip.gain).abs());
        let vd = solve::vanishing_discount_gain(
            &inst.model,
            0,
            &solve::geometric_beta_schedule(10),
            1e-3,
        )
        .unwrap();
        worst_vd = worst_vd.max((vd.gain - trip.gain).abs());
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(worst_mc <= 0.01, "worst simulation gap {worst_mc}");
    assert!(worst_vd <= 1e-3, "worst discount-ladder gap {worst_vd}");
    assert!(dt < 60.0, "took {dt:.1}s, budget 60s");
    accept(
        "c02",
        "average-solver-vs-simulation-and-ladder",
        &format!("50 models, sim gap {worst_mc:.2e}, ladder gap {worst_vd:.2e}, {dt:.1}s"),
    );
}

#[test]
fn c03_w1_closed_form_matches_exact_transport() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(1..=50usize);
            let pts: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let mut ws: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            instances::normalize_row(&mut ws);
            DiscreteMeasure::from_points_1d(&pts, &ws).unwrap()
        };
        let mu = draw(&mut rng);
        let nu = draw(&mut rng);
        let fast = metrics::w1_1d(&mu, &nu).unwrap();
        let exact = metrics::w1_exact(&mu, &nu).unwrap();
        worst = worst.max((fast - exact).abs());
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(worst <= 1e-9, "worst disagreement {worst}");
    assert!(dt < 5.0, "took {dt:.1}s, budget 5s");
    accept(
        "c03",
        "w1-quantile-form-vs-transport-lp",
        &format!("100 pairs, worst gap {worst:.2e}, {dt:.1}s"),
    );
}

#[test]
fn c04_integral_metric_dominated_by_lipschitz_times_w1() {
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + seed);
        let n = rng.random_range(4..=12usize);
        let m = rng.random_range(1..=3usize);
        let a = instances::random_mdp(n, m, 100 + seed);
        let b = instances::random_mdp(n, m, 10_000 + seed);
        let f: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
        let lip = metrics::lipschitz_constant(&f, &a.coords).unwrap();
        let lhs = metrics::kernel_d_f(&a, &b, &f).unwrap();
        let rhs = lip * metrics::kernel_w1(&a, &b).unwrap();
        if lhs > rhs + 1e-12 {
            violations += 1;
        }
        min_slack = min_slack.min(rhs - lhs);
    }
    assert_eq!(violations, 0, "min slack {min_slack}");
    accept(
        "c04",
        "integral-probability-metric-domination",
        &format!("100 triples, 0 violations, min slack {min_slack:.2e}"),
    );
}

#[test]
fn c05_value_continuity_bound_holds_across_scales() {
    let out = harness::run_experiment(&config(Experiment::Continuity, (0..200).collect())).unwrap();
    assert_eq!(out.records.len(), 200);
    assert_eq!(out.summary.violations, 0, "summary {:?}", out.summary);
    assert!(out.summary.pass);
    accept(
        "c05",
        "discounted-value-continuity-bound",
        &format!(
            "200 pairs over 3 perturbation decades, 0 violations, median loss/bound {:.3}",
            out.summary.median_loss_bound_ratio
        ),
    );
}

#[test]
fn c06_policy_loss_bounds_hold_discounted_and_average() {
    let t0 = Instant::now();
    // the harness scores each pair against the tightest of the three
    // interchangeable discounted forms, so passing implies all three hold
    let disc =
        harness::run_experiment(&config(Experiment::RobustnessDiscounted, (0..200).collect()))
            .unwrap();
    assert_eq!(disc.records.len(), 200);
    assert_eq!(disc.summary.violations, 0, "summary {:?}", disc.summary);
    let avg = harness::run_experiment(&config(Experiment::RobustnessAverage, (0..200).collect()))
        .unwrap();
    assert_eq!(avg.records.len(), 200);
    assert_eq!(avg.summary.violations, 0, "summary {:?}", avg.summary);
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 300.0, "took {dt:.1}s, budget 300s");
    accept(
        "c06",
        "policy-loss-bounds-both-criteria",
        &format!(
            "200 discounted pairs (tightest of 3 forms) + 200 average pairs, 0 violations, {dt:.1}s"
        ),
    );
}

#[test]
fn c07_quantization_bound_and_monotone_refinement() {
    let beta = 0.9;
    let inst = instances::random_regular_grid(256, 2, 0.1, 0.5, 1.0, 4);
    let mut last = f64::INFINITY;
    let mut profile = Vec::new();
    for m_bins in [4usize, 8, 16, 32, 64] {
        let p = quantize::uniform_partition(&inst.model.coords, m_bins).unwrap();
        let q = quantize::build_quantized_model(&inst.model, &p, None).unwrap();
        let out =
            learn::learned_policy_loss(&inst.model, &q.model, &p, Criterion::Discounted { beta })
                .unwrap();
        let bound =
            bounds::quantized_policy_loss_discounted(inst.lip_c, inst.lip_t, out.delta, beta)
                .unwrap();
        assert!(
            out.loss <= bound.value + 1e-9,
            "bins {m_bins}: loss {} above bound {}",
            out.loss,
            bound.value
        );
        assert!(
            out.loss <= last + 1e-8,
            "bins {m_bins}: loss {} above previous {last}",
            out.loss
        );
        last = out.loss;
        profile.push(format!("{m_bins}:{:.2e}", out.loss));
    }
    accept(
        "c07",
        "quantized-policy-loss-bound",
        &format!("256-state grid, loss by bin count {}", profile.join(" ")),
    );
}

#[test]
fn c08_learning_rates_sit_on_the_estimation_rate() {
    let t0 = Instant::now();
    let restart =
        harness::run_experiment(&config(Experiment::RestartRate, (0..40).collect())).unwrap();
    let dt_restart = t0.elapsed().as_secs_f64();
    let restart_fit = restart.summary.loss_rate.expect("rate fit exists");
    assert!(
        restart_fit.slope >= RATE_BAND.0 && restart_fit.slope <= RATE_BAND.1,
        "restart slope {} outside {:?}",
        restart_fit.slope,
        RATE_BAND
    );
    assert!(dt_restart < 600.0, "restart took {dt_restart:.1}s, budget 600s");

    let t1 = Instant::now();
    let single =
        harness::run_experiment(&config(Experiment::SingleTrajectoryRate, (0..40).collect()))
            .unwrap();
    let dt_single = t1.elapsed().as_secs_f64();
    let single_fit = single.summary.loss_rate.expect("rate fit exists");
    assert!(
        single_fit.slope >= RATE_BAND.0 && single_fit.slope <= RATE_BAND.1,
        "single-trajectory slope {} outside {:?}",
        single_fit.slope,
        RATE_BAND
    );
    assert!(dt_single < 600.0, "single-trajectory took {dt_single:.1}s, budget 600s");
    accept(
        "c08",
        "learning-rate-slopes",
        &format!(
            "restart slope {:.3} (r2 {:.3}), single-trajectory slope {:.3} (r2 {:.3}), 40 seeds each",
            restart_fit.slope, restart_fit.r2, single_fit.slope, single_fit.r2
        ),
    );
}

#[test]
fn c09_empirical_noise_rate_and_bound() {
    let out =
        harness::run_experiment(&config(Experiment::NoiseEmpiricalRate, (0..60).collect()))
            .unwrap();
    assert_eq!(out.summary.violations, 0, "summary {:?}", out.summary);
    let fit = out.summary.loss_rate.expect("rate fit exists");
    assert!(
        fit.slope >= RATE_BAND.0 && fit.slope <= RATE_BAND.1,
        "loss slope {} outside {:?}",
        fit.slope,
        RATE_BAND
    );
    assert!(out.summary.pass);
    accept(
        "c09",
        "empirical-noise-rate-and-bound",
        &format!(
            "60 seeds x 3 sample sizes, 0 violations, loss slope {:.3} (r2 {:.3})",
            fit.slope, fit.r2
        ),
    );
}

#[test]
fn c10_joint_model_and_noise_decomposition() {
    let out = harness::run_experiment(&config(Experiment::JointModelNoise, (0..20).collect()))
        .unwrap();
    assert_eq!(out.summary.violations, 0, "summary {:?}", out.summary);
    let fit = out.summary.aux_rate.expect("drift-gap rate fit exists");
    assert!(
        fit.slope >= RATE_BAND.0 && fit.slope <= RATE_BAND.1,
        "drift-gap slope {} outside {:?}",
        fit.slope,
        RATE_BAND
    );
    assert!(out.summary.pass);
    accept(
        "c10",
        "joint-model-noise-decomposition",
        &format!(
            "20 seeds, 0 violations of the noise + drift + grid-slack bound, drift-gap slope {:.3}",
            fit.slope
        ),
    );
}

#[test]
fn c11_invariant_measure_perturbation_bound() {
    let out = harness::run_experiment(&config(Experiment::InvariantMeasure, (0..100).collect()))
        .unwrap();
    assert_eq!(out.records.len(), 100);
    assert_eq!(out.summary.violations, 0, "summary {:?}", out.summary);
    assert!(out.summary.pass);
    accept(
        "c11",
        "invariant-measure-gap-bound",
        &format!(
            "100 contractive chain pairs, 0 violations, min slack {:.2e}",
            out.summary.min_slack
        ),
    );
}

#[test]
fn c12_every_acceptance_run_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut checked = 0usize;
    for cfg in acceptance_configs() {
        let a = harness::run_experiment(&cfg).unwrap();
        let b = harness::run_experiment(&cfg).unwrap();
        let pa = dir.path().join(format!("{}-a.csv", cfg.experiment));
        let pb = dir.path().join(format!("{}-b.csv", cfg.experiment));
        harness::write_records_csv(&pa, &a.records).unwrap();
        harness::write_records_csv(&pb, &b.records).unwrap();
        let bytes_a = std::fs::read(&pa).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(
            bytes_a,
            std::fs::read(&pb).unwrap(),
            "CSV bytes differ between identical runs of {}",
            cfg.experiment
        );
        checked += 1;
    }
    accept(
        "c12",
        "seeded-runs-byte-identical",
        &format!("{checked} experiments re-run and byte-compared"),
    );
}
