//! Config-driven experiment harness.
//!
//! Each experiment builds seeded random instances, measures an exact loss (a
//! value gap, a deployed-policy optimality gap, or an invariant-measure gap),
//! evaluates the matching closed-form bound, and emits one CSV row per check
//! plus a JSON summary with pass/fail. Everything is deterministic given the
//! config: seeds fan out to a rayon pool, rows are collected and sorted by
//! (seed, n) before writing, and floats are printed in shortest-roundtrip
//! form, so reruns produce byte-identical CSV files.
//!
//! Row runtimes are kept out of the CSV on purpose (they would break the
//! byte-determinism contract); the wall-clock total lives in the summary
//! JSON instead.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundError};
use crate::hash;
use crate::instances;
use crate::learn::{self, Criterion, LearnError};
use crate::mdp::{ExplorationPolicy, FiniteMdp, ModelError};
use crate::metrics::{self, DiscreteMeasure, MetricError};
use crate::noise::{self, DisturbanceSystem, NoiseApprox, NoiseError};
use crate::quantize::{self, QuantizeError};
use crate::solve::{self, SolveError};
use crate::stats::{self, LogLogFit, StatsError};
use crate::tol;

pub const CSV_SCHEMA: &str = "wrmdp-records v1";
pub const SUMMARY_SCHEMA: &str = "wrmdp-summary v1";
pub const CSV_HEADER: [&str; 7] = ["seed", "instance_hash", "n", "aux", "loss", "bound", "slack"];

/// Slope window accepted for the 1/sqrt(n) estimation-rate experiments.
pub const RATE_BAND: (f64, f64) = (-0.65, -0.35);

const INNER_TOL: f64 = 1e-10;

/// Drift constants for the disturbance-driven experiments; chosen so the
/// affine image plus truncated noise stays near [0, 1] (the system clamps at
/// the domain edge).
const NOISE_ALPHA: f64 = 0.5;
const NOISE_THETA: f64 = 0.25;
const NOISE_HALF_WIDTH: f64 = 0.25;
const NOISE_ATOMS: usize = 41;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Continuity,
    RobustnessDiscounted,
    RobustnessAverage,
    QuantizationRate,
    SingleTrajectoryRate,
    RestartRate,
    NoiseEmpiricalRate,
    JointModelNoise,
    InvariantMeasure,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Continuity,
        Experiment::RobustnessDiscounted,
        Experiment::RobustnessAverage,
        Experiment::QuantizationRate,
        Experiment::SingleTrajectoryRate,
        Experiment::RestartRate,
        Experiment::NoiseEmpiricalRate,
        Experiment::JointModelNoise,
        Experiment::InvariantMeasure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Continuity => "continuity",
            Experiment::RobustnessDiscounted => "robustness-discounted",
            Experiment::RobustnessAverage => "robustness-average",
            Experiment::QuantizationRate => "quantization-rate",
            Experiment::SingleTrajectoryRate => "single-trajectory-rate",
            Experiment::RestartRate => "restart-rate",
            Experiment::NoiseEmpiricalRate => "noise-empirical-rate",
            Experiment::JointModelNoise => "joint-model-noise",
            Experiment::InvariantMeasure => "invariant-measure",
        }
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                HarnessError::Config(format!(
                    "unknown experiment `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Declarative description of one experiment run, loadable from TOML. Fields
/// left out fall back to per-experiment defaults in [`resolve`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_actions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Bin count for the learning experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Sample-size / bin-count schedule, one batch of rows per entry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<u64>,
    /// Perturbation scales for the pairwise experiments; row i uses
    /// scales[seed mod len].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<f64>,
    /// Disturbance family for the noise experiments: "triangular" or
    /// "uniform" weights on a truncated atom grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_toml_path(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Stable hash of the config as serialized JSON; field order is fixed by
    /// the struct, so equal configs hash equally.
    pub fn hash(&self) -> Result<String, HarnessError> {
        Ok(hash::fnv1a64_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    Triangular,
    Uniform,
}

/// Config with every default filled in and every invariant checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub n_states: usize,
    pub n_actions: usize,
    pub beta: f64,
    pub eps: f64,
    pub bins: usize,
    pub schedule: Vec<u64>,
    pub scales: Vec<f64>,
    pub noise: NoiseFamily,
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, HarnessError> {
    let experiment = Experiment::from_str(&cfg.experiment)?;
    if cfg.seeds.is_empty() {
        return Err(HarnessError::Config("seed list is empty".into()));
    }
    let mut sorted = cfg.seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != cfg.seeds.len() {
        return Err(HarnessError::Config("seeds must be distinct".into()));
    }

    let (def_n, def_m, def_schedule): (usize, usize, &[u64]) = match experiment {
        Experiment::Continuity | Experiment::RobustnessDiscounted => (10, 3, &[]),
        Experiment::RobustnessAverage => (8, 3, &[]),
        Experiment::QuantizationRate => (256, 2, &[4, 8, 16, 32, 64]),
        Experiment::SingleTrajectoryRate => (64, 2, &[1_000, 10_000, 100_000]),
        Experiment::RestartRate => (64, 2, &[100, 1_000, 10_000]),
        Experiment::NoiseEmpiricalRate | Experiment::JointModelNoise => {
            (101, 3, &[100, 1_000, 10_000])
        }
        Experiment::InvariantMeasure => (16, 1, &[]),
    };
    let def_scales: &[f64] = match experiment {
        Experiment::Continuity | Experiment::RobustnessDiscounted => &[0.1, 0.01, 0.001],
        Experiment::RobustnessAverage => &[0.3, 0.03, 0.003],
        _ => &[1.0],
    };

    let rc = Resolved {
        experiment,
        seeds: cfg.seeds.clone(),
        n_states: cfg.n_states.unwrap_or(def_n),
        n_actions: if experiment == Experiment::InvariantMeasure {
            1
        } else {
            cfg.n_actions.unwrap_or(def_m)
        },
        // the noise experiment keeps a shorter horizon: empirically the
        // deployed-policy loss tracks the n^(-1/2) disturbance W1 rate there,
        // while longer horizons push it into a faster collapse regime
        beta: cfg.beta.unwrap_or(if experiment == Experiment::NoiseEmpiricalRate {
            0.8
        } else {
            0.9
        }),
        eps: cfg.eps.unwrap_or(match experiment {
            Experiment::RobustnessAverage
            | Experiment::SingleTrajectoryRate
            | Experiment::RestartRate => 0.3,
            Experiment::QuantizationRate => 0.1,
            _ => 0.15,
        }),
        bins: cfg.bins.unwrap_or(8),
        schedule: if cfg.schedule.is_empty() { def_schedule.to_vec() } else { cfg.schedule.clone() },
        scales: if cfg.scales.is_empty() { def_scales.to_vec() } else { cfg.scales.clone() },
        noise: match cfg.noise.as_deref() {
            None | Some("triangular") => NoiseFamily::Triangular,
            Some("uniform") => NoiseFamily::Uniform,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown noise family `{other}`; expected triangular or uniform"
                )))
            }
        },
    };

    if rc.n_states < 2 {
        return Err(HarnessError::Config("need at least 2 states".into()));
    }
    if rc.n_actions == 0 {
        return Err(HarnessError::Config("need at least one action".into()));
    }
    if !(rc.beta > 0.0 && rc.beta < 1.0) {
        return Err(HarnessError::Config(format!("beta = {} must lie in (0,1)", rc.beta)));
    }
    if !(rc.eps > 0.0 && rc.eps <= 1.0) {
        return Err(HarnessError::Config(format!("eps = {} must lie in (0,1]", rc.eps)));
    }
    let uses_bins = matches!(
        experiment,
        Experiment::SingleTrajectoryRate | Experiment::RestartRate
    );
    if uses_bins && (rc.bins == 0 || rc.bins > rc.n_states) {
        return Err(HarnessError::Config(format!(
            "bins = {} must lie in 1..={}",
            rc.bins, rc.n_states
        )));
    }
    if rc.schedule.is_empty() {
        let uses_schedule = !matches!(
            experiment,
            Experiment::Continuity
                | Experiment::RobustnessDiscounted
                | Experiment::RobustnessAverage
                | Experiment::InvariantMeasure
        );
        if uses_schedule {
            return Err(HarnessError::Config("schedule is empty".into()));
        }
    }
    if rc.schedule.iter().any(|&n| n == 0) {
        return Err(HarnessError::Config("schedule entries must be positive".into()));
    }
    if rc.scales.is_empty() {
        return Err(HarnessError::Config("scale list is empty".into()));
    }
    if rc.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(HarnessError::Config("scales must lie in (0,1]".into()));
    }
    Ok(rc)
}

/// One bound check: the instance, the swept size, the measured loss, the
/// bound, and the slack between them. The wall time spent producing the row
/// is tracked but never serialized into the CSV, which must be byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub instance_hash: String,
    pub n: u64,
    /// Experiment-specific extra column; see the summary's `aux_meaning`.
    pub aux: f64,
    pub loss: f64,
    pub bound: f64,
    pub slack: f64,
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub artifact_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub rows: usize,
    /// Rows whose measured loss exceeds the bound beyond the guard tolerance.
    pub violations: usize,
    pub min_slack: f64,
    /// Median of loss/bound over rows with a positive bound; gauges tightness.
    pub median_loss_bound_ratio: f64,
    pub n_meaning: String,
    pub aux_meaning: String,
    /// Log-log fit of mean loss against n, when n is swept and means are
    /// positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_rate: Option<LogLogFit>,
    /// Same fit for the aux column (e.g. the drift estimation error).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_rate: Option<LogLogFit>,
    pub details: BTreeMap<String, f64>,
    pub pass: bool,
    pub runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub records: Vec<ExperimentRecord>,
    pub summary: RunSummary,
}

/// Runs one experiment: seeds fan out in parallel, each producing its batch
/// of rows; rows are then sorted by (seed, n) so output order is stable.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    let rc = resolve(cfg)?;
    let start = Instant::now();
    let batches: Result<Vec<Vec<ExperimentRecord>>, HarnessError> =
        rc.seeds.par_iter().map(|&seed| rows_for_seed(&rc, seed)).collect();
    let mut records: Vec<ExperimentRecord> = batches?.into_iter().flatten().collect();
    records.sort_by(|a, b| (a.seed, a.n).cmp(&(b.seed, b.n)));
    let summary = summarize_records(&rc, cfg, &records, start.elapsed().as_secs_f64())?;
    Ok(ExperimentOutcome { config: cfg.clone(), records, summary })
}

fn rows_for_seed(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let t0 = Instant::now();
    let mut rows = match rc.experiment {
        Experiment::Continuity => continuity_rows(rc, seed),
        Experiment::RobustnessDiscounted => robustness_discounted_rows(rc, seed),
        Experiment::RobustnessAverage => robustness_average_rows(rc, seed),
        Experiment::QuantizationRate => quantization_rows(rc, seed),
        Experiment::SingleTrajectoryRate => learning_rows(rc, seed, false),
        Experiment::RestartRate => learning_rows(rc, seed, true),
        Experiment::NoiseEmpiricalRate => noise_rows(rc, seed),
        Experiment::JointModelNoise => joint_rows(rc, seed),
        Experiment::InvariantMeasure => invariant_rows(rc, seed),
    }?;
    let dt = t0.elapsed().as_secs_f64() / rows.len().max(1) as f64;
    for r in &mut rows {
        r.runtime_s = dt;
    }
    Ok(rows)
}

fn pair_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9e3779b97f4a7c15)
}

fn model_hash(model: &FiniteMdp) -> String {
    hash::fnv1a64_hex(model.to_json().as_bytes())
}

fn sup_gap(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
}

fn record(seed: u64, instance_hash: String, n: u64, aux: f64, loss: f64, bound: f64) -> ExperimentRecord {
    ExperimentRecord { seed, instance_hash, n, aux, loss, bound, slack: bound - loss, runtime_s: 0.0 }
}

fn seed_scale(rc: &Resolved, seed: u64) -> (u64, f64) {
    let idx = (seed % rc.scales.len() as u64) as usize;
    (idx as u64, rc.scales[idx])
}

/// Exact loss of deploying the approximate model's optimal policy on the
/// reference model under the discounted criterion, plus both solved values.
fn deployed_discounted_loss(
    reference: &FiniteMdp,
    approx: &FiniteMdp,
    beta: f64,
) -> Result<(f64, Array1<f64>, Array1<f64>), HarnessError> {
    let ref_sol = solve::solve_discounted(reference, beta, INNER_TOL)?;
    let approx_sol = solve::solve_discounted(approx, beta, INNER_TOL)?;
    let deployed = solve::policy_evaluation_discounted(reference, &approx_sol.policy, beta)?;
    let loss = sup_gap(&deployed, &ref_sol.value);
    Ok((loss, ref_sol.value, approx_sol.value))
}

fn continuity_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let (idx, scale) = seed_scale(rc, seed);
    let inst = instances::random_regular_grid(rc.n_states, rc.n_actions, rc.eps, 0.6, 1.0, seed);
    let t = inst.model;
    let s = instances::perturb_mdp(&t, scale, scale, pair_seed(seed));
    let dc = metrics::cost_gap(&t, &s)?;
    let ref_sol = solve::solve_discounted(&t, rc.beta, INNER_TOL)?;
    let approx_sol = solve::solve_discounted(&s, rc.beta, INNER_TOL)?;
    let d_value = metrics::kernel_d_f(&t, &s, ref_sol.value.as_slice().unwrap())?;
    let loss = sup_gap(&ref_sol.value, &approx_sol.value);
    let report = bounds::discounted_value_gap(dc, d_value, rc.beta)?;
    Ok(vec![record(seed, model_hash(&t), idx, scale, loss, report.value)])
}

fn robustness_discounted_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let (idx, scale) = seed_scale(rc, seed);
    let inst = instances::random_regular_grid(rc.n_states, rc.n_actions, rc.eps, 0.6, 1.0, seed);
    let t = inst.model;
    let s = instances::perturb_mdp(&t, scale, scale, pair_seed(seed));
    let dc = metrics::cost_gap(&t, &s)?;
    let (loss, ref_value, approx_value) = deployed_discounted_loss(&t, &s, rc.beta)?;
    let d_value = metrics::kernel_d_f(&t, &s, ref_value.as_slice().unwrap())?;
    let d_value_approx = metrics::kernel_d_f(&t, &s, approx_value.as_slice().unwrap())?;
    // the tightest of the three interchangeable forms; a row violation
    // against the minimum is a violation of every form
    let (reports, min_index) =
        bounds::discounted_policy_loss_family(dc, d_value, d_value_approx, rc.beta)?;
    Ok(vec![record(seed, model_hash(&t), idx, scale, loss, reports[min_index].value)])
}

fn robustness_average_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let (idx, lambda) = seed_scale(rc, seed);
    let a = instances::random_minorized_mdp_rand_rho(rc.n_states, rc.n_actions, rc.eps, seed);
    let b = instances::random_minorized_mdp_rand_rho(rc.n_states, rc.n_actions, rc.eps, pair_seed(seed));
    let s = instances::mix_models(&a.model, &b.model, lambda);
    let tau: Vec<f64> = a
        .rho
        .iter()
        .zip(b.rho.iter())
        .map(|(r, q)| (1.0 - lambda) * r + lambda * q)
        .collect();
    let ref_sol = solve::solve_acoe_minorization(&a.model, a.eps, &a.rho, INNER_TOL)?;
    let approx_sol = solve::solve_acoe_minorization(&s, a.eps, &tau, INNER_TOL)?;
    let (g_dep, _) = solve::policy_evaluation_average(&a.model, &approx_sol.policy, a.eps, &a.rho)?;
    let loss = (g_dep - ref_sol.gain).abs();
    let dc = metrics::cost_gap(&a.model, &s)?;
    let h = ref_sol.relative_value.as_slice().unwrap();
    let d_h = metrics::kernel_d_f(&a.model, &s, h)?;
    let d_rho_tau = h
        .iter()
        .zip(a.rho.iter().zip(tau.iter()))
        .map(|(hv, (r, q))| hv * (r - q))
        .sum::<f64>()
        .abs();
    let report = bounds::average_policy_loss_minorized(dc, d_h, d_rho_tau, a.eps)?;
    Ok(vec![record(seed, model_hash(&a.model), idx, lambda, loss, report.value)])
}

fn quantization_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let inst = instances::random_regular_grid(rc.n_states, rc.n_actions, rc.eps, 0.5, 1.0, seed);
    let h = model_hash(&inst.model);
    let mut rows = Vec::with_capacity(rc.schedule.len());
    for &m_bins in &rc.schedule {
        let p = quantize::uniform_partition(&inst.model.coords, m_bins as usize)?;
        let q = quantize::build_quantized_model(&inst.model, &p, None)?;
        let out = learn::learned_policy_loss(
            &inst.model,
            &q.model,
            &p,
            Criterion::Discounted { beta: rc.beta },
        )?;
        let report =
            bounds::quantized_policy_loss_discounted(inst.lip_c, inst.lip_t, out.delta, rc.beta)?;
        rows.push(record(seed, h.clone(), m_bins, out.delta, out.loss, report.value));
    }
    Ok(rows)
}

/// Gap-scale exponent window for the learning environments; estimation
/// error over the default sample schedules sweeps through this range.
const LEARNING_GAP_EXPONENTS: (f64, f64) = (0.5, 3.5);

/// Shared body of the two learning-rate experiments. The environment is
/// exactly aggregable, so a perfectly estimated bin model deploys with zero
/// loss and the measured loss isolates estimation error. The bound column
/// carries the only a priori bound that needs no opaque constants: the value
/// range c_max/(1-beta).
fn learning_rows(rc: &Resolved, seed: u64, restart: bool) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let coords = instances::unit_grid(rc.n_states);
    let p = quantize::uniform_partition(&coords, rc.bins)?;
    let env = instances::learning_rate_env(
        &p,
        &coords,
        rc.n_actions,
        rc.eps,
        LEARNING_GAP_EXPONENTS,
        seed,
    );
    let h = model_hash(&env.model);
    let envelope = env.model.c_max / (1.0 - rc.beta);
    let gamma = ExplorationPolicy::uniform(rc.n_actions);
    let mut rows = Vec::with_capacity(rc.schedule.len());
    for &n in &rc.schedule {
        let learn_seed = pair_seed(seed).wrapping_add(n);
        let est = if restart {
            learn::learn_restart(&env.model, &p, None, n as usize, learn_seed)?
        } else {
            learn::learn_single_trajectory(&env.model, &p, &gamma, n as usize, learn_seed)?
        };
        let out = learn::learned_policy_loss(
            &env.model,
            &est.model,
            &p,
            Criterion::Discounted { beta: rc.beta },
        )?;
        rows.push(record(seed, h.clone(), n, est.zero_visit_cells as f64, out.loss, envelope));
    }
    Ok(rows)
}

/// Truncated noise on [-w, w]: evenly spaced atoms with triangular or uniform
/// weights. Symmetric with mean zero, which keeps the no-intercept least
/// squares fit of the drift consistent.
pub fn truncated_noise(family: NoiseFamily) -> DiscreteMeasure {
    let k = NOISE_ATOMS;
    let pts: Vec<f64> = (0..k)
        .map(|i| -NOISE_HALF_WIDTH + 2.0 * NOISE_HALF_WIDTH * i as f64 / (k - 1) as f64)
        .collect();
    let mut w: Vec<f64> = match family {
        NoiseFamily::Uniform => vec![1.0; k],
        NoiseFamily::Triangular => {
            let mid = (k - 1) as f64 / 2.0;
            (0..k).map(|i| 1.0 + mid - (i as f64 - mid).abs()).collect()
        }
    };
    instances::normalize_row(&mut w);
    DiscreteMeasure::from_points_1d(&pts, &w).expect("atom grid is valid")
}

fn noise_setting(rc: &Resolved, seed: u64) -> (DisturbanceSystem, Array2<f64>, Array2<f64>, Array2<f64>) {
    let sys = DisturbanceSystem::affine(NOISE_ALPHA, NOISE_THETA, (0.0, 1.0));
    let coords = instances::unit_grid(rc.n_states);
    let actions = instances::unit_grid(rc.n_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100000001b3).wrapping_add(7));
    let mut cost = Array2::zeros((rc.n_states, rc.n_actions));
    for u in 0..rc.n_actions {
        let kink: f64 = rand::Rng::random(&mut rng);
        let offset: f64 = rand::Rng::random::<f64>(&mut rng) * 0.5;
        for x in 0..rc.n_states {
            cost[[x, u]] = (coords[[x, 0]] - kink).abs() + offset;
        }
    }
    (sys, coords, actions, cost)
}

fn draw_noise_samples(mu: &DiscreteMeasure, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| mu.support[[crate::mdp::sample_from_weights(&mu.weights, &mut rng), 0]])
        .collect()
}

fn noise_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mu = truncated_noise(rc.noise);
    let (sys, coords, actions, cost) = noise_setting(rc, seed);
    let env = noise::model_from_noise(&sys, &mu, &coords, &actions, &cost)?;
    let h = model_hash(&env);
    let mut rows = Vec::with_capacity(rc.schedule.len());
    for &n in &rc.schedule {
        let samples = draw_noise_samples(&mu, n as usize, pair_seed(seed).wrapping_add(n));
        let mu_n = noise::empirical_noise(&samples)?;
        let rec = noise::noise_policy_loss(
            &sys,
            &mu,
            &NoiseApprox::Measure(&mu_n),
            &coords,
            &actions,
            &cost,
            Criterion::Discounted { beta: rc.beta },
        )?;
        let report = bounds::noise_policy_loss_w1_measured(
            rec.w1_noise,
            rec.lip_value,
            sys.lip_w,
            rec.max_gap,
            rc.beta,
        )?;
        rows.push(record(seed, h.clone(), n, rec.w1_noise, rec.loss, report.value));
    }
    Ok(rows)
}

fn joint_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mu = truncated_noise(rc.noise);
    let (sys, coords, actions, cost) = noise_setting(rc, seed);
    let env = noise::model_from_noise(&sys, &mu, &coords, &actions, &cost)?;
    let h = model_hash(&env);
    let mut rows = Vec::with_capacity(rc.schedule.len());
    for &n in &rc.schedule {
        let ds = noise::synthetic_affine_dataset(
            NOISE_ALPHA,
            NOISE_THETA,
            &mu,
            (0.0, 1.0),
            (0.0, 1.0),
            n as usize,
            pair_seed(seed).wrapping_add(n),
        );
        let fit = noise::fit_linear_r(&ds)?;
        let nu = noise::empirical_noise(&fit.residuals)?;
        let rec = noise::noise_policy_loss(
            &sys,
            &mu,
            &NoiseApprox::Fitted { alpha: fit.alpha, theta: fit.theta, measure: &nu },
            &coords,
            &actions,
            &cost,
            Criterion::Discounted { beta: rc.beta },
        )?;
        let r_gap = rec.r_hat_gap.expect("fitted approximation reports a drift gap");
        let report = bounds::noise_policy_loss_fitted_system(
            rec.d_f_tilde,
            r_gap,
            rec.lip_value,
            rec.max_gap,
            rc.beta,
        )?;
        rows.push(record(seed, h.clone(), n, r_gap, rec.loss, report.value));
    }
    Ok(rows)
}

fn invariant_rows(rc: &Resolved, seed: u64) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let a = instances::random_regular_grid(rc.n_states, 1, rc.eps, 0.5, 1.0, seed).model;
    let b = instances::random_regular_grid(rc.n_states, 1, rc.eps, 0.5, 1.0, pair_seed(seed)).model;
    let report = bounds::invariant_measure_gap(&a, &b)?;
    let loss = report.measured_loss.expect("comparison attaches the exact gap");
    let sup_row = report.inputs["sup_row_w1"];
    Ok(vec![record(seed, model_hash(&a), rc.n_states as u64, sup_row, loss, report.value)])
}

fn in_band(fit: &Option<LogLogFit>) -> bool {
    fit.map(|f| f.slope >= RATE_BAND.0 && f.slope <= RATE_BAND.1).unwrap_or(false)
}

/// Mean of `pick` grouped by n, for rate fitting. Returns None unless at
/// least two distinct n values exist and every group mean is positive.
fn rate_over_n(
    records: &[ExperimentRecord],
    pick: impl Fn(&ExperimentRecord) -> f64,
) -> Option<LogLogFit> {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.n).or_default().push(pick(r));
    }
    if groups.len() < 2 {
        return None;
    }
    let ns: Vec<f64> = groups.keys().map(|&n| n as f64).collect();
    let means: Vec<f64> = groups.values().map(|v| stats::mean(v)).collect();
    if means.iter().any(|&m| m <= 0.0) {
        return None;
    }
    stats::fit_loglog(&ns, &means).ok()
}

fn summarize_records(
    rc: &Resolved,
    cfg: &ExperimentConfig,
    records: &[ExperimentRecord],
    runtime_s: f64,
) -> Result<RunSummary, HarnessError> {
    let mut violations = 0usize;
    let mut min_slack = f64::INFINITY;
    let mut ratios: Vec<f64> = Vec::new();
    for r in records {
        if r.slack < -tol::DOMINATION_GUARD * r.bound.abs().max(1.0) {
            violations += 1;
        }
        min_slack = min_slack.min(r.slack);
        if r.bound > 0.0 {
            ratios.push(r.loss / r.bound);
        }
    }
    if records.is_empty() {
        min_slack = 0.0;
    }
    ratios.sort_by(f64::total_cmp);
    let median_ratio = if ratios.is_empty() { 0.0 } else { ratios[ratios.len() / 2] };

    let mut details = BTreeMap::new();
    let loss_rate = rate_over_n(records, |r| r.loss);
    let aux_rate = rate_over_n(records, |r| r.aux);

    let (n_meaning, aux_meaning) = match rc.experiment {
        Experiment::Continuity | Experiment::RobustnessDiscounted | Experiment::RobustnessAverage => {
            ("scale index", "perturbation scale")
        }
        Experiment::QuantizationRate => ("bin count", "partition diameter"),
        Experiment::SingleTrajectoryRate => ("trajectory length", "zero-visit cells"),
        Experiment::RestartRate => ("draws per cell", "zero-visit cells"),
        Experiment::NoiseEmpiricalRate => ("noise sample count", "w1(mu, mu_n)"),
        Experiment::JointModelNoise => ("observation count", "sup |fitted - true| drift gap"),
        Experiment::InvariantMeasure => ("state count", "sup per-state kernel w1"),
    };

    let pass = match rc.experiment {
        Experiment::Continuity
        | Experiment::RobustnessDiscounted
        | Experiment::RobustnessAverage
        | Experiment::InvariantMeasure => violations == 0,
        Experiment::QuantizationRate => {
            // seed-averaged loss should fall as the partition refines;
            // individual seeds may fluctuate when a coarse policy happens
            // to be optimal
            let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in records {
                groups.entry(r.n).or_default().push(r.loss);
            }
            let means: Vec<f64> = groups.values().map(|v| stats::mean(v)).collect();
            let mut monotone_violations = 0usize;
            for w in means.windows(2) {
                if w[1] > w[0] + 1e-8 * w[0].abs().max(1.0) {
                    monotone_violations += 1;
                }
            }
            details.insert("mean_monotonicity_violations".into(), monotone_violations as f64);
            violations == 0 && monotone_violations == 0
        }
        Experiment::SingleTrajectoryRate | Experiment::RestartRate => {
            violations == 0 && in_band(&loss_rate)
        }
        Experiment::NoiseEmpiricalRate => violations == 0 && in_band(&loss_rate),
        Experiment::JointModelNoise => violations == 0 && in_band(&aux_rate),
    };

    Ok(RunSummary {
        schema: SUMMARY_SCHEMA.to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: rc.experiment.name().to_string(),
        config_hash: cfg.hash()?,
        rows: records.len(),
        violations,
        min_slack,
        median_loss_bound_ratio: median_ratio,
        n_meaning: n_meaning.to_string(),
        aux_meaning: aux_meaning.to_string(),
        loss_rate,
        aux_rate,
        details,
        pass,
        runtime_s,
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes records as CSV with a schema comment line and the versioned header.
/// Output bytes depend only on the records.
pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# {CSV_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(&[
            r.seed.to_string(),
            r.instance_hash.clone(),
            r.n.to_string(),
            fmt_f64(r.aux),
            fmt_f64(r.loss),
            fmt_f64(r.bound),
            fmt_f64(r.slack),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(HarnessError::Config(format!(
            "unexpected CSV header {:?}; expected {:?}",
            headers, CSV_HEADER
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str, HarnessError> {
            rec.get(i).ok_or_else(|| HarnessError::Config("short CSV record".into()))
        };
        let num = |i: usize| -> Result<f64, HarnessError> {
            field(i)?.parse::<f64>().map_err(|e| HarnessError::Config(format!("bad number: {e}")))
        };
        out.push(ExperimentRecord {
            seed: field(0)?
                .parse()
                .map_err(|e| HarnessError::Config(format!("bad seed: {e}")))?,
            instance_hash: field(1)?.to_string(),
            n: field(2)?.parse().map_err(|e| HarnessError::Config(format!("bad n: {e}")))?,
            aux: num(3)?,
            loss: num(4)?,
            bound: num(5)?,
            slack: num(6)?,
            runtime_s: 0.0,
        });
    }
    Ok(out)
}

/// Least-squares power-law fit of column `y_col` against column `x_col` of a
/// records CSV. Requires at least three strictly positive points.
pub fn fit_rate_from_csv(path: &Path, x_col: &str, y_col: &str) -> Result<LogLogFit, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, HarnessError> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            HarnessError::Config(format!(
                "column `{name}` not found; header has {:?}",
                headers.iter().collect::<Vec<_>>()
            ))
        })
    };
    let (xi, yi) = (col(x_col)?, col(y_col)?);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .ok_or_else(|| HarnessError::Config("short CSV record".into()))?
                .parse::<f64>()
                .map_err(|e| HarnessError::Config(format!("bad number in column: {e}")))
        };
        xs.push(parse(xi)?);
        ys.push(parse(yi)?);
    }
    if xs.len() < 3 {
        return Err(HarnessError::Config(format!("need at least 3 points, got {}", xs.len())));
    }
    Ok(stats::fit_loglog(&xs, &ys)?)
}

/// Writes `<experiment>.csv` and `<experiment>-summary.json` under `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{}.csv", outcome.summary.experiment));
    write_records_csv(&csv_path, &outcome.records)?;
    let json_path = dir.join(format!("{}-summary.json", outcome.summary.experiment));
    let mut doc = serde_json::to_string_pretty(&outcome.summary)?;
    doc.push('\n');
    fs::write(&json_path, doc)?;
    Ok((csv_path, json_path))
}

/// Renders a fixed-width pass/fail table from every `*-summary.json` under
/// `dir`, sorted by experiment name.
pub fn summarize_dir(dir: &Path) -> Result<String, HarnessError> {
    let mut summaries: Vec<RunSummary> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_summary = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.ends_with("-summary.json"))
            .unwrap_or(false);
        if is_summary {
            let s: RunSummary = serde_json::from_str(&fs::read_to_string(&path)?)?;
            summaries.push(s);
        }
    }
    if summaries.is_empty() {
        return Err(HarnessError::Config(format!("no *-summary.json files under {}", dir.display())));
    }
    summaries.sort_by(|a, b| a.experiment.cmp(&b.experiment));
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>6} {:>10} {:>12} {:>8} {:>6}\n",
        "experiment", "rows", "violations", "min_slack", "slope", "pass"
    ));
    for s in &summaries {
        let slope = s
            .loss_rate
            .or(s.aux_rate)
            .map(|f| format!("{:.3}", f.slope))
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{:<24} {:>6} {:>10} {:>12.3e} {:>8} {:>6}\n",
            s.experiment,
            s.rows,
            s.violations,
            s.min_slack,
            slope,
            if s.pass { "pass" } else { "FAIL" }
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(experiment: &str, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            experiment: experiment.into(),
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

    #[test]
    fn config_toml_roundtrip_and_validation() {
        let cfg = ExperimentConfig::from_toml_str(
            "experiment = \"continuity\"\nseeds = [0, 1, 2]\nn_states = 6\nbeta = 0.8\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, "continuity");
        let rc = resolve(&cfg).unwrap();
        assert_eq!(rc.n_states, 6);
        assert_eq!(rc.beta, 0.8);
        assert_eq!(rc.n_actions, 3);
        assert_eq!(rc.scales.len(), 3);

        assert!(ExperimentConfig::from_toml_str("experiment = \"continuity\"").is_err());
        assert!(ExperimentConfig::from_toml_str(
            "experiment = \"continuity\"\nseeds = [0]\nbogus_field = 1\n"
        )
        .is_err());
    }

    #[test]
    fn resolve_rejects_bad_configs() {
        assert!(resolve(&base_config("no-such-experiment", vec![0])).is_err());
        assert!(resolve(&base_config("continuity", vec![])).is_err());
        assert!(resolve(&base_config("continuity", vec![1, 1])).is_err());
        let mut cfg = base_config("continuity", vec![0]);
        cfg.beta = Some(1.0);
        assert!(resolve(&cfg).is_err());
        let mut cfg = base_config("restart-rate", vec![0]);
        cfg.schedule = vec![0];
        assert!(resolve(&cfg).is_err());
        let mut cfg = base_config("noise-empirical-rate", vec![0]);
        cfg.noise = Some("cauchy".into());
        assert!(resolve(&cfg).is_err());
    }

    #[test]
    fn continuity_run_has_one_clean_row_per_seed() {
        let mut cfg = base_config("continuity", (0..10).collect());
        cfg.n_states = Some(10);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 10);
        assert!(out.records.iter().all(|r| r.slack >= 0.0));
        assert!(out.summary.pass);
        assert_eq!(out.summary.violations, 0);
        // rows are sorted by (seed, n)
        let seeds: Vec<u64> = out.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, (0..10).collect::<Vec<u64>>());
    }

    #[test]
    fn identical_configs_give_byte_identical_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config("continuity", vec![3, 5, 8]);
        cfg.n_states = Some(6);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let pa = dir.path().join("a.csv");
        let pb = dir.path().join("b.csv");
        write_records_csv(&pa, &a.records).unwrap();
        write_records_csv(&pb, &b.records).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
    }

    #[test]
    fn csv_roundtrip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config("invariant-measure", vec![0, 1]);
        cfg.n_states = Some(8);
        let out = run_experiment(&cfg).unwrap();
        let path = dir.path().join("r.csv");
        write_records_csv(&path, &out.records).unwrap();
        let back = read_records_csv(&path).unwrap();
        let strip = |rs: &[ExperimentRecord]| -> Vec<ExperimentRecord> {
            rs.iter().map(|r| ExperimentRecord { runtime_s: 0.0, ..r.clone() }).collect()
        };
        assert_eq!(back, strip(&out.records));
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&format!("# {CSV_SCHEMA}\n")));
    }

    #[test]
    fn fit_rate_recovers_exact_power_laws() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rate.csv");
        let records: Vec<ExperimentRecord> = [10u64, 100, 1000, 10000]
            .iter()
            .map(|&n| ExperimentRecord {
                seed: 0,
                instance_hash: "x".into(),
                n,
                aux: 2.0 / (n as f64),
                loss: 3.0 / (n as f64).sqrt(),
                bound: 1.0,
                slack: 1.0,
                runtime_s: 0.0,
            })
            .collect();
        write_records_csv(&path, &records).unwrap();
        let fit = fit_rate_from_csv(&path, "n", "loss").unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-9, "slope {}", fit.slope);
        let fit = fit_rate_from_csv(&path, "n", "aux").unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9, "slope {}", fit.slope);
        assert!(fit_rate_from_csv(&path, "n", "nope").is_err());
    }

    #[test]
    fn quantization_mini_run_dominates_and_decreases() {
        let mut cfg = base_config("quantization-rate", vec![0, 1]);
        cfg.n_states = Some(64);
        cfg.schedule = vec![4, 8, 16];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), 6);
        assert_eq!(out.summary.violations, 0);
        assert_eq!(out.summary.details["mean_monotonicity_violations"], 0.0);
        assert!(out.summary.pass);
    }

    #[test]
    fn noise_mini_run_dominates() {
        let mut cfg = base_config("noise-empirical-rate", vec![0, 1]);
        cfg.n_states = Some(41);
        cfg.schedule = vec![50, 200];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.violations, 0, "summary {:?}", out.summary);
    }

    #[test]
    fn joint_mini_run_dominates() {
        let mut cfg = base_config("joint-model-noise", vec![0, 1]);
        cfg.n_states = Some(41);
        cfg.schedule = vec![50, 200];
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.violations, 0, "summary {:?}", out.summary);
        assert!(out.records.iter().all(|r| r.aux >= 0.0));
    }

    #[test]
    fn learning_mini_runs_produce_rows() {
        for name in ["restart-rate", "single-trajectory-rate"] {
            let mut cfg = base_config(name, vec![0]);
            cfg.n_states = Some(16);
            cfg.bins = Some(4);
            cfg.schedule = vec![50, 500];
            let out = run_experiment(&cfg).unwrap();
            assert_eq!(out.records.len(), 2);
            assert_eq!(out.summary.violations, 0);
            assert!(out.records.iter().all(|r| r.loss <= r.bound));
        }
    }

    #[test]
    fn robustness_mini_runs_dominate() {
        let mut cfg = base_config("robustness-discounted", (0..6).collect());
        cfg.n_states = Some(8);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.violations, 0);
        let mut cfg = base_config("robustness-average", (0..6).collect());
        cfg.n_states = Some(6);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.summary.violations, 0);
    }

    #[test]
    fn outputs_and_summary_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config("continuity", vec![0, 1]);
        cfg.n_states = Some(6);
        let out = run_experiment(&cfg).unwrap();
        let (csv_path, json_path) = write_outputs(&out, dir.path()).unwrap();
        assert!(csv_path.exists() && json_path.exists());
        let table = summarize_dir(dir.path()).unwrap();
        assert!(table.contains("continuity"), "table:\n{table}");
        assert!(table.contains("pass"), "table:\n{table}");
        assert!(summarize_dir(&dir.path().join("empty")).is_err());
    }
}
