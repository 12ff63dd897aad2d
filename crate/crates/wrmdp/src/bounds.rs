//! Closed-form perturbation bounds for values, gains, and deployed-policy
//! losses, packaged as recomputable reports.
//!
//! Every bound here is a rational expression in a handful of named scalar
//! inputs (distances between models, Lipschitz constants, a discount factor,
//! a minorization mass, a quantization diameter). A [`BoundReport`] keeps the
//! inputs, the per-term breakdown, and the final value together so a consumer
//! can re-derive the number from the inputs alone and audit which term
//! dominates. Reports serialize to a single JSON object.
//!
//! Functional-distance inputs (`d_value`, `d_h`) are always evaluated against
//! the reference model's solved value or bias function; constructors document
//! which model each input must come from, and the input names keep the two
//! models apart (`*_approx` belongs to the approximating model).

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::mdp::FiniteMdp;
use crate::metrics::{self, DiscreteMeasure, MetricError};
use crate::tol;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("bad input: {0}")]
    BadInput(String),
    /// A denominator in the bound is not strictly positive, e.g. the
    /// discounted kernel Lipschitz factor has beta * lip_kernel >= 1.
    #[error("degenerate bound: {0}")]
    Degenerate(String),
    #[error("missing input `{0}` in report")]
    MissingInput(String),
    /// The chain's stationary distribution is not unique (or the linear
    /// system for it is numerically singular), so a single invariant measure
    /// comparison is meaningless.
    #[error("stationary distribution is not unique: {0}")]
    NonUniqueStationary(#[from] linalg::SingularMatrix),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Identifies which quantity a report bounds and which formula produced it.
///
/// `*Constants` variants take Lipschitz constants and a kernel W1 distance
/// instead of a functional distance evaluated at a solved value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundRule {
    /// |J*(c,T) - J*(c^,S)| via cost gap and d_{J*(c,T)}(T,S).
    DiscountedValueGap,
    /// Same target with d_{J*} replaced by Lip(J*) * sup-W1 of the kernels.
    DiscountedValueGapLipschitz,
    /// Same target from (lip_cost, lip_kernel, d_w1) alone.
    DiscountedValueGapConstants,
    /// Loss of deploying the approximate greedy policy on the reference
    /// model; single-sided form with the quadratic 1/(1-beta)^2 prefactor.
    DiscountedPolicyLossQuadratic,
    /// Same loss using functional distances under both solved values.
    DiscountedPolicyLossTwoSided,
    /// Same loss using only the approximate model's value function.
    DiscountedPolicyLossApproxSided,
    DiscountedPolicyLossConstants,
    DiscountedPolicyLossTwoSidedConstants,
    /// |g*(c,T) - g*(c^,S)| for minorized average-cost models.
    AverageGainGap,
    AverageGainGapConstants,
    /// Average-cost loss of the approximate optimal policy on the reference
    /// model, minorized form with the (2+eps)/eps prefactor.
    AveragePolicyLossMinorized,
    AveragePolicyLossConstants,
    /// Two-sided constants form of the average-cost policy loss that avoids
    /// minorization data entirely.
    AveragePolicyLossTwoSidedConstants,
    /// Loss of lifting the quantized model's optimal policy back to the fine
    /// model, discounted criterion.
    QuantizedPolicyLossDiscounted,
    QuantizedPolicyLossAverage,
    /// Loss from replacing the disturbance distribution, via the discrepancy
    /// d_f~ evaluated through the noise-to-state map.
    NoisePolicyLossDiscrepancy,
    /// Same loss from W1 between disturbance distributions and the system's
    /// Lipschitz data.
    NoisePolicyLossW1,
    NoisePolicyLossAverageW1,
    /// W1 form with the optimal value's Lipschitz constant measured on the
    /// solved truth instead of estimated a priori, plus a grid-snapping slack
    /// of one grid gap inside the W1 factor.
    NoisePolicyLossW1Measured,
    /// Loss when both the drift and the disturbance distribution are
    /// estimated: noise discrepancy term plus a drift-error term with the
    /// same grid-snapping slack.
    NoisePolicyLossFittedSystem,
    /// W1 between stationary distributions of two control-free chains.
    InvariantMeasureGap,
}

impl BoundRule {
    /// Input names this rule treats as distances: the bound must be
    /// nondecreasing in each of them.
    pub fn distance_inputs(self) -> &'static [&'static str] {
        match self {
            BoundRule::DiscountedValueGap => &["dc", "d_value"],
            BoundRule::DiscountedValueGapLipschitz => &["dc", "d_w1"],
            BoundRule::DiscountedValueGapConstants => &["dc", "d_w1"],
            BoundRule::DiscountedPolicyLossQuadratic => &["dc", "d_value"],
            BoundRule::DiscountedPolicyLossTwoSided => &["dc", "d_value", "d_value_approx"],
            BoundRule::DiscountedPolicyLossApproxSided => &["dc", "d_value_approx"],
            BoundRule::DiscountedPolicyLossConstants => &["dc", "d_w1"],
            BoundRule::DiscountedPolicyLossTwoSidedConstants => &["dc", "d_w1"],
            BoundRule::AverageGainGap => &["dc", "d_h"],
            BoundRule::AverageGainGapConstants => &["dc", "d_w1"],
            BoundRule::AveragePolicyLossMinorized => &["dc", "d_h", "d_rho_tau"],
            BoundRule::AveragePolicyLossConstants => &["dc", "d_w1", "d_w1_rho_tau"],
            BoundRule::AveragePolicyLossTwoSidedConstants => &["dc", "d_w1"],
            BoundRule::QuantizedPolicyLossDiscounted => &["delta"],
            BoundRule::QuantizedPolicyLossAverage => &["delta"],
            BoundRule::NoisePolicyLossDiscrepancy => &["d_f_tilde"],
            BoundRule::NoisePolicyLossW1 => &["w1_noise"],
            BoundRule::NoisePolicyLossAverageW1 => &["w1_noise"],
            BoundRule::NoisePolicyLossW1Measured => &["w1_noise"],
            BoundRule::NoisePolicyLossFittedSystem => &["d_f_tilde", "r_gap"],
            BoundRule::InvariantMeasureGap => &["sup_row_w1"],
        }
    }
}

/// One evaluated bound: the rule, the named scalar inputs it consumed, the
/// additive term breakdown, and the resulting value. `measured_loss` is the
/// exactly computed quantity the bound is supposed to dominate, when the
/// caller has it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub rule: BoundRule,
    pub inputs: BTreeMap<String, f64>,
    pub terms: BTreeMap<String, f64>,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured_loss: Option<f64>,
}

impl BoundReport {
    /// Re-derives the bound value from the stored inputs. Agreement with
    /// `self.value` to within `tol::BOUND_RECOMPUTE_TOL` is an invariant.
    pub fn recompute(&self) -> Result<f64, BoundError> {
        Ok(evaluate(self.rule, &self.inputs)?.0)
    }

    pub fn with_loss(mut self, loss: f64) -> Self {
        self.measured_loss = Some(loss);
        self
    }

    /// Whether the measured loss respects the bound up to `slack`. `None`
    /// when no loss was attached.
    pub fn dominates(&self, slack: f64) -> Option<bool> {
        self.measured_loss.map(|l| l <= self.value + slack)
    }

    /// Panics with the full report if a measured loss exceeds the bound by
    /// more than `tol::DOMINATION_GUARD`. A violated bound means either the
    /// inputs were computed against the wrong model or the formula is wrong;
    /// both are fatal.
    pub fn assert_dominates(&self) {
        if let Some(false) = self.dominates(tol::DOMINATION_GUARD) {
            panic!(
                "bound violated: measured loss {} exceeds bound {}\n{:#?}",
                self.measured_loss.unwrap(),
                self.value,
                self
            );
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bound report serializes")
    }
}

fn get(inputs: &BTreeMap<String, f64>, key: &str) -> Result<f64, BoundError> {
    inputs
        .get(key)
        .copied()
        .ok_or_else(|| BoundError::MissingInput(key.to_string()))
}

fn check_nonneg(name: &str, v: f64) -> Result<(), BoundError> {
    if !v.is_finite() || v < 0.0 {
        return Err(BoundError::BadInput(format!("{name} = {v} must be finite and >= 0")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<(), BoundError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(BoundError::BadInput(format!("beta = {beta} must lie in (0,1)")));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), BoundError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(BoundError::BadInput(format!("eps = {eps} must lie in (0,1]")));
    }
    Ok(())
}

/// Geometric-sum factor 1/(1 - beta*lip) used when pushing a Lipschitz cost
/// through a Lipschitz kernel; errors when the contraction fails.
fn lip_value_factor(lip_cost: f64, lip_kernel: f64, beta: f64) -> Result<f64, BoundError> {
    let denom = 1.0 - beta * lip_kernel;
    if denom <= 0.0 {
        return Err(BoundError::Degenerate(format!(
            "beta * lip_kernel = {} >= 1, value Lipschitz constant diverges",
            beta * lip_kernel
        )));
    }
    Ok(lip_cost / denom)
}

/// Core formula table: maps (rule, inputs) to (value, term breakdown). All
/// constructors and `BoundReport::recompute` funnel through here so the two
/// can never disagree.
fn evaluate(
    rule: BoundRule,
    inputs: &BTreeMap<String, f64>,
) -> Result<(f64, BTreeMap<String, f64>), BoundError> {
    let mut terms = BTreeMap::new();
    let mut term = |name: &str, v: f64| terms.insert(name.to_string(), v);
    let value = match rule {
        BoundRule::DiscountedValueGap => {
            let (dc, d, beta) = (get(inputs, "dc")?, get(inputs, "d_value")?, get(inputs, "beta")?);
            check_beta(beta)?;
            let cost_term = dc / (1.0 - beta);
            let kernel_term = beta * d / (1.0 - beta);
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedValueGapLipschitz => {
            let dc = get(inputs, "dc")?;
            let lip_value = get(inputs, "lip_value")?;
            let d_w1 = get(inputs, "d_w1")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let cost_term = dc / (1.0 - beta);
            let kernel_term = beta * lip_value * d_w1 / (1.0 - beta);
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedValueGapConstants => {
            let dc = get(inputs, "dc")?;
            let d_w1 = get(inputs, "d_w1")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let lv = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, beta)?;
            let cost_term = dc / (1.0 - beta);
            let kernel_term = beta * lv * d_w1 / (1.0 - beta);
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedPolicyLossQuadratic => {
            let (dc, d, beta) = (get(inputs, "dc")?, get(inputs, "d_value")?, get(inputs, "beta")?);
            check_beta(beta)?;
            let om = 1.0 - beta;
            let cost_term = 2.0 * dc / (om * om);
            let kernel_term = 2.0 * beta * d / (om * om);
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedPolicyLossTwoSided => {
            let dc = get(inputs, "dc")?;
            let d = get(inputs, "d_value")?;
            let da = get(inputs, "d_value_approx")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let om = 1.0 - beta;
            let cost_term = 2.0 * dc / om;
            let kernel_term = beta * (d + da) / om;
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedPolicyLossApproxSided => {
            let dc = get(inputs, "dc")?;
            let da = get(inputs, "d_value_approx")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let om = 1.0 - beta;
            let cost_term = 2.0 * dc / om;
            let kernel_term = 2.0 * beta * da / om;
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedPolicyLossConstants => {
            let dc = get(inputs, "dc")?;
            let d_w1 = get(inputs, "d_w1")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let lv = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, beta)?;
            let om = 1.0 - beta;
            let cost_term = 2.0 * dc / (om * om);
            let kernel_term = 2.0 * beta * lv * d_w1 / (om * om);
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::DiscountedPolicyLossTwoSidedConstants => {
            let dc = get(inputs, "dc")?;
            let d_w1 = get(inputs, "d_w1")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let lv = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, beta)?;
            let lva = lip_value_factor(
                get(inputs, "lip_cost_approx")?,
                get(inputs, "lip_kernel_approx")?,
                beta,
            )?;
            let om = 1.0 - beta;
            let cost_term = 2.0 * dc / om;
            let kernel_term = beta * (lv + lva) * d_w1 / om;
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::AverageGainGap => {
            let (dc, dh) = (get(inputs, "dc")?, get(inputs, "d_h")?);
            term("cost", dc);
            term("kernel", dh);
            dc + dh
        }
        BoundRule::AverageGainGapConstants => {
            let dc = get(inputs, "dc")?;
            let d_w1 = get(inputs, "d_w1")?;
            let lh = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, 1.0)?;
            let kernel_term = lh * d_w1;
            term("cost", dc);
            term("kernel", kernel_term);
            dc + kernel_term
        }
        BoundRule::AveragePolicyLossMinorized => {
            let dc = get(inputs, "dc")?;
            let dh = get(inputs, "d_h")?;
            let drt = get(inputs, "d_rho_tau")?;
            let eps = get(inputs, "eps")?;
            check_eps(eps)?;
            let pre = (2.0 + eps) / eps;
            let model_term = pre * (dc + dh);
            let minorizer_term = (2.0 + eps) * drt;
            term("model", model_term);
            term("minorizer", minorizer_term);
            model_term + minorizer_term
        }
        BoundRule::AveragePolicyLossConstants => {
            let dc = get(inputs, "dc")?;
            let d_w1 = get(inputs, "d_w1")?;
            let d_rt = get(inputs, "d_w1_rho_tau")?;
            let eps = get(inputs, "eps")?;
            check_eps(eps)?;
            let lh = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, 1.0)?;
            let pre = (2.0 + eps) / eps;
            let model_term = pre * (dc + lh * d_w1);
            let minorizer_term = pre * eps * lh * d_rt;
            term("model", model_term);
            term("minorizer", minorizer_term);
            model_term + minorizer_term
        }
        BoundRule::AveragePolicyLossTwoSidedConstants => {
            let dc = get(inputs, "dc")?;
            let d_w1 = get(inputs, "d_w1")?;
            let lh = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, 1.0)?;
            let lha = lip_value_factor(
                get(inputs, "lip_cost_approx")?,
                get(inputs, "lip_kernel_approx")?,
                1.0,
            )?;
            let cost_term = 2.0 * dc;
            let kernel_term = (lh + lha) * d_w1;
            term("cost", cost_term);
            term("kernel", kernel_term);
            cost_term + kernel_term
        }
        BoundRule::QuantizedPolicyLossDiscounted => {
            let delta = get(inputs, "delta")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let lv = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, beta)?;
            let om = 1.0 - beta;
            let v = 2.0 * lv * delta / (om * om);
            term("quantization", v);
            v
        }
        BoundRule::QuantizedPolicyLossAverage => {
            let delta = get(inputs, "delta")?;
            let eps = get(inputs, "eps")?;
            check_eps(eps)?;
            let lh = lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_kernel")?, 1.0)?;
            let v = (1.0 + 2.0 / eps) * lh * delta;
            term("quantization", v);
            v
        }
        BoundRule::NoisePolicyLossDiscrepancy => {
            let d = get(inputs, "d_f_tilde")?;
            let beta = get(inputs, "beta")?;
            check_beta(beta)?;
            let v = 2.0 * beta * d / (1.0 - beta);
            term("discrepancy", v);
            v
        }
        BoundRule::NoisePolicyLossW1 => {
            let w1 = get(inputs, "w1_noise")?;
            let beta = get(inputs, "beta")?;
            let lip_w = get(inputs, "lip_noise_w")?;
            check_beta(beta)?;
            let lv =
                lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_noise_x")?, beta)?;
            let v = 2.0 * beta * lv * lip_w * w1 / (1.0 - beta);
            term("noise", v);
            v
        }
        BoundRule::NoisePolicyLossAverageW1 => {
            let w1 = get(inputs, "w1_noise")?;
            let lip_w = get(inputs, "lip_noise_w")?;
            let lh =
                lip_value_factor(get(inputs, "lip_cost")?, get(inputs, "lip_noise_x")?, 1.0)?;
            let v = 2.0 * lh * lip_w * w1;
            term("noise", v);
            v
        }
        BoundRule::NoisePolicyLossW1Measured => {
            let w1 = get(inputs, "w1_noise")?;
            let beta = get(inputs, "beta")?;
            let lip_value = get(inputs, "lip_value")?;
            let lip_w = get(inputs, "lip_noise_w")?;
            let gap = get(inputs, "max_gap")?;
            check_beta(beta)?;
            let pre = 2.0 * beta * lip_value / (1.0 - beta);
            let noise_term = pre * lip_w * w1;
            let slack_term = pre * gap;
            term("noise", noise_term);
            term("grid-slack", slack_term);
            noise_term + slack_term
        }
        BoundRule::NoisePolicyLossFittedSystem => {
            let d = get(inputs, "d_f_tilde")?;
            let r_gap = get(inputs, "r_gap")?;
            let beta = get(inputs, "beta")?;
            let lip_value = get(inputs, "lip_value")?;
            let gap = get(inputs, "max_gap")?;
            check_beta(beta)?;
            let pre = 2.0 * beta / (1.0 - beta);
            let noise_term = pre * d;
            let drift_term = pre * lip_value * r_gap;
            let slack_term = pre * lip_value * gap;
            term("noise", noise_term);
            term("drift", drift_term);
            term("grid-slack", slack_term);
            noise_term + drift_term + slack_term
        }
        BoundRule::InvariantMeasureGap => {
            let sup = get(inputs, "sup_row_w1")?;
            let lip = get(inputs, "lip_kernel")?;
            if lip >= 1.0 {
                return Err(BoundError::Degenerate(format!(
                    "kernel Lipschitz constant {lip} >= 1, chain is not W1-contractive"
                )));
            }
            let v = sup / (1.0 - lip);
            term("perturbation", v);
            v
        }
    };
    for (k, v) in inputs {
        if rule.distance_inputs().contains(&k.as_str()) {
            check_nonneg(k, *v)?;
        }
    }
    if !value.is_finite() || value < 0.0 {
        return Err(BoundError::Degenerate(format!("bound evaluated to {value}")));
    }
    Ok((value, terms))
}

fn build(rule: BoundRule, pairs: &[(&str, f64)]) -> Result<BoundReport, BoundError> {
    let inputs: BTreeMap<String, f64> =
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let (value, terms) = evaluate(rule, &inputs)?;
    Ok(BoundReport { rule, inputs, terms, value, measured_loss: None })
}

/// Gap between discounted optimal values of a reference model (c,T) and an
/// approximation (c^,S), from the sup cost gap `dc` and the kernel
/// discrepancy `d_value` = sup over (x,u) of the reference optimal value
/// integrated against the two kernels.
pub fn discounted_value_gap(dc: f64, d_value: f64, beta: f64) -> Result<BoundReport, BoundError> {
    build(BoundRule::DiscountedValueGap, &[("dc", dc), ("d_value", d_value), ("beta", beta)])
}

/// Variant that majorizes the kernel discrepancy by `lip_value` (a Lipschitz
/// constant of the reference optimal value) times the sup kernel W1 gap.
pub fn discounted_value_gap_lipschitz(
    dc: f64,
    lip_value: f64,
    d_w1: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_value", lip_value)?;
    build(
        BoundRule::DiscountedValueGapLipschitz,
        &[("dc", dc), ("lip_value", lip_value), ("d_w1", d_w1), ("beta", beta)],
    )
}

/// Constants-only variant: the value's Lipschitz constant is replaced by the
/// a priori estimate lip_cost / (1 - beta * lip_kernel).
pub fn discounted_value_gap_constants(
    dc: f64,
    lip_cost: f64,
    lip_kernel: f64,
    d_w1: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_kernel", lip_kernel)?;
    build(
        BoundRule::DiscountedValueGapConstants,
        &[("dc", dc), ("lip_cost", lip_cost), ("lip_kernel", lip_kernel), ("d_w1", d_w1), ("beta", beta)],
    )
}

/// All three interchangeable bounds on the discounted loss of deploying the
/// approximate model's optimal policy on the reference model. `d_value` is
/// the kernel discrepancy under the reference optimal value, `d_value_approx`
/// the one under the approximate optimal value. Returns the three reports and
/// the index of the smallest; which is tightest depends on the instance, so
/// all are kept.
pub fn discounted_policy_loss_family(
    dc: f64,
    d_value: f64,
    d_value_approx: f64,
    beta: f64,
) -> Result<(Vec<BoundReport>, usize), BoundError> {
    let reports = vec![
        build(
            BoundRule::DiscountedPolicyLossQuadratic,
            &[("dc", dc), ("d_value", d_value), ("beta", beta)],
        )?,
        build(
            BoundRule::DiscountedPolicyLossTwoSided,
            &[("dc", dc), ("d_value", d_value), ("d_value_approx", d_value_approx), ("beta", beta)],
        )?,
        build(
            BoundRule::DiscountedPolicyLossApproxSided,
            &[("dc", dc), ("d_value_approx", d_value_approx), ("beta", beta)],
        )?,
    ];
    let min_index = reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(i, _)| i)
        .unwrap();
    Ok((reports, min_index))
}

pub fn discounted_policy_loss_constants(
    dc: f64,
    lip_cost: f64,
    lip_kernel: f64,
    d_w1: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_kernel", lip_kernel)?;
    build(
        BoundRule::DiscountedPolicyLossConstants,
        &[("dc", dc), ("lip_cost", lip_cost), ("lip_kernel", lip_kernel), ("d_w1", d_w1), ("beta", beta)],
    )
}

/// Two-sided constants form: needs Lipschitz data for both models but keeps a
/// single 1/(1-beta) prefactor.
pub fn discounted_policy_loss_two_sided_constants(
    dc: f64,
    lip_cost: f64,
    lip_kernel: f64,
    lip_cost_approx: f64,
    lip_kernel_approx: f64,
    d_w1: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    for (n, v) in [
        ("lip_cost", lip_cost),
        ("lip_kernel", lip_kernel),
        ("lip_cost_approx", lip_cost_approx),
        ("lip_kernel_approx", lip_kernel_approx),
    ] {
        check_nonneg(n, v)?;
    }
    build(
        BoundRule::DiscountedPolicyLossTwoSidedConstants,
        &[
            ("dc", dc),
            ("lip_cost", lip_cost),
            ("lip_kernel", lip_kernel),
            ("lip_cost_approx", lip_cost_approx),
            ("lip_kernel_approx", lip_kernel_approx),
            ("d_w1", d_w1),
            ("beta", beta),
        ],
    )
}

/// Gap between optimal average costs of two minorized models. `d_h` is the
/// kernel discrepancy under the reference model's bias function. The
/// minorization constant cancels and does not appear.
pub fn average_gain_gap(dc: f64, d_h: f64) -> Result<BoundReport, BoundError> {
    build(BoundRule::AverageGainGap, &[("dc", dc), ("d_h", d_h)])
}

pub fn average_gain_gap_constants(
    dc: f64,
    lip_cost: f64,
    lip_kernel: f64,
    d_w1: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_kernel", lip_kernel)?;
    build(
        BoundRule::AverageGainGapConstants,
        &[("dc", dc), ("lip_cost", lip_cost), ("lip_kernel", lip_kernel), ("d_w1", d_w1)],
    )
}

/// Average-cost loss of deploying the approximate model's optimal policy on
/// the reference model, when both models are minorized with the same mass
/// `eps` by measures rho (reference) and tau (approximation). `d_h` is the
/// kernel discrepancy under the reference bias function and `d_rho_tau` the
/// gap |integral of the reference bias against (rho - tau)|.
pub fn average_policy_loss_minorized(
    dc: f64,
    d_h: f64,
    d_rho_tau: f64,
    eps: f64,
) -> Result<BoundReport, BoundError> {
    build(
        BoundRule::AveragePolicyLossMinorized,
        &[("dc", dc), ("d_h", d_h), ("d_rho_tau", d_rho_tau), ("eps", eps)],
    )
}

pub fn average_policy_loss_constants(
    dc: f64,
    lip_cost: f64,
    lip_kernel: f64,
    d_w1: f64,
    d_w1_rho_tau: f64,
    eps: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_kernel", lip_kernel)?;
    build(
        BoundRule::AveragePolicyLossConstants,
        &[
            ("dc", dc),
            ("lip_cost", lip_cost),
            ("lip_kernel", lip_kernel),
            ("d_w1", d_w1),
            ("d_w1_rho_tau", d_w1_rho_tau),
            ("eps", eps),
        ],
    )
}

/// Minorization-free constants form of the average-cost policy loss. Both
/// bias Lipschitz estimates enter, so Lipschitz data for the approximating
/// model is required too. The bias estimates behind it come from a
/// vanishing-discount argument, so pair it with a surrogate-labeled measured
/// loss when the exact average-cost solve is unavailable.
pub fn average_policy_loss_two_sided_constants(
    dc: f64,
    lip_cost: f64,
    lip_kernel: f64,
    lip_cost_approx: f64,
    lip_kernel_approx: f64,
    d_w1: f64,
) -> Result<BoundReport, BoundError> {
    for (n, v) in [
        ("lip_cost", lip_cost),
        ("lip_kernel", lip_kernel),
        ("lip_cost_approx", lip_cost_approx),
        ("lip_kernel_approx", lip_kernel_approx),
    ] {
        check_nonneg(n, v)?;
    }
    build(
        BoundRule::AveragePolicyLossTwoSidedConstants,
        &[
            ("dc", dc),
            ("lip_cost", lip_cost),
            ("lip_kernel", lip_kernel),
            ("lip_cost_approx", lip_cost_approx),
            ("lip_kernel_approx", lip_kernel_approx),
            ("d_w1", d_w1),
        ],
    )
}

/// Discounted loss of lifting the quantized model's optimal policy back to a
/// Lipschitz fine model, in terms of the partition diameter `delta`.
pub fn quantized_policy_loss_discounted(
    lip_cost: f64,
    lip_kernel: f64,
    delta: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_kernel", lip_kernel)?;
    build(
        BoundRule::QuantizedPolicyLossDiscounted,
        &[("lip_cost", lip_cost), ("lip_kernel", lip_kernel), ("delta", delta), ("beta", beta)],
    )
}

pub fn quantized_policy_loss_average(
    lip_cost: f64,
    lip_kernel: f64,
    delta: f64,
    eps: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_kernel", lip_kernel)?;
    build(
        BoundRule::QuantizedPolicyLossAverage,
        &[("lip_cost", lip_cost), ("lip_kernel", lip_kernel), ("delta", delta), ("eps", eps)],
    )
}

/// Discounted loss from swapping the disturbance distribution, given the
/// discrepancy `d_f_tilde` between the two distributions under the
/// noise-to-value map (the reference optimal value composed with the system
/// step). Exact companion to `noise::noise_policy_loss`.
pub fn noise_policy_loss_discrepancy(d_f_tilde: f64, beta: f64) -> Result<BoundReport, BoundError> {
    build(BoundRule::NoisePolicyLossDiscrepancy, &[("d_f_tilde", d_f_tilde), ("beta", beta)])
}

/// W1 form of the disturbance-swap loss: `lip_noise_w` and `lip_noise_x` are
/// the system map's Lipschitz constants in the noise and state arguments.
pub fn noise_policy_loss_w1(
    w1_noise: f64,
    lip_cost: f64,
    lip_noise_w: f64,
    lip_noise_x: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_noise_w", lip_noise_w)?;
    check_nonneg("lip_noise_x", lip_noise_x)?;
    build(
        BoundRule::NoisePolicyLossW1,
        &[
            ("w1_noise", w1_noise),
            ("lip_cost", lip_cost),
            ("lip_noise_w", lip_noise_w),
            ("lip_noise_x", lip_noise_x),
            ("beta", beta),
        ],
    )
}

/// W1 form of the disturbance-swap loss with a measured value Lipschitz
/// constant. The kernels live on a snapped grid, so one `max_gap` of slack is
/// added inside the W1 factor; the slack appears as its own term.
pub fn noise_policy_loss_w1_measured(
    w1_noise: f64,
    lip_value: f64,
    lip_noise_w: f64,
    max_gap: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_value", lip_value)?;
    check_nonneg("lip_noise_w", lip_noise_w)?;
    check_nonneg("max_gap", max_gap)?;
    build(
        BoundRule::NoisePolicyLossW1Measured,
        &[
            ("w1_noise", w1_noise),
            ("lip_value", lip_value),
            ("lip_noise_w", lip_noise_w),
            ("max_gap", max_gap),
            ("beta", beta),
        ],
    )
}

/// Loss of the policy solved from a fitted drift and residual noise measure:
/// the discrepancy `d_f_tilde` covers the noise estimate (integrated through
/// the true drift) and `r_gap` = sup |fitted - true drift| covers the system
/// estimate, with one grid gap of snapping slack.
pub fn noise_policy_loss_fitted_system(
    d_f_tilde: f64,
    r_gap: f64,
    lip_value: f64,
    max_gap: f64,
    beta: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_value", lip_value)?;
    check_nonneg("max_gap", max_gap)?;
    build(
        BoundRule::NoisePolicyLossFittedSystem,
        &[
            ("d_f_tilde", d_f_tilde),
            ("r_gap", r_gap),
            ("lip_value", lip_value),
            ("max_gap", max_gap),
            ("beta", beta),
        ],
    )
}

pub fn noise_policy_loss_average_w1(
    w1_noise: f64,
    lip_cost: f64,
    lip_noise_w: f64,
    lip_noise_x: f64,
) -> Result<BoundReport, BoundError> {
    check_nonneg("lip_cost", lip_cost)?;
    check_nonneg("lip_noise_w", lip_noise_w)?;
    check_nonneg("lip_noise_x", lip_noise_x)?;
    build(
        BoundRule::NoisePolicyLossAverageW1,
        &[
            ("w1_noise", w1_noise),
            ("lip_cost", lip_cost),
            ("lip_noise_w", lip_noise_w),
            ("lip_noise_x", lip_noise_x),
        ],
    )
}

/// Stationary distribution of a control-free chain (one action), by solving
/// (I - P^T) pi = 0 with the normalization row appended in place of the last
/// equation. Errors when the chain has more than one closed class: that makes
/// I - P^T lose a second rank and the patched system singular.
pub fn stationary_distribution(model: &FiniteMdp) -> Result<Vec<f64>, BoundError> {
    if model.n_actions() != 1 {
        return Err(BoundError::BadInput(format!(
            "stationary distribution needs a control-free chain, got {} actions",
            model.n_actions()
        )));
    }
    let n = model.n_states();
    let mut a = Array2::<f64>::zeros((n, n));
    for x in 0..n {
        let row = model.kernel_row(x, 0);
        for y in 0..n {
            a[[y, x]] = -row[y];
        }
        a[[x, x]] += 1.0;
    }
    for x in 0..n {
        a[[n - 1, x]] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let pi = linalg::solve_refined(&a, &ndarray::Array1::from(b))?;
    let mut out: Vec<f64> = pi.to_vec();
    for (i, p) in out.iter().enumerate() {
        if *p < -1e-9 {
            return Err(BoundError::Degenerate(format!(
                "stationary solve produced pi[{i}] = {p} < 0"
            )));
        }
    }
    for p in out.iter_mut() {
        *p = p.max(0.0);
    }
    crate::instances::normalize_row(&mut out);
    Ok(out)
}

/// Bounds the W1 gap between the stationary distributions of two control-free
/// chains on the same state grid by the sup of per-state kernel W1 gaps over
/// 1 minus the reference kernel's measured Lipschitz constant. The exact gap
/// is attached as the measured loss.
pub fn invariant_measure_gap(
    reference: &FiniteMdp,
    approx: &FiniteMdp,
) -> Result<BoundReport, BoundError> {
    if reference.n_actions() != 1 || approx.n_actions() != 1 {
        return Err(BoundError::BadInput("invariant measure comparison needs control-free chains".into()));
    }
    if reference.n_states() != approx.n_states() || reference.coords != approx.coords {
        return Err(BoundError::BadInput("chains must share one state grid".into()));
    }
    let sup_row_w1 = metrics::kernel_w1(reference, approx)?;
    let lip_kernel = metrics::kernel_lipschitz_in_state(reference)?;
    let pi_ref = stationary_distribution(reference)?;
    let pi_approx = stationary_distribution(approx)?;
    let mu = DiscreteMeasure::from_state_weights(&reference.coords, &pi_ref)?;
    let nu = DiscreteMeasure::from_state_weights(&approx.coords, &pi_approx)?;
    let gap = metrics::w1_exact(&mu, &nu)?;
    Ok(build(
        BoundRule::InvariantMeasureGap,
        &[("sup_row_w1", sup_row_w1), ("lip_kernel", lip_kernel)],
    )?
    .with_loss(gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::mdp::DeterministicPolicy;
    use crate::metrics::kernel_d_f;
    use crate::solve;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array3};

    #[test]
    fn discounted_value_gap_hand_value() {
        let r = discounted_value_gap(0.1, 0.2, 0.5).unwrap();
        assert_abs_diff_eq!(r.value, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r.terms["cost"], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(r.terms["kernel"], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn policy_loss_quadratic_hand_value() {
        let (reports, min_index) = discounted_policy_loss_family(0.0, 0.1, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(reports[0].value, 0.4, epsilon = 1e-15);
        // with dc = 0 and equal discrepancies the two-sided and approx-sided
        // forms coincide at 0.2, beating the quadratic form
        assert_abs_diff_eq!(reports[1].value, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(reports[2].value, 0.2, epsilon = 1e-15);
        assert_eq!(min_index, 1);
    }

    #[test]
    fn average_gap_hand_values() {
        assert_abs_diff_eq!(average_gain_gap(0.1, 0.2).unwrap().value, 0.3, epsilon = 1e-15);
        let r = average_policy_loss_minorized(0.1, 0.1, 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constants_forms_hand_values() {
        let r = discounted_policy_loss_constants(0.0, 1.0, 0.5, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(r.value, 2.0 * 0.5 * (1.0 / 0.75) * 0.1 / 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r.value, 0.53333333333333333, epsilon = 1e-12);

        let q = quantized_policy_loss_discounted(1.0, 0.5, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(q.value, 2.0 * (1.0 / 0.75) * 0.1 / 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(q.value, 1.0666666666666667, epsilon = 1e-12);

        let w = noise_policy_loss_w1(0.1, 1.0, 1.0, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(w.value, 2.0 * 0.5 * (1.0 / 0.75) * 0.1 / 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.value, 0.26666666666666666, epsilon = 1e-12);

        // measured form: (2*0.5*2.0/0.5) * (1.0*0.1 + 0.01) = 2 * 0.22 = 0.44
        let wm = noise_policy_loss_w1_measured(0.1, 2.0, 1.0, 0.01, 0.5).unwrap();
        assert_abs_diff_eq!(wm.value, 0.44, epsilon = 1e-12);

        // fitted system: 2*0.5/0.5 * (0.1 + 2.0*(0.05 + 0.01)) = 0.44
        let fs = noise_policy_loss_fitted_system(0.1, 0.05, 2.0, 0.01, 0.5).unwrap();
        assert_abs_diff_eq!(fs.value, 0.44, epsilon = 1e-12);
    }

    #[test]
    fn zero_distances_give_zero_bounds() {
        assert_eq!(discounted_value_gap(0.0, 0.0, 0.9).unwrap().value, 0.0);
        assert_eq!(discounted_policy_loss_family(0.0, 0.0, 0.0, 0.9).unwrap().0[0].value, 0.0);
        assert_eq!(average_gain_gap(0.0, 0.0).unwrap().value, 0.0);
        assert_eq!(average_policy_loss_minorized(0.0, 0.0, 0.0, 0.3).unwrap().value, 0.0);
        assert_eq!(quantized_policy_loss_discounted(1.0, 0.5, 0.0, 0.9).unwrap().value, 0.0);
        assert_eq!(quantized_policy_loss_average(1.0, 0.5, 0.0, 0.3).unwrap().value, 0.0);
        assert_eq!(noise_policy_loss_discrepancy(0.0, 0.9).unwrap().value, 0.0);
        assert_eq!(noise_policy_loss_w1(0.0, 1.0, 1.0, 0.5, 0.9).unwrap().value, 0.0);
        assert_eq!(noise_policy_loss_average_w1(0.0, 1.0, 1.0, 0.5).unwrap().value, 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(discounted_value_gap(0.1, 0.2, 1.0).is_err());
        assert!(discounted_value_gap(0.1, 0.2, 0.0).is_err());
        assert!(discounted_value_gap(-0.1, 0.2, 0.5).is_err());
        assert!(average_policy_loss_minorized(0.1, 0.1, 0.0, 0.0).is_err());
        assert!(average_policy_loss_minorized(0.1, 0.1, 0.0, 1.5).is_err());
        // contraction failure: beta * lip_kernel >= 1
        assert!(discounted_value_gap_constants(0.1, 1.0, 1.2, 0.1, 0.9).is_err());
        assert!(average_gain_gap_constants(0.1, 1.0, 1.0, 0.1).is_err());
    }

    fn all_scalar_reports() -> Vec<BoundReport> {
        let mut out = vec![
            discounted_value_gap(0.07, 0.13, 0.8).unwrap(),
            discounted_value_gap_lipschitz(0.07, 1.7, 0.13, 0.8).unwrap(),
            discounted_value_gap_constants(0.07, 1.1, 0.6, 0.13, 0.8).unwrap(),
            discounted_policy_loss_constants(0.07, 1.1, 0.6, 0.13, 0.8).unwrap(),
            discounted_policy_loss_two_sided_constants(0.07, 1.1, 0.6, 0.9, 0.55, 0.13, 0.8)
                .unwrap(),
            average_gain_gap(0.07, 0.13).unwrap(),
            average_gain_gap_constants(0.07, 1.1, 0.6, 0.13).unwrap(),
            average_policy_loss_minorized(0.07, 0.13, 0.02, 0.4).unwrap(),
            average_policy_loss_constants(0.07, 1.1, 0.6, 0.13, 0.02, 0.4).unwrap(),
            average_policy_loss_two_sided_constants(0.07, 1.1, 0.6, 0.9, 0.55, 0.13).unwrap(),
            quantized_policy_loss_discounted(1.1, 0.6, 0.05, 0.8).unwrap(),
            quantized_policy_loss_average(1.1, 0.6, 0.05, 0.4).unwrap(),
            noise_policy_loss_discrepancy(0.13, 0.8).unwrap(),
            noise_policy_loss_w1(0.13, 1.1, 0.9, 0.6, 0.8).unwrap(),
            noise_policy_loss_average_w1(0.13, 1.1, 0.9, 0.6).unwrap(),
            noise_policy_loss_w1_measured(0.13, 1.7, 0.9, 0.01, 0.8).unwrap(),
            noise_policy_loss_fitted_system(0.13, 0.04, 1.7, 0.01, 0.8).unwrap(),
        ];
        let (family, _) = discounted_policy_loss_family(0.07, 0.13, 0.11, 0.8).unwrap();
        out.extend(family);
        out
    }

    #[test]
    fn reports_recompute_exactly() {
        for r in all_scalar_reports() {
            let again = r.recompute().unwrap();
            assert!(
                (again - r.value).abs() <= tol::BOUND_RECOMPUTE_TOL,
                "{:?}: {} vs {}",
                r.rule,
                r.value,
                again
            );
            assert!(r.value >= 0.0);
            let sum: f64 = r.terms.values().sum();
            assert!((sum - r.value).abs() <= 1e-12 * (1.0 + r.value.abs()), "{:?}", r.rule);
        }
    }

    #[test]
    fn bounds_monotone_in_each_distance_input() {
        for r in all_scalar_reports() {
            for key in r.rule.distance_inputs() {
                if !r.inputs.contains_key(*key) {
                    continue;
                }
                let mut bumped = r.inputs.clone();
                *bumped.get_mut(*key).unwrap() += 0.01;
                let (v, _) = evaluate(r.rule, &bumped).unwrap();
                assert!(
                    v >= r.value - 1e-15,
                    "{:?} decreased when {} grew: {} -> {}",
                    r.rule,
                    key,
                    r.value,
                    v
                );
            }
        }
    }

    #[test]
    fn report_json_roundtrip() {
        let r = discounted_value_gap(0.1, 0.2, 0.5).unwrap().with_loss(0.17);
        let s = r.to_json();
        assert!(s.starts_with('{') && s.ends_with('}'));
        let back: BoundReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.rule, BoundRule::DiscountedValueGap);
        assert_eq!(back.value, r.value);
        assert_eq!(back.measured_loss, Some(0.17));
        assert_eq!(back.dominates(0.0), Some(true));
    }

    #[test]
    #[should_panic(expected = "bound violated")]
    fn domination_guard_panics_with_report() {
        discounted_value_gap(0.0, 0.0, 0.5).unwrap().with_loss(0.1).assert_dominates();
    }

    /// Exact deployed-policy loss under the discounted criterion: solve the
    /// approximate model, run its greedy policy on the reference model,
    /// compare with the reference optimum in sup norm.
    fn exact_discounted_policy_loss(
        reference: &FiniteMdp,
        approx: &FiniteMdp,
        beta: f64,
    ) -> (f64, DeterministicPolicy, solve::DiscountedSolution) {
        let ref_sol = solve::solve_discounted(reference, beta, 1e-11).unwrap();
        let approx_sol = solve::solve_discounted(approx, beta, 1e-11).unwrap();
        let deployed =
            solve::policy_evaluation_discounted(reference, &approx_sol.policy, beta).unwrap();
        let loss = deployed
            .iter()
            .zip(ref_sol.value.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        (loss, approx_sol.policy, ref_sol)
    }

    #[test]
    fn discounted_bounds_dominate_exact_losses_on_random_pairs() {
        let beta = 0.7;
        for seed in 0..20u64 {
            let t = instances::random_mdp(6, 3, 900 + seed);
            let s = instances::perturb_mdp(&t, 0.05, 0.05, 1900 + seed);
            let dc = metrics::cost_gap(&t, &s).unwrap();
            let ref_sol = solve::solve_discounted(&t, beta, 1e-11).unwrap();
            let approx_sol = solve::solve_discounted(&s, beta, 1e-11).unwrap();
            let d_value = kernel_d_f(&t, &s, ref_sol.value.as_slice().unwrap()).unwrap();
            let d_value_approx = kernel_d_f(&t, &s, approx_sol.value.as_slice().unwrap()).unwrap();

            let value_gap = ref_sol
                .value
                .iter()
                .zip(approx_sol.value.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            discounted_value_gap(dc, d_value, beta)
                .unwrap()
                .with_loss(value_gap)
                .assert_dominates();

            let (loss, _, _) = exact_discounted_policy_loss(&t, &s, beta);
            let (reports, _) =
                discounted_policy_loss_family(dc, d_value, d_value_approx, beta).unwrap();
            for r in reports {
                r.with_loss(loss).assert_dominates();
            }
        }
    }

    #[test]
    fn average_bounds_dominate_exact_losses_on_minorized_pairs() {
        let eps = 0.35;
        for seed in 0..12u64 {
            // distinct minorizer measures exercise the rho/tau term
            let rho_inst = instances::random_minorized_mdp_rand_rho(6, 3, eps, 50 + seed);
            let tau_inst = instances::random_minorized_mdp_rand_rho(6, 3, eps, 450 + seed);
            let (t, rho) = (rho_inst.model, rho_inst.rho);
            let (s, tau) = (tau_inst.model, tau_inst.rho);

            let ref_sol = solve::solve_acoe_minorization(&t, eps, &rho, 1e-11).unwrap();
            let approx_sol = solve::solve_acoe_minorization(&s, eps, &tau, 1e-11).unwrap();

            let dc = metrics::cost_gap(&t, &s).unwrap();
            let h = ref_sol.relative_value.as_slice().unwrap();
            let d_h = kernel_d_f(&t, &s, h).unwrap();
            let d_rho_tau: f64 = h
                .iter()
                .zip(rho.iter().zip(tau.iter()))
                .map(|(hv, (r, q))| hv * (r - q))
                .sum::<f64>()
                .abs();

            let gain_gap = (ref_sol.gain - approx_sol.gain).abs();
            average_gain_gap(dc, d_h).unwrap().with_loss(gain_gap).assert_dominates();

            let (g_dep, _) =
                solve::policy_evaluation_average(&t, &approx_sol.policy, eps, &rho).unwrap();
            let loss = (g_dep - ref_sol.gain).abs();
            average_policy_loss_minorized(dc, d_h, d_rho_tau, eps)
                .unwrap()
                .with_loss(loss)
                .assert_dominates();
        }
    }

    #[test]
    fn constants_forms_dominate_on_regular_instances() {
        let beta = 0.8;
        for seed in 0..8u64 {
            let a = instances::random_regular_grid(24, 2, 0.2, 0.6, 1.0, 70 + seed);
            let b = instances::random_regular_grid(24, 2, 0.2, 0.6, 1.0, 770 + seed);
            let dc = metrics::cost_gap(&a.model, &b.model).unwrap();
            let d_w1 = metrics::kernel_w1(&a.model, &b.model).unwrap();

            let ref_sol = solve::solve_discounted(&a.model, beta, 1e-11).unwrap();
            let approx_sol = solve::solve_discounted(&b.model, beta, 1e-11).unwrap();
            let value_gap = ref_sol
                .value
                .iter()
                .zip(approx_sol.value.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0_f64, f64::max);
            discounted_value_gap_constants(dc, a.lip_c, a.lip_t, d_w1, beta)
                .unwrap()
                .with_loss(value_gap)
                .assert_dominates();

            let (loss, _, _) = exact_discounted_policy_loss(&a.model, &b.model, beta);
            discounted_policy_loss_constants(dc, a.lip_c, a.lip_t, d_w1, beta)
                .unwrap()
                .with_loss(loss)
                .assert_dominates();
            discounted_policy_loss_two_sided_constants(
                dc, a.lip_c, a.lip_t, b.lip_c, b.lip_t, d_w1, beta,
            )
            .unwrap()
            .with_loss(loss)
            .assert_dominates();

            // constants forms are never tighter than the functional forms
            let d_value = kernel_d_f(&a.model, &b.model, ref_sol.value.as_slice().unwrap()).unwrap();
            let functional = discounted_value_gap(dc, d_value, beta).unwrap();
            let constants =
                discounted_value_gap_constants(dc, a.lip_c, a.lip_t, d_w1, beta).unwrap();
            assert!(constants.value + 1e-12 >= functional.value);
        }
    }

    fn contractive_chain(n: usize, seed: u64) -> FiniteMdp {
        let inst = instances::random_regular_grid(n, 1, 0.15, 0.5, 1.0, seed);
        inst.model
    }

    #[test]
    fn stationary_distribution_two_state_hand_case() {
        // flip chain: P(0->1)=0.3, P(1->0)=0.6, stationary = (2/3, 1/3)
        let coords = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let actions = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let kernel =
            Array3::from_shape_vec((2, 1, 2), vec![0.7, 0.3, 0.6, 0.4]).unwrap();
        let cost = Array2::zeros((2, 1));
        let m = FiniteMdp::new(coords, actions, kernel, cost).unwrap();
        let pi = stationary_distribution(&m).unwrap();
        assert_abs_diff_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_distribution_rejects_reducible_chain() {
        // two absorbing states: stationary measure is not unique
        let coords = Array2::from_shape_vec((2, 1), vec![0.0, 1.0]).unwrap();
        let actions = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let kernel =
            Array3::from_shape_vec((2, 1, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cost = Array2::zeros((2, 1));
        let m = FiniteMdp::new(coords, actions, kernel, cost).unwrap();
        assert!(matches!(
            stationary_distribution(&m),
            Err(BoundError::NonUniqueStationary(_))
        ));
    }

    #[test]
    fn invariant_gap_zero_for_identical_chains() {
        let m = contractive_chain(12, 5);
        let r = invariant_measure_gap(&m, &m).unwrap();
        assert!(r.value <= 1e-12);
        assert!(r.measured_loss.unwrap() <= 1e-12);
    }

    #[test]
    fn invariant_gap_equality_for_iid_chains() {
        // every row equals q (resp. q'): stationary measures are q and q'
        // themselves, the kernel Lipschitz constant is 0, and the bound holds
        // with equality
        let n = 8;
        let coords =
            Array2::from_shape_vec((n, 1), (0..n).map(|i| i as f64 / (n - 1) as f64).collect())
                .unwrap();
        let actions = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let mut q = vec![0.0; n];
        let mut qp = vec![0.0; n];
        for i in 0..n {
            q[i] = (i + 1) as f64;
            qp[i] = (n - i) as f64;
        }
        instances::normalize_row(&mut q);
        instances::normalize_row(&mut qp);
        let mut k1 = Array3::zeros((n, 1, n));
        let mut k2 = Array3::zeros((n, 1, n));
        for x in 0..n {
            for y in 0..n {
                k1[[x, 0, y]] = q[y];
                k2[[x, 0, y]] = qp[y];
            }
        }
        let cost = Array2::zeros((n, 1));
        let a = FiniteMdp::new(coords.clone(), actions.clone(), k1, cost.clone()).unwrap();
        let b = FiniteMdp::new(coords, actions, k2, cost).unwrap();
        let r = invariant_measure_gap(&a, &b).unwrap();
        let loss = r.measured_loss.unwrap();
        assert_abs_diff_eq!(r.value, loss, epsilon = 1e-9);
        assert!(r.inputs["lip_kernel"] <= 1e-12);
    }

    #[test]
    fn invariant_gap_dominates_on_contractive_pairs() {
        for seed in 0..25u64 {
            let a = contractive_chain(16, 7000 + seed);
            let b = contractive_chain(16, 9000 + seed);
            let r = invariant_measure_gap(&a, &b).unwrap();
            r.assert_dominates();
            assert!(r.value > 0.0);
        }
    }
}
