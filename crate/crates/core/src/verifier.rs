//! Executable checks of the estimates: pointwise inequality campaigns,
//! weighted-integral verdicts on solved fields, ε-sweeps and refinement
//! studies.
//!
//! Inequalities proved at the continuous level are asserted with an additive
//! slack `tol_disc`, five times the residual of the matching discrete
//! identity at the same resolution.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{pde_residual_field, AnalyticSolution};
use crate::functionals::{
    check_theta, final_slice_l2_sq, flux_derivative_bound_field, fundamental_terms_with,
    gradient_lp_distance, gradient_p_mass, j_eps, l2_distance, m_eps_and_o_eps, time_derivative_field,
    ut_theta_mass, w_eps, weighted_gradient_distance, ConvergenceEntry, ConvergenceReport, Cutoff,
    EstimateParams, FieldSamples, FundamentalTerms, ReferenceSolution, TermViForm,
};
use crate::grid::{integrate, Grid, Region, SpaceTimeField};
use crate::solver::{parabolic_boundary_range, solve_regularized, BoundaryData, SolveLog, SolverParams};

/// Multiplier turning an identity residual into the slack of an inequality.
pub const TOL_DISC_FACTOR: f64 = 5.0;

/// Distances below this are roundoff and exempt from monotonicity checks.
pub const DISTANCE_FLOOR: f64 = 1e-10;

/// Slack of the pointwise inequality campaigns.
pub const POINTWISE_SLACK: f64 = 1e-12;

/// Largest consecutive ratio a sweep sequence may show and still count as bounded.
pub const BOUNDED_RATIO: f64 = 1.5;

/// Context a verdict was computed in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl Provenance {
    pub fn on(grid: &Grid, p: f64, eps: f64) -> Self {
        Provenance {
            grid: Some(grid.describe()),
            p: Some(p),
            eps: Some(eps),
            ..Default::default()
        }
    }

    pub fn param(p: f64) -> Self {
        Provenance {
            p: Some(p),
            ..Default::default()
        }
    }
}

/// Outcome of one check: passes iff `lower − slack ≤ lhs ≤ rhs + slack`
/// (`lower` is absent for one-sided bounds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    pub slack: f64,
    pub pass: bool,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl Verdict {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, slack: f64, provenance: Provenance) -> Self {
        let pass = lhs <= rhs + slack;
        Verdict {
            name: name.into(),
            lhs,
            rhs,
            lower: None,
            slack,
            pass,
            provenance,
            details: BTreeMap::new(),
        }
    }

    pub fn with_lower(mut self, lower: f64) -> Self {
        self.lower = Some(lower);
        self.pass = self.pass && lower - self.slack <= self.lhs;
        self
    }

    pub fn detail(mut self, key: impl Into<String>, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    /// One-line summary, e.g. for test logs.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: lhs {:.6e} vs rhs {:.6e} (slack {:.3e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.lhs,
            self.rhs,
            self.slack
        )
    }
}

/// Measured quantity without an a priori bound; boundedness is judged across
/// a sweep with [`bounded_sequence`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

/// ε values and grids a study runs over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub eps: Vec<f64>,
    /// Refinement factors applied to the base grid (1 = base grid).
    pub refinements: Vec<usize>,
    pub p: f64,
    pub estimate: EstimateParams,
}

impl SweepPlan {
    pub const DEFAULT_EPS: [f64; 5] = [1.0, 0.3, 0.1, 0.03, 0.01];

    pub fn new(p: f64, eps: Vec<f64>) -> Result<Self> {
        let plan = SweepPlan {
            eps,
            refinements: vec![1, 2],
            p,
            estimate: EstimateParams::defaults_for(p),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn default_for(p: f64) -> Self {
        SweepPlan {
            eps: Self::DEFAULT_EPS.to_vec(),
            refinements: vec![1, 2],
            p,
            estimate: EstimateParams::defaults_for(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.len() < 3 {
            return Err(Error::InvalidPlan(format!(
                "a sweep needs at least 3 ε values, got {}",
                self.eps.len()
            )));
        }
        if self.eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidPlan("ε values must be finite and nonnegative".into()));
        }
        if self.eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidPlan("ε values must be strictly decreasing".into()));
        }
        if self.refinements.is_empty() || self.refinements.contains(&0) {
            return Err(Error::InvalidPlan("refinement factors must be positive".into()));
        }
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(Error::InvalidPlan(format!("need 1 < p <= 2, got {}", self.p)));
        }
        Ok(())
    }
}

/// `0 ≤ |a|^{p-2} − (|a|²+ε²)^{(p-2)/2} < ((2−p)/2) ε² |a|^{p-2} δ^{-2}` for `|a| ≥ δ`.
pub fn check_scalar_perturbation_inequality(a: f64, eps: f64, delta: f64, p: f64) -> Result<Verdict> {
    let a = a.abs();
    if !(delta > 0.0 && a >= delta) {
        return Err(Error::Precondition(format!("need |a| >= δ > 0, got |a| = {a}, δ = {delta}")));
    }
    if !(p > 1.0 && p <= 2.0) {
        return Err(Error::Precondition(format!("need 1 < p <= 2, got {p}")));
    }
    let lhs = a.powf(p - 2.0) - (a * a + eps * eps).powf(0.5 * (p - 2.0));
    let rhs = 0.5 * (2.0 - p) * eps * eps * a.powf(p - 2.0) / (delta * delta);
    let mut prov = Provenance::param(p);
    prov.eps = Some(eps);
    Ok(Verdict::new("scalar perturbation inequality", lhs, rhs, POINTWISE_SLACK, prov)
        .with_lower(0.0)
        .detail("a", a)
        .detail("delta", delta))
}

fn flux0(p: f64, v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n == 0.0 {
        return [0.0; 2];
    }
    let c = n.powf(p - 2.0);
    [c * v[0], c * v[1]]
}

/// `(p−1)|b−a|² (1+|a|²+|b|²)^{(p-2)/2} ≤ ⟨|b|^{p-2}b − |a|^{p-2}a, b − a⟩`.
pub fn check_vector_monotonicity(a: [f64; 2], b: [f64; 2], p: f64) -> Verdict {
    let (fa, fb) = (flux0(p, a), flux0(p, b));
    let d = [b[0] - a[0], b[1] - a[1]];
    let inner = (fb[0] - fa[0]) * d[0] + (fb[1] - fa[1]) * d[1];
    let n2 = |v: [f64; 2]| v[0] * v[0] + v[1] * v[1];
    let bound = (p - 1.0) * n2(d) * (1.0 + n2(a) + n2(b)).powf(0.5 * (p - 2.0));
    Verdict::new("vector monotonicity inequality", bound, inner, POINTWISE_SLACK, Provenance::param(p))
}

/// One violating sample of a campaign, with its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub inputs: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub name: String,
    pub p: f64,
    pub seed: u64,
    pub samples: usize,
    pub violations: Vec<Counterexample>,
    /// Largest `lhs − rhs` seen (negative when every sample holds strictly).
    pub max_excess: f64,
}

impl CampaignReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn campaign_seed(seed: u64, p: f64, tag: u64) -> u64 {
    seed ^ p.to_bits().rotate_left(17) ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Random magnitudes `|a| ∈ [δ, 10]`, `δ ∈ [1e-3, 1]`, `ε ∈ [0, 1]`.
pub fn scalar_inequality_campaign(p: f64, samples: usize, seed: u64) -> Result<CampaignReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(campaign_seed(seed, p, 1));
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..samples {
        let delta = 10f64.powf(rng.gen_range(-3.0..=0.0));
        let a = rng.gen_range(delta..=10.0);
        let eps = rng.gen_range(0.0..=1.0);
        let v = check_scalar_perturbation_inequality(a, eps, delta, p)?;
        max_excess = max_excess.max((v.lhs - v.rhs).max(-v.lhs));
        if !v.pass {
            violations.push(Counterexample {
                inputs: vec![a, eps, delta],
                lhs: v.lhs,
                rhs: v.rhs,
            });
        }
    }
    Ok(CampaignReport {
        name: "scalar perturbation inequality".into(),
        p,
        seed,
        samples,
        violations,
        max_excess,
    })
}

/// Random vector pairs drawn uniformly from the disc of radius 10.
pub fn vector_inequality_campaign(p: f64, samples: usize, seed: u64) -> CampaignReport {
    let mut rng = ChaCha8Rng::seed_from_u64(campaign_seed(seed, p, 2));
    let mut disc = move || {
        let r = 10.0 * rng.gen_range(0.0f64..=1.0).sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        [r * phi.cos(), r * phi.sin()]
    };
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..samples {
        let (a, b) = (disc(), disc());
        let v = check_vector_monotonicity(a, b, p);
        max_excess = max_excess.max(v.lhs - v.rhs);
        if !v.pass {
            violations.push(Counterexample {
                inputs: vec![a[0], a[1], b[0], b[1]],
                lhs: v.lhs,
                rhs: v.rhs,
            });
        }
    }
    CampaignReport {
        name: "vector monotonicity inequality".into(),
        p,
        seed,
        samples,
        violations,
        max_excess,
    }
}

/// Fundamental-identity terms and the slack derived from their residual.
fn identity_slack(
    samples: &FieldSamples,
    cutoff: &Cutoff,
    p: f64,
    eps: f64,
    alpha: f64,
) -> Result<(FundamentalTerms, f64)> {
    let terms = fundamental_terms_with(samples, cutoff, p, eps, alpha)?;
    let residual = (terms.lhs() - terms.rhs_for(TermViForm::GradV)).abs();
    Ok((terms, TOL_DISC_FACTOR * residual))
}

fn weighted_hessian(samples: &FieldSamples, cutoff: &Cutoff, eps: f64, gamma: f64) -> f64 {
    samples.cutoff_integral(cutoff, eps, |s| {
        s.zeta.value * s.zeta.value * s.big_v.powf(gamma) * s.hess_sq
    })
}

fn grad_zeta_weight(samples: &FieldSamples, cutoff: &Cutoff, eps: f64, gamma: f64) -> f64 {
    samples.cutoff_integral(cutoff, eps, |s| {
        s.big_v.powf(gamma) * (s.zeta.grad[0].powi(2) + s.zeta.grad[1].powi(2))
    })
}

fn time_weight(samples: &FieldSamples, cutoff: &Cutoff, eps: f64, gamma: f64) -> f64 {
    samples.cutoff_integral(cutoff, eps, |s| s.big_v.powf(gamma) * s.zeta.value * s.zeta.dt)
}

fn estimate_provenance(grid: &Grid, p: f64, eps: f64) -> Provenance {
    Provenance::on(grid, p, eps)
}

/// `(p−1+2α−σ) I ≤ (σ^{-1} + (2−p)/|α|) ∬V_ε^{(p+2α)/2}|∇ζ|² + (α+1)^{-1} ∬V_ε^{α+1}ζζ_t`.
pub fn verify_general_estimate(
    field: &SpaceTimeField,
    cutoff: &Cutoff,
    p: f64,
    eps: f64,
    alpha: f64,
    sigma: f64,
) -> Result<Verdict> {
    let est = EstimateParams {
        alpha,
        sigma,
        ..EstimateParams::defaults_for(p)
    };
    est.check_alpha(p)?;
    let lead = p - 1.0 + 2.0 * alpha - sigma;
    if !(sigma > 0.0 && lead > 0.0) {
        return Err(Error::params(format!(
            "need 0 < σ < p - 1 + 2α = {}, got σ = {sigma}",
            p - 1.0 + 2.0 * alpha
        )));
    }
    let samples = FieldSamples::new(field);
    let (terms, slack) = identity_slack(&samples, cutoff, p, eps, alpha)?;
    let lhs = lead * terms.i;
    let rhs = (1.0 / sigma + (2.0 - p) / alpha.abs()) * terms.grad_zeta_mass + terms.vii;
    let mut prov = estimate_provenance(field.grid(), p, eps);
    prov.alpha = Some(alpha);
    prov.sigma = Some(sigma);
    Ok(Verdict::new("general estimate", lhs, rhs, slack, prov)
        .detail("term_I", terms.i)
        .detail("grad_zeta_mass", terms.grad_zeta_mass)
        .detail("term_VII", terms.vii))
}

/// The weighted second-derivative integral `∬ζ²V_ε^{p-2}|u''|²` against the
/// majorant `∬|∇u_ε|^p + 1` on a one-dimensional field; the ratio estimates `C(p)`.
pub fn onedim_measurement(field: &SpaceTimeField, cutoff: &Cutoff, p: f64, eps: f64) -> Result<Measurement> {
    if field.grid().dim() != 1 {
        return Err(Error::params("the one-dimensional estimate needs n = 1"));
    }
    cutoff.check_support(field.grid(), 1)?;
    let samples = FieldSamples::new(field);
    let lhs = weighted_hessian(&samples, cutoff, eps, p - 2.0);
    let region = Region::full(field.grid());
    let grad_mass = samples.integrate(&region, eps, None, |s| s.v.powf(0.5 * p));
    let ratio = lhs / (grad_mass + 1.0);
    let mut details = BTreeMap::new();
    details.insert("weighted_hessian".into(), lhs);
    details.insert("grad_Lp".into(), grad_mass);
    Ok(Measurement {
        name: "one-dimensional majorant ratio".into(),
        value: ratio,
        provenance: estimate_provenance(field.grid(), p, eps),
        details,
    })
}

/// Bounded measured `C(p)` across a sweep: `max/min ≤ 4`, plus the weighted
/// integral itself bounded in the sense of [`bounded_sequence`].
pub fn verify_onedim_estimate(sweep: &[(f64, &SpaceTimeField)], cutoff: &Cutoff, p: f64) -> Result<Verdict> {
    let mut ratios = Vec::with_capacity(sweep.len());
    let mut weighted = Vec::with_capacity(sweep.len());
    for (eps, field) in sweep {
        let m = onedim_measurement(field, cutoff, p, *eps)?;
        weighted.push(m.details["weighted_hessian"]);
        ratios.push(m.value);
    }
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if max == 0.0 { 0.0 } else { max / min };
    let mut v = Verdict::new("one-dimensional estimate", spread, 4.0, 0.0, Provenance::param(p))
        .detail("C_p_measured", max);
    for ((eps, _), (r, w)) in sweep.iter().zip(ratios.iter().zip(&weighted)) {
        v = v.detail(format!("ratio@{eps}"), *r).detail(format!("weighted_hessian@{eps}"), *w);
    }
    Ok(v)
}

/// `(2p−3−σ) ∬ζ²V_ε^{p-2}|D²u|² ≤ (σ^{-1}+2) ∬V_ε^{p-1}|∇ζ|² + (p−1)^{-1} ∬V_ε^{p/2}ζζ_t`
/// for `p > 3/2`.
pub fn verify_case_p_above_threshold(
    field: &SpaceTimeField,
    cutoff: &Cutoff,
    p: f64,
    eps: f64,
    sigma: f64,
) -> Result<Verdict> {
    if !(p > 1.5 && p <= 2.0) {
        return Err(Error::WrongRegime(format!("needs 3/2 < p <= 2, got p = {p}")));
    }
    let lead = 2.0 * p - 3.0 - sigma;
    if !(sigma > 0.0 && lead > 0.0) {
        return Err(Error::params(format!("need 0 < σ < 2p - 3 = {}, got {sigma}", 2.0 * p - 3.0)));
    }
    let alpha = 0.5 * (p - 2.0);
    let samples = FieldSamples::new(field);
    let (_, slack) = identity_slack(&samples, cutoff, p, eps, alpha)?;
    let hess = weighted_hessian(&samples, cutoff, eps, p - 2.0);
    let grad_zeta = grad_zeta_weight(&samples, cutoff, eps, p - 1.0);
    let time = time_weight(&samples, cutoff, eps, 0.5 * p);
    let lhs = lead * hess;
    let rhs = (1.0 / sigma + 2.0) * grad_zeta + time / (p - 1.0);
    let mut prov = estimate_provenance(field.grid(), p, eps);
    prov.alpha = Some(alpha);
    prov.sigma = Some(sigma);
    Ok(Verdict::new("local bound for p > 3/2", lhs, rhs, slack, prov)
        .detail("weighted_hessian", hess)
        .detail("grad_zeta_mass", grad_zeta)
        .detail("time_term", time)
        .detail("rhs_with_2_over_p", (1.0 / sigma + 2.0) * grad_zeta + 2.0 * time / p))
}

/// Energy lemma for `p < 3/2`:
/// `∬ζζ_tV_ε^{α+1} ≤ ε^{2(α+1)}∬|ζζ_t| + 2‖u‖_∞∬|∇(ζζ_t)|V_ε^{(2α+1)/2}
///   + ((1+2|α|)/2)‖u‖_∞ {κ I + κ^{-1}∬ζ_t²V_ε^{(2−p+2α)/2}}`.
pub fn verify_energy_lemma(
    field: &SpaceTimeField,
    cutoff: &Cutoff,
    p: f64,
    eps: f64,
    alpha: f64,
    kappa: f64,
) -> Result<Verdict> {
    if !(p > 1.0 && p < 1.5) {
        return Err(Error::WrongRegime(format!("the energy lemma is used for 1 < p < 3/2, got {p}")));
    }
    if !cutoff.has_time_support() {
        return Err(Error::InvalidTestFunction(
            "the energy lemma needs a cutoff with compact support in time".into(),
        ));
    }
    EstimateParams {
        alpha,
        ..EstimateParams::defaults_for(p)
    }
    .check_alpha(p)?;
    if !(kappa > 0.0) {
        return Err(Error::params("κ must be positive"));
    }
    let samples = FieldSamples::new(field);
    let (terms, slack) = identity_slack(&samples, cutoff, p, eps, alpha)?;
    let sup = field.max_abs();
    let lhs = time_weight(&samples, cutoff, eps, alpha + 1.0);
    let abs_zzt = samples.cutoff_integral(cutoff, eps, |s| (s.zeta.value * s.zeta.dt).abs());
    let grad_zzt = samples.cutoff_integral(cutoff, eps, |s| {
        s.zeta.grad_zeta_zt[0].hypot(s.zeta.grad_zeta_zt[1]) * s.big_v.powf(alpha + 0.5)
    });
    let zt_sq = samples.cutoff_integral(cutoff, eps, |s| {
        s.zeta.dt * s.zeta.dt * s.big_v.powf(0.5 * (2.0 - p + 2.0 * alpha))
    });
    let rhs = eps.powf(2.0 * (alpha + 1.0)) * abs_zzt
        + 2.0 * sup * grad_zzt
        + 0.5 * (1.0 + 2.0 * alpha.abs()) * sup * (kappa * terms.i + zt_sq / kappa);
    let mut prov = estimate_provenance(field.grid(), p, eps);
    prov.alpha = Some(alpha);
    prov.kappa = Some(kappa);
    Ok(Verdict::new("energy lemma", lhs, rhs, slack, prov)
        .detail("abs_zeta_zeta_t", abs_zzt)
        .detail("grad_zeta_zeta_t", grad_zzt)
        .detail("zeta_t_sq", zt_sq)
        .detail("term_I", terms.i)
        .detail("sup_u", sup))
}

/// `∬ζ²V_ε^{θ(p-2)}|D²u|²` for `p < 3/2`, `1 < θ < 1/(2−p)`, with
/// `2α = (θ−1)(p−2)`. The weight `V_ε^{θ(p-2)/2}` matching term I at that
/// `α` is recorded alongside.
pub fn verify_theta_bound(
    field: &SpaceTimeField,
    cutoff: &Cutoff,
    p: f64,
    eps: f64,
    theta: f64,
) -> Result<Measurement> {
    if !(p > 1.0 && p < 1.5) {
        return Err(Error::WrongRegime(format!("the θ bound is used for 1 < p < 3/2, got {p}")));
    }
    check_theta(p, theta)?;
    let alpha = 0.5 * (theta - 1.0) * (p - 2.0);
    let half_p = 0.5 * p;
    for (label, e) in [
        ("(2α+1)/2", alpha + 0.5),
        ("(p+2α)/2", 0.5 * (p + 2.0 * alpha)),
        ("(2-p+2α)/2", 0.5 * (2.0 - p + 2.0 * alpha)),
    ] {
        if !(e > 0.0 && e < half_p) {
            return Err(Error::params(format!(
                "exponent {label} = {e} must lie in (0, p/2) for θ = {theta}"
            )));
        }
    }
    cutoff.check_support(field.grid(), 1)?;
    let samples = FieldSamples::new(field);
    let literal = weighted_hessian(&samples, cutoff, eps, theta * (p - 2.0));
    let matched = weighted_hessian(&samples, cutoff, eps, 0.5 * theta * (p - 2.0));
    let mut prov = estimate_provenance(field.grid(), p, eps);
    prov.theta = Some(theta);
    prov.alpha = Some(alpha);
    let mut details = BTreeMap::new();
    details.insert("weighted_hessian_literal".into(), literal);
    details.insert("weighted_hessian_matched".into(), matched);
    Ok(Measurement {
        name: "theta-weighted second derivatives".into(),
        value: literal,
        provenance: prov,
        details,
    })
}

/// Passes when every consecutive ratio `x_{k+1}/x_k` of a sweep is at most
/// `max_ratio`. Two zero entries count as ratio 1.
pub fn bounded_sequence(name: &str, eps: &[f64], values: &[f64], max_ratio: f64) -> Verdict {
    let mut worst = 0.0_f64;
    for w in values.windows(2) {
        let r = match (w[0], w[1]) {
            (a, b) if a == 0.0 && b == 0.0 => 1.0,
            (0.0, _) => f64::INFINITY,
            (a, b) => b / a,
        };
        worst = worst.max(r);
    }
    let finite = values.iter().all(|v| v.is_finite());
    let mut v = Verdict::new(
        format!("{name} bounded across the sweep"),
        if finite { worst } else { f64::INFINITY },
        max_ratio,
        0.0,
        Provenance::default(),
    )
    .detail("sup", values.iter().cloned().fold(0.0, f64::max));
    for (e, x) in eps.iter().zip(values) {
        v = v.detail(format!("value@{e}"), *x);
    }
    v
}

/// Passes when the sequence never rises by more than the relative `slack`.
/// Entries at or below `floor` are treated as zero.
pub fn decreasing_sequence(name: &str, eps: &[f64], values: &[f64], slack: f64, floor: f64) -> Verdict {
    let worst = values
        .windows(2)
        .map(|w| match (w[0] > floor, w[1] > floor) {
            (_, false) => 0.0,
            (false, true) => f64::INFINITY,
            (true, true) => w[1] / w[0],
        })
        .fold(0.0, f64::max);
    let mut v = Verdict::new(
        format!("{name} decreasing along the sweep"),
        worst,
        1.0 + slack,
        0.0,
        Provenance::default(),
    );
    for (e, x) in eps.iter().zip(values) {
        v = v.detail(format!("value@{e}"), *x);
    }
    v
}

/// Solved field of one sweep entry.
#[derive(Clone, Debug)]
pub struct SweepSolve {
    pub eps: f64,
    pub field: SpaceTimeField,
    pub log: SolveLog,
}

/// Solves every ε of the plan on `grid` concurrently; results come back in
/// plan order.
pub fn solve_sweep(
    plan: &SweepPlan,
    grid: &Grid,
    base: &SolverParams,
    boundary: &BoundaryData,
) -> Result<Vec<SweepSolve>> {
    plan.validate()?;
    plan.eps
        .par_iter()
        .map(|&eps| {
            let params = SolverParams {
                p: plan.p,
                ..base.with_eps(eps)
            };
            solve_regularized(grid, &params, boundary)
                .map(|(field, log)| SweepSolve { eps, field, log })
                .map_err(|e| Error::SweepFailure {
                    eps,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// `min/max` bounds by the parabolic-boundary data.
pub fn maximum_principle_check(field: &SpaceTimeField, slack: f64) -> Verdict {
    let (lo, hi) = parabolic_boundary_range(field);
    let excess = (field.max() - hi).max(lo - field.min()).max(0.0);
    Verdict::new("maximum principle", excess, 0.0, slack, Provenance::default())
        .detail("boundary_min", lo)
        .detail("boundary_max", hi)
        .detail("field_min", field.min())
        .detail("field_max", field.max())
}

/// Slack for sweep-level inequalities: five times the largest
/// `|W_ε + ½∫(u_ε(T)−u(T))²|` of the sweep.
pub fn sweep_tol_disc(report: &ConvergenceReport) -> f64 {
    report
        .entries
        .iter()
        .map(ConvergenceEntry::tol_disc)
        .fold(0.0, f64::max)
}

/// Solves the plan on `grid`, measures every convergence functional against
/// the reference, and checks the sign of `W_ε`, the uniform gradient bound
/// and the decay of both distances.
pub fn convergence_study(
    plan: &SweepPlan,
    grid: &Grid,
    base: &SolverParams,
    boundary: &BoundaryData,
    reference: &ReferenceSolution,
) -> Result<(ConvergenceReport, Vec<Verdict>)> {
    let solves = solve_sweep(plan, grid, base, boundary)?;
    convergence_from_solves(plan, grid, &solves, reference)
}

/// [`convergence_study`] on sweep solves that already exist.
pub fn convergence_from_solves(
    plan: &SweepPlan,
    grid: &Grid,
    solves: &[SweepSolve],
    reference: &ReferenceSolution,
) -> Result<(ConvergenceReport, Vec<Verdict>)> {
    if solves.iter().any(|s| s.field.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    let p = plan.p;
    let u = reference.field(grid)?;
    let zero = SpaceTimeField::zeros(grid);
    let u_l2 = l2_distance(&u, &zero)?;
    let u_grad = gradient_lp_distance(&u, &zero, p)?;
    let delta = plan.estimate.delta;
    let entries = solves
        .par_iter()
        .map(|s| -> Result<ConvergenceEntry> {
            let eps = s.eps;
            let (m, o) = m_eps_and_o_eps(&s.field, &u, p, eps, delta)?;
            let w = w_eps(&s.field, &u, p, eps)?;
            let l2 = l2_distance(&s.field, &u)?;
            let gl = gradient_lp_distance(&s.field, &u, p)?;
            let rel = |x: f64, n: f64| if n == 0.0 { x } else { x / n };
            Ok(ConvergenceEntry {
                eps,
                j_eps: j_eps(&s.field, p, eps, None),
                w_eps: w,
                m_eps: m,
                o_eps: o,
                grad_lp_mass: gradient_p_mass(&s.field, p),
                l2_dist: l2,
                grad_lp_dist: gl,
                rel_l2_dist: rel(l2, u_l2),
                rel_grad_lp_dist: rel(gl, u_grad),
                w_identity_residual: w + 0.5 * final_slice_l2_sq(&s.field, &u)?,
                weighted_distance: weighted_gradient_distance(&s.field, &u, p)?,
                picard_iterations: s.log.total_picard_iterations(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let g_mass = gradient_p_mass(&u, p);
    let measure = grid.measure();
    let c_p = entries
        .iter()
        .map(|e| e.j_eps / (g_mass + e.eps.powf(p) * measure))
        .fold(0.0, f64::max);
    let report = ConvergenceReport {
        p,
        grid: grid.describe(),
        reference: reference.label(),
        reference_grad_mass: g_mass,
        domain_measure: measure,
        c_p,
        k_bound: 3.0 * c_p * (g_mass + measure),
        entries,
    };
    let verdicts = convergence_verdicts(&report);
    Ok((report, verdicts))
}

/// Verdicts derived from a finished convergence report.
pub fn convergence_verdicts(report: &ConvergenceReport) -> Vec<Verdict> {
    let eps: Vec<f64> = report.entries.iter().map(|e| e.eps).collect();
    let col = |f: fn(&ConvergenceEntry) -> f64| report.entries.iter().map(f).collect::<Vec<_>>();
    let mut out = Vec::new();
    for e in &report.entries {
        let mut prov = Provenance::param(report.p);
        prov.eps = Some(e.eps);
        prov.grid = Some(report.grid.clone());
        out.push(Verdict::new("W_eps sign", e.w_eps, 0.0, e.tol_disc(), prov.clone()));
        out.push(
            Verdict::new("M_eps bounded by O_eps", e.m_eps, e.o_eps, e.tol_disc(), prov.clone()),
        );
        out.push(Verdict::new(
            "weighted gradient distance bounded by M_eps",
            (report.p - 1.0) * e.weighted_distance,
            e.m_eps,
            e.tol_disc(),
            prov.clone(),
        ));
        out.push(Verdict::new("uniform gradient bound", e.grad_lp_mass, report.k_bound, 0.0, prov));
    }
    out.push(decreasing_sequence("L2 distance", &eps, &col(|e| e.l2_dist), 0.05, DISTANCE_FLOOR));
    out.push(decreasing_sequence("gradient Lp distance", &eps, &col(|e| e.grad_lp_dist), 0.05, DISTANCE_FLOOR));
    out.push(decreasing_sequence("O_eps", &eps, &col(|e| e.o_eps), 0.05, DISTANCE_FLOOR));
    out
}

/// `u_t ≤ u / ((2−p)(t + t_offset))` at every interior node and level.
pub fn benilan_crandall_check(field: &SpaceTimeField, p: f64, t_offset: f64, slack: f64) -> Result<Verdict> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::Precondition(format!("needs 1 < p < 2, got {p}")));
    }
    if field.min() < 0.0 {
        return Err(Error::Precondition(format!(
            "field must be nonnegative, minimum is {}",
            field.min()
        )));
    }
    let grid = field.grid();
    if !(grid.t(0) + t_offset > 0.0) {
        return Err(Error::Precondition("t + t_offset must stay positive".into()));
    }
    let ut = time_derivative_field(field)?;
    let mut worst = f64::NEG_INFINITY;
    for level in 1..grid.levels() - 1 {
        let t = grid.t(level) + t_offset;
        for node in grid.nodes().filter(|&n| !grid.is_boundary(n)) {
            let bound = field.get(level, node) / ((2.0 - p) * t);
            worst = worst.max(ut.get(level, node) - bound);
        }
    }
    Ok(Verdict::new("Benilan-Crandall estimate", worst, 0.0, slack, Provenance::on(grid, p, 0.0))
        .detail("t_offset", t_offset))
}

/// The same estimate with the closed-form `u` and `u_t` of `solution`,
/// sampled at every grid node.
pub fn benilan_crandall_analytic(
    solution: &AnalyticSolution,
    grid: &Grid,
    p: f64,
    t_offset: f64,
    slack: f64,
) -> Result<Verdict> {
    let field = solution.sample(grid)?;
    if field.min() < 0.0 {
        return Err(Error::Precondition("closed form is negative on the grid".into()));
    }
    let dim = grid.dim();
    let mut worst = f64::NEG_INFINITY;
    for level in 0..grid.levels() {
        let t = grid.t(level);
        for node in grid.nodes() {
            let x = &grid.coord(node)[..dim];
            let bound = solution.value(x, t) / ((2.0 - p) * (t + t_offset));
            worst = worst.max(solution.time_derivative(x, t) - bound);
        }
    }
    Ok(Verdict::new(
        "Benilan-Crandall estimate (closed form)",
        worst,
        0.0,
        slack,
        Provenance::on(grid, p, 0.0),
    ))
}

/// Slack for checks on a solved field: five times the largest strong-form
/// residual (centered `u_t` minus the solver's divergence).
pub fn field_tol_disc(field: &SpaceTimeField, p: f64, eps: f64) -> Result<f64> {
    let r = pde_residual_field(field, p, eps)?;
    // End levels use one-sided differences of a first-order scheme; skip them.
    let grid = field.grid();
    let mut worst = 0.0_f64;
    for level in 1..grid.levels() - 1 {
        worst = worst.max(r.level(level).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(TOL_DISC_FACTOR * worst)
}

/// Per-ε masses of `u_t` and of the flux-derivative envelope on `region`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummabilityEntry {
    pub eps: f64,
    pub ut_theta_mass: f64,
    pub envelope_mass: f64,
}

/// `θ = 2` is required for `p ≥ 3/2` or `n = 1`; otherwise `1 < θ < 1/(2−p)`.
pub fn check_summability_regime(p: f64, dim: usize, theta: f64) -> Result<()> {
    if p >= 1.5 || dim == 1 {
        if theta != 2.0 {
            return Err(Error::WrongRegime(format!(
                "θ must be 2 for p = {p}, n = {dim}; got {theta}"
            )));
        }
        Ok(())
    } else if theta > 1.0 && theta < 1.0 / (2.0 - p) {
        Ok(())
    } else {
        Err(Error::WrongRegime(format!(
            "θ must lie in (1, {}) for p = {p}, n = {dim}; got {theta}",
            1.0 / (2.0 - p)
        )))
    }
}

/// Masses of one solved field.
pub fn summability_entry(field: &SpaceTimeField, p: f64, eps: f64, theta: f64, region: &Region) -> Result<SummabilityEntry> {
    let ut = ut_theta_mass(field, theta, region)?;
    let env = flux_derivative_bound_field(field, p, eps)?;
    let em = integrate(field.grid(), region, |l, n| env.get(l, n).powf(theta));
    Ok(SummabilityEntry {
        eps,
        ut_theta_mass: ut,
        envelope_mass: em,
    })
}

/// Solves the plan and checks that both `∬_region |u_t|^θ` and
/// `∬_region (2V_ε^{(p-2)/2}|D²u_ε|)^θ` stay bounded across ε.
pub fn ut_summability_study(
    plan: &SweepPlan,
    theta: f64,
    region: &Region,
    grid: &Grid,
    base: &SolverParams,
    boundary: &BoundaryData,
) -> Result<(Vec<SummabilityEntry>, Verdict)> {
    check_summability_regime(plan.p, grid.dim(), theta)?;
    if !region.is_interior(grid) {
        return Err(Error::InvalidRegion("summability needs an interior region".into()));
    }
    let solves = solve_sweep(plan, grid, base, boundary)?;
    let entries = solves
        .par_iter()
        .map(|s| summability_entry(&s.field, plan.p, s.eps, theta, region))
        .collect::<Result<Vec<_>>>()?;
    Ok((entries.clone(), summability_verdict(plan.p, theta, &entries)))
}

pub fn summability_verdict(p: f64, theta: f64, entries: &[SummabilityEntry]) -> Verdict {
    let eps: Vec<f64> = entries.iter().map(|e| e.eps).collect();
    let ut: Vec<f64> = entries.iter().map(|e| e.ut_theta_mass).collect();
    let env: Vec<f64> = entries.iter().map(|e| e.envelope_mass).collect();
    let a = bounded_sequence("u_t theta mass", &eps, &ut, BOUNDED_RATIO);
    let b = bounded_sequence("envelope mass", &eps, &env, BOUNDED_RATIO);
    let mut prov = Provenance::param(p);
    prov.theta = Some(theta);
    let mut v = Verdict::new(
        "u_t summability",
        a.lhs.max(b.lhs),
        BOUNDED_RATIO,
        0.0,
        prov,
    );
    for e in entries {
        v = v
            .detail(format!("ut_theta_mass@{}", e.eps), e.ut_theta_mass)
            .detail(format!("envelope_mass@{}", e.eps), e.envelope_mass);
    }
    v
}
