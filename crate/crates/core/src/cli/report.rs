//! Report JSON and CSV tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::functionals::ConvergenceReport;
use crate::solver::SolveLog;
use crate::verifier::{CampaignReport, Verdict};

pub const SCHEMA: &str = "plaplab-report/1";

/// Per-solve bookkeeping; wall time is left out so reports are reproducible.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveSummary {
    pub eps: f64,
    pub grid: String,
    pub steps: usize,
    pub picard_iterations: usize,
    pub max_final_update: f64,
    pub min_relaxation: f64,
    pub converged: bool,
    pub floored: bool,
    pub coefficient_min: f64,
    pub coefficient_max: f64,
}

impl SolveSummary {
    pub fn new(eps: f64, grid: String, log: &SolveLog) -> Self {
        SolveSummary {
            eps,
            grid,
            steps: log.steps.len(),
            picard_iterations: log.total_picard_iterations(),
            max_final_update: log.max_final_update(),
            min_relaxation: log.steps.iter().map(|s| s.relaxation).fold(1.0, f64::min),
            converged: log.converged,
            floored: log.floored,
            coefficient_min: log.coefficient_range.0,
            coefficient_max: log.coefficient_range.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Runtime {
    pub version: &'static str,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub kind: &'static str,
    /// Settings given in the config file, verbatim.
    pub config: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Set when any solve ran at ε = 0 with the gradient floor.
    pub floored: bool,
    /// Scalar results keyed `operation.quantity`.
    pub values: BTreeMap<String, f64>,
    /// Measured constants.
    pub constants: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term_vi_form: Option<String>,
    pub verdicts: Vec<Verdict>,
    pub solves: Vec<SolveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub campaigns: Vec<CampaignReport>,
    pub runtime: Runtime,
    pub pass: bool,
}

impl Report {
    pub fn new(kind: &'static str, config: BTreeMap<String, String>, runtime: Runtime) -> Self {
        Report {
            schema: SCHEMA,
            kind,
            config,
            grid: None,
            data: None,
            reference: None,
            floored: false,
            values: BTreeMap::new(),
            constants: BTreeMap::new(),
            term_vi_form: None,
            verdicts: Vec::new(),
            solves: Vec::new(),
            convergence: None,
            campaigns: Vec::new(),
            runtime,
            pass: true,
        }
    }

    pub fn value(&mut self, key: impl Into<String>, v: f64) {
        self.values.insert(key.into(), v);
    }

    pub fn add_solve(&mut self, summary: SolveSummary) {
        self.floored |= summary.floored;
        self.solves.push(summary);
    }

    pub fn finish(&mut self) {
        self.pass = self.verdicts.iter().all(|v| v.pass)
            && self.campaigns.iter().all(CampaignReport::passed)
            && self.solves.iter().all(|s| s.converged);
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// One row per ε: the quantities of the convergence and estimate machinery.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    #[serde(rename = "J_eps")]
    pub j_eps: Option<f64>,
    #[serde(rename = "W_eps")]
    pub w_eps: Option<f64>,
    #[serde(rename = "M_eps")]
    pub m_eps: Option<f64>,
    #[serde(rename = "O_eps")]
    pub o_eps: Option<f64>,
    #[serde(rename = "grad_Lp")]
    pub grad_lp: Option<f64>,
    pub term_I: Option<f64>,
    pub term_II: Option<f64>,
    pub term_III: Option<f64>,
    pub term_IV: Option<f64>,
    pub term_V: Option<f64>,
    pub term_VI: Option<f64>,
    pub term_VII: Option<f64>,
    pub ut_theta_mass: Option<f64>,
    #[serde(rename = "L2_dist")]
    pub l2_dist: Option<f64>,
    #[serde(rename = "gradLp_dist")]
    pub grad_lp_dist: Option<f64>,
}

impl SweepRow {
    pub fn set_terms(&mut self, terms: [f64; 7]) {
        let [a, b, c, d, e, f, g] = terms.map(Some);
        self.term_I = a;
        self.term_II = b;
        self.term_III = c;
        self.term_IV = d;
        self.term_V = e;
        self.term_VI = f;
        self.term_VII = g;
    }
}

/// One row per refinement level.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RefineRow {
    pub refinement: usize,
    pub h: f64,
    pub tau: f64,
    #[serde(rename = "L2_dist")]
    pub l2_dist: Option<f64>,
    #[serde(rename = "gradLp_dist")]
    pub grad_lp_dist: Option<f64>,
    pub identity_residual: f64,
    pub weak_residual: f64,
    pub term_I: f64,
    pub term_II: f64,
    pub term_III: f64,
    pub term_IV: f64,
    pub term_V: f64,
    pub term_VI: f64,
    pub term_VII: f64,
    pub picard_iterations: usize,
}

/// One row per inequality and exponent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CampaignRow {
    pub inequality: String,
    pub p: f64,
    pub seed: u64,
    pub samples: usize,
    pub violations: usize,
    pub max_excess: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
