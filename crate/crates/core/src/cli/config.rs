//! `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! grid.dim = 1
//! grid.x = -4, 4
//! grid.n = 200
//! solver.p = 1.5
//! sweep.eps_list = 1, 0.3, 0.1, 0.03, 0.01
//! cutoff.space = -2.5:2.5
//! ```
//!
//! Every key is optional; unknown keys are rejected with their path.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exact::{barenblatt_fast_diffusion, linear_solution, AnalyticSolution};
use crate::functionals::{make_cutoff, Cutoff, EstimateParams};
use crate::grid::{Grid, Region};
use crate::solver::{BoundaryData, SolverParams};
use crate::verifier::{check_summability_regime, SweepPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Solve,
    Sweep,
    Verify,
    Refine,
    PropertyTests,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Verify => "verify-estimates",
            ExperimentKind::Refine => "refine-study",
            ExperimentKind::PropertyTests => "property-tests",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "solve" => ExperimentKind::Solve,
            "sweep" => ExperimentKind::Sweep,
            "verify" | "verify-estimates" => ExperimentKind::Verify,
            "refine" | "refine-study" => ExperimentKind::Refine,
            "proptest" | "property-tests" => ExperimentKind::PropertyTests,
            _ => return Err(format!("unknown experiment kind `{s}`")),
        })
    }
}

/// Boundary and initial data.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Barenblatt { mass: f64, t0: f64 },
    Linear { slope: Vec<f64>, offset: f64 },
    /// `amplitude · Π cos(π(x_k − mid_k)/L_k)` at the initial time, zero on the lateral boundary.
    Bump { amplitude: f64 },
    Constant { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceKind {
    Analytic,
    SmallestEps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffSpec {
    pub space: Vec<(f64, f64)>,
    pub ramps: Vec<f64>,
    pub time: (f64, f64),
    pub time_ramp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub grid: Grid,
    pub p: f64,
    pub eps: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub linear_tol: f64,
    pub gradient_floor: f64,
    pub data: DataSpec,
    pub estimate: EstimateParams,
    pub sweep: SweepPlan,
    pub cutoff: CutoffSpec,
    pub reference: ReferenceKind,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub samples: usize,
    pub proptest_p: Vec<f64>,
    /// Every resolved setting, for the report's config echo.
    pub echo: BTreeMap<String, String>,
}

fn config_err(path: &str, message: impl fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

/// Raw `key = value` pairs with line numbers.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(&format!("line {}", k + 1), "expected `key = value`"));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(config_err(&format!("line {}", k + 1), "empty key"));
        }
        if out.insert(key.to_string(), (k + 1, value.trim().to_string())).is_some() {
            return Err(config_err(key, format!("duplicate key on line {}", k + 1)));
        }
    }
    Ok(out)
}

struct Keys {
    raw: BTreeMap<String, (usize, String)>,
    echo: BTreeMap<String, String>,
}

impl Keys {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.raw.remove(key) {
            Some((_, v)) => {
                let parsed = v.parse::<T>().map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}")))?;
                self.echo.insert(key.into(), v);
                Ok(parsed)
            }
            None => Ok(default),
        }
    }

    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw.remove(key) {
            Some((_, v)) => {
                let parsed = v.parse::<T>().map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}")))?;
                self.echo.insert(key.into(), v);
                Ok(Some(parsed))
            }
            None => Ok(None),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(s) = self.opt::<String>(key)? else {
            return Ok(None);
        };
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| config_err(key, format!("cannot parse `{x}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn pair(&mut self, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
        match self.list(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok((v[0], v[1])),
            Some(v) => Err(config_err(key, format!("expected `lo, hi`, got {} numbers", v.len()))),
        }
    }

    fn intervals(&mut self, key: &str) -> Result<Option<Vec<(f64, f64)>>> {
        let Some(s) = self.opt::<String>(key)? else {
            return Ok(None);
        };
        s.split(',')
            .map(|part| {
                let (a, b) = part
                    .split_once(':')
                    .ok_or_else(|| config_err(key, format!("expected `lo:hi`, got `{}`", part.trim())))?;
                let parse = |x: &str| x.trim().parse::<f64>().map_err(|e| config_err(key, format!("`{x}`: {e}")));
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

impl ExperimentConfig {
    /// Parses and validates `text` for an experiment of `kind`.
    pub fn parse(text: &str, kind: ExperimentKind) -> Result<Self> {
        let mut keys = Keys {
            raw: parse_pairs(text)?,
            echo: BTreeMap::new(),
        };
        if let Some(k) = keys.opt::<ExperimentKind>("kind")? {
            if k != kind {
                return Err(config_err(
                    "kind",
                    format!("config is for `{}` but `{}` was requested", k.name(), kind.name()),
                ));
            }
        }

        let dim: usize = keys.get("grid.dim", 1)?;
        if !(1..=2).contains(&dim) {
            return Err(config_err("grid.dim", format!("must be 1 or 2, got {dim}")));
        }
        let default_x = if dim == 1 { (-4.0, 4.0) } else { (-1.0, 1.0) };
        let x = keys.pair("grid.x", default_x)?;
        let y = keys.pair("grid.y", (-1.0, 1.0))?;
        let n: usize = keys.get("grid.n", if dim == 1 { 200 } else { 32 })?;
        let ny: usize = keys.get("grid.ny", n)?;
        let t = keys.pair("grid.t", if dim == 1 { (0.0, 1.0) } else { (0.0, 2.0) })?;
        let nt: usize = keys.get("grid.nt", if dim == 1 { n } else { 40 })?;
        let grid = if dim == 1 {
            Grid::line(x, n, t, nt)
        } else {
            Grid::plane(x, n, y, ny, t, nt)
        }
        .map_err(|e| config_err("grid", e))?;

        let p: f64 = keys.get("solver.p", 1.5)?;
        if !(p > 1.0 && p <= 2.0) {
            return Err(config_err("solver.p", format!("need 1 < p <= 2, got {p}")));
        }
        let eps: f64 = keys.get("solver.eps", 1e-3)?;
        let defaults = SolverParams::new(p, eps);
        let picard_tol = keys.get("solver.picard_tol", defaults.picard_tol)?;
        let picard_max_iters = keys.get("solver.picard_max_iters", defaults.picard_max_iters)?;
        let linear_tol = keys.get("solver.linear_tol", defaults.linear_tol)?;
        let gradient_floor = keys.get("solver.gradient_floor", defaults.gradient_floor)?;

        let data_kind: String = keys.get("data.kind", if dim == 1 { "barenblatt".into() } else { "bump".into() })?;
        let data = match data_kind.as_str() {
            "barenblatt" => DataSpec::Barenblatt {
                mass: keys.get("data.mass", 1.0)?,
                t0: keys.get("data.t0", 1.0)?,
            },
            "linear" => DataSpec::Linear {
                slope: keys.list("data.slope")?.unwrap_or_else(|| vec![1.0; dim]),
                offset: keys.get("data.offset", 0.0)?,
            },
            "bump" => DataSpec::Bump {
                amplitude: keys.get("data.amplitude", 1.0)?,
            },
            "constant" => DataSpec::Constant {
                value: keys.get("data.value", 0.0)?,
            },
            other => {
                return Err(config_err(
                    "data.kind",
                    format!("unknown data `{other}` (barenblatt, linear, bump, constant)"),
                ))
            }
        };

        let d = EstimateParams::defaults_for(p);
        let alpha = keys.get("estimate.alpha", d.alpha)?;
        let estimate = EstimateParams {
            alpha,
            theta: keys.get("estimate.theta", d.theta)?,
            sigma: keys.get("estimate.sigma", 0.5 * (p - 1.0 + 2.0 * alpha))?,
            kappa: keys.get("estimate.kappa", d.kappa)?,
            delta: keys.get("estimate.delta", d.delta)?,
        };

        let eps_list = keys.list("sweep.eps_list")?.unwrap_or_else(|| SweepPlan::DEFAULT_EPS.to_vec());
        let refinements = keys
            .list("sweep.refinements")?
            .unwrap_or_else(|| vec![1.0, 2.0])
            .into_iter()
            .map(|r| {
                if r >= 1.0 && r.fract() == 0.0 {
                    Ok(r as usize)
                } else {
                    Err(config_err("sweep.refinements", format!("factors must be positive integers, got {r}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let sweep = SweepPlan {
            eps: eps_list,
            refinements,
            p,
            estimate,
        };

        let space_default: Vec<(f64, f64)> = grid
            .space_axes()
            .iter()
            .map(|a| {
                let l = a.hi - a.lo;
                (a.lo + 0.2 * l, a.hi - 0.2 * l)
            })
            .collect();
        let ramp_default: Vec<f64> = grid.space_axes().iter().map(|a| 0.15 * (a.hi - a.lo)).collect();
        let (tl, th) = (grid.time_axis().lo, grid.time_axis().hi);
        let span = th - tl;
        let mut cutoff = CutoffSpec {
            space: keys.intervals("cutoff.space")?.unwrap_or(space_default),
            ramps: keys.list("cutoff.ramp")?.unwrap_or(ramp_default),
            time: keys
                .intervals("cutoff.time")?
                .map(|v| v[0])
                .unwrap_or((tl + 0.1 * span, th - 0.1 * span)),
            time_ramp: keys.get("cutoff.time_ramp", 0.3 * span)?,
        };
        if cutoff.ramps.len() == 1 && dim == 2 {
            cutoff.ramps.push(cutoff.ramps[0]);
        }

        let reference = match keys.get::<String>("reference", "analytic".into())?.as_str() {
            "analytic" => ReferenceKind::Analytic,
            "smallest-eps" => ReferenceKind::SmallestEps,
            other => {
                return Err(config_err(
                    "reference",
                    format!("unknown reference `{other}` (analytic, smallest-eps)"),
                ))
            }
        };
        let output_dir = keys.opt::<PathBuf>("output.dir")?;
        let seed = keys.get("seed", 0u64)?;
        let samples = keys.get("proptest.samples", 100_000usize)?;
        let proptest_p = keys.list("proptest.p_list")?.unwrap_or_else(|| vec![1.1, 1.5, 1.9]);

        if let Some((key, (line, _))) = keys.raw.iter().next() {
            return Err(config_err(key, format!("unknown key on line {line}")));
        }

        let cfg = ExperimentConfig {
            kind,
            grid,
            p,
            eps,
            picard_tol,
            picard_max_iters,
            linear_tol,
            gradient_floor,
            data,
            estimate,
            sweep,
            cutoff,
            reference,
            output_dir,
            seed,
            samples,
            proptest_p,
            echo: keys.echo,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every constraint checked before any compute.
    pub fn validate(&self) -> Result<()> {
        let dim = self.grid.dim();
        self.solver_params(self.eps)
            .validate()
            .map_err(|e| config_err("solver", e))?;
        if self.kind == ExperimentKind::PropertyTests {
            if self.samples == 0 {
                return Err(config_err("proptest.samples", "must be positive"));
            }
            if let Some(p) = self.proptest_p.iter().find(|p| !(**p > 1.0 && **p <= 2.0)) {
                return Err(config_err("proptest.p_list", format!("need 1 < p <= 2, got {p}")));
            }
            return Ok(());
        }
        match &self.data {
            DataSpec::Linear { slope, .. } if slope.len() != dim => {
                return Err(config_err(
                    "data.slope",
                    format!("needs {dim} components, got {}", slope.len()),
                ))
            }
            DataSpec::Barenblatt { .. } => {
                let sol = self.analytic().map_err(|e| config_err("data", e))?;
                sol.unwrap().check_grid(&self.grid).map_err(|e| config_err("grid", e))?;
            }
            _ => {}
        }
        if matches!(self.kind, ExperimentKind::Sweep | ExperimentKind::Verify) {
            self.sweep.validate().map_err(|e| config_err("sweep.eps_list", e))?;
        }
        if self.kind == ExperimentKind::Refine {
            let r = &self.sweep.refinements;
            if r.is_empty() || r.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_err("sweep.refinements", "factors must be strictly increasing"));
            }
        }
        if matches!(self.kind, ExperimentKind::Sweep | ExperimentKind::Verify)
            && self.reference == ReferenceKind::Analytic
            && matches!(self.data, DataSpec::Bump { .. })
        {
            return Err(config_err(
                "reference",
                "data has no closed form; use `reference = smallest-eps`",
            ));
        }
        if matches!(self.kind, ExperimentKind::Sweep | ExperimentKind::Verify | ExperimentKind::Refine) {
            self.estimate.check_alpha(self.p).map_err(|e| config_err("estimate.alpha", e))?;
            let est = &self.estimate;
            if !(est.sigma > 0.0 && est.sigma < self.p - 1.0 + 2.0 * est.alpha) {
                return Err(config_err(
                    "estimate.sigma",
                    format!("need 0 < σ < p - 1 + 2α = {}", self.p - 1.0 + 2.0 * est.alpha),
                ));
            }
            if !(est.kappa > 0.0) {
                return Err(config_err("estimate.kappa", "must be positive"));
            }
            if !(est.delta > 0.0) {
                return Err(config_err("estimate.delta", "must be positive"));
            }
            if self.p < 1.5 {
                est.check_theta(self.p).map_err(|e| config_err("estimate.theta", e))?;
            }
            check_summability_regime(self.p, dim, self.summability_theta())
                .map_err(|e| config_err("estimate.theta", e))?;
            self.cutoff().map_err(|e| config_err("cutoff", e))?;
            self.region().map_err(|e| config_err("cutoff", e))?;
        }
        Ok(())
    }

    /// `θ` of the `u_t` summability check: 2 when the regime demands it.
    pub fn summability_theta(&self) -> f64 {
        if self.p >= 1.5 || self.grid.dim() == 1 {
            2.0
        } else {
            self.estimate.theta
        }
    }

    pub fn solver_params(&self, eps: f64) -> SolverParams {
        SolverParams {
            picard_tol: self.picard_tol,
            picard_max_iters: self.picard_max_iters,
            linear_tol: self.linear_tol,
            gradient_floor: self.gradient_floor,
            ..SolverParams::new(self.p, eps)
        }
    }

    /// Closed form of the data, when it has one.
    pub fn analytic(&self) -> Result<Option<AnalyticSolution>> {
        Ok(match &self.data {
            DataSpec::Barenblatt { mass, t0 } => {
                Some(barenblatt_fast_diffusion(self.p, self.grid.dim(), *mass, *t0)?)
            }
            DataSpec::Linear { slope, offset } => Some(linear_solution(slope, *offset)?),
            DataSpec::Constant { value } => Some(linear_solution(&vec![0.0; self.grid.dim()], *value)?),
            DataSpec::Bump { .. } => None,
        })
    }

    pub fn boundary(&self) -> Result<BoundaryData> {
        if let Some(sol) = self.analytic()? {
            return Ok(BoundaryData::from_solution(&sol));
        }
        let DataSpec::Bump { amplitude } = self.data else {
            unreachable!("every other data kind has a closed form")
        };
        let axes: Vec<(f64, f64)> = self
            .grid
            .space_axes()
            .iter()
            .map(|a| (0.5 * (a.lo + a.hi), a.hi - a.lo))
            .collect();
        let t0 = self.grid.time_axis().lo;
        Ok(BoundaryData::from_fn(format!("bump amplitude {amplitude}"), move |x, t| {
            if t == t0 {
                axes.iter()
                    .zip(x)
                    .map(|((mid, len), xk)| (PI * (xk - mid) / len).cos())
                    .product::<f64>()
                    * amplitude
            } else {
                0.0
            }
        }))
    }

    pub fn cutoff(&self) -> Result<Cutoff> {
        self.cutoff_on(&self.grid)
    }

    pub fn cutoff_on(&self, grid: &Grid) -> Result<Cutoff> {
        let c = &self.cutoff;
        make_cutoff(grid, &c.space, &c.ramps, Some((c.time, c.time_ramp)))
    }

    /// Interior region of the summability study: the cutoff's support box.
    pub fn region(&self) -> Result<Region> {
        let c = &self.cutoff;
        let r = Region::from_box(&self.grid, &c.space, c.time)?;
        if !r.is_interior(&self.grid) {
            return Err(Error::InvalidRegion("cutoff support touches the boundary".into()));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_of(e: Error) -> String {
        match e {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_are_the_standard_configuration() {
        let c = ExperimentConfig::parse("", ExperimentKind::Sweep).unwrap();
        assert_eq!(c.grid.dim(), 1);
        assert_eq!(c.grid.shape(), [201, 1]);
        assert_eq!(c.p, 1.5);
        assert_eq!(c.sweep.eps, SweepPlan::DEFAULT_EPS.to_vec());
        assert!(c.echo.is_empty());
        assert_eq!(c.data, DataSpec::Barenblatt { mass: 1.0, t0: 1.0 });
    }

    #[test]
    fn parses_keys_and_comments() {
        let text = "# header\ngrid.n = 64 # cells\nsolver.p=1.6\nsweep.eps_list = 1, 0.1, 0.01\ncutoff.space = -2:2\n";
        let c = ExperimentConfig::parse(text, ExperimentKind::Verify).unwrap();
        assert_eq!(c.grid.shape(), [65, 1]);
        assert_eq!(c.p, 1.6);
        assert_eq!(c.sweep.eps, vec![1.0, 0.1, 0.01]);
        assert_eq!(c.cutoff.space, vec![(-2.0, 2.0)]);
        assert_eq!(c.echo["solver.p"], "1.6");
    }

    #[test]
    fn errors_name_the_offending_path() {
        let cases = [
            ("solver.p = 2.5", "solver.p"),
            ("solver.p = abc", "solver.p"),
            ("bogus.key = 1", "bogus.key"),
            ("sweep.eps_list = 0.1, 1, 0.01", "sweep.eps_list"),
            ("sweep.eps_list = 1", "sweep.eps_list"),
            ("estimate.alpha = 0.1", "estimate.alpha"),
            ("estimate.sigma = 5", "estimate.sigma"),
            ("data.kind = smoke", "data.kind"),
            ("grid.n = 2", "grid"),
            ("kind = solve", "kind"),
            ("just words", "line 1"),
            ("solver.p = 1.2\ngrid.dim = 2\ndata.kind = bump\nreference = smallest-eps\nestimate.theta = 1.3", "estimate.theta"),
            ("cutoff.space = -4:4", "cutoff"),
        ];
        for (text, path) in cases {
            let e = ExperimentConfig::parse(text, ExperimentKind::Sweep).unwrap_err();
            assert_eq!(path_of(e), path, "{text}");
        }
        let e = ExperimentConfig::parse("solver.eps = 0\nsolver.gradient_floor = 0", ExperimentKind::Solve).unwrap_err();
        assert_eq!(path_of(e), "solver");
    }

    #[test]
    fn bump_needs_a_discrete_reference_for_sweeps() {
        let text = "grid.dim = 2\ndata.kind = bump\nsolver.p = 1.2\nestimate.theta = 1.2";
        let e = ExperimentConfig::parse(text, ExperimentKind::Sweep).unwrap_err();
        assert_eq!(path_of(e), "reference");
        let ok = format!("{text}\nreference = smallest-eps");
        assert!(ExperimentConfig::parse(&ok, ExperimentKind::Sweep).is_ok());
    }

    #[test]
    fn bump_vanishes_on_the_lateral_boundary() {
        let c = ExperimentConfig::parse("grid.dim = 2\ndata.kind = bump\ndata.amplitude = 3", ExperimentKind::Solve).unwrap();
        let g = c.boundary().unwrap();
        assert!((g.eval(&[0.0, 0.0], 0.0) - 3.0).abs() < 1e-15);
        assert!(g.eval(&[1.0, 0.3], 0.0).abs() < 1e-15);
        assert_eq!(g.eval(&[0.0, 0.0], 0.5), 0.0);
    }
}
