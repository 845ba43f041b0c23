//! Calibration of the a-priori constant on one Fučík family and its
//! verification on a disjoint one.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::coef_field;
use super::experiments::write_json;
use crate::ambrosetti_prodi::{spectral_factor, ApConfig, ApProblem};
use crate::discretize::discretize;
use crate::error::{HjbError, Result};
use crate::grid::{DomainDef, Grid};
use crate::operator::{fucik_operator_nd, CoefDef};
use crate::solvers::SolverConfig;
use crate::spectral::EigenConfig;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SuiteProblem {
    pub a: f64,
    pub b: f64,
    #[serde(default = "zero_h")]
    pub h: CoefDef,
    pub t: Vec<f64>,
}

fn zero_h() -> CoefDef {
    CoefDef::Number(0.0)
}

fn default_safety() -> f64 {
    1.25
}

fn default_search_c0() -> f64 {
    10.0
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Constant used for the threshold search bracket while calibrating.
    #[serde(default = "default_search_c0")]
    pub search_c0: f64,
    pub domain: DomainDef,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub ap: ApConfig,
    pub calibration: Vec<SuiteProblem>,
    pub verification: Vec<SuiteProblem>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ProblemRecord {
    pub a: f64,
    pub b: f64,
    pub h: CoefDef,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub t_star: f64,
    /// Bracket with the constant in force for this phase.
    pub bracket: (f64, f64),
    pub inside_bracket: bool,
    /// `(t, ‖u_low‖/B₁, ‖u_up‖/B₁)` with `B₁` the bound at constant one.
    pub solution_ratios: Vec<(f64, f64, f64)>,
    /// Ratios of the threshold to its two bracket ends at constant one.
    pub threshold_ratios: Vec<f64>,
}

impl ProblemRecord {
    pub fn max_ratio(&self) -> f64 {
        self.solution_ratios
            .iter()
            .flat_map(|r| [r.1, r.2])
            .chain(self.threshold_ratios.iter().copied())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CalibrationReport {
    pub c0: f64,
    pub safety: f64,
    pub max_calibration_ratio: f64,
    pub max_verification_ratio: f64,
    pub calibration: Vec<ProblemRecord>,
    pub verification: Vec<ProblemRecord>,
    pub passed: bool,
}

fn measure(
    sp: &SuiteProblem,
    grid: &Arc<Grid>,
    suite: &SuiteConfig,
    c0: f64,
) -> Result<ProblemRecord> {
    let op = fucik_operator_nd(grid.dim(), sp.a, sp.b)?;
    let d = discretize(&op, grid)?;
    let h = coef_field(&sp.h, grid)?;
    let cfg = ApConfig {
        c0,
        ..suite.ap.clone()
    };
    let tol = cfg.tstar_tol;
    let pb = ApProblem::with_eigen_config(d, h, suite.solver.clone(), cfg, &EigenConfig::default())?;
    let r = pb.find_tstar(tol)?;
    let ts = r.t_star;
    let samples: Vec<f64> = sp.t.iter().copied().filter(|&t| t > ts + tol).collect();
    let mut solution_ratios = Vec::new();
    for bp in pb.trace_branches(&samples)? {
        let b1 = pb.bound_with(bp.t, 1.0)?;
        solution_ratios.push((bp.t, bp.u_low.sup_norm() / b1, bp.u_up.sup_norm() / b1));
    }
    let p = pb.p();
    let k = spectral_factor(pb.lambda_plus, pb.lambda_minus);
    let mut threshold_ratios = Vec::new();
    if ts < -tol {
        threshold_ratios.push(-ts / (k * (pb.d.a0 + pb.h.lp_norm(p))));
    }
    let neg = pb.h.negative_part().lp_norm(p);
    if ts > tol && neg > 0.0 {
        threshold_ratios.push(ts / neg);
    }
    let bracket = r.paper_bracket;
    Ok(ProblemRecord {
        a: sp.a,
        b: sp.b,
        h: sp.h.clone(),
        lambda_plus: pb.lambda_plus,
        lambda_minus: pb.lambda_minus,
        t_star: ts,
        bracket,
        inside_bracket: ts >= bracket.0 - tol && ts <= bracket.1 + tol,
        solution_ratios,
        threshold_ratios,
    })
}

/// Calibrates `C₀ = safety · max ratio` and verifies it on the second family.
pub fn calibrate(suite: &SuiteConfig) -> Result<CalibrationReport> {
    if suite.calibration.is_empty() || suite.verification.is_empty() {
        return Err(HjbError::Config("both calibration and verification problems are required".into()));
    }
    if suite.calibration.iter().any(|c| suite.verification.contains(c)) {
        return Err(HjbError::Config("calibration and verification problems must be disjoint".into()));
    }
    if !(suite.safety >= 1.0) {
        return Err(HjbError::Config("safety must be at least 1".into()));
    }
    let grid = Arc::new(suite.domain.build()?);
    let calibration = suite
        .calibration
        .iter()
        .map(|sp| measure(sp, &grid, suite, suite.search_c0))
        .collect::<Result<Vec<_>>>()?;
    let max_cal = calibration.iter().map(ProblemRecord::max_ratio).fold(0.0, f64::max);
    if !(max_cal > 0.0) {
        return Err(HjbError::Config("calibration suite produced no ratios".into()));
    }
    let c0 = suite.safety * max_cal;
    let verification = suite
        .verification
        .iter()
        .map(|sp| measure(sp, &grid, suite, c0))
        .collect::<Result<Vec<_>>>()?;
    let max_ver = verification.iter().map(ProblemRecord::max_ratio).fold(0.0, f64::max);
    let passed = max_ver <= c0 && verification.iter().all(|r| r.inside_bracket);
    Ok(CalibrationReport {
        c0,
        safety: suite.safety,
        max_calibration_ratio: max_cal,
        max_verification_ratio: max_ver,
        calibration,
        verification,
        passed,
    })
}

pub fn load_suite(path: &Path) -> Result<SuiteConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HjbError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| HjbError::Config(e.to_string()))
}

/// Runs a suite file and writes `calibration.json` into its output directory.
pub fn calibrate_path(path: &Path) -> Result<(CalibrationReport, std::path::PathBuf)> {
    let suite = load_suite(path)?;
    let root = std::env::var_os("HJBLAB_OUT")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| "out".into());
    let name = suite.output.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "calibration".into())
    });
    let dir = root.join(name);
    std::fs::create_dir_all(&dir)?;
    let report = calibrate(&suite)?;
    let out = dir.join("calibration.json");
    write_json(&out, &report)?;
    Ok((report, out))
}
