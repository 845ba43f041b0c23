//! Experiment configuration files and `--set` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ambrosetti_prodi::{ApConfig, ApProblem};
use crate::discretize::{discretize, DiscreteHJB};
use crate::error::{HjbError, Result};
use crate::grid::{DomainDef, Field, Grid, SubdomainDef};
use crate::operator::{fucik_operator_nd, CoefDef, ControlledOperator, OperatorDef};
use crate::solvers::SolverConfig;
use crate::spectral::{principal_half_eigen, EigenConfig};
use crate::Sign;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    StructureCheck,
    Eigen,
    Tstar,
    Branches,
    Census,
    Asymptotics,
    DomainHole,
    Certificate,
    ContinuityProbe,
    FullSuite,
}

impl Kind {
    pub const EXPERIMENTS: [Kind; 9] = [
        Kind::StructureCheck,
        Kind::Eigen,
        Kind::Tstar,
        Kind::Branches,
        Kind::Census,
        Kind::Asymptotics,
        Kind::DomainHole,
        Kind::Certificate,
        Kind::ContinuityProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::StructureCheck => "structure_check",
            Kind::Eigen => "eigen",
            Kind::Tstar => "tstar",
            Kind::Branches => "branches",
            Kind::Census => "census",
            Kind::Asymptotics => "asymptotics",
            Kind::DomainHole => "domain_hole",
            Kind::Certificate => "certificate",
            Kind::ContinuityProbe => "continuity_probe",
            Kind::FullSuite => "full_suite",
        }
    }
}

/// Kind-specific parameters; every kind ignores the fields it does not use.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub samples: usize,
    pub t_samples: Vec<f64>,
    pub census_t: Vec<f64>,
    pub n_starts: usize,
    pub t_large: Vec<f64>,
    pub hole: Option<SubdomainDef>,
    pub instances: usize,
    pub perturbation: CoefDef,
    pub perturbation_scales: Vec<f64>,
    pub phi_shifts: Vec<f64>,
    pub expect_lambda_plus: Option<f64>,
    pub expect_lambda_minus: Option<f64>,
    pub expect_tol: f64,
    pub expect_tstar: Option<f64>,
    pub expect_min_clusters: Option<usize>,
    pub slope_tol: Option<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            samples: 1000,
            t_samples: vec![0.2, 0.5, 1.0, 2.0, 5.0],
            census_t: vec![-0.5, -0.1, 0.2, 1.0, 5.0],
            n_starts: 12,
            t_large: vec![20.0, 200.0],
            hole: None,
            instances: 20,
            perturbation: CoefDef::Expr("sin(3*x)".into()),
            perturbation_scales: vec![0.1, 0.01, 0.001],
            phi_shifts: vec![1.0, 0.5, 0.25, 0.125],
            expect_lambda_plus: None,
            expect_lambda_minus: None,
            expect_tol: 1e-3,
            expect_tstar: None,
            expect_min_clusters: None,
            slope_tol: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    /// Run directory below the output root; defaults to the config file stem.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub operator: Option<OperatorDef>,
    #[serde(default)]
    pub domain: Option<DomainDef>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub eigen: EigenConfig,
    #[serde(default)]
    pub ap: ApConfig,
    /// Right-hand side `h`; zero when absent.
    #[serde(default)]
    pub h: Option<CoefDef>,
    #[serde(default)]
    pub params: Params,
}

fn toml_err(e: toml::de::Error, text: &str) -> HjbError {
    let place = e
        .span()
        .map(|s| {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        })
        .unwrap_or_default();
    HjbError::Config(format!("{}{place}", e.message()))
}

/// Parses `key.path=value`; the value is read as TOML and falls back to a string.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HjbError::Config(format!("override `{spec}` is not key=value")))?;
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| HjbError::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: ExperimentConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| toml_err(e, text))?
        } else {
            let mut root: toml::Table = toml::from_str(text).map_err(|e| toml_err(e, text))?;
            for o in overrides {
                apply_override(&mut root, o)?;
            }
            toml::Value::Table(root)
                .try_into()
                .map_err(|e: toml::de::Error| HjbError::Config(e.message().to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HjbError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.operator.is_none() {
            return Err(HjbError::Config("missing [operator] section".into()));
        }
        if self.domain.is_none() {
            return Err(HjbError::Config("missing [domain] section".into()));
        }
        self.solver.validate()?;
        if self.params.n_starts < 8 {
            return Err(HjbError::Config("params.n_starts must be at least 8".into()));
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Output directory: `$HJBLAB_OUT` (or `out`) joined with the run name.
    pub fn run_dir(&self, config_path: Option<&Path>) -> PathBuf {
        let root = std::env::var_os("HJBLAB_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"));
        let name = self.output.clone().unwrap_or_else(|| {
            config_path
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.kind.name().to_string())
        });
        root.join(name)
    }

    pub fn build(&self) -> Result<Setup> {
        let domain = self.domain.as_ref().ok_or_else(|| HjbError::Config("missing [domain] section".into()))?;
        let opdef = self
            .operator
            .as_ref()
            .ok_or_else(|| HjbError::Config("missing [operator] section".into()))?;
        let grid = Arc::new(domain.build()?);
        let extents = domain.extents()?;
        let eig = self.eigen.clone();
        let g2 = grid.clone();
        let op = opdef.build(&extents, move || laplacian_eigenvalue(&g2, &eig))?;
        let d = discretize(&op, &grid)?;
        let h = match &self.h {
            None => Field::zeros(&grid),
            Some(def) => coef_field(def, &grid)?,
        };
        Ok(Setup {
            grid,
            extents,
            op,
            d,
            h,
        })
    }
}

/// Principal Dirichlet eigenvalue of the discrete Laplacian on `grid`.
pub fn laplacian_eigenvalue(grid: &Arc<Grid>, cfg: &EigenConfig) -> Result<f64> {
    let lap = discretize(&fucik_operator_nd(grid.dim(), 0.0, 0.0)?, grid)?;
    Ok(principal_half_eigen(&lap, Sign::Plus, cfg)?.lambda)
}

pub fn coef_field(def: &CoefDef, grid: &Arc<Grid>) -> Result<Field> {
    let c = def.build()?;
    let vals = (0..grid.len())
        .map(|k| c.eval(&grid.position(k)))
        .collect::<Result<Vec<_>>>()?;
    Field::new(grid, vals)
}

/// Everything an experiment needs, built once from a config.
#[derive(Clone, Debug)]
pub struct Setup {
    pub grid: Arc<Grid>,
    pub extents: Vec<(f64, f64)>,
    pub op: ControlledOperator,
    pub d: DiscreteHJB,
    pub h: Field,
}

impl Setup {
    pub fn problem(&self, cfg: &ExperimentConfig) -> Result<ApProblem> {
        ApProblem::with_eigen_config(
            self.d.clone(),
            self.h.clone(),
            cfg.solver.clone(),
            cfg.ap.clone(),
            &cfg.eigen,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "eigen"
[operator.preset]
kind = "fucik"
a = 0.5
b = 1.5
[domain]
extents = [[0, "pi"]]
n = [50]
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::parse(BASE, &[]).unwrap();
        assert_eq!(cfg.kind, Kind::Eigen);
        let s = cfg.build().unwrap();
        assert_eq!(s.grid.len(), 50);
        assert_eq!(s.h.sup_norm(), 0.0);
    }

    #[test]
    fn overrides_replace_values() {
        let cfg = ExperimentConfig::parse(
            BASE,
            &["domain.n=[20]".into(), "kind=tstar".into(), "h=sin(2*x)".into()],
        )
        .unwrap();
        assert_eq!(cfg.domain.unwrap().n, vec![20]);
        assert_eq!(cfg.kind, Kind::Tstar);
        assert_eq!(cfg.h, Some(CoefDef::Expr("sin(2*x)".into())));
    }

    #[test]
    fn missing_domain_is_named() {
        let text = "kind = \"eigen\"\n[operator.preset]\nkind = \"fucik\"\na = 0.5\nb = 1.5\n";
        let err = ExperimentConfig::parse(text, &[]).unwrap_err();
        assert!(err.to_string().contains("[domain]"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = ExperimentConfig::parse("kind = \"eigen\"\nseed = \"x\"\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn hash_is_stable() {
        let a = ExperimentConfig::parse(BASE, &[]).unwrap();
        let b = ExperimentConfig::parse(BASE, &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(BASE, &["seed=3".into()]).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
