//! TOML-facing operator definitions.

use serde::{Deserialize, Serialize};

use super::{
    fucik_operator_nd, plateau_operator, pucci_plus_operator, Coef, ControlledOperator,
    LinearCoefficients, StructureConstants, TableCoef,
};
use crate::error::{HjbError, Result};

/// A coefficient as written in a config file.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum CoefDef {
    Number(f64),
    Expr(String),
    Table { table: TableDef },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct TableDef {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
    pub values: Vec<f64>,
}

impl CoefDef {
    pub fn build(&self) -> Result<Coef> {
        match self {
            CoefDef::Number(v) => Ok(Coef::Const(*v)),
            CoefDef::Expr(s) => match s.trim().parse::<f64>() {
                Ok(v) => Ok(Coef::Const(v)),
                Err(_) => Coef::expr(s),
            },
            CoefDef::Table { table } => Ok(Coef::Table(TableCoef::new(
                table.lo.clone(),
                table.hi.clone(),
                table.n.clone(),
                table.values.clone(),
            )?)),
        }
    }
}

/// Diffusion: a scalar multiple of the identity or a full row-major matrix.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum DiffusionDef {
    Matrix(Vec<CoefDef>),
    Scalar(CoefDef),
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControlDef {
    #[serde(rename = "A", default)]
    pub a: Option<DiffusionDef>,
    #[serde(default)]
    pub b: Option<Vec<CoefDef>>,
    #[serde(default)]
    pub c: Option<CoefDef>,
    #[serde(default)]
    pub f: Option<CoefDef>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PresetDef {
    Fucik {
        a: f64,
        b: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    PucciPlus {
        lambda: f64,
        #[serde(rename = "Lambda")]
        cap_lambda: f64,
    },
    /// Convex piecewise-linear `f` with slope `slope` on `[0, len]`; a missing
    /// slope is resolved to the discrete principal Laplacian eigenvalue.
    Plateau {
        a: f64,
        b: f64,
        len: f64,
        #[serde(default)]
        slope: Option<f64>,
    },
}

fn one() -> usize {
    1
}

/// The `[operator]` config section.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OperatorDef {
    #[serde(default)]
    pub preset: Option<PresetDef>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(rename = "Lambda", default)]
    pub cap_lambda: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub a0: Option<f64>,
    #[serde(default)]
    pub controls: Vec<ControlDef>,
}

impl OperatorDef {
    pub fn needs_auto_slope(&self) -> bool {
        matches!(self.preset, Some(PresetDef::Plateau { slope: None, .. }))
    }

    /// Builds the operator. `auto_slope` is only consulted for a plateau
    /// preset without an explicit slope; `region` is used to estimate `a0`
    /// when it is not given and some inhomogeneity is nonzero.
    pub fn build(
        &self,
        region: &[(f64, f64)],
        auto_slope: impl FnOnce() -> Result<f64>,
    ) -> Result<ControlledOperator> {
        if let Some(preset) = &self.preset {
            if !self.controls.is_empty() {
                return Err(HjbError::Config(
                    "operator: give either a preset or explicit controls, not both".into(),
                ));
            }
            return match preset {
                PresetDef::Fucik { a, b, dim } => fucik_operator_nd(*dim, *a, *b),
                PresetDef::PucciPlus { lambda, cap_lambda } => {
                    pucci_plus_operator(*lambda, *cap_lambda)
                }
                PresetDef::Plateau { a, b, len, slope } => {
                    let s = match slope {
                        Some(s) => *s,
                        None => auto_slope()?,
                    };
                    plateau_operator(*a, s, *b, *len)
                }
            };
        }
        let missing = |name: &str| HjbError::Config(format!("operator.{name} is required"));
        let dim = self.dim.ok_or_else(|| missing("dim"))?;
        let k = StructureConstants {
            lambda: self.lambda.ok_or_else(|| missing("lambda"))?,
            cap_lambda: self.cap_lambda.ok_or_else(|| missing("Lambda"))?,
            gamma: self.gamma.ok_or_else(|| missing("gamma"))?,
            delta: self.delta.ok_or_else(|| missing("delta"))?,
        };
        if self.controls.is_empty() {
            return Err(HjbError::Config("operator.controls must not be empty".into()));
        }
        let mut controls = Vec::with_capacity(self.controls.len());
        for (i, cd) in self.controls.iter().enumerate() {
            let ctx = |e: HjbError| HjbError::Config(format!("operator.controls[{i}]: {e}"));
            let mut lc = LinearCoefficients::laplacian(dim);
            match &cd.a {
                None => {}
                Some(DiffusionDef::Scalar(s)) => {
                    lc = lc.with_scalar_diffusion(s.build().map_err(ctx)?);
                }
                Some(DiffusionDef::Matrix(entries)) => {
                    if entries.len() != dim * dim {
                        return Err(HjbError::Config(format!(
                            "operator.controls[{i}].A needs {} entries",
                            dim * dim
                        )));
                    }
                    let a = entries
                        .iter()
                        .map(|e| e.build())
                        .collect::<Result<Vec<_>>>()
                        .map_err(ctx)?;
                    lc = lc.with_diffusion(a);
                }
            }
            if let Some(b) = &cd.b {
                if b.len() != dim {
                    return Err(HjbError::Config(format!(
                        "operator.controls[{i}].b needs {dim} entries"
                    )));
                }
                let b = b
                    .iter()
                    .map(|e| e.build())
                    .collect::<Result<Vec<_>>>()
                    .map_err(ctx)?;
                lc = lc.with_drift(b);
            }
            if let Some(c) = &cd.c {
                lc = lc.with_c(c.build().map_err(ctx)?);
            }
            if let Some(f) = &cd.f {
                lc = lc.with_f(f.build().map_err(ctx)?);
            }
            controls.push(lc);
        }
        let op = ControlledOperator::new(controls, k)?;
        match self.a0 {
            Some(a0) => Ok(op.with_a0(a0)),
            None if op.is_homogeneous() => Ok(op),
            None => op.estimate_a0(region, 65),
        }
    }
}
