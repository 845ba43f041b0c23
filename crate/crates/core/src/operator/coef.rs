use std::fmt;
use std::sync::Arc;

use crate::error::{HjbError, Result};

const VAR_NAMES: [&str; 3] = ["x", "y", "z"];

thread_local! {
    static BUILTINS: meval::Context<'static> = meval::Context::new();
}

/// A scalar coefficient field evaluated pointwise.
#[derive(Clone)]
pub enum Coef {
    Const(f64),
    Expr(ExprCoef),
    Table(TableCoef),
    Func(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl Coef {
    pub fn zero() -> Self {
        Coef::Const(0.0)
    }

    /// Parses a closed-form expression in the variables `x`, `y`, `z`.
    pub fn expr(source: &str) -> Result<Self> {
        Ok(Coef::Expr(ExprCoef::parse(source)?))
    }

    pub fn func<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Coef::Func(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = match self {
            Coef::Const(c) => *c,
            Coef::Expr(e) => e.eval(x)?,
            Coef::Table(t) => t.eval(x)?,
            Coef::Func(f) => f(x),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(HjbError::Coefficient(format!(
                "{self:?} is not finite at {x:?}"
            )))
        }
    }

    /// True when the coefficient is the literal constant zero.
    pub fn is_const_zero(&self) -> bool {
        matches!(self, Coef::Const(c) if *c == 0.0)
    }
}

impl fmt::Debug for Coef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coef::Const(c) => write!(f, "{c}"),
            Coef::Expr(e) => write!(f, "\"{}\"", e.source),
            Coef::Table(t) => write!(f, "table{:?}", t.n),
            Coef::Func(_) => write!(f, "<fn>"),
        }
    }
}

impl From<f64> for Coef {
    fn from(c: f64) -> Self {
        Coef::Const(c)
    }
}

#[derive(Clone)]
pub struct ExprCoef {
    source: String,
    expr: meval::Expr,
}

impl ExprCoef {
    pub fn parse(source: &str) -> Result<Self> {
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| HjbError::Coefficient(format!("cannot parse {source:?}: {e}")))?;
        let parsed = ExprCoef {
            source: source.to_string(),
            expr,
        };
        // reject unknown identifiers up front
        parsed.eval(&[0.5, 0.5, 0.5])?;
        Ok(parsed)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        let mut vars = [("x", 0.0), ("y", 0.0), ("z", 0.0)];
        for (slot, v) in vars.iter_mut().zip(x) {
            slot.1 = *v;
        }
        debug_assert!(x.len() <= VAR_NAMES.len());
        BUILTINS.with(|ctx| {
            self.expr
                .eval_with_context((vars, ctx))
                .map_err(|e| HjbError::Coefficient(format!("{:?}: {e}", self.source)))
        })
    }
}

/// Values on a regular lattice (endpoints included), multilinearly interpolated.
#[derive(Clone, Debug)]
pub struct TableCoef {
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
    values: Vec<f64>,
}

impl TableCoef {
    /// `values` is ordered with the first axis fastest.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, n: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim || n.len() != dim || dim == 0 || dim > 2 {
            return Err(HjbError::Coefficient("table axes are inconsistent".into()));
        }
        if n.iter().any(|&k| k < 2) || lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(HjbError::Coefficient("degenerate table lattice".into()));
        }
        let total: usize = n.iter().product();
        if values.len() != total {
            return Err(HjbError::Coefficient(format!(
                "table expects {total} values, got {}",
                values.len()
            )));
        }
        Ok(TableCoef { lo, hi, n, values })
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        let dim = self.lo.len();
        if x.len() < dim {
            return Err(HjbError::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        let mut idx = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..dim {
            let span = self.hi[k] - self.lo[k];
            let slack = 1e-12 * span;
            if x[k] < self.lo[k] - slack || x[k] > self.hi[k] + slack {
                return Err(HjbError::Coefficient(format!(
                    "position {x:?} outside the table lattice"
                )));
            }
            let s = ((x[k] - self.lo[k]) / span * (self.n[k] - 1) as f64)
                .clamp(0.0, (self.n[k] - 1) as f64);
            let i = (s.floor() as usize).min(self.n[k] - 2);
            idx[k] = i;
            frac[k] = s - i as f64;
        }
        let at = |i: usize, j: usize| self.values[i + j * self.n[0]];
        Ok(if dim == 1 {
            at(idx[0], 0) * (1.0 - frac[0]) + at(idx[0] + 1, 0) * frac[0]
        } else {
            let (i, j, fx, fy) = (idx[0], idx[1], frac[0], frac[1]);
            at(i, j) * (1.0 - fx) * (1.0 - fy)
                + at(i + 1, j) * fx * (1.0 - fy)
                + at(i, j + 1) * (1.0 - fx) * fy
                + at(i + 1, j + 1) * fx * fy
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expression_uses_float_division_and_builtins() {
        let c = Coef::expr("1/2 + sin(pi/2) * x + y^2").unwrap();
        let v = c.eval(&[2.0, 3.0]).unwrap();
        assert!((v - (0.5 + 2.0 + 9.0)).abs() < 1e-14);
    }

    #[test]
    fn unknown_identifier_is_rejected() {
        assert!(Coef::expr("q + 1").is_err());
        assert!(Coef::expr("sin(").is_err());
    }

    #[test]
    fn table_interpolates_linearly() {
        let t = TableCoef::new(vec![0.0], vec![1.0], vec![3], vec![0.0, 1.0, 4.0]).unwrap();
        let c = Coef::Table(t);
        assert!((c.eval(&[0.25]).unwrap() - 0.5).abs() < 1e-14);
        assert!((c.eval(&[0.75]).unwrap() - 2.5).abs() < 1e-14);
        assert!(c.eval(&[1.5]).is_err());
    }

    #[test]
    fn bilinear_table_reproduces_affine_data() {
        let n = [4usize, 3];
        let mut vals = Vec::new();
        for j in 0..n[1] {
            for i in 0..n[0] {
                let x = i as f64 / 3.0;
                let y = j as f64 / 2.0;
                vals.push(2.0 * x - y + 1.0);
            }
        }
        let t = TableCoef::new(vec![0.0, 0.0], vec![1.0, 1.0], n.to_vec(), vals).unwrap();
        let v = Coef::Table(t).eval(&[0.4, 0.7]).unwrap();
        assert!((v - (0.8 - 0.7 + 1.0)).abs() < 1e-13);
    }
}
