//! HJB operators as finite suprema of linear elliptic operators.
//!
//! A [`ControlledOperator`] stores the coefficient fields `(A, b, c, f)` of
//! every control together with the structure constants `(λ, Λ, γ, δ, A₀)`.
//! Evaluation always uses the normalized form
//!
//! ```text
//! F(M, p, u, x) = max_α [tr(A^α M) + b^α·p + c^α u − f^α] + min_α f^α
//! ```
//!
//! so that `F(0, 0, 0, x) = 0`.

mod coef;
mod definition;
mod structure;

pub use coef::{Coef, ExprCoef, TableCoef};
pub use definition::{CoefDef, ControlDef, OperatorDef, PresetDef};
pub use structure::{check_structure, StructureReport};

use nalgebra::DMatrix;

use crate::error::{HjbError, Result};
use crate::Sign;

/// Coefficients `(A, b, c, f)` of one linear operator.
#[derive(Clone, Debug)]
pub struct LinearCoefficients {
    /// Diffusion matrix, row-major `dim × dim`.
    pub a: Vec<Coef>,
    pub b: Vec<Coef>,
    pub c: Coef,
    pub f: Coef,
}

/// Coefficient values of one control at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub f: f64,
}

impl LinearCoefficients {
    /// `tr(D²u) + c u − f` with identity diffusion and no drift.
    pub fn laplacian(dim: usize) -> Self {
        let a = (0..dim * dim)
            .map(|k| Coef::Const(if k % (dim + 1) == 0 { 1.0 } else { 0.0 }))
            .collect();
        LinearCoefficients {
            a,
            b: vec![Coef::zero(); dim],
            c: Coef::zero(),
            f: Coef::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn with_diffusion(mut self, a: Vec<Coef>) -> Self {
        self.a = a;
        self
    }

    /// Replaces the diffusion by `s·I`.
    pub fn with_scalar_diffusion(mut self, s: impl Into<Coef>) -> Self {
        let dim = self.dim();
        let s = s.into();
        self.a = (0..dim * dim)
            .map(|k| {
                if k % (dim + 1) == 0 {
                    s.clone()
                } else {
                    Coef::zero()
                }
            })
            .collect();
        self
    }

    pub fn with_drift(mut self, b: Vec<Coef>) -> Self {
        self.b = b;
        self
    }

    pub fn with_c(mut self, c: impl Into<Coef>) -> Self {
        self.c = c.into();
        self
    }

    pub fn with_f(mut self, f: impl Into<Coef>) -> Self {
        self.f = f.into();
        self
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<PointCoefficients> {
        let a = self.a.iter().map(|c| c.eval(x)).collect::<Result<Vec<_>>>()?;
        let b = self.b.iter().map(|c| c.eval(x)).collect::<Result<Vec<_>>>()?;
        Ok(PointCoefficients {
            a,
            b,
            c: self.c.eval(x)?,
            f: self.f.eval(x)?,
        })
    }
}

/// Declared structure constants of an operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureConstants {
    pub lambda: f64,
    pub cap_lambda: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// A finite family of linear elliptic operators and its structure constants.
#[derive(Clone, Debug)]
pub struct ControlledOperator {
    dim: usize,
    controls: Vec<LinearCoefficients>,
    pub lambda: f64,
    pub cap_lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub a0: f64,
}

impl ControlledOperator {
    /// Builds an operator; `a0` defaults to zero and should be set with
    /// [`ControlledOperator::with_a0`] or [`ControlledOperator::estimate_a0`]
    /// when some `f^α` is nonzero.
    pub fn new(controls: Vec<LinearCoefficients>, k: StructureConstants) -> Result<Self> {
        let first = controls
            .first()
            .ok_or_else(|| HjbError::InvalidOperator("control set is empty".into()))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(HjbError::InvalidOperator("dimension must be positive".into()));
        }
        for (i, ctl) in controls.iter().enumerate() {
            if ctl.b.len() != dim || ctl.a.len() != dim * dim {
                return Err(HjbError::InvalidOperator(format!(
                    "control {i} has inconsistent dimensions"
                )));
            }
        }
        if !(k.lambda > 0.0 && k.lambda <= k.cap_lambda) {
            return Err(HjbError::InvalidOperator(format!(
                "need 0 < lambda <= Lambda, got ({}, {})",
                k.lambda, k.cap_lambda
            )));
        }
        if !(k.gamma >= 0.0 && k.delta >= 0.0) {
            return Err(HjbError::InvalidOperator("gamma and delta must be >= 0".into()));
        }
        Ok(ControlledOperator {
            dim,
            controls,
            lambda: k.lambda,
            cap_lambda: k.cap_lambda,
            gamma: k.gamma,
            delta: k.delta,
            a0: 0.0,
        })
    }

    pub fn with_a0(mut self, a0: f64) -> Self {
        self.a0 = a0;
        self
    }

    /// Sets `a0 = 2·max_α sup|f^α|`, the sup taken over a sample lattice of `region`.
    /// Constant inhomogeneities are exact.
    pub fn estimate_a0(mut self, region: &[(f64, f64)], per_axis: usize) -> Result<Self> {
        let mut sup = 0.0f64;
        for x in lattice(region, per_axis.max(2)) {
            for ctl in &self.controls {
                sup = sup.max(ctl.f.eval(&x)?.abs());
            }
        }
        self.a0 = 2.0 * sup;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn controls(&self) -> &[LinearCoefficients] {
        &self.controls
    }

    pub fn constants(&self) -> StructureConstants {
        StructureConstants {
            lambda: self.lambda,
            cap_lambda: self.cap_lambda,
            gamma: self.gamma,
            delta: self.delta,
        }
    }

    /// True when every inhomogeneity is the literal constant zero.
    pub fn is_homogeneous(&self) -> bool {
        self.controls.iter().all(|c| c.f.is_const_zero())
    }
}

fn lattice(region: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for &(lo, hi) in region {
        let mut next = Vec::with_capacity(pts.len() * per_axis);
        for p in &pts {
            for k in 0..per_axis {
                let mut q = p.clone();
                q.push(lo + (hi - lo) * k as f64 / (per_axis - 1) as f64);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// A point of the jet space: Hessian value, gradient, function value and position.
#[derive(Clone, Debug, PartialEq)]
pub struct PointState {
    pub m: DMatrix<f64>,
    pub p: Vec<f64>,
    pub u: f64,
    pub x: Vec<f64>,
}

impl PointState {
    pub fn new(m: DMatrix<f64>, p: Vec<f64>, u: f64, x: Vec<f64>) -> Self {
        PointState { m, p, u, x }
    }

    /// `(tM, tp, tu, x)`.
    pub fn scaled(&self, t: f64) -> Self {
        PointState {
            m: &self.m * t,
            p: self.p.iter().map(|v| v * t).collect(),
            u: self.u * t,
            x: self.x.clone(),
        }
    }

    /// Jet-wise affine combination `α·self + (1−α)·other` at the position of `self`.
    pub fn combine(&self, other: &PointState, alpha: f64) -> Self {
        PointState {
            m: &self.m * alpha + &other.m * (1.0 - alpha),
            p: self
                .p
                .iter()
                .zip(&other.p)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
            u: alpha * self.u + (1.0 - alpha) * other.u,
            x: self.x.clone(),
        }
    }

    /// Jet-wise sum at the position of `self`.
    pub fn add(&self, other: &PointState) -> Self {
        self.combine_linear(other, 1.0)
    }

    /// Jet-wise difference at the position of `self`.
    pub fn sub(&self, other: &PointState) -> Self {
        self.combine_linear(other, -1.0)
    }

    fn combine_linear(&self, other: &PointState, s: f64) -> Self {
        PointState {
            m: &self.m + &other.m * s,
            p: self.p.iter().zip(&other.p).map(|(a, b)| a + s * b).collect(),
            u: self.u + s * other.u,
            x: self.x.clone(),
        }
    }
}

fn check_state(op: &ControlledOperator, s: &PointState) -> Result<()> {
    let n = op.dim;
    for got in [s.m.nrows(), s.m.ncols(), s.p.len(), s.x.len()] {
        if got != n {
            return Err(HjbError::DimensionMismatch { expected: n, got });
        }
    }
    Ok(())
}

fn linear_value(pc: &PointCoefficients, s: &PointState) -> f64 {
    let n = s.p.len();
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += pc.a[i * n + j] * s.m[(j, i)];
        }
    }
    let drift: f64 = pc.b.iter().zip(&s.p).map(|(b, p)| b * p).sum();
    tr + drift + pc.c * s.u
}

/// Normalized operator value `max_α[L^α − f^α] + min_α f^α`.
pub fn eval_f(op: &ControlledOperator, s: &PointState) -> Result<f64> {
    check_state(op, s)?;
    let mut best = f64::NEG_INFINITY;
    let mut fmin = f64::INFINITY;
    for ctl in &op.controls {
        let pc = ctl.eval_at(&s.x)?;
        best = best.max(linear_value(&pc, s) - pc.f);
        fmin = fmin.min(pc.f);
    }
    Ok(best + fmin)
}

/// The positively homogeneous skeleton `F∞ = sup_t F(t·)/t`; for finite
/// control families it is the same operator with every `f^α` removed.
pub fn asymptotic_operator(op: &ControlledOperator) -> ControlledOperator {
    let mut out = op.clone();
    for ctl in &mut out.controls {
        ctl.f = Coef::zero();
    }
    out.a0 = 0.0;
    out
}

/// Pucci extremal operators `M⁺` (`Sign::Plus`) and `M⁻` (`Sign::Minus`).
pub fn pucci_extremal(lambda: f64, cap_lambda: f64, sign: Sign, m: &DMatrix<f64>) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= cap_lambda) {
        return Err(HjbError::Precondition(format!(
            "need 0 < lambda <= Lambda, got ({lambda}, {cap_lambda})"
        )));
    }
    if !m.is_square() {
        return Err(HjbError::NotSymmetric);
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(HjbError::NotSymmetric);
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let (pos, neg) = eig.eigenvalues.iter().fold((0.0, 0.0), |(p, n), &e| {
        if e > 0.0 {
            (p + e, n)
        } else {
            (p, n + e)
        }
    });
    Ok(match sign {
        Sign::Plus => cap_lambda * pos + lambda * neg,
        Sign::Minus => lambda * pos + cap_lambda * neg,
    })
}

/// `max(Tr M + a u, Tr M + b u) = Tr M − a u⁻ + b u⁺` in one dimension.
pub fn fucik_operator(a: f64, b: f64) -> Result<ControlledOperator> {
    fucik_operator_nd(1, a, b)
}

/// The Fučík operator `ΔU − a u⁻ + b u⁺` in `dim` dimensions.
pub fn fucik_operator_nd(dim: usize, a: f64, b: f64) -> Result<ControlledOperator> {
    if a > b {
        return Err(HjbError::Precondition(format!(
            "Fučík operator needs a <= b, got a={a}, b={b}"
        )));
    }
    ControlledOperator::new(
        vec![
            LinearCoefficients::laplacian(dim).with_c(a),
            LinearCoefficients::laplacian(dim).with_c(b),
        ],
        StructureConstants {
            lambda: 1.0,
            cap_lambda: 1.0,
            gamma: 0.0,
            delta: a.abs().max(b.abs()),
        },
    )
}

/// `max(λ u'', Λ u'')` in 1D, i.e. the Pucci operator `M⁺` with `γ = δ = 0`.
pub fn pucci_plus_operator(lambda: f64, cap_lambda: f64) -> Result<ControlledOperator> {
    ControlledOperator::new(
        vec![
            LinearCoefficients::laplacian(1).with_scalar_diffusion(lambda),
            LinearCoefficients::laplacian(1).with_scalar_diffusion(cap_lambda),
        ],
        StructureConstants {
            lambda,
            cap_lambda,
            gamma: 0.0,
            delta: 0.0,
        },
    )
}

/// `Tr M + f(u)` with the convex piecewise-linear
/// `f(u) = max(a u, s u, b u − (b − s)·len)`, which has slope `s` on `[0, len]`.
///
/// When `s` equals the principal Dirichlet eigenvalue of the Laplacian, every
/// multiple `κφ₁` with `0 ≤ κ ≤ len` solves `F[u] = 0`.
pub fn plateau_operator(a: f64, s: f64, b: f64, len: f64) -> Result<ControlledOperator> {
    if !(a < s && s < b && len > 0.0) {
        return Err(HjbError::Precondition(format!(
            "plateau operator needs a < s < b and len > 0, got ({a}, {s}, {b}, {len})"
        )));
    }
    let jump = (b - s) * len;
    Ok(ControlledOperator::new(
        vec![
            LinearCoefficients::laplacian(1).with_c(a),
            LinearCoefficients::laplacian(1).with_c(s),
            LinearCoefficients::laplacian(1).with_c(b).with_f(jump),
        ],
        StructureConstants {
            lambda: 1.0,
            cap_lambda: 1.0,
            gamma: 0.0,
            delta: a.abs().max(b.abs()),
        },
    )?
    .with_a0(2.0 * jump))
}
