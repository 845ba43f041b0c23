//! Principal half-eigenvalues of positively homogeneous discrete operators.
//!
//! Nonlinear inverse power iteration: `F_h[v_{k+1}] + σ v_{k+1} = −v_k` with a
//! fixed `σ < −δ`, normalized in sup-norm. Every iterate yields the
//! Collatz–Wielandt bracket `[min_j r_j, max_j r_j]`, `r_j = −F_h[v]_j / v_j`,
//! which encloses the eigenvalue.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::{discretize, pucci_gradient_operator, DiscreteHJB};
use crate::error::{HjbError, Result};
use crate::grid::{distance_field, restrict_domain, Field, Grid, Subdomain};
use crate::operator::{asymptotic_operator, ControlledOperator};
use crate::solvers::{solve_proper, SolverConfig};
use crate::Sign;

/// A half-eigenvalue with its enclosing bracket and normalized eigenfunction.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    pub phi: Field,
    pub sign: Sign,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// `‖F_h[φ] + λφ‖∞`.
    pub residual: f64,
    /// `(inf, sup)` of `|φ|/d`.
    pub hopf: (f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenSummary {
    pub sign: Sign,
    pub lambda: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    pub residual: f64,
    pub hopf_lower: f64,
    pub hopf_upper: f64,
}

impl EigenPair {
    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            sign: self.sign,
            lambda: self.lambda,
            bracket: self.bracket,
            iterations: self.iterations,
            residual: self.residual,
            hopf_lower: self.hopf.0,
            hopf_upper: self.hopf.1,
        }
    }
}

/// Eigen-iteration settings.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenConfig {
    pub tol: f64,
    pub cap: usize,
    /// Nodes with `|v_j| ≤ ratio_floor·‖v‖∞` are left out of the brackets.
    pub ratio_floor: f64,
    pub solver: SolverConfig,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            tol: 1e-9,
            cap: 5000,
            ratio_floor: 1e-8,
            solver: SolverConfig {
                tol: 1e-11,
                ..SolverConfig::default()
            },
        }
    }
}

fn brackets(f: &[f64], v: &[f64], floor: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (fv, vv) in f.iter().zip(v) {
        if vv.abs() > floor {
            let r = -fv / vv;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

/// Principal half-eigenvalue of sign `sign` of a homogeneous discrete operator.
pub fn principal_half_eigen(d: &DiscreteHJB, sign: Sign, cfg: &EigenConfig) -> Result<EigenPair> {
    let dist = distance_field(d.grid());
    principal_half_eigen_from(d, sign, &dist.scale(sign.factor()), cfg)
}

/// [`principal_half_eigen`] from a given start vector of the right sign.
pub fn principal_half_eigen_from(
    d: &DiscreteHJB,
    sign: Sign,
    start: &Field,
    cfg: &EigenConfig,
) -> Result<EigenPair> {
    if !d.is_homogeneous() {
        return Err(HjbError::Precondition(
            "half-eigenvalues need a homogeneous operator".into(),
        ));
    }
    if !(cfg.tol > 0.0) {
        return Err(HjbError::Precondition("tol must be positive".into()));
    }
    let s = sign.factor();
    if start.values.iter().any(|v| s * v <= 0.0) {
        return Err(HjbError::Precondition("start vector must be one-signed".into()));
    }
    let mut sigma = -d.delta() - 1.0;
    'restart: for _ in 0..8 {
        let mut v = start.scale(1.0 / start.sup_norm());
        for it in 1..=cfg.cap {
            let rhs = v.scale(-1.0);
            let next = solve_proper(d, &rhs, -sigma, &cfg.solver)?.into_solution()?;
            let norm = next.sup_norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(HjbError::Eigen(format!("iterate {it} degenerated")));
            }
            let next = next.scale(1.0 / norm);
            let floor = cfg.ratio_floor;
            if next.values.iter().any(|x| s * x < -floor) {
                sigma -= 1.0;
                continue 'restart;
            }
            v = next;
            let f = d.apply_raw(&v.values);
            let (lo, hi) = brackets(&f, &v.values, floor);
            if hi - lo <= cfg.tol {
                let lambda = 0.5 * (lo + hi);
                let residual = f
                    .iter()
                    .zip(&v.values)
                    .fold(0.0f64, |m, (fv, vv)| m.max((fv + lambda * vv).abs()));
                let dist = distance_field(d.grid());
                let hopf = hopf_ratio(&v, &dist)?;
                return Ok(EigenPair {
                    lambda,
                    phi: v,
                    sign,
                    bracket: (lo, hi),
                    iterations: it,
                    residual,
                    hopf,
                });
            }
        }
        return Err(HjbError::Eigen(format!(
            "bracket did not shrink below {} within {} iterations",
            cfg.tol, cfg.cap
        )));
    }
    Err(HjbError::Eigen("iterates kept changing sign".into()))
}

/// Both principal half-eigenvalues with the ordering and window checks.
pub fn principal_pair(d: &DiscreteHJB, cfg: &EigenConfig) -> Result<(EigenPair, EigenPair)> {
    let plus = principal_half_eigen(d, Sign::Plus, cfg)?;
    let minus = principal_half_eigen(d, Sign::Minus, cfg)?;
    let slack = 2.0 * cfg.tol;
    if plus.lambda > minus.lambda + slack {
        return Err(HjbError::assertion(
            "half-eigenvalue ordering",
            format!("plus {} exceeds minus {}", plus.lambda, minus.lambda),
        ));
    }
    if plus.lambda < -d.delta() - slack {
        return Err(HjbError::assertion(
            "half-eigenvalue lower window",
            format!("plus {} below -delta = {}", plus.lambda, -d.delta()),
        ));
    }
    let r = distance_field(d.grid()).max();
    let k = d.constants;
    let cap = 100.0 * k.cap_lambda * d.grid().dim() as f64 / (r * r);
    if minus.lambda > cap {
        return Err(HjbError::assertion(
            "half-eigenvalue upper window",
            format!("minus {} above {cap}", minus.lambda),
        ));
    }
    Ok((plus, minus))
}

/// `(inf, sup)` over the grid of `|φ|/d`.
pub fn hopf_ratio(phi: &Field, d: &Field) -> Result<(f64, f64)> {
    phi.check_same_grid(d)?;
    let pos = phi.values.iter().all(|&v| v > 0.0);
    let neg = phi.values.iter().all(|&v| v < 0.0);
    if !(pos || neg) {
        return Err(HjbError::Precondition("field is not one-signed".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (p, dv) in phi.values.iter().zip(&d.values) {
        let r = p.abs() / dv;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// A lower bound for the plus half-eigenvalue and the data it was built from.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub bound: f64,
    /// `sup ψ/w̃`.
    pub c1: f64,
    /// `‖ε̃‖ₚ` after normalization and shifting.
    pub eps_norm: f64,
    pub m0: f64,
}

/// Lower bound `λ₁⁺ ≥ −C₁δ‖ε̃‖ₚ` from a function `w` with `F_h[w] ≤ eps`.
///
/// `w` is scaled by `m₀ = ‖w‖∞` and shifted by `‖ε/m₀‖ₚ` into a positive
/// function; `ψ` solves `L⁺₀ψ = −ε̃/‖ε̃‖ₚ`, and the nodewise chain
/// `F_h[z] ≤ C₁δ‖ε̃‖ z` for `z = w̃ + ‖ε̃‖ψ` is verified before returning.
pub fn eigen_lower_bound_certificate(
    d: &DiscreteHJB,
    w: &Field,
    eps: &Field,
    p: f64,
    cfg: &SolverConfig,
) -> Result<Certificate> {
    if !d.is_homogeneous() {
        return Err(HjbError::Precondition("certificate needs a homogeneous operator".into()));
    }
    w.check_same_grid(eps)?;
    if !crate::grid::same_grid(d.grid(), w.grid()) {
        return Err(HjbError::GridMismatch);
    }
    if eps.min() < 0.0 {
        return Err(HjbError::Precondition("eps must be nonnegative".into()));
    }
    let fw = d.apply_raw(&w.values);
    let m0 = w.sup_norm();
    if !(m0 > 0.0) {
        return Err(HjbError::Precondition("w must not vanish".into()));
    }
    let slack = cfg.tol * (1.0 + m0);
    if let Some(k) = (0..w.len()).find(|&k| fw[k] > eps.values[k] + slack) {
        return Err(HjbError::Precondition(format!(
            "F_h[w] exceeds eps at node {k} by {:e}",
            fw[k] - eps.values[k]
        )));
    }
    let eps_p = eps.lp_norm(p);
    if w.negative_part().sup_norm() > eps_p {
        return Err(HjbError::Precondition("negative part of w exceeds ‖eps‖_p".into()));
    }
    let delta = d.delta();
    let w1 = w.scale(1.0 / m0);
    let e1 = eps.scale(1.0 / m0);
    let shift = e1.lp_norm(p);
    let wt = w1.map(|v| v + shift);
    let et = e1.map(|v| v + delta * shift);
    let et_norm = et.lp_norm(p);
    if et_norm == 0.0 {
        if wt.min() <= 0.0 {
            return Err(HjbError::Precondition("w must be positive when eps = 0".into()));
        }
        return Ok(Certificate {
            bound: 0.0,
            c1: 0.0,
            eps_norm: 0.0,
            m0,
        });
    }
    let l0 = pucci_gradient_operator(d.grid(), &d.constants)?;
    let psi = solve_proper(&l0, &et.scale(-1.0 / et_norm), 0.0, cfg)?.into_solution()?;
    let mut c1 = 0.0f64;
    for (ps, wv) in psi.values.iter().zip(&wt.values) {
        if *wv <= 0.0 {
            if *ps > 0.0 {
                return Err(HjbError::Precondition("shifted w vanishes where ψ > 0".into()));
            }
            continue;
        }
        c1 = c1.max(ps / wv);
    }
    let bound = -c1 * delta * et_norm;
    let z = wt.axpy(et_norm, &psi)?;
    let fz = d.apply_raw(&z.values);
    let chain_tol = 1e-9 * (1.0 + z.sup_norm());
    for k in 0..z.len() {
        let violation = fz[k] + bound * z.values[k];
        if violation > chain_tol {
            return Err(HjbError::Certificate { node: k, violation });
        }
    }
    Ok(Certificate {
        bound: if bound == 0.0 { 0.0 } else { bound },
        c1,
        eps_norm: et_norm,
        m0,
    })
}

/// `(λ₁⁺ on Ω, λ₁⁺ on Ω∖Γ)` for a homogeneous operator.
pub fn domain_monotonicity_gap(
    op: &ControlledOperator,
    grid: &Arc<Grid>,
    gamma: Option<&Subdomain>,
    cfg: &EigenConfig,
) -> Result<(f64, f64)> {
    let op = asymptotic_operator(op);
    let full = discretize(&op, grid)?;
    let l_full = principal_half_eigen(&full, Sign::Plus, cfg)?.lambda;
    let Some(gamma) = gamma else {
        return Ok((l_full, l_full));
    };
    let cut = Arc::new(restrict_domain(grid, gamma)?);
    if cut.len() == grid.len() {
        return Ok((l_full, l_full));
    }
    let part = discretize(&op, &cut)?;
    let l_cut = principal_half_eigen(&part, Sign::Plus, cfg)?.lambda;
    Ok((l_full, l_cut))
}
