use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{asymptotic_operator, eval_f, pucci_extremal, ControlledOperator, PointState};
use crate::error::{HjbError, Result};
use crate::Sign;

/// Maximum sampled violation of each structural hypothesis (0 means none seen).
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StructureReport {
    pub samples: usize,
    /// `L⁻(Δ) ≤ F(s₁) − F(s₂) ≤ L⁺(Δ)` with the declared constants.
    pub ellipticity: f64,
    /// Convexity of `F` in `(M, p, u)`.
    pub convexity: f64,
    /// Positive 1-homogeneity of `F∞`.
    pub homogeneity: f64,
    /// `F(s₁ + s₂) − F(s₁) ≤ F∞(s₂)`.
    pub asymptotic_domination: f64,
    /// `F∞ − A₀ ≤ F ≤ F∞`.
    pub uniform_approximation: f64,
    /// `t ↦ F(t·s)/t` nondecreasing.
    pub quotient_monotonicity: f64,
    /// Largest sampled `|F∞(M,0,0,x) − F∞(M,0,0,x')| / |x − x'|`; informational only.
    pub spatial_modulus: f64,
}

impl StructureReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.ellipticity,
            self.convexity,
            self.homogeneity,
            self.asymptotic_domination,
            self.uniform_approximation,
            self.quotient_monotonicity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize, x: &[f64]) -> PointState {
    let scale = 10f64.powf(rng.random_range(-1.0..1.5));
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = scale * rng.random_range(-1.0..1.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let p = (0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    let u = scale * rng.random_range(-1.0..1.0);
    PointState::new(m, p, u, x.to_vec())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn ellipticity_bounds(op: &ControlledOperator, d: &PointState) -> Result<(f64, f64)> {
    let grad = op.gamma * norm(&d.p);
    let zero = op.delta * d.u.abs();
    let lo = pucci_extremal(op.lambda, op.cap_lambda, Sign::Minus, &d.m)? - grad - zero;
    let hi = pucci_extremal(op.lambda, op.cap_lambda, Sign::Plus, &d.m)? + grad + zero;
    Ok((lo, hi))
}

/// Samples random jet pairs inside `region` and measures how far the
/// structural hypotheses are from holding.
pub fn check_structure(
    op: &ControlledOperator,
    samples: usize,
    region: &[(f64, f64)],
    seed: u64,
) -> Result<StructureReport> {
    if samples == 0 {
        return Err(HjbError::Precondition("samples must be >= 1".into()));
    }
    let dim = op.dim();
    if region.len() != dim {
        return Err(HjbError::DimensionMismatch {
            expected: dim,
            got: region.len(),
        });
    }
    let inf = asymptotic_operator(op);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = StructureReport {
        samples,
        ..Default::default()
    };
    let bump = |v: &mut f64, x: f64| *v = v.max(x);

    for _ in 0..samples {
        let x: Vec<f64> = region
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        let s1 = random_state(&mut rng, dim, &x);
        let s2 = random_state(&mut rng, dim, &x);
        let f1 = eval_f(op, &s1)?;
        let f2 = eval_f(op, &s2)?;

        let (lo, hi) = ellipticity_bounds(op, &s1.sub(&s2))?;
        let diff = f1 - f2;
        bump(&mut rep.ellipticity, (lo - diff).max(diff - hi));

        for alpha in [0.25, 0.5, 0.75] {
            let mix = eval_f(op, &s1.combine(&s2, alpha))?;
            bump(&mut rep.convexity, mix - (alpha * f1 + (1.0 - alpha) * f2));
        }

        let g1 = eval_f(&inf, &s1)?;
        for t in [0.5, 2.0, 10.0] {
            bump(&mut rep.homogeneity, (eval_f(&inf, &s1.scaled(t))? - t * g1).abs());
        }

        let g2 = eval_f(&inf, &s2)?;
        let sum = eval_f(op, &s1.add(&s2))?;
        bump(&mut rep.asymptotic_domination, sum - f1 - g2);

        bump(&mut rep.uniform_approximation, f1 - g1);
        bump(&mut rep.uniform_approximation, g1 - op.a0 - f1);

        let mut prev = f64::NEG_INFINITY;
        for k in -3..=6 {
            let t = 2f64.powi(k);
            let q = eval_f(op, &s1.scaled(t))? / t;
            bump(&mut rep.quotient_monotonicity, prev - q);
            prev = q;
        }

        // spatial continuity of F∞(M, 0, 0, ·), measured on a short step
        let step = 1e-6;
        let mut y = x.clone();
        let (lo0, hi0) = region[0];
        y[0] = if x[0] + step <= hi0 { x[0] + step } else { (x[0] - step).max(lo0) };
        let dist = (y[0] - x[0]).abs();
        if dist > 0.0 {
            let mut lead = s1.clone();
            lead.p.iter_mut().for_each(|v| *v = 0.0);
            lead.u = 0.0;
            let mut moved = lead.clone();
            moved.x = y;
            let ratio = (eval_f(&inf, &lead)? - eval_f(&inf, &moved)?).abs() / dist;
            bump(&mut rep.spatial_modulus, ratio);
        }
    }
    Ok(rep)
}
