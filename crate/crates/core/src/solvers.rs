//! Solvers for the discrete Dirichlet problems `F_h[u] = g`.
//!
//! * [`solve_proper`]: Howard policy iteration for `F_h[u] − σu = g`, `σ > δ`.
//! * [`perron_iterate`]: the monotone hierarchy `F_h[u_{m+1}] − σu_{m+1} = g − σu_m`.
//! * [`semismooth_newton`]: damped Newton steps on the non-proper system.
//! * [`build_supersolution`] / [`build_subsolution`]: explicit barriers.

use serde::{Deserialize, Serialize};

use crate::discretize::{pucci_gradient_operator, DiscreteHJB};
use crate::error::{HjbError, Result};
use crate::grid::{distance_field, Field};
use crate::linalg::{BandLu, BandMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Diverged,
    IterationCap,
    PolicyCycle,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Option<Field>,
    pub iterations: usize,
    /// Sup-norm of `F_h[u] − g` (for proper solves, of `F_h[u] − σu − g`).
    pub final_residual: f64,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// The solution of a converged run, or a solver error describing the failure.
    pub fn into_solution(self) -> Result<Field> {
        match (self.status, self.solution) {
            (SolveStatus::Converged, Some(u)) => Ok(u),
            (status, _) => Err(HjbError::Solver(format!(
                "{status:?} after {} iterations (residual {:e})",
                self.iterations, self.final_residual
            ))),
        }
    }
}

/// Solver tolerances and caps; the `[solver]` config section.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Residual tolerance, scaled by `1 + ‖g‖∞` of the right-hand side.
    pub tol: f64,
    pub perron_cap: usize,
    pub newton_cap: usize,
    pub howard_cap: usize,
    pub damping: f64,
    pub damping_floor: f64,
    /// Properness shift; `None` means `δ + 1`.
    pub shift: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            perron_cap: 10_000,
            newton_cap: 200,
            howard_cap: 200,
            damping: 1.0,
            damping_floor: 1.0 / 64.0,
            shift: None,
        }
    }
}

impl SolverConfig {
    pub fn shift_for(&self, d: &DiscreteHJB) -> f64 {
        self.shift.unwrap_or(d.delta() + 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.damping > 0.0
            && self.damping <= 1.0
            && self.damping_floor > 0.0
            && self.damping_floor <= self.damping
            && self.perron_cap > 0
            && self.newton_cap > 0
            && self.howard_cap > 0;
        if ok {
            Ok(())
        } else {
            Err(HjbError::Config(format!("solver settings out of range: {self:?}")))
        }
    }
}

/// A pair of fields with `lower ≤ upper` nodewise.
#[derive(Clone, Debug)]
pub struct OrderedPair {
    pub lower: Field,
    pub upper: Field,
}

impl OrderedPair {
    pub fn new(lower: Field, upper: Field, tol: f64) -> Result<Self> {
        lower.check_same_grid(&upper)?;
        if let Some(k) = (0..lower.len()).find(|&k| lower.values[k] > upper.values[k] + tol) {
            return Err(HjbError::assertion(
                "ordered pair",
                format!("lower exceeds upper at node {k}"),
            ));
        }
        Ok(OrderedPair { lower, upper })
    }
}

/// Sup-norm of `F_h[u] − g`.
pub fn residual_norm(d: &DiscreteHJB, u: &Field, g: &Field) -> Result<f64> {
    u.check_same_grid(g)?;
    if !crate::grid::same_grid(d.grid(), u.grid()) {
        return Err(HjbError::GridMismatch);
    }
    Ok(sup_diff(&d.apply_raw(&u.values), &g.values))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn shifted_residual(d: &DiscreteHJB, u: &[f64], g: &[f64], shift: f64) -> (f64, Vec<usize>) {
    let (f, pol) = d.apply_with_policy(u);
    let r = f
        .iter()
        .zip(u)
        .zip(g)
        .fold(0.0f64, |m, ((fv, uv), gv)| m.max((fv - shift * uv - gv).abs()));
    (r, pol)
}

fn check_inputs(d: &DiscreteHJB, g: &Field) -> Result<()> {
    if !crate::grid::same_grid(d.grid(), g.grid()) {
        return Err(HjbError::GridMismatch);
    }
    if g.values.iter().any(|v| !v.is_finite()) {
        return Err(HjbError::Precondition("right-hand side must be finite".into()));
    }
    Ok(())
}

/// Howard policy iteration for `F_h[u] − shift·u = g`; requires `shift > δ`
/// (or `shift ≥ 0` when `δ = 0`). Converged means residual ≤ `tol·(1 + ‖g‖∞)`.
pub fn solve_proper(d: &DiscreteHJB, g: &Field, shift: f64, cfg: &SolverConfig) -> Result<SolveReport> {
    let (_, policy) = d.apply_with_policy(&vec![0.0; g.len()]);
    solve_proper_from(d, g, shift, cfg, policy)
}

/// [`solve_proper`] starting from a given control choice per node.
pub fn solve_proper_from(
    d: &DiscreteHJB,
    g: &Field,
    shift: f64,
    cfg: &SolverConfig,
    initial_policy: Vec<usize>,
) -> Result<SolveReport> {
    solve_proper_cached(d, g, shift, cfg, initial_policy, &mut None)
}

/// Factorization of the frozen system for one policy, reused while the
/// policy stays the same.
pub(crate) struct FrozenCache {
    policy: Vec<usize>,
    shift: f64,
    matrix: BandMatrix,
    lu: BandLu,
}

fn solve_proper_cached(
    d: &DiscreteHJB,
    g: &Field,
    shift: f64,
    cfg: &SolverConfig,
    initial_policy: Vec<usize>,
    cache: &mut Option<FrozenCache>,
) -> Result<SolveReport> {
    check_inputs(d, g)?;
    let delta = d.delta();
    if !(shift > delta || (delta == 0.0 && shift >= 0.0)) {
        return Err(HjbError::Precondition(format!(
            "shift {shift} must exceed delta {delta}"
        )));
    }
    if initial_policy.len() != g.len() || initial_policy.iter().any(|&c| c >= d.n_controls()) {
        return Err(HjbError::Precondition("initial policy is malformed".into()));
    }
    let scale = 1.0 + g.sup_norm();
    let mut policy = initial_policy;
    let mut seen: Vec<Vec<usize>> = Vec::new();
    let mut u = vec![0.0; g.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=cfg.howard_cap {
        let hit = matches!(cache, Some(c) if c.policy == policy && c.shift == shift);
        if !hit {
            let matrix = d.frozen_matrix(&policy, shift);
            let lu = matrix.clone().factor()?;
            *cache = Some(FrozenCache {
                policy: policy.clone(),
                shift,
                matrix,
                lu,
            });
        }
        let frozen = cache.as_ref().expect("cache filled");
        let src = d.frozen_source(&policy);
        let rhs: Vec<f64> = g.values.iter().zip(&src).map(|(a, s)| a - s).collect();
        u = frozen.lu.solve(&rhs)?;
        // iterative refinement against the frozen linear system
        for _ in 0..2 {
            let au = frozen.matrix.mul_vec(&u);
            let r: Vec<f64> = rhs.iter().zip(&au).map(|(a, b)| a - b).collect();
            if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= 1e-15 * scale {
                break;
            }
            let du = frozen.lu.solve(&r)?;
            u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        }
        let (res, next) = shifted_residual(d, &u, &g.values, shift);
        residual = res;
        let done = residual <= cfg.tol * scale;
        if done || next == policy {
            let status = if done {
                SolveStatus::Converged
            } else {
                SolveStatus::IterationCap
            };
            return Ok(SolveReport {
                solution: Some(Field::new(d.grid(), u)?),
                iterations: it,
                final_residual: residual,
                status,
            });
        }
        if seen.contains(&next) {
            return Ok(SolveReport {
                solution: Some(Field::new(d.grid(), u)?),
                iterations: it,
                final_residual: residual,
                status: SolveStatus::PolicyCycle,
            });
        }
        seen.push(std::mem::replace(&mut policy, next));
    }
    Ok(SolveReport {
        solution: Some(Field::new(d.grid(), u)?),
        iterations: cfg.howard_cap,
        final_residual: residual,
        status: SolveStatus::IterationCap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Up,
    Down,
}

fn monotone_iterate(
    d: &DiscreteHJB,
    g: &Field,
    u0: &Field,
    shift: f64,
    cap: usize,
    blowup: f64,
    cfg: &SolverConfig,
    dir: Direction,
) -> Result<SolveReport> {
    check_inputs(d, g)?;
    u0.check_same_grid(g)?;
    let f0 = d.apply_raw(&u0.values);
    let slack = cfg.tol.max(1e-12 * (1.0 + g.sup_norm()));
    let bad = (0..g.len()).find(|&k| match dir {
        Direction::Up => f0[k] < g.values[k] - slack,
        Direction::Down => f0[k] > g.values[k] + slack,
    });
    if let Some(k) = bad {
        let what = if dir == Direction::Up { "sub" } else { "super" };
        return Err(HjbError::Precondition(format!(
            "start is not a {what}solution at node {k} (F_h = {}, g = {})",
            f0[k], g.values[k]
        )));
    }
    let mut u = u0.clone();
    let mut residual = sup_diff(&f0, &g.values);
    let mut cache = None;
    for it in 1..=cap {
        let rhs = g.axpy(-shift, &u)?;
        let (_, policy) = d.apply_with_policy(&u.values);
        let next = solve_proper_cached(d, &rhs, shift, cfg, policy, &mut cache)?.into_solution()?;
        let tol_mono = 1e-12 * (1.0 + next.sup_norm());
        for k in 0..next.len() {
            let step = next.values[k] - u.values[k];
            let wrong = match dir {
                Direction::Up => step < -tol_mono,
                Direction::Down => step > tol_mono,
            };
            if wrong {
                return Err(HjbError::assertion(
                    "monotone iterates",
                    format!("iterate {it} moved the wrong way at node {k} by {step:e}"),
                ));
            }
        }
        u = next;
        residual = residual_norm(d, &u, g)?;
        if residual <= cfg.tol * (1.0 + g.sup_norm()) {
            return Ok(SolveReport {
                solution: Some(u),
                iterations: it,
                final_residual: residual,
                status: SolveStatus::Converged,
            });
        }
        if u.sup_norm() > blowup {
            return Ok(SolveReport {
                solution: Some(u),
                iterations: it,
                final_residual: residual,
                status: SolveStatus::Diverged,
            });
        }
    }
    Ok(SolveReport {
        solution: Some(u),
        iterations: cap,
        final_residual: residual,
        status: SolveStatus::IterationCap,
    })
}

/// Perron hierarchy from a subsolution `u0`; iterates are nondecreasing and
/// the run is `Diverged` once their sup-norm passes `blowup`.
pub fn perron_iterate(
    d: &DiscreteHJB,
    g: &Field,
    u0: &Field,
    shift: f64,
    cap: usize,
    blowup: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    monotone_iterate(d, g, u0, shift, cap, blowup, cfg, Direction::Up)
}

/// The same hierarchy from a supersolution; iterates are nonincreasing.
pub fn monotone_from_above(
    d: &DiscreteHJB,
    g: &Field,
    u0: &Field,
    shift: f64,
    cap: usize,
    blowup: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    monotone_iterate(d, g, u0, shift, cap, blowup, cfg, Direction::Down)
}

/// Damped semismooth Newton for `F_h[u] = g` from `u0`.
pub fn semismooth_newton(
    d: &DiscreteHJB,
    g: &Field,
    u0: &Field,
    blowup: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    check_inputs(d, g)?;
    u0.check_same_grid(g)?;
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(HjbError::Precondition("damping must lie in (0, 1]".into()));
    }
    let res_of = |u: &[f64]| {
        let (f, pol) = d.apply_with_policy(u);
        let r: Vec<f64> = f.iter().zip(&g.values).map(|(a, b)| a - b).collect();
        let n = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (r, pol, n)
    };
    let mut u = u0.values.clone();
    let (mut r, mut pol, mut rn) = res_of(&u);
    let tol = cfg.tol * (1.0 + g.sup_norm());
    for it in 0..=cfg.newton_cap {
        if rn <= tol {
            return Ok(SolveReport {
                solution: Some(Field::new(d.grid(), u)?),
                iterations: it,
                final_residual: rn,
                status: SolveStatus::Converged,
            });
        }
        if it == cfg.newton_cap {
            break;
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = d.frozen_matrix(&pol, 0.0).solve(&neg)?;
        let mut theta = cfg.damping;
        loop {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + theta * b).collect();
            let (tr, tp, tn) = res_of(&trial);
            if tn <= rn || theta <= cfg.damping_floor {
                u = trial;
                r = tr;
                pol = tp;
                rn = tn;
                break;
            }
            theta = (theta / 2.0).max(cfg.damping_floor);
        }
        let size = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !size.is_finite() || size > blowup {
            return Ok(SolveReport {
                solution: None,
                iterations: it + 1,
                final_residual: rn,
                status: SolveStatus::Diverged,
            });
        }
    }
    Ok(SolveReport {
        solution: Some(Field::new(d.grid(), u)?),
        iterations: cfg.newton_cap,
        final_residual: rn,
        status: SolveStatus::IterationCap,
    })
}

/// Supersolution barrier and the constants measured while building it.
#[derive(Clone, Debug)]
pub struct Supersolution {
    pub field: Field,
    /// `sup v̄/d`.
    pub c1: f64,
    /// `inf φ/d`.
    pub c0: f64,
    /// `δ·C₁/c₀`, the admissible threshold from the construction.
    pub t0: f64,
    /// Smallest `t` for which `F_h[v̄] ≤ h + tφ` holds nodewise.
    pub t_min: f64,
}

/// Solves the extremal problem `L⁺₀[v̄] = −h⁻` and checks `F_h[v̄] ≤ h + tφ`.
pub fn build_supersolution(
    d: &DiscreteHJB,
    h: &Field,
    phi: &Field,
    t: f64,
    cfg: &SolverConfig,
) -> Result<Supersolution> {
    check_inputs(d, h)?;
    h.check_same_grid(phi)?;
    let hneg = h.negative_part();
    let field = if hneg.sup_norm() == 0.0 {
        Field::zeros(d.grid())
    } else {
        let l0 = pucci_gradient_operator(d.grid(), &d.constants)?;
        solve_proper(&l0, &hneg.scale(-1.0), 0.0, cfg)?.into_solution()?
    };
    let dist = distance_field(d.grid());
    let c1 = ratio_extreme(&field, &dist, f64::max);
    let c0 = ratio_extreme(phi, &dist, f64::min);
    let f = d.apply_raw(&field.values);
    let mut t_min = f64::NEG_INFINITY;
    for k in 0..f.len() {
        t_min = t_min.max((f[k] - h.values[k]) / phi.values[k]);
    }
    let t0 = if c1 == 0.0 { 0.0 } else { d.delta() * c1 / c0 };
    let slack = cfg.tol / phi.min().max(f64::MIN_POSITIVE);
    if t < t_min - slack {
        return Err(HjbError::SupersolutionCheck { t_min });
    }
    Ok(Supersolution {
        field,
        c1,
        c0,
        t0,
        t_min,
    })
}

fn ratio_extreme(a: &Field, b: &Field, pick: fn(f64, f64) -> f64) -> f64 {
    let init = if pick(0.0, 1.0) == 1.0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    a.values
        .iter()
        .zip(&b.values)
        .fold(init, |m, (x, y)| pick(m, x / y))
}

/// Nonpositive solution of `F∞_h[w] = rhs` for `rhs ≥ 0`, by the decreasing
/// monotone iteration from zero.
pub fn negative_cone_solve(d: &DiscreteHJB, rhs: &Field, cfg: &SolverConfig) -> Result<Field> {
    let inf = d.asymptotic();
    if rhs.min() < 0.0 {
        return Err(HjbError::Precondition("right-hand side must be nonnegative".into()));
    }
    let shift = cfg.shift_for(d);
    let rep = monotone_from_above(
        &inf,
        rhs,
        &Field::zeros(d.grid()),
        shift,
        cfg.perron_cap,
        f64::INFINITY,
        cfg,
    )?;
    rep.into_solution()
}

/// Subsolution barrier valid for every `t` in `[t_lo, t_hi]`.
#[derive(Clone, Debug)]
pub struct Subsolution {
    pub field: Field,
    /// The constant `M` of the construction.
    pub level: f64,
    /// Smallest nodewise slack of `F_h[v] − (h + tφ)` over the interval ends.
    pub slack: f64,
}

/// Solves `F∞_h[v] = M + h⁺` with
/// `M = A₀ + max_t ‖tφ‖∞ + δ·bound + margin`; `bound` is an a-priori bound on
/// the sup-norm of solutions for `t` in the interval.
pub fn build_subsolution(
    d: &DiscreteHJB,
    h: &Field,
    phi: &Field,
    t_interval: (f64, f64),
    bound: f64,
    margin: f64,
    cfg: &SolverConfig,
) -> Result<Subsolution> {
    check_inputs(d, h)?;
    h.check_same_grid(phi)?;
    let (t_lo, t_hi) = t_interval;
    if !(margin > 0.0) || !(t_lo <= t_hi) || !(bound >= 0.0) {
        return Err(HjbError::Precondition(
            "need margin > 0, t_lo <= t_hi and bound >= 0".into(),
        ));
    }
    let tphi = t_lo.abs().max(t_hi.abs()) * phi.sup_norm();
    let level = d.a0 + tphi + d.delta() * bound + margin;
    let rhs = h.positive_part().map(|v| v + level);
    let field = negative_cone_solve(d, &rhs, cfg)?;
    let f = d.apply_raw(&field.values);
    let mut slack = f64::INFINITY;
    for t in [t_lo, t_hi] {
        for k in 0..f.len() {
            slack = slack.min(f[k] - h.values[k] - t * phi.values[k]);
        }
    }
    if slack < margin - cfg.tol * (1.0 + rhs.sup_norm()) {
        return Err(HjbError::assertion(
            "subsolution",
            format!("slack {slack:e} below margin {margin:e}"),
        ));
    }
    if field.max() >= 0.0 {
        return Err(HjbError::assertion("subsolution", "barrier is not negative"));
    }
    Ok(Subsolution {
        field,
        level,
        slack,
    })
}
