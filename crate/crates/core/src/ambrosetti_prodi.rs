//! Threshold, branches and solution counts of `F_h[u] = h + tφ`.
//!
//! Below the threshold `t*(h)` there is no solution, above it a minimal
//! (lower) and a second (upper) solution. Non-existence is certified by the
//! monotone Perron sequence leaving a multiple of the a-priori bound.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::DiscreteHJB;
use crate::error::{HjbError, Result};
use crate::grid::Field;
use crate::solvers::{
    build_subsolution, build_supersolution, negative_cone_solve, perron_iterate, residual_norm,
    semismooth_newton, SolveStatus, SolverConfig,
};
use crate::spectral::{principal_pair, EigenConfig};

/// Settings of the threshold, branch and census experiments.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ApConfig {
    /// Calibrated constant of the a-priori bound and the threshold bracket.
    pub c0: f64,
    /// Lebesgue exponent; `None` means `dim + 1`.
    pub p: Option<f64>,
    pub tstar_tol: f64,
    pub bracket_pad: f64,
    pub blowup_factor: f64,
    pub margin: f64,
    pub cluster_radius: f64,
    pub polish_tol: f64,
    pub colinear_tol: f64,
    pub order_tol: f64,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            c0: 0.9972,
            p: None,
            tstar_tol: 1e-3,
            bracket_pad: 1.0,
            blowup_factor: 10.0,
            margin: 1.0,
            cluster_radius: 1e-4,
            polish_tol: 1e-10,
            colinear_tol: 1e-6,
            order_tol: 1e-9,
        }
    }
}

/// `C·(1 − 1/λ⁺)(1 + 1/λ⁻)(A₀ + ‖g‖ₚ)`.
pub fn apriori_bound(lambda_plus: f64, lambda_minus: f64, a0: f64, g_norm: f64, c: f64) -> Result<f64> {
    if !(lambda_plus < 0.0 && lambda_minus > 0.0) {
        return Err(HjbError::Precondition(format!(
            "need lambda_plus < 0 < lambda_minus, got ({lambda_plus}, {lambda_minus})"
        )));
    }
    if !(c > 0.0) || !(a0 >= 0.0) || !(g_norm >= 0.0) {
        return Err(HjbError::Precondition("constant must be positive, norms nonnegative".into()));
    }
    Ok(c * spectral_factor(lambda_plus, lambda_minus) * (a0 + g_norm))
}

/// `(1 − 1/λ⁺)(1 + 1/λ⁻)`.
pub fn spectral_factor(lambda_plus: f64, lambda_minus: f64) -> f64 {
    (1.0 - 1.0 / lambda_plus) * (1.0 + 1.0 / lambda_minus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    Solvable,
    NoSolution,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct SolvabilityVerdict {
    pub t: f64,
    pub status: VerdictStatus,
    pub witness: Option<Field>,
    pub iterations: usize,
    pub final_residual: f64,
    /// Largest sup-norm reached by the monotone iterates.
    pub max_norm: f64,
    pub blowup: f64,
    /// True when the verdict came from a Newton retry after the iteration cap.
    pub newton_retry: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TStarResult {
    pub t_star: f64,
    pub bracket_history: Vec<(f64, f64)>,
    /// Bracket actually searched (the paper bracket padded on both sides).
    pub initial_bracket: (f64, f64),
    /// `[−C₀(1 − 1/λ⁺)(1 + 1/λ⁻)(A₀ + ‖h‖ₚ), C₀‖h⁻‖ₚ]`.
    pub paper_bracket: (f64, f64),
    pub verdicts: Vec<(f64, VerdictStatus)>,
    pub inconclusive: usize,
}

impl TStarResult {
    pub fn inside_paper_bracket(&self) -> bool {
        self.t_star >= self.paper_bracket.0 && self.t_star <= self.paper_bracket.1
    }
}

#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub t: f64,
    pub u_low: Field,
    pub u_up: Field,
    pub residual_low: f64,
    pub residual_up: f64,
}

#[derive(Clone, Debug)]
pub struct Census {
    pub t: f64,
    /// Distinct solutions, sorted by mean value.
    pub solutions: Vec<Field>,
    pub residuals: Vec<f64>,
    pub ordered: bool,
    pub colinear_segment: bool,
    /// Largest colinearity deviation (zero with fewer than three solutions).
    pub colinear_deviation: f64,
    /// Smallest pairwise distance between listed solutions.
    pub merge_distance: f64,
    pub starts: usize,
    pub converged_starts: usize,
}

impl Census {
    pub fn count(&self) -> usize {
        self.solutions.len()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CensusSummary {
    pub t: f64,
    pub clusters: usize,
    pub ordered: bool,
    pub colinear_segment: bool,
    pub colinear_deviation: f64,
    pub merge_distance: f64,
    pub starts: usize,
    pub converged_starts: usize,
    pub residuals: Vec<f64>,
}

impl Census {
    pub fn summary(&self) -> CensusSummary {
        CensusSummary {
            t: self.t,
            clusters: self.count(),
            ordered: self.ordered,
            colinear_segment: self.colinear_segment,
            colinear_deviation: self.colinear_deviation,
            merge_distance: if self.merge_distance.is_finite() {
                self.merge_distance
            } else {
                -1.0
            },
            starts: self.starts,
            converged_starts: self.converged_starts,
            residuals: self.residuals.clone(),
        }
    }
}

/// A problem `F_h[u] = h + tφ` together with its spectral data.
#[derive(Clone, Debug)]
pub struct ApProblem {
    pub d: DiscreteHJB,
    pub h: Field,
    /// Positive principal eigenfunction of the asymptotic operator, `‖φ‖∞ = 1`.
    pub phi: Field,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// `−φ/λ⁺`: the limit of the upper branch divided by `t`.
    pub w_upper: Field,
    /// Nonpositive solution of `F∞[w] = φ`: the limit of the lower branch divided by `t`.
    pub w_lower: Field,
    pub solver: SolverConfig,
    pub cfg: ApConfig,
}

impl ApProblem {
    pub fn new(d: DiscreteHJB, h: Field, solver: SolverConfig, cfg: ApConfig) -> Result<Self> {
        let eig = EigenConfig::default();
        ApProblem::with_eigen_config(d, h, solver, cfg, &eig)
    }

    pub fn with_eigen_config(
        d: DiscreteHJB,
        h: Field,
        solver: SolverConfig,
        cfg: ApConfig,
        eig: &EigenConfig,
    ) -> Result<Self> {
        solver.validate()?;
        h.check_same_grid(&Field::zeros(d.grid()))?;
        let inf = d.asymptotic();
        let (plus, minus) = principal_pair(&inf, eig)?;
        if !(plus.lambda < 0.0 && minus.lambda > 0.0) {
            return Err(HjbError::Precondition(format!(
                "need lambda_plus < 0 < lambda_minus, got ({}, {})",
                plus.lambda, minus.lambda
            )));
        }
        let phi = plus.phi;
        let w_upper = phi.scale(-1.0 / plus.lambda);
        let w_lower = negative_cone_solve(&d, &phi, &solver)?;
        Ok(ApProblem {
            d,
            h,
            phi,
            lambda_plus: plus.lambda,
            lambda_minus: minus.lambda,
            w_upper,
            w_lower,
            solver,
            cfg,
        })
    }

    /// The same problem with a different `h`, reusing the spectral data.
    pub fn with_h(&self, h: Field) -> Result<Self> {
        h.check_same_grid(&self.h)?;
        Ok(ApProblem { h, ..self.clone() })
    }

    pub fn p(&self) -> f64 {
        self.cfg.p.unwrap_or(self.d.grid().dim() as f64 + 1.0)
    }

    /// Right-hand side `h + tφ`.
    pub fn rhs(&self, t: f64) -> Field {
        self.h.axpy(t, &self.phi).expect("h and phi share a grid")
    }

    /// A-priori bound for solutions at `t` with the calibrated constant.
    pub fn bound(&self, t: f64) -> Result<f64> {
        self.bound_with(t, self.cfg.c0)
    }

    pub fn bound_with(&self, t: f64, c: f64) -> Result<f64> {
        apriori_bound(
            self.lambda_plus,
            self.lambda_minus,
            self.d.a0,
            self.rhs(t).lp_norm(self.p()),
            c,
        )
    }

    /// Threshold bracket from the a-priori estimates.
    pub fn paper_bracket(&self) -> (f64, f64) {
        let p = self.p();
        let k = spectral_factor(self.lambda_plus, self.lambda_minus);
        let lo = -self.cfg.c0 * k * (self.d.a0 + self.h.lp_norm(p));
        let hi = self.cfg.c0 * self.h.negative_part().lp_norm(p);
        (lo, hi)
    }

    fn shift(&self) -> f64 {
        self.solver.shift_for(&self.d)
    }

    /// Perron verdict at `t` started from the explicit subsolution.
    pub fn solvable(&self, t: f64) -> Result<SolvabilityVerdict> {
        let g = self.rhs(t);
        let bound = self.bound(t)?;
        let sub = build_subsolution(
            &self.d,
            &self.h,
            &self.phi,
            (t, t),
            bound,
            self.cfg.margin,
            &self.solver,
        )?;
        let blowup = self.cfg.blowup_factor * bound + sub.field.sup_norm();
        let rep = perron_iterate(
            &self.d,
            &g,
            &sub.field,
            self.shift(),
            self.solver.perron_cap,
            blowup,
            &self.solver,
        )?;
        let max_norm = rep.solution.as_ref().map_or(0.0, |u| u.sup_norm());
        let mut verdict = SolvabilityVerdict {
            t,
            status: match rep.status {
                SolveStatus::Converged => VerdictStatus::Solvable,
                SolveStatus::Diverged => VerdictStatus::NoSolution,
                _ => VerdictStatus::Inconclusive,
            },
            witness: None,
            iterations: rep.iterations,
            final_residual: rep.final_residual,
            max_norm,
            blowup,
            newton_retry: false,
        };
        match verdict.status {
            VerdictStatus::Solvable => verdict.witness = rep.solution,
            VerdictStatus::Inconclusive => {
                if let Some(last) = rep.solution {
                    if let Ok(nr) = semismooth_newton(&self.d, &g, &last, 1e3 * blowup, &self.solver) {
                        if nr.converged() {
                            verdict.status = VerdictStatus::Solvable;
                            verdict.final_residual = nr.final_residual;
                            verdict.witness = nr.solution;
                            verdict.newton_retry = true;
                        }
                    }
                }
            }
            VerdictStatus::NoSolution => {}
        }
        Ok(verdict)
    }

    /// Bisection for `t*`; inconclusive verdicts are counted on the
    /// no-solution side, which can only move the estimate up.
    pub fn find_tstar(&self, tol: f64) -> Result<TStarResult> {
        if !(tol > 0.0) {
            return Err(HjbError::Precondition("tolerance must be positive".into()));
        }
        let paper = self.paper_bracket();
        let pad = self.cfg.bracket_pad;
        let (mut lo, mut hi) = (paper.0 - pad, paper.1 + pad);
        let mut verdicts = Vec::new();
        let mut inconclusive = 0;
        let v_lo = self.solvable(lo)?.status;
        let v_hi = self.solvable(hi)?.status;
        verdicts.push((lo, v_lo));
        verdicts.push((hi, v_hi));
        if v_lo == VerdictStatus::Solvable || v_hi != VerdictStatus::Solvable {
            return Err(HjbError::Bracket(format!(
                "endpoint verdicts {v_lo:?} at {lo} and {v_hi:?} at {hi}"
            )));
        }
        if v_lo == VerdictStatus::Inconclusive {
            inconclusive += 1;
        }
        let initial = (lo, hi);
        let mut history = vec![(lo, hi)];
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            let v = self.solvable(mid)?.status;
            verdicts.push((mid, v));
            match v {
                VerdictStatus::Solvable => hi = mid,
                VerdictStatus::NoSolution => lo = mid,
                VerdictStatus::Inconclusive => {
                    inconclusive += 1;
                    lo = mid;
                }
            }
            history.push((lo, hi));
        }
        check_single_switch(&verdicts)?;
        Ok(TStarResult {
            t_star: 0.5 * (lo + hi),
            bracket_history: history,
            initial_bracket: initial,
            paper_bracket: paper,
            verdicts,
            inconclusive,
        })
    }

    fn newton_blowup(&self, t: f64, start: &Field) -> f64 {
        let b = self.bound(t).unwrap_or(0.0);
        1e3 * (b + start.sup_norm() + 1.0)
    }

    fn newton(&self, g: &Field, t: f64, start: &Field) -> Option<Field> {
        let rep = semismooth_newton(&self.d, g, start, self.newton_blowup(t, start), &self.solver).ok()?;
        rep.into_solution().ok()
    }

    /// Lower and upper solutions at each sample.
    pub fn trace_branches(&self, t_samples: &[f64]) -> Result<Vec<BranchPoint>> {
        let mut out: Vec<BranchPoint> = Vec::with_capacity(t_samples.len());
        let mut prev_up: Option<Field> = None;
        for &t in t_samples {
            let g = self.rhs(t);
            let verdict = self.solvable(t)?;
            let u_low = verdict.witness.ok_or_else(|| {
                HjbError::Solver(format!("no lower solution at t = {t} ({:?})", verdict.status))
            })?;
            let mut starts = vec![self.w_upper.scale(t)];
            if let Some(p) = &prev_up {
                starts.push(p.clone());
            }
            for s in [1.5, 2.0, 3.0] {
                starts.push(self.w_upper.scale(s * t.abs().max(1.0)));
            }
            let mut u_up = None;
            for s in &starts {
                if let Some(u) = self.newton(&g, t, s) {
                    if u.distance(&u_low)? > self.cfg.cluster_radius {
                        u_up = Some(u);
                        break;
                    }
                }
            }
            let u_up = match u_up {
                Some(u) => u,
                None => {
                    let census = self.count_solutions(t, 16, 0)?;
                    census
                        .solutions
                        .into_iter()
                        .filter(|s| s.distance(&u_low).is_ok_and(|d| d > self.cfg.cluster_radius))
                        .next_back()
                        .ok_or_else(|| {
                            HjbError::Solver(format!("upper branch incomplete at t = {t}"))
                        })?
                }
            };
            let residual_low = residual_norm(&self.d, &u_low, &g)?;
            let residual_up = residual_norm(&self.d, &u_up, &g)?;
            let tol = self.cfg.order_tol * (1.0 + u_up.sup_norm());
            if let Some(k) = (0..u_low.len()).find(|&k| u_low.values[k] > u_up.values[k] + tol) {
                return Err(HjbError::assertion(
                    "ordered branches",
                    format!("lower above upper at node {k}, t = {t}"),
                ));
            }
            prev_up = Some(u_up.clone());
            out.push(BranchPoint {
                t,
                u_low,
                u_up,
                residual_low,
                residual_up,
            });
        }
        Ok(out)
    }

    /// Multi-start Newton census at `t`.
    pub fn count_solutions(&self, t: f64, n_starts: usize, seed: u64) -> Result<Census> {
        if n_starts < 8 {
            return Err(HjbError::Precondition("census needs at least 8 starts".into()));
        }
        let g = self.rhs(t);
        let grid = self.d.grid().clone();
        let mut starts: Vec<Field> = Vec::new();
        let bound = self.bound(t)?;
        if let Ok(sub) = build_subsolution(
            &self.d,
            &self.h,
            &self.phi,
            (t, t),
            bound,
            self.cfg.margin,
            &self.solver,
        ) {
            starts.push(sub.field);
        }
        if let Ok(sup) = build_supersolution(&self.d, &self.h, &self.phi, t, &self.solver) {
            starts.push(sup.field);
        }
        starts.push(self.w_upper.scale(t));
        starts.push(self.w_upper.scale(-t));
        starts.push(self.w_lower.scale(t));
        // ladder along the eigen-direction
        let amp = 2.0 * (t.abs() + self.h.sup_norm() + 1.0) * self.w_upper.sup_norm();
        for k in 1..=4 {
            let kappa = amp * k as f64 / 4.0;
            starts.push(self.phi.scale(kappa / 2.0));
            starts.push(self.phi.scale(-kappa / 2.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extents = grid.extents().to_vec();
        let randoms = n_starts.saturating_sub(starts.len()).max(2);
        for _ in 0..randoms {
            let coef: Vec<(usize, usize, f64)> = (0..6)
                .map(|_| {
                    (
                        rng.random_range(1..=4usize),
                        rng.random_range(1..=4usize),
                        rng.random_range(-1.0..1.0) * amp,
                    )
                })
                .collect();
            let ext = extents.clone();
            starts.push(Field::from_fn(&grid, move |x| {
                coef.iter()
                    .map(|&(m, n, a)| {
                        let sx = (m as f64 * std::f64::consts::PI * (x[0] - ext[0].0)
                            / (ext[0].1 - ext[0].0))
                            .sin();
                        let sy = if x.len() > 1 {
                            (n as f64 * std::f64::consts::PI * (x[1] - ext[1].0)
                                / (ext[1].1 - ext[1].0))
                                .sin()
                        } else {
                            1.0
                        };
                        a * sx * sy / 6.0
                    })
                    .sum()
            }));
        }
        let mut found: Vec<Field> = Vec::new();
        let mut converged = 0;
        let total_initial = starts.len();
        for s in &starts {
            if let Some(u) = self.newton(&g, t, s) {
                converged += 1;
                self.insert_cluster(&mut found, u, &g)?;
            }
        }
        // midpoints of found pairs
        let mut mid_starts = 0;
        let snapshot = found.clone();
        for i in 0..snapshot.len() {
            for j in i + 1..snapshot.len() {
                let mid = snapshot[i].axpy(1.0, &snapshot[j])?.scale(0.5);
                mid_starts += 1;
                if let Some(u) = self.newton(&g, t, &mid) {
                    converged += 1;
                    self.insert_cluster(&mut found, u, &g)?;
                }
            }
        }
        found.sort_by(|a, b| mean(a).total_cmp(&mean(b)));
        let residuals = found
            .iter()
            .map(|u| residual_norm(&self.d, u, &g))
            .collect::<Result<Vec<_>>>()?;
        let ordered = all_ordered(&found, self.cfg.order_tol);
        let (colinear_segment, colinear_deviation) = if found.len() >= 3 {
            let dev = colinear_deviation(&found)?;
            (dev <= self.cfg.colinear_tol, dev)
        } else {
            (false, 0.0)
        };
        let mut merge = f64::INFINITY;
        for i in 0..found.len() {
            for j in i + 1..found.len() {
                merge = merge.min(found[i].distance(&found[j])?);
            }
        }
        Ok(Census {
            t,
            solutions: found,
            residuals,
            ordered,
            colinear_segment,
            colinear_deviation,
            merge_distance: merge,
            starts: total_initial + mid_starts,
            converged_starts: converged,
        })
    }

    /// Polishes a converged candidate and adds it unless an existing cluster is within radius.
    fn insert_cluster(&self, found: &mut Vec<Field>, u: Field, g: &Field) -> Result<()> {
        let polish_cfg = SolverConfig {
            tol: self.cfg.polish_tol * (1.0 + g.sup_norm()),
            ..self.solver.clone()
        };
        let u = match semismooth_newton(&self.d, g, &u, self.newton_blowup(0.0, &u), &polish_cfg) {
            Ok(rep) if rep.converged() => rep.solution.unwrap_or(u),
            _ => u,
        };
        for f in found.iter() {
            if f.distance(&u)? <= self.cfg.cluster_radius {
                return Ok(());
            }
        }
        found.push(u);
        Ok(())
    }

    /// `(‖u_low/t − w_lower‖∞, ‖u_up/t − w_upper‖∞)` at a large `t`, with the
    /// sign checks `u_low < 0 < u_up`.
    pub fn asymptotic_slopes(&self, t_large: f64, t_star: Option<f64>) -> Result<(f64, f64)> {
        let floor = 10f64.max(100.0 * t_star.unwrap_or(0.0).abs());
        if !(t_large > floor) {
            return Err(HjbError::Precondition(format!("t_large must exceed {floor}")));
        }
        let bp = self.trace_branches(&[t_large])?.remove(0);
        if bp.u_low.max() >= 0.0 || bp.u_up.min() <= 0.0 {
            return Err(HjbError::assertion(
                "branch signs at large t",
                "lower branch must be negative and upper branch positive",
            ));
        }
        let low = bp.u_low.scale(1.0 / t_large).distance(&self.w_lower)?;
        let up = bp.u_up.scale(1.0 / t_large).distance(&self.w_upper)?;
        Ok((low, up))
    }

    /// `(‖h_k − h‖ₚ, |t*(h_k) − t*(h)|)` for each perturbation `h_k − h`.
    pub fn tstar_continuity_probe(&self, perturbations: &[Field], tol: f64) -> Result<Vec<(f64, f64)>> {
        let base = self.find_tstar(tol)?.t_star;
        let p = self.p();
        perturbations
            .iter()
            .map(|dh| {
                let moved = self.with_h(self.h.axpy(1.0, dh)?)?;
                let ts = moved.find_tstar(tol)?.t_star;
                Ok((dh.lp_norm(p), (ts - base).abs()))
            })
            .collect()
    }
}

fn check_single_switch(verdicts: &[(f64, VerdictStatus)]) -> Result<()> {
    let mut sorted = verdicts.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut seen_solvable = false;
    for (t, v) in sorted {
        match v {
            VerdictStatus::Solvable => seen_solvable = true,
            _ if seen_solvable => {
                return Err(HjbError::assertion(
                    "monotone solvability",
                    format!("{v:?} at t = {t} above a solvable sample"),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

fn mean(u: &Field) -> f64 {
    u.values.iter().sum::<f64>() / u.len() as f64
}

/// True when every pair of fields is nodewise comparable.
pub fn all_ordered(fields: &[Field], tol: f64) -> bool {
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            let (a, b) = (&fields[i], &fields[j]);
            let scale = tol * (1.0 + a.sup_norm().max(b.sup_norm()));
            let below = a.values.iter().zip(&b.values).all(|(x, y)| x <= &(y + scale));
            let above = a.values.iter().zip(&b.values).all(|(x, y)| x + scale >= *y);
            if !(below || above) {
                return false;
            }
        }
    }
    true
}

/// Largest sup-norm deviation of the middle fields from the line through the
/// lowest and highest one (fields sorted by mean).
pub fn colinear_deviation(fields: &[Field]) -> Result<f64> {
    let (first, last) = match (fields.first(), fields.last()) {
        (Some(a), Some(b)) if fields.len() >= 3 => (a, b),
        _ => return Ok(0.0),
    };
    let dir = last.axpy(-1.0, first)?;
    let nn: f64 = dir.values.iter().map(|v| v * v).sum();
    if nn == 0.0 {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for u in &fields[1..fields.len() - 1] {
        let rel = u.axpy(-1.0, first)?;
        let k = rel.values.iter().zip(&dir.values).map(|(a, b)| a * b).sum::<f64>() / nn;
        worst = worst.max(rel.axpy(-k, &dir)?.sup_norm());
    }
    Ok(worst)
}

/// Convexity defect along the line `w = u + α(v − u)`, relative to the size
/// of `F_h` on the three fields.
///
/// For `α ∈ [0, 1]` this is the largest `F_h[w] − (1−α)F_h[u] − αF_h[v]`,
/// outside it the largest `(1−α)F_h[u] + αF_h[v] − F_h[w]`. A convex operator
/// gives a nonpositive value, so between two solutions the line is made of
/// supersolutions and beyond them of subsolutions.
pub fn convex_combination_gap(d: &DiscreteHJB, u: &Field, v: &Field, alpha: f64) -> Result<f64> {
    u.check_same_grid(v)?;
    let w = u.axpy(alpha, &v.axpy(-1.0, u)?)?;
    let fw = d.apply_raw(&w.values);
    let fu = d.apply_raw(&u.values);
    let fv = d.apply_raw(&v.values);
    let inside = (0.0..=1.0).contains(&alpha);
    let sup = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = 1.0 + sup(&fu) + sup(&fv) + sup(&fw);
    Ok((0..u.len())
        .map(|k| {
            let gap = fw[k] - (1.0 - alpha) * fu[k] - alpha * fv[k];
            if inside {
                gap
            } else {
                -gap
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
        / scale)
}

/// True when `later < earlier` at every node.
pub fn strictly_below(later: &Field, earlier: &Field) -> Result<bool> {
    later.check_same_grid(earlier)?;
    Ok(later.values.iter().zip(&earlier.values).all(|(a, b)| a < b))
}

/// Fraction of nodes where `lower < upper`.
pub fn fraction_below(lower: &Field, upper: &Field) -> Result<f64> {
    lower.check_same_grid(upper)?;
    let n = lower.values.iter().zip(&upper.values).filter(|(a, b)| a < b).count();
    Ok(n as f64 / lower.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::discretize;
    use crate::grid::{build_grid, Grid};
    use crate::operator::fucik_operator;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn problem(n: usize) -> ApProblem {
        let g: Arc<Grid> = Arc::new(build_grid(&[(0.0, PI)], &[n], &[]).unwrap());
        let d = discretize(&fucik_operator(0.5, 1.5).unwrap(), &g).unwrap();
        ApProblem::new(d, Field::zeros(&g), SolverConfig::default(), ApConfig::default()).unwrap()
    }

    #[test]
    fn bound_arithmetic() {
        assert_eq!(apriori_bound(-0.5, 0.5, 0.0, 1.0, 1.0).unwrap(), 9.0);
        assert_eq!(apriori_bound(-0.5, 0.5, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(apriori_bound(0.5, 0.5, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn verdicts_around_zero_threshold() {
        let pb = problem(100);
        assert_eq!(pb.solvable(1.0).unwrap().status, VerdictStatus::Solvable);
        assert_eq!(pb.solvable(-0.5).unwrap().status, VerdictStatus::NoSolution);
        let v = pb.solvable(0.0).unwrap();
        assert_eq!(v.status, VerdictStatus::Solvable);
        assert!(v.witness.unwrap().sup_norm() < 1e-6);
    }

    #[test]
    fn threshold_is_zero_and_shifts_along_phi() {
        let pb = problem(100);
        let r = pb.find_tstar(1e-3).unwrap();
        assert!(r.t_star.abs() < 2e-3, "{}", r.t_star);
        assert!(r.bracket_history.last().is_some_and(|(a, b)| b - a <= 1e-3));
        let moved = pb.with_h(pb.phi.scale(0.7)).unwrap();
        let r = moved.find_tstar(1e-3).unwrap();
        assert!((r.t_star + 0.7).abs() < 2e-3, "{}", r.t_star);
    }

    #[test]
    fn census_counts_two_and_zero() {
        let pb = problem(100);
        let c = pb.count_solutions(1.0, 12, 7).unwrap();
        assert_eq!(c.count(), 2);
        assert!(c.ordered);
        let c = pb.count_solutions(-0.5, 12, 7).unwrap();
        assert_eq!(c.count(), 0);
    }

    #[test]
    fn line_through_two_solutions() {
        let pb = problem(100);
        let c = pb.count_solutions(1.0, 12, 1).unwrap();
        let (u, v) = (&c.solutions[0], &c.solutions[1]);
        for alpha in [-1.0, -0.25, 0.0, 0.3, 0.5, 1.0, 1.5, 3.0] {
            assert!(convex_combination_gap(&pb.d, u, v, alpha).unwrap() <= 1e-12);
        }
        // strictly inside the line is a strict supersolution here
        let g = pb.rhs(1.0);
        let mid = u.axpy(0.5, &v.axpy(-1.0, u).unwrap()).unwrap();
        let f = pb.d.apply_raw(&mid.values);
        assert!(f.iter().zip(&g.values).all(|(a, b)| a <= b));
    }

    #[test]
    fn colinearity_of_scaled_copies() {
        let g: Arc<Grid> = Arc::new(build_grid(&[(0.0, 1.0)], &[10], &[]).unwrap());
        let base = Field::from_fn(&g, |x| x[0] * (1.0 - x[0]));
        let f: Vec<Field> = [0.0, 0.3, 1.0].iter().map(|&k| base.scale(k)).collect();
        assert!(colinear_deviation(&f).unwrap() < 1e-15);
        let bent = vec![f[0].clone(), Field::from_fn(&g, |x| x[0].powi(3)), f[2].clone()];
        assert!(colinear_deviation(&bent).unwrap() > 1e-3);
    }

    #[test]
    fn plateau_has_colinear_segment() {
        use crate::operator::plateau_operator;
        use crate::spectral::principal_half_eigen;
        use crate::Sign;
        let g: Arc<Grid> = Arc::new(build_grid(&[(0.0, PI)], &[100], &[]).unwrap());
        let lap = discretize(&fucik_operator(0.0, 0.0).unwrap(), &g).unwrap();
        let slope = principal_half_eigen(&lap, Sign::Plus, &EigenConfig::default()).unwrap().lambda;
        let op = plateau_operator(0.2, slope, 1.8, 1.0).unwrap();
        let d = discretize(&op, &g).unwrap();
        let pb = ApProblem::new(d, Field::zeros(&g), SolverConfig::default(), ApConfig::default()).unwrap();
        let c = pb.count_solutions(0.0, 12, 3).unwrap();
        assert!(c.count() >= 3, "{}", c.count());
        assert!(c.colinear_segment, "{}", c.colinear_deviation);
    }

    #[test]
    fn branches_ordered_and_monotone() {
        let pb = problem(100);
        let ts = [0.2, 0.5, 1.0, 2.0];
        let b = pb.trace_branches(&ts).unwrap();
        for w in b.windows(2) {
            assert!(strictly_below(&w[1].u_low, &w[0].u_low).unwrap());
            assert!(fraction_below(&w[0].u_up, &w[1].u_up).unwrap() > 0.5);
        }
        let (lo, up) = pb.asymptotic_slopes(20.0, Some(0.0)).unwrap();
        assert!(lo < 1e-6 && up < 1e-6, "{lo} {up}");
    }
}
