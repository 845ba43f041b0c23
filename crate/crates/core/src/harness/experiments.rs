//! One function per experiment kind. Each writes its artifacts into its own
//! directory and returns the list of checked invariants.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::config::{coef_field, ExperimentConfig, Kind, Setup};
use crate::ambrosetti_prodi::{convex_combination_gap, fraction_below, strictly_below, ApProblem};
use crate::error::{HjbError, Result};
use crate::grid::{Field, Grid, SubdomainDef};
use crate::operator::{check_structure, pucci_extremal};
use crate::solvers::perron_iterate;
use crate::spectral::{
    domain_monotonicity_gap, eigen_lower_bound_certificate, principal_half_eigen, principal_pair,
};
use crate::Sign;

/// A named invariant and whether it held.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub invariant: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(invariant: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            invariant: invariant.to_string(),
            pass,
            detail: detail.into(),
        }
    }

    fn at_most(invariant: &str, value: f64, limit: f64) -> Self {
        Check::new(invariant, value <= limit, format!("{value:e} <= {limit:e}"))
    }
}

pub fn run_kind(kind: Kind, cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    match kind {
        Kind::StructureCheck => structure_check(cfg, s, dir),
        Kind::Eigen => eigen(cfg, s, dir),
        Kind::Tstar => tstar(cfg, s, dir),
        Kind::Branches => branches(cfg, s, dir),
        Kind::Census => census(cfg, s, dir),
        Kind::Asymptotics => asymptotics(cfg, s, dir),
        Kind::DomainHole => domain_hole(cfg, s, dir),
        Kind::Certificate => certificate(cfg, s, dir),
        Kind::ContinuityProbe => continuity_probe(cfg, s, dir),
        Kind::FullSuite => Err(HjbError::Config("full_suite is not a single experiment".into())),
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| HjbError::Io(e.into()))?;
    f.write_all(b"\n")?;
    Ok(())
}

fn coord_names(dim: usize) -> &'static [&'static str] {
    &["x", "y", "z"][..dim]
}

/// Wide CSV: node coordinates followed by one column per field.
pub(crate) fn write_fields(path: &Path, grid: &Grid, columns: &[(String, &Field)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::grid::csv_err)?;
    let mut header: Vec<String> = coord_names(grid.dim()).iter().map(|s| s.to_string()).collect();
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header).map_err(crate::grid::csv_err)?;
    for k in 0..grid.len() {
        let mut row: Vec<String> = grid.position(k).iter().map(crate::grid::fmt_num).collect();
        row.extend(columns.iter().map(|(_, f)| crate::grid::fmt_num(&f.values[k])));
        w.write_record(&row).map_err(crate::grid::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn random_smooth(grid: &std::sync::Arc<Grid>, rng: &mut ChaCha8Rng, amplitude: f64) -> Field {
    let ext = grid.extents().to_vec();
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(1..=4usize) as f64,
                rng.random_range(1..=4usize) as f64,
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    Field::from_fn(grid, move |x| {
        let mut v = 0.0;
        for &(m, n, a) in &modes {
            let sx = (m * std::f64::consts::PI * (x[0] - ext[0].0) / (ext[0].1 - ext[0].0)).sin();
            let sy = if x.len() > 1 {
                (n * std::f64::consts::PI * (x[1] - ext[1].0) / (ext[1].1 - ext[1].0)).sin()
            } else {
                1.0
            };
            v += a * sx * sy;
        }
        amplitude * v / 4.0
    })
}

fn structure_check(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let n = cfg.params.samples;
    let rep = check_structure(&s.op, n, &s.extents, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    // Pucci duality on random symmetric matrices
    let dim = s.grid.dim();
    let mut duality = 0.0f64;
    for _ in 0..n {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = rng.random_range(-10.0..10.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let plus = pucci_extremal(s.op.lambda, s.op.cap_lambda, Sign::Plus, &m)?;
        let minus = pucci_extremal(s.op.lambda, s.op.cap_lambda, Sign::Minus, &(-&m))?;
        duality = duality.max((plus + minus).abs());
    }
    // discrete convexity on random fields, relative to the operator scale
    let mut convexity = 0.0f64;
    for i in 0..n.div_ceil(10) {
        let u = random_smooth(&s.grid, &mut rng, 10.0);
        let v = random_smooth(&s.grid, &mut rng, 10.0);
        let alpha = [0.25, 0.5, 0.75, -0.5, 1.5][i % 5];
        convexity = convexity.max(convex_combination_gap(&s.d, &u, &v, alpha)?);
    }
    // Perron monotonicity is asserted inside the iteration itself
    let perron = {
        let sub = Field::constant(&s.grid, -1.0);
        let g = s.h.clone();
        let shift = cfg.solver.shift_for(&s.d);
        perron_iterate(&s.d, &g, &sub, shift, 50, f64::INFINITY, &cfg.solver).map(|r| r.iterations)
    };
    write_json(
        &dir.join("structure.json"),
        &json!({
            "report": rep,
            "pucci_duality": duality,
            "discrete_convexity": convexity,
            "perron_monotone": perron.is_ok(),
        }),
    )?;
    let lim = 1e-12;
    let mut checks = vec![
        Check::at_most("ellipticity sandwich", rep.ellipticity, lim),
        Check::at_most("convexity", rep.convexity, lim),
        Check::at_most("asymptotic homogeneity", rep.homogeneity, lim),
        Check::at_most("asymptotic domination", rep.asymptotic_domination, lim),
        Check::at_most("uniform approximation", rep.uniform_approximation, lim),
        Check::at_most("quotient monotonicity", rep.quotient_monotonicity, lim),
        Check::new("pucci duality", duality == 0.0, format!("{duality:e}")),
        Check::at_most("convex combination of supersolutions", convexity, lim),
    ];
    checks.push(match perron {
        Ok(it) => Check::new("perron monotone iterates", true, format!("{it} iterations")),
        Err(e @ HjbError::Assertion { .. }) => Check::new("perron monotone iterates", false, e.to_string()),
        Err(e) => Check::new("perron monotone iterates", true, format!("not applicable: {e}")),
    });
    Ok(checks)
}

fn eigen(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let inf = s.d.asymptotic();
    let (plus, minus) = principal_pair(&inf, &cfg.eigen)?;
    write_json(
        &dir.join("eigen.json"),
        &json!({
            "lambda_plus": plus.lambda,
            "lambda_minus": minus.lambda,
            "plus": plus.summary(),
            "minus": minus.summary(),
        }),
    )?;
    write_fields(
        &dir.join("eigen_fields.csv"),
        &s.grid,
        &[("phi_plus".into(), &plus.phi), ("phi_minus".into(), &minus.phi)],
    )?;
    let p = &cfg.params;
    let mut checks = vec![
        Check::new(
            "half-eigenvalue ordering",
            plus.lambda <= minus.lambda + 2.0 * cfg.eigen.tol,
            format!("{} <= {}", plus.lambda, minus.lambda),
        ),
        Check::new(
            "eigenfunction comparable to distance",
            plus.hopf.0 > 0.0 && plus.hopf.1.is_finite(),
            format!("{:?}", plus.hopf),
        ),
    ];
    if let Some(e) = p.expect_lambda_plus {
        checks.push(Check::at_most("expected lambda_plus", (plus.lambda - e).abs(), p.expect_tol));
    }
    if let Some(e) = p.expect_lambda_minus {
        checks.push(Check::at_most("expected lambda_minus", (minus.lambda - e).abs(), p.expect_tol));
    }
    Ok(checks)
}

fn tstar_checks(cfg: &ExperimentConfig, r: &crate::ambrosetti_prodi::TStarResult) -> Vec<Check> {
    let tol = cfg.ap.tstar_tol;
    let (lo, hi) = *r.bracket_history.last().expect("nonempty history");
    let mut checks = vec![
        Check::at_most("bisection width", hi - lo, tol),
        Check::new(
            "threshold inside a-priori bracket",
            r.t_star >= r.paper_bracket.0 - tol && r.t_star <= r.paper_bracket.1 + tol,
            format!("{} in [{}, {}]", r.t_star, r.paper_bracket.0, r.paper_bracket.1),
        ),
    ];
    if let Some(e) = cfg.params.expect_tstar {
        checks.push(Check::at_most("expected threshold", (r.t_star - e).abs(), 2.0 * tol));
    }
    checks
}

fn tstar(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let pb = s.problem(cfg)?;
    let r = pb.find_tstar(cfg.ap.tstar_tol)?;
    write_json(
        &dir.join("tstar.json"),
        &json!({
            "t_star": r.t_star,
            "lambda_plus": pb.lambda_plus,
            "lambda_minus": pb.lambda_minus,
            "c0": cfg.ap.c0,
            "result": r,
        }),
    )?;
    let mut checks = tstar_checks(cfg, &r);
    checks.push(Check::new("monotone solvability", true, format!("{} verdicts", r.verdicts.len())));
    Ok(checks)
}

fn threshold(cfg: &ExperimentConfig, pb: &ApProblem) -> Result<f64> {
    Ok(pb.find_tstar(cfg.ap.tstar_tol)?.t_star)
}

fn branches(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let pb = s.problem(cfg)?;
    let ts = threshold(cfg, &pb)?;
    let tol = cfg.ap.tstar_tol;
    let mut samples = cfg.params.t_samples.clone();
    samples.sort_by(f64::total_cmp);
    let mut checks = vec![Check::new(
        "samples above threshold",
        samples.iter().all(|&t| t > ts + tol),
        format!("t* = {ts}"),
    )];
    if !checks[0].pass {
        return Ok(checks);
    }
    let pts = pb.trace_branches(&samples)?;
    // residuals relative to the solver tolerance for each right-hand side
    let worst = pts
        .iter()
        .map(|p| p.residual_low.max(p.residual_up) / (cfg.solver.tol * (1.0 + pb.rhs(p.t).sup_norm())))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("branch residuals", worst, 1.0));
    let mut lower_ok = true;
    let mut pointwise_upper = true;
    for w in pts.windows(2) {
        lower_ok &= strictly_below(&w[1].u_low, &w[0].u_low)?;
        pointwise_upper &= strictly_below(&w[0].u_up, &w[1].u_up)?;
    }
    checks.push(Check::new("lower branch strictly decreasing", lower_ok, ""));
    let mut min_frac = 1.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            min_frac = min_frac.min(fraction_below(&pts[i].u_up, &pts[j].u_up)?);
        }
    }
    checks.push(Check::new(
        "upper branch increases on more than half",
        pts.len() < 2 || min_frac > 0.5,
        format!("smallest fraction {min_frac}"),
    ));
    let rows: Vec<_> = pts
        .iter()
        .map(|p| {
            json!({
                "t": p.t,
                "residual_low": p.residual_low,
                "residual_up": p.residual_up,
                "u_low_max": p.u_low.max(),
                "u_up_min": p.u_up.min(),
                "u_low_sup": p.u_low.sup_norm(),
                "u_up_sup": p.u_up.sup_norm(),
            })
        })
        .collect();
    write_json(
        &dir.join("branches.json"),
        &json!({
            "t_star": ts,
            "points": rows,
            "upper_pointwise_monotone": pointwise_upper,
            "upper_min_fraction": min_frac,
        }),
    )?;
    let mut cols = Vec::new();
    for p in &pts {
        cols.push((format!("u_low@{}", p.t), &p.u_low));
        cols.push((format!("u_up@{}", p.t), &p.u_up));
    }
    write_fields(&dir.join("branches_fields.csv"), &s.grid, &cols)?;
    Ok(checks)
}

fn census(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let pb = s.problem(cfg)?;
    let ts = threshold(cfg, &pb)?;
    let tol = cfg.ap.tstar_tol;
    let mut checks = Vec::new();
    let mut summaries = Vec::new();
    let mut sols = Vec::new();
    for &t in &cfg.params.census_t {
        let c = pb.count_solutions(t, cfg.params.n_starts, cfg.seed)?;
        let n = c.count();
        checks.push(Check::new("ordered census", c.ordered, format!("t = {t}")));
        if n >= 3 {
            checks.push(Check::new(
                "three or more solutions are colinear",
                c.colinear_segment,
                format!("t = {t}, deviation {:e}", c.colinear_deviation),
            ));
        }
        if t - ts > 10.0 * tol {
            checks.push(Check::new("exactly two above threshold", n == 2, format!("t = {t}: {n}")));
        } else if ts - t > 10.0 * tol {
            checks.push(Check::new("none below threshold", n == 0, format!("t = {t}: {n}")));
        }
        if let Some(m) = cfg.params.expect_min_clusters {
            checks.push(Check::new("expected cluster count", n >= m, format!("t = {t}: {n} >= {m}")));
        }
        summaries.push(c.summary());
        sols.push(c);
    }
    write_json(&dir.join("census.json"), &json!({ "t_star": ts, "censuses": summaries }))?;
    let mut cols = Vec::new();
    for c in &sols {
        for (k, u) in c.solutions.iter().enumerate() {
            cols.push((format!("u@{}#{}", c.t, k), u));
        }
    }
    write_fields(&dir.join("census_fields.csv"), &s.grid, &cols)?;
    Ok(checks)
}

fn asymptotics(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let pb = s.problem(cfg)?;
    let ts = threshold(cfg, &pb)?;
    let mut ts_large = cfg.params.t_large.clone();
    ts_large.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for &t in &ts_large {
        let (lo, up) = pb.asymptotic_slopes(t, Some(ts))?;
        rows.push((t, lo, up));
    }
    let mut checks = vec![Check::new("branch signs at large t", true, "")];
    for w in rows.windows(2) {
        checks.push(Check::new(
            "slopes improve with t",
            w[1].1 <= w[0].1 && w[1].2 <= w[0].2,
            format!("t = {} -> {}", w[0].0, w[1].0),
        ));
    }
    if let (Some(tol), Some(last)) = (cfg.params.slope_tol, rows.last()) {
        checks.push(Check::at_most("asymptotic slope deviation", last.1.max(last.2), tol));
    }
    let out: Vec<_> = rows
        .iter()
        .map(|(t, lo, up)| json!({"t": t, "lower_deviation": lo, "upper_deviation": up}))
        .collect();
    write_json(&dir.join("asymptotics.json"), &json!({ "t_star": ts, "slopes": out }))?;
    write_fields(
        &dir.join("asymptotics_fields.csv"),
        &s.grid,
        &[("w_lower".into(), &pb.w_lower), ("w_upper".into(), &pb.w_upper)],
    )?;
    Ok(checks)
}

fn domain_hole(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let def = cfg.params.hole.clone().unwrap_or(SubdomainDef::CenteredFraction {
        fraction: if s.grid.dim() == 1 { 1.0 / 3.0 } else { 0.1 },
    });
    let hole = def.build(&s.extents)?;
    let (full, cut) = domain_monotonicity_gap(&s.op, &s.grid, Some(&hole), &cfg.eigen)?;
    write_json(
        &dir.join("domain_hole.json"),
        &json!({ "hole": hole, "lambda_full": full, "lambda_cut": cut, "gap": cut - full }),
    )?;
    Ok(vec![Check::new(
        "removing a set raises the eigenvalue",
        cut > full,
        format!("{full} -> {cut}"),
    )])
}

fn certificate(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let inf = s.d.asymptotic();
    let plus = principal_half_eigen(&inf, Sign::Plus, &cfg.eigen)?;
    let p = s.grid.dim() as f64 + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    let mut sound = true;
    for _ in 0..cfg.params.instances {
        let eta = rng.random_range(0.0..0.3);
        let r = random_smooth(&s.grid, &mut rng, 1.0);
        let w = plus.phi.zip_map(&r, |ph, rv| ph * (1.0 + eta * rv))?;
        let extra = rng.random_range(0.0..0.1);
        let fw = inf.apply_raw(&w.values);
        let eps = Field::new(
            &s.grid,
            fw.iter().zip(&plus.phi.values).map(|(f, ph)| f.max(0.0) + extra * ph).collect(),
        )?;
        let c = eigen_lower_bound_certificate(&inf, &w, &eps, p, &cfg.solver)?;
        sound &= c.bound <= plus.bracket.0;
        rows.push(json!({"eta": eta, "extra": extra, "certificate": c}));
    }
    let mut checks = vec![Check::new(
        "certificate below eigenvalue",
        sound,
        format!("{} instances, bracket low {}", rows.len(), plus.bracket.0),
    )];
    if inf.delta() == 0.0 {
        let eps = inf.apply_raw(&plus.phi.values).iter().map(|v| v.max(0.0) + 0.1).collect();
        let c = eigen_lower_bound_certificate(&inf, &plus.phi, &Field::new(&s.grid, eps)?, p, &cfg.solver)?;
        checks.push(Check::new("zero bound without zeroth order", c.bound == 0.0, format!("{}", c.bound)));
    }
    write_json(
        &dir.join("certificate.json"),
        &json!({ "lambda_plus": plus.lambda, "bracket": plus.bracket, "instances": rows }),
    )?;
    Ok(checks)
}

fn continuity_probe(cfg: &ExperimentConfig, s: &Setup, dir: &Path) -> Result<Vec<Check>> {
    let pb = s.problem(cfg)?;
    let tol = cfg.ap.tstar_tol;
    let base = threshold(cfg, &pb)?;
    let dh = coef_field(&cfg.params.perturbation, &s.grid)?;
    let perts: Vec<Field> = cfg.params.perturbation_scales.iter().map(|&k| dh.scale(k)).collect();
    let pairs = pb.tstar_continuity_probe(&perts, tol)?;
    let mut checks = Vec::new();
    if let Some(last) = pairs.last() {
        checks.push(Check::at_most("threshold continuity", last.1, 2.0 * tol));
    }
    let mut shifts = Vec::new();
    for &k in &cfg.params.phi_shifts {
        let moved = pb.with_h(pb.h.axpy(k, &pb.phi)?)?;
        let t = moved.find_tstar(tol)?.t_star;
        checks.push(Check::at_most("shift along eigenfunction", (t - (base - k)).abs(), 2.0 * tol));
        shifts.push(json!({"shift": k, "t_star": t}));
    }
    let decay: Vec<_> = pairs.iter().map(|(n, d)| json!({"norm": n, "change": d})).collect();
    write_json(
        &dir.join("continuity.json"),
        &json!({ "t_star": base, "decay": decay, "phi_shifts": shifts }),
    )?;
    Ok(checks)
}
