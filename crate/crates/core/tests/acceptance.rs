//! Acceptance criteria; one PASS/FAIL line each.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hjblab::ambrosetti_prodi::{
    colinear_deviation, convex_combination_gap, fraction_below, strictly_below, ApConfig, ApProblem,
};
use hjblab::discretize::{discretize, DiscreteHJB};
use hjblab::grid::{build_grid, Field, Grid, Subdomain};
use hjblab::harness::calibrate::{calibrate, load_suite};
use hjblab::harness::config::laplacian_eigenvalue;
use hjblab::operator::{
    check_structure, fucik_operator, fucik_operator_nd, plateau_operator, pucci_extremal,
    pucci_plus_operator, Coef, ControlledOperator, LinearCoefficients, StructureConstants,
};
use hjblab::solvers::{perron_iterate, SolverConfig};
use hjblab::spectral::{
    domain_monotonicity_gap, eigen_lower_bound_certificate, principal_half_eigen, principal_pair,
    EigenConfig,
};
use hjblab::Sign;

const EIGEN_TOL: f64 = 1e-3;
const DENSE_TOL: f64 = 1e-8;
const TSTAR_TOL: f64 = 2e-3;
const CENSUS_BUDGET_S: f64 = 300.0;
const SLOPE_TOL: f64 = 0.04;
const HOLE_TOL: f64 = 2e-2;
const CERT_INSTANCES: usize = 20;
const COLINEAR_TOL: f64 = 1e-6;
const PROPERTY_TOL: f64 = 1e-12;
const PROPERTY_SAMPLES: usize = 1000;
const N1: usize = 200;
const N2: usize = 50;

type Outcome = (bool, String);

fn line() -> Arc<Grid> {
    Arc::new(build_grid(&[(0.0, PI)], &[N1], &[]).unwrap())
}

fn square() -> Arc<Grid> {
    Arc::new(build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[N2, N2], &[]).unwrap())
}

fn fucik_problem(h: impl Fn(f64) -> f64) -> ApProblem {
    let g = line();
    let d = discretize(&fucik_operator(0.5, 1.5).unwrap(), &g).unwrap();
    let h = Field::from_fn(&g, |x| h(x[0]));
    ApProblem::new(d, h, SolverConfig::default(), ApConfig::default()).unwrap()
}

fn pair(d: &DiscreteHJB) -> (f64, f64) {
    let (p, m) = principal_pair(&d.asymptotic(), &EigenConfig::default()).unwrap();
    (p.lambda, m.lambda)
}

fn c1_fucik() -> Outcome {
    let (lp, lm) = pair(&discretize(&fucik_operator(0.5, 1.5).unwrap(), &line()).unwrap());
    let ok = (lp + 0.5).abs() <= EIGEN_TOL && (lm - 0.5).abs() <= EIGEN_TOL;
    (ok, format!("lambda+ = {lp:.6}, lambda- = {lm:.6}"))
}

fn c2_pucci() -> Outcome {
    let (lp, lm) = pair(&discretize(&pucci_plus_operator(1.0, 2.0).unwrap(), &line()).unwrap());
    let ok = (lp - 1.0).abs() <= EIGEN_TOL && (lm - 2.0).abs() <= EIGEN_TOL;
    (ok, format!("lambda+ = {lp:.6}, lambda- = {lm:.6}"))
}

fn c3_linear() -> Outcome {
    let g = line();
    let op = ControlledOperator::new(
        vec![LinearCoefficients::laplacian(1).with_c(Coef::expr("0.3*sin(x) - 0.2*cos(2*x)").unwrap())],
        StructureConstants {
            lambda: 1.0,
            cap_lambda: 1.0,
            gamma: 0.0,
            delta: 0.5,
        },
    )
    .unwrap();
    let d = discretize(&op, &g).unwrap();
    let (lp, lm) = pair(&d);
    let a = d.frozen_matrix(&vec![0; g.len()], 0.0).to_dense();
    let sym = (&a - a.transpose()).amax();
    let eig = SymmetricEigen::new(-a).eigenvalues.min();
    let err = (lp - eig).abs().max((lm - eig).abs());
    (err <= DENSE_TOL && sym == 0.0, format!("dense {eig:.10}, lambda+ {lp:.10}, lambda- {lm:.10}"))
}

fn c4_threshold_at_zero() -> Outcome {
    let g1 = line();
    let g2 = square();
    let slope = laplacian_eigenvalue(&g1, &EigenConfig::default()).unwrap();
    let suite: Vec<(&str, ControlledOperator, &Arc<Grid>)> = vec![
        ("fucik(0.5,1.5)", fucik_operator(0.5, 1.5).unwrap(), &g1),
        ("fucik(0.3,1.3)", fucik_operator(0.3, 1.3).unwrap(), &g1),
        ("fucik(0.8,1.2)", fucik_operator(0.8, 1.2).unwrap(), &g1),
        ("plateau", plateau_operator(0.2, slope, 1.8, 1.0).unwrap(), &g1),
        ("fucik2d(19,20.1)", fucik_operator_nd(2, 19.0, 20.1).unwrap(), &g2),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, op, g) in suite {
        let d = discretize(&op, g).unwrap();
        let pb = match ApProblem::new(d, Field::zeros(g), SolverConfig::default(), ApConfig::default()) {
            Ok(p) => p,
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
                continue;
            }
        };
        match pb.find_tstar(1e-3) {
            Ok(r) => {
                worst = worst.max(r.t_star.abs());
                parts.push(format!("{name} {:.1e}", r.t_star));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    (ok && worst <= TSTAR_TOL, parts.join(", "))
}

fn c5_census() -> Outcome {
    let pb = fucik_problem(|_| 0.0);
    let clock = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (t, want) in [(0.2, 2), (1.0, 2), (5.0, 2), (-0.5, 0), (-0.1, 0)] {
        let c = pb.count_solutions(t, 12, 7).unwrap();
        ok &= c.count() == want && c.ordered;
        parts.push(format!("t={t}: {}", c.count()));
    }
    let secs = clock.elapsed().as_secs_f64();
    (ok && secs <= CENSUS_BUDGET_S, format!("{} in {secs:.1}s", parts.join(", ")))
}

fn c6_branches() -> Outcome {
    let pb = fucik_problem(|_| 0.0);
    let pts = pb.trace_branches(&[0.2, 0.5, 1.0, 2.0, 5.0]).unwrap();
    let mut low = true;
    for w in pts.windows(2) {
        low &= strictly_below(&w[1].u_low, &w[0].u_low).unwrap();
    }
    let mut frac = 1.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            frac = frac.min(fraction_below(&pts[i].u_up, &pts[j].u_up).unwrap());
        }
    }
    (low && frac > 0.5, format!("lower decreasing {low}, smallest upper fraction {frac:.3}"))
}

fn c7_slopes() -> Outcome {
    let pb = fucik_problem(|_| 0.0);
    let t = 200.0;
    let bp = pb.trace_branches(&[t]).unwrap().remove(0);
    let two_sin = Field::from_fn(pb.d.grid(), |x| 2.0 * x[0].sin());
    let up = bp.u_up.scale(1.0 / t).distance(&two_sin).unwrap();
    let lo = bp.u_low.scale(1.0 / t).distance(&two_sin.scale(-1.0)).unwrap();
    (up <= SLOPE_TOL && lo <= SLOPE_TOL, format!("upper {up:.2e}, lower {lo:.2e}"))
}

fn c8_bound() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/calibration_suite.toml");
    let suite = load_suite(&path).unwrap();
    let r = calibrate(&suite).unwrap();
    let inside = r.verification.iter().all(|p| p.inside_bracket);
    (
        r.passed,
        format!(
            "C0 = {:.4}, verification max ratio {:.4}, thresholds inside bracket {inside}",
            r.c0, r.max_verification_ratio
        ),
    )
}

fn c9_certificate() -> Outcome {
    let g = line();
    let cfg = SolverConfig::default();
    let d = discretize(&fucik_operator(0.5, 1.5).unwrap(), &g).unwrap();
    let plus = principal_half_eigen(&d, Sign::Plus, &EigenConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sound = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..CERT_INSTANCES {
        let eta = rng.random_range(0.0..0.3);
        let m = rng.random_range(2..=5) as f64;
        let w = plus.phi.zip_map(&Field::from_fn(&g, |x| (m * x[0]).sin()), |p, r| p * (1.0 + eta * r)).unwrap();
        let extra = rng.random_range(0.0..0.1);
        let fw = d.apply_raw(&w.values);
        let eps = Field::new(&g, fw.iter().zip(&plus.phi.values).map(|(f, p)| f.max(0.0) + extra * p).collect()).unwrap();
        let c = eigen_lower_bound_certificate(&d, &w, &eps, 2.0, &cfg).unwrap();
        worst = worst.max(c.bound - plus.bracket.0);
        if c.bound <= plus.bracket.0 {
            sound += 1;
        }
    }
    // eps = 0 with a positive supersolution
    let lap = discretize(&fucik_operator(-0.5, 0.0).unwrap(), &g).unwrap();
    let s = Field::from_fn(&g, |x| x[0].sin());
    let zero_eps = eigen_lower_bound_certificate(&lap, &s, &Field::zeros(&g), 2.0, &cfg).unwrap().bound;
    // delta = 0
    let pucci = discretize(&pucci_plus_operator(1.0, 2.0).unwrap(), &g).unwrap();
    let fw = pucci.apply_raw(&s.values);
    let eps = Field::new(&g, fw.iter().map(|v| v.max(0.0) + 0.1).collect()).unwrap();
    let zero_delta = eigen_lower_bound_certificate(&pucci, &s, &eps, 2.0, &cfg).unwrap().bound;
    (
        sound == CERT_INSTANCES && zero_eps == 0.0 && zero_delta == 0.0,
        format!("{sound}/{CERT_INSTANCES} sound (max excess {worst:.2e}), degenerate {zero_eps} {zero_delta}"),
    )
}

fn c10_holes() -> Outcome {
    let cfg = EigenConfig::default();
    let lap = fucik_operator(0.0, 0.0).unwrap();
    let third = Subdomain::interval(PI / 3.0, 2.0 * PI / 3.0);
    let (full, cut) = domain_monotonicity_gap(&lap, &line(), Some(&third), &cfg).unwrap();
    let lap2 = fucik_operator_nd(2, 0.0, 0.0).unwrap();
    let side = 0.1f64.sqrt();
    let hole = Subdomain::centered_square([0.5, 0.5], side);
    let (f2, c2) = domain_monotonicity_gap(&lap2, &square(), Some(&hole), &cfg).unwrap();
    let ok = (full - 1.0).abs() <= EIGEN_TOL && (cut - 9.0).abs() <= HOLE_TOL && c2 > f2;
    (ok, format!("1D {full:.5} -> {cut:.5}, 2D {f2:.4} -> {c2:.4}"))
}

fn c11_segment() -> Outcome {
    let g = line();
    let slope = laplacian_eigenvalue(&g, &EigenConfig::default()).unwrap();
    let d = discretize(&plateau_operator(0.2, slope, 1.8, 1.0).unwrap(), &g).unwrap();
    let pb = ApProblem::new(d, Field::zeros(&g), SolverConfig::default(), ApConfig::default()).unwrap();
    let c = pb.count_solutions(0.0, 12, 3).unwrap();
    let dev = colinear_deviation(&c.solutions).unwrap();
    (
        c.count() >= 3 && c.colinear_segment && dev <= COLINEAR_TOL,
        format!("{} solutions, deviation {dev:.2e}", c.count()),
    )
}

fn random_field(g: &Arc<Grid>, rng: &mut ChaCha8Rng) -> Field {
    let a: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
    Field::from_fn(g, move |x| {
        (0..4).map(|k| a[k] * ((k + 1) as f64 * x[0]).sin()).sum::<f64>()
    })
}

fn c12_properties() -> Outcome {
    let g1 = line();
    let slope = laplacian_eigenvalue(&g1, &EigenConfig::default()).unwrap();
    let drifted = ControlledOperator::new(
        vec![
            LinearCoefficients::laplacian(2)
                .with_diffusion(vec![Coef::expr("1.5 + 0.5*sin(x)").unwrap(), 0.0.into(), 0.0.into(), 1.2.into()])
                .with_drift(vec![Coef::expr("cos(y)").unwrap(), 0.5.into()])
                .with_c(-0.3)
                .with_f(Coef::expr("x*y").unwrap()),
            LinearCoefficients::laplacian(2)
                .with_scalar_diffusion(1.0)
                .with_c(0.4)
                .with_f(-0.5),
        ],
        StructureConstants {
            lambda: 1.0,
            cap_lambda: 2.0,
            gamma: 1.2,
            delta: 0.4,
        },
    )
    .unwrap()
    .estimate_a0(&[(0.0, 1.0), (0.0, 1.0)], 33)
    .unwrap();
    let ops: Vec<(ControlledOperator, Vec<(f64, f64)>)> = vec![
        (fucik_operator(0.5, 1.5).unwrap(), vec![(0.0, PI)]),
        (pucci_plus_operator(1.0, 2.0).unwrap(), vec![(0.0, PI)]),
        (plateau_operator(0.2, slope, 1.8, 1.0).unwrap(), vec![(0.0, PI)]),
        (drifted, vec![(0.0, 1.0), (0.0, 1.0)]),
    ];
    let mut worst = 0.0f64;
    for (op, region) in &ops {
        worst = worst.max(check_structure(op, PROPERTY_SAMPLES, region, 12).unwrap().max_violation());
    }
    // convex-combination sub/supersolution facts on random pairs and on solution pairs
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = discretize(&plateau_operator(0.2, slope, 1.8, 1.0).unwrap(), &g1).unwrap();
    let mut convex = f64::NEG_INFINITY;
    for i in 0..PROPERTY_SAMPLES {
        let u = random_field(&g1, &mut rng);
        let v = random_field(&g1, &mut rng);
        let alpha = [0.25, 0.5, 0.75, -0.5, 1.5][i % 5];
        convex = convex.max(convex_combination_gap(&d, &u, &v, alpha).unwrap());
    }
    let pb = fucik_problem(|x| (2.0 * x).sin());
    let c = pb.count_solutions(2.0, 12, 1).unwrap();
    if c.count() == 2 {
        for alpha in [-1.0, 0.25, 0.5, 0.75, 2.0] {
            convex = convex.max(convex_combination_gap(&pb.d, &c.solutions[0], &c.solutions[1], alpha).unwrap());
        }
    }
    // monotone Perron iterates: the iteration asserts the order at every step
    let mut perron_ok = true;
    for t in [-0.5, 0.3, 1.0, 4.0] {
        let bound = pb.bound(t).unwrap();
        let sub = hjblab::solvers::build_subsolution(&pb.d, &pb.h, &pb.phi, (t, t), bound, 1.0, &pb.solver).unwrap();
        perron_ok &= perron_iterate(&pb.d, &pb.rhs(t), &sub.field, pb.solver.shift_for(&pb.d), 10_000, 10.0 * bound + sub.field.sup_norm(), &pb.solver).is_ok();
    }
    // Pucci duality
    let mut duality = 0.0f64;
    for _ in 0..PROPERTY_SAMPLES {
        let n = rng.random_range(1..=3usize);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-10.0..10.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let p = pucci_extremal(1.0, 2.5, Sign::Plus, &m).unwrap();
        let q = pucci_extremal(1.0, 2.5, Sign::Minus, &(-&m)).unwrap();
        duality = duality.max((p + q).abs());
    }
    let ok = worst <= PROPERTY_TOL && convex <= PROPERTY_TOL && perron_ok && duality == 0.0;
    (
        ok,
        format!("structure {worst:.1e}, convex {convex:.1e}, perron monotone {perron_ok}, duality {duality:.1e}"),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("fucik half-eigenvalues", c1_fucik),
        ("pucci half-eigenvalues", c2_pucci),
        ("linear operator vs dense eigensolve", c3_linear),
        ("zero threshold for zero forcing", c4_threshold_at_zero),
        ("exact multiplicity census", c5_census),
        ("branch monotonicity", c6_branches),
        ("asymptotic slopes", c7_slopes),
        ("calibrated a-priori bound", c8_bound),
        ("eigenvalue lower-bound certificate", c9_certificate),
        ("domain monotonicity", c10_holes),
        ("segment of solutions", c11_segment),
        ("property suites", c12_properties),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        let (ok, detail) = match std::panic::catch_unwind(f) {
            Ok(r) => r,
            Err(e) => (
                false,
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            clock.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
