use std::f64::consts::PI;
use std::sync::Arc;

use hjblab::ambrosetti_prodi::{ApConfig, ApProblem, VerdictStatus};
use hjblab::discretize::discretize;
use hjblab::grid::{build_grid, Field};
use hjblab::operator::fucik_operator;
use hjblab::solvers::SolverConfig;

fn problem(h: impl Fn(f64) -> f64 + 'static) -> ApProblem {
    let g = Arc::new(build_grid(&[(0.0, PI)], &[200], &[]).unwrap());
    let d = discretize(&fucik_operator(0.5, 1.5).unwrap(), &g).unwrap();
    let h = Field::from_fn(&g, move |x| h(x[0]));
    ApProblem::new(d, h, SolverConfig::default(), ApConfig::default()).unwrap()
}

#[test]
fn bisection_matches_lattice_scan() {
    let pb = problem(|x| (2.0 * x).sin());
    let r = pb.find_tstar(1e-3).unwrap();
    assert!(r.inside_paper_bracket(), "{:?} {:?}", r.t_star, r.paper_bracket);
    // first solvable point of a 1e-3 lattice around the estimate
    let base = (r.t_star * 1e3).round() / 1e3;
    let mut switch = None;
    let mut prev = pb.solvable(base - 0.01).unwrap().status;
    assert_ne!(prev, VerdictStatus::Solvable);
    for k in -9..=10 {
        let t = base + k as f64 * 1e-3;
        let v = pb.solvable(t).unwrap().status;
        if v == VerdictStatus::Solvable && prev != VerdictStatus::Solvable {
            switch = Some(t);
        }
        prev = v;
    }
    let switch = switch.expect("switch inside scan window");
    assert!((switch - r.t_star).abs() <= 2e-3, "{switch} vs {}", r.t_star);
}

#[test]
fn constant_shift_along_phi() {
    let base = problem(|_| 0.0);
    let moved = base.with_h(base.phi.scale(1.3)).unwrap();
    let r = moved.find_tstar(1e-3).unwrap();
    assert!((r.t_star + 1.3).abs() < 2e-3);
}

#[test]
fn continuity_under_small_perturbations() {
    let pb = problem(|x| (2.0 * x).sin());
    let g = pb.h.grid().clone();
    let probes: Vec<Field> = [0.1, 0.03, 0.01]
        .iter()
        .map(|&e| Field::from_fn(&g, move |x| e * (3.0 * x[0]).cos()))
        .collect();
    let out = pb.tstar_continuity_probe(&probes, 1e-3).unwrap();
    for w in out.windows(2) {
        assert!(w[1].1 <= w[0].1 + 2e-3);
    }
    assert!(out.last().unwrap().1 < 0.02);
}
