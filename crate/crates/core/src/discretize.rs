//! Monotone finite-difference discretization of controlled operators.
//!
//! Second derivatives use central differences, drift terms use upwind
//! first differences chosen per node and control, and Dirichlet data (zero)
//! is eliminated, so every row has nonnegative off-diagonal entries.

use std::sync::Arc;

use crate::error::{HjbError, Result};
use crate::grid::{same_grid, Field, Grid};
use crate::linalg::BandMatrix;
use crate::operator::{ControlledOperator, StructureConstants};

/// One matrix row: diagonal and up to four active neighbours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Row {
    pub diag: f64,
    nbr: [(usize, f64); 4],
    len: u8,
}

impl Row {
    fn new(diag: f64) -> Self {
        Row {
            diag,
            nbr: [(0, 0.0); 4],
            len: 0,
        }
    }

    fn push(&mut self, j: usize, w: f64) {
        self.nbr[self.len as usize] = (j, w);
        self.len += 1;
    }

    pub fn neighbors(&self) -> &[(usize, f64)] {
        &self.nbr[..self.len as usize]
    }

    #[inline]
    pub fn apply(&self, k: usize, u: &[f64]) -> f64 {
        let mut s = self.diag * u[k];
        for &(j, w) in self.neighbors() {
            s += w * u[j];
        }
        s
    }
}

/// Matrix rows and normalized source of a single control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlRows {
    pub rows: Vec<Row>,
    /// `min_β f^β − f^α` at every node (nonpositive).
    pub source: Vec<f64>,
}

/// Per-control sparse matrices `L_α` and sources on a grid.
#[derive(Clone, Debug)]
pub struct DiscreteHJB {
    grid: Arc<Grid>,
    controls: Vec<ControlRows>,
    pub constants: StructureConstants,
    pub a0: f64,
    bandwidth: usize,
}

const COEF_TOL: f64 = 1e-12;

/// Assembles the monotone scheme of `op` on `grid`.
pub fn discretize(op: &ControlledOperator, grid: &Arc<Grid>) -> Result<DiscreteHJB> {
    let dim = grid.dim();
    if op.dim() != dim {
        return Err(HjbError::DimensionMismatch {
            expected: dim,
            got: op.dim(),
        });
    }
    let k = op.constants();
    let h = grid.h();
    let n = grid.len();
    let mut controls: Vec<ControlRows> = op
        .controls()
        .iter()
        .map(|_| ControlRows {
            rows: Vec::with_capacity(n),
            source: Vec::with_capacity(n),
        })
        .collect();
    let mut fvals = vec![0.0; op.controls().len()];
    for node in 0..n {
        let x = grid.position(node);
        for (ci, ctl) in op.controls().iter().enumerate() {
            let pc = ctl.eval_at(&x)?;
            check_node(&pc, dim, &k, node, ci)?;
            let mut diag = pc.c;
            let mut row_nbrs: Vec<(usize, f64)> = Vec::with_capacity(4);
            for axis in 0..dim {
                let a = pc.a[axis * dim + axis];
                let b = pc.b[axis];
                let h2 = h[axis] * h[axis];
                let fwd = a / h2 + b.max(0.0) / h[axis];
                let bwd = a / h2 + (-b).max(0.0) / h[axis];
                diag -= fwd + bwd;
                if let Some(j) = grid.neighbor(node, axis, 1) {
                    row_nbrs.push((j, fwd));
                }
                if let Some(j) = grid.neighbor(node, axis, -1) {
                    row_nbrs.push((j, bwd));
                }
            }
            let mut row = Row::new(diag);
            for (j, w) in row_nbrs {
                row.push(j, w);
            }
            controls[ci].rows.push(row);
            fvals[ci] = pc.f;
        }
        let fmin = fvals.iter().cloned().fold(f64::INFINITY, f64::min);
        for (ci, f) in fvals.iter().enumerate() {
            controls[ci].source.push(fmin - f);
        }
    }
    Ok(DiscreteHJB {
        bandwidth: grid.bandwidth(),
        grid: grid.clone(),
        controls,
        constants: k,
        a0: op.a0,
    })
}

fn check_node(
    pc: &crate::operator::PointCoefficients,
    dim: usize,
    k: &StructureConstants,
    node: usize,
    control: usize,
) -> Result<()> {
    let bad = |detail: String| HjbError::Ellipticity {
        node,
        detail: format!("control {control}: {detail}"),
    };
    for i in 0..dim {
        for j in 0..dim {
            let v = pc.a[i * dim + j];
            if i != j && v.abs() > COEF_TOL * (1.0 + k.cap_lambda) {
                return Err(HjbError::Unsupported(format!(
                    "off-diagonal diffusion at node {node} (control {control}) needs a wide stencil"
                )));
            }
        }
        let d = pc.a[i * dim + i];
        let slack = COEF_TOL * k.cap_lambda;
        if d < k.lambda - slack || d > k.cap_lambda + slack {
            return Err(bad(format!(
                "diffusion {d} outside [{}, {}]",
                k.lambda, k.cap_lambda
            )));
        }
    }
    let bn = pc.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bn > k.gamma * (1.0 + COEF_TOL) + COEF_TOL {
        return Err(bad(format!("|b| = {bn} exceeds gamma = {}", k.gamma)));
    }
    if pc.c.abs() > k.delta * (1.0 + COEF_TOL) + COEF_TOL {
        return Err(bad(format!("|c| = {} exceeds delta = {}", pc.c.abs(), k.delta)));
    }
    Ok(())
}

impl DiscreteHJB {
    /// Builds a problem directly from rows; used for auxiliary operators.
    pub fn from_controls(
        grid: &Arc<Grid>,
        controls: Vec<ControlRows>,
        constants: StructureConstants,
        a0: f64,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(HjbError::InvalidOperator("control set is empty".into()));
        }
        for c in &controls {
            if c.rows.len() != grid.len() || c.source.len() != grid.len() {
                return Err(HjbError::DimensionMismatch {
                    expected: grid.len(),
                    got: c.rows.len(),
                });
            }
        }
        Ok(DiscreteHJB {
            bandwidth: grid.bandwidth(),
            grid: grid.clone(),
            controls,
            constants,
            a0,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn controls(&self) -> &[ControlRows] {
        &self.controls
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn delta(&self) -> f64 {
        self.constants.delta
    }

    pub fn is_homogeneous(&self) -> bool {
        self.controls
            .iter()
            .all(|c| c.source.iter().all(|&s| s == 0.0))
    }

    /// The same matrices with all sources removed.
    pub fn asymptotic(&self) -> DiscreteHJB {
        let mut out = self.clone();
        for c in &mut out.controls {
            c.source.iter_mut().for_each(|s| *s = 0.0);
        }
        out.a0 = 0.0;
        out
    }

    fn check(&self, u: &Field) -> Result<()> {
        if same_grid(&self.grid, u.grid()) {
            Ok(())
        } else {
            Err(HjbError::GridMismatch)
        }
    }

    /// Value of control `ci` at node `k`.
    #[inline]
    pub fn control_value(&self, ci: usize, k: usize, u: &[f64]) -> f64 {
        let c = &self.controls[ci];
        c.rows[k].apply(k, u) + c.source[k]
    }

    /// `F_h[u]` and the maximizing control per node (lowest index on ties).
    pub fn apply_with_policy(&self, u: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let n = self.grid.len();
        let mut val = vec![f64::NEG_INFINITY; n];
        let mut pol = vec![0usize; n];
        for k in 0..n {
            for ci in 0..self.controls.len() {
                let v = self.control_value(ci, k, u);
                if v > val[k] {
                    val[k] = v;
                    pol[k] = ci;
                }
            }
        }
        (val, pol)
    }

    pub fn apply_raw(&self, u: &[f64]) -> Vec<f64> {
        self.apply_with_policy(u).0
    }

    /// Linear part `L_policy − shift·I` as a banded matrix.
    pub fn frozen_matrix(&self, policy: &[usize], shift: f64) -> BandMatrix {
        let n = self.grid.len();
        let bw = self.bandwidth;
        let mut m = BandMatrix::zeros(n, bw, bw);
        for k in 0..n {
            let row = &self.controls[policy[k]].rows[k];
            m.add(k, k, row.diag - shift);
            for &(j, w) in row.neighbors() {
                m.add(k, j, w);
            }
        }
        m
    }

    /// Source of the frozen policy.
    pub fn frozen_source(&self, policy: &[usize]) -> Vec<f64> {
        policy
            .iter()
            .enumerate()
            .map(|(k, &ci)| self.controls[ci].source[k])
            .collect()
    }
}

/// Nodewise `max_α (L_α u + source_α)`.
pub fn apply_fh(d: &DiscreteHJB, u: &Field) -> Result<Field> {
    d.check(u)?;
    Field::new(d.grid(), d.apply_raw(&u.values))
}

/// The extremal linear-growth operator
/// `Σ_axis [max(λ D²v, Λ D²v) + γ max(D⁺v, −D⁻v, 0)]` as a product control set.
///
/// It dominates differences of the scheme:
/// `F_h[u + v] − F_h[u] ≤ L⁺₀[v] + δ|v|` nodewise.
pub fn pucci_gradient_operator(grid: &Arc<Grid>, k: &StructureConstants) -> Result<DiscreteHJB> {
    let dim = grid.dim();
    let h = grid.h();
    // per axis: (diffusion, drift direction): drift +1 forward, −1 backward, 0 none
    let mut axis_choices = Vec::new();
    for a in [k.lambda, k.cap_lambda] {
        for dir in [0i32, 1, -1] {
            axis_choices.push((a, dir));
        }
    }
    let total = axis_choices.len().pow(dim as u32);
    let mut controls = Vec::with_capacity(total);
    for code in 0..total {
        let mut pick = Vec::with_capacity(dim);
        let mut c = code;
        for _ in 0..dim {
            pick.push(axis_choices[c % axis_choices.len()]);
            c /= axis_choices.len();
        }
        let mut rows = Vec::with_capacity(grid.len());
        for node in 0..grid.len() {
            let mut diag = 0.0;
            let mut row_nbrs = Vec::with_capacity(4);
            for (axis, &(a, dir)) in pick.iter().enumerate() {
                let h2 = h[axis] * h[axis];
                let g = k.gamma / h[axis];
                let fwd = a / h2 + if dir == 1 { g } else { 0.0 };
                let bwd = a / h2 + if dir == -1 { g } else { 0.0 };
                diag -= fwd + bwd;
                if let Some(j) = grid.neighbor(node, axis, 1) {
                    row_nbrs.push((j, fwd));
                }
                if let Some(j) = grid.neighbor(node, axis, -1) {
                    row_nbrs.push((j, bwd));
                }
            }
            let mut row = Row::new(diag);
            for (j, w) in row_nbrs {
                row.push(j, w);
            }
            rows.push(row);
        }
        controls.push(ControlRows {
            rows,
            source: vec![0.0; grid.len()],
        });
    }
    DiscreteHJB::from_controls(
        grid,
        controls,
        StructureConstants {
            lambda: k.lambda,
            cap_lambda: k.cap_lambda,
            gamma: k.gamma,
            delta: 0.0,
        },
        0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::operator::{
        eval_f, fucik_operator, Coef, ControlledOperator, LinearCoefficients, PointState,
    };
    use nalgebra::DMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn consts(gamma: f64, delta: f64) -> StructureConstants {
        StructureConstants {
            lambda: 1.0,
            cap_lambda: 1.0,
            gamma,
            delta,
        }
    }

    fn line(lo: f64, hi: f64, n: usize) -> Arc<Grid> {
        Arc::new(build_grid(&[(lo, hi)], &[n], &[]).unwrap())
    }

    #[test]
    fn laplacian_stencil() {
        let op = ControlledOperator::new(vec![LinearCoefficients::laplacian(1)], consts(0.0, 0.0))
            .unwrap();
        let d = discretize(&op, &line(0.0, 4.0, 3)).unwrap();
        let m = d.frozen_matrix(&[0, 0, 0], 0.0).to_dense();
        let expect = DMatrix::from_row_slice(3, 3, &[-2., 1., 0., 1., -2., 1., 0., 1., -2.]);
        assert_eq!(m, expect);
    }

    #[test]
    fn positive_drift_uses_forward_difference() {
        let g = 0.5;
        let op = ControlledOperator::new(
            vec![LinearCoefficients::laplacian(1).with_drift(vec![Coef::Const(g)])],
            consts(g, 0.0),
        )
        .unwrap();
        let d = discretize(&op, &line(0.0, 4.0, 3)).unwrap();
        let m = d.frozen_matrix(&[0, 0, 0], 0.0).to_dense();
        assert_eq!(m[(1, 0)], 1.0);
        assert_eq!(m[(1, 1)], -2.0 - g);
        assert_eq!(m[(1, 2)], 1.0 + g);
    }

    #[test]
    fn fucik_on_sine_is_second_order() {
        let op = fucik_operator(0.5, 1.5).unwrap();
        let grid = line(0.0, PI, 200);
        let d = discretize(&op, &grid).unwrap();
        let u = Field::from_fn(&grid, |x| x[0].sin());
        let fu = apply_fh(&d, &u).unwrap();
        let err = fu
            .values
            .iter()
            .zip(&u.values)
            .fold(0.0f64, |m, (f, s)| m.max((f - 0.5 * s).abs()));
        assert!(err <= 2.5e-4, "{err}");
    }

    #[test]
    fn zero_field_maps_to_zero_and_single_control_is_linear() {
        let op = ControlledOperator::new(
            vec![
                LinearCoefficients::laplacian(1).with_f(Coef::expr("sin(x)").unwrap()),
                LinearCoefficients::laplacian(1).with_c(0.3).with_f(0.2),
            ],
            consts(0.0, 0.3),
        )
        .unwrap()
        .with_a0(2.0);
        let grid = line(0.0, PI, 50);
        let d = discretize(&op, &grid).unwrap();
        assert!(apply_fh(&d, &Field::zeros(&grid)).unwrap().sup_norm() == 0.0);

        let single = ControlledOperator::new(
            vec![LinearCoefficients::laplacian(1).with_c(0.3).with_f(0.2)],
            consts(0.0, 0.3),
        )
        .unwrap();
        let d1 = discretize(&single, &grid).unwrap();
        let u = Field::from_fn(&grid, |x| x[0] * (PI - x[0]));
        let lin = d1.frozen_matrix(&vec![0; grid.len()], 0.0).mul_vec(&u.values);
        let f = apply_fh(&d1, &u).unwrap();
        for (a, b) in f.values.iter().zip(&lin) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn off_diagonal_diffusion_in_2d_is_unsupported() {
        let op = ControlledOperator::new(
            vec![LinearCoefficients::laplacian(2).with_diffusion(vec![
                Coef::Const(1.0),
                Coef::Const(0.2),
                Coef::Const(0.2),
                Coef::Const(1.0),
            ])],
            StructureConstants {
                lambda: 0.5,
                cap_lambda: 1.5,
                gamma: 0.0,
                delta: 0.0,
            },
        )
        .unwrap();
        let grid = Arc::new(build_grid(&[(0.0, 1.0), (0.0, 1.0)], &[5, 5], &[]).unwrap());
        assert!(matches!(discretize(&op, &grid), Err(HjbError::Unsupported(_))));
    }

    #[test]
    fn ellipticity_violation_names_node() {
        let op = ControlledOperator::new(
            vec![LinearCoefficients::laplacian(1).with_c(Coef::expr("x").unwrap())],
            consts(0.0, 1.0),
        )
        .unwrap();
        let err = discretize(&op, &line(0.0, 2.0, 9)).unwrap_err();
        assert!(matches!(err, HjbError::Ellipticity { node: 5, .. }), "{err}");
    }

    fn variable_operator() -> ControlledOperator {
        ControlledOperator::new(
            vec![
                LinearCoefficients::laplacian(1)
                    .with_scalar_diffusion(Coef::expr("1 + 0.5*sin(x)").unwrap())
                    .with_drift(vec![Coef::expr("0.5*cos(x)").unwrap()])
                    .with_c(-0.2),
                LinearCoefficients::laplacian(1)
                    .with_scalar_diffusion(1.2)
                    .with_c(0.4)
                    .with_f(0.1),
            ],
            StructureConstants {
                lambda: 0.5,
                cap_lambda: 1.5,
                gamma: 0.5,
                delta: 0.4,
            },
        )
        .unwrap()
        .with_a0(0.2)
    }

    fn continuum_error(op: &ControlledOperator, n: usize) -> f64 {
        let grid = line(0.0, PI, n);
        let d = discretize(op, &grid).unwrap();
        let u = Field::from_fn(&grid, |x| x[0].sin() * (1.0 + 0.3 * x[0]));
        let fu = apply_fh(&d, &u).unwrap();
        let mut err = 0.0f64;
        for k in 0..grid.len() {
            let x = grid.position(k)[0];
            let (s, c) = x.sin_cos();
            let val = s * (1.0 + 0.3 * x);
            let der = c * (1.0 + 0.3 * x) + 0.3 * s;
            let sec = -s * (1.0 + 0.3 * x) + 0.6 * c;
            let st = PointState::new(DMatrix::from_element(1, 1, sec), vec![der], val, vec![x]);
            err = err.max((fu.values[k] - eval_f(op, &st).unwrap()).abs());
        }
        err
    }

    #[test]
    fn consistency_orders() {
        let central = ControlledOperator::new(
            vec![
                LinearCoefficients::laplacian(1)
                    .with_scalar_diffusion(Coef::expr("1 + 0.5*sin(x)").unwrap())
                    .with_c(-0.2),
                LinearCoefficients::laplacian(1).with_scalar_diffusion(1.2).with_c(0.4),
            ],
            StructureConstants {
                lambda: 0.5,
                cap_lambda: 1.5,
                gamma: 0.0,
                delta: 0.4,
            },
        )
        .unwrap();
        for (op, nominal) in [(central, 2.0), (variable_operator(), 1.0)] {
            let e: Vec<f64> = [50, 101, 203].iter().map(|&n| continuum_error(&op, n)).collect();
            for w in e.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!(order >= 0.9 * nominal, "{e:?} order {order}");
            }
        }
    }

    #[test]
    fn comparison_principle_on_random_fields() {
        let op = variable_operator();
        let grid = line(0.0, PI, 40);
        let d = discretize(&op, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dprime = op.delta + 1e-3;
        for _ in 0..200 {
            let mut u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let j = rng.random_range(0..grid.len());
            u[j] = 1.5;
            for c in d.controls() {
                let v = c.rows[j].apply(j, &u) - dprime * u[j];
                assert!(v <= 0.0);
            }
        }
    }

    #[test]
    fn scheme_is_monotone_off_the_diagonal() {
        let op = variable_operator();
        let grid = line(0.0, PI, 40);
        let d = discretize(&op, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut v: Vec<f64> = u.iter().map(|x| x + rng.random_range(0.0..0.5)).collect();
            let j = rng.random_range(0..grid.len());
            v[j] = u[j];
            let fu = d.apply_raw(&u);
            let fv = d.apply_raw(&v);
            assert!(fu[j] <= fv[j] + 1e-12);
        }
    }

    #[test]
    fn pucci_gradient_operator_dominates_differences() {
        let op = variable_operator();
        let k = op.constants();
        let grid = Arc::new(build_grid(&[(0.0, PI)], &[30], &[]).unwrap());
        let d = discretize(&op, &grid).unwrap();
        let l0 = pucci_gradient_operator(&grid, &k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let u: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            let lhs: Vec<f64> = d
                .apply_raw(&uv)
                .iter()
                .zip(d.apply_raw(&u))
                .map(|(a, b)| a - b)
                .collect();
            let rhs = l0.apply_raw(&v);
            for i in 0..grid.len() {
                assert!(lhs[i] <= rhs[i] + k.delta * v[i].abs() + 1e-9);
            }
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let op = fucik_operator(0.5, 1.5).unwrap();
        let d = discretize(&op, &line(0.0, PI, 20)).unwrap();
        let other = line(0.0, 1.0, 20);
        assert!(matches!(
            apply_fh(&d, &Field::zeros(&other)),
            Err(HjbError::GridMismatch)
        ));
    }
}
