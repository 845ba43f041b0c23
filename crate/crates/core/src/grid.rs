//! Uniform node grids on intervals and rectangles, optionally with holes,
//! and scalar fields on their interior nodes.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};

/// A number written either literally or as a constant expression (`"pi/3"`).
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum Num {
    Value(f64),
    Expr(String),
}

impl Num {
    pub fn value(&self) -> Result<f64> {
        match self {
            Num::Value(v) => Ok(*v),
            Num::Expr(s) => meval::eval_str(s)
                .map_err(|e| HjbError::Config(format!("cannot evaluate {s:?}: {e}"))),
        }
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num::Value(v)
    }
}

/// A closed excised region.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Subdomain {
    /// Axis-aligned box; in 1D an interval.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Disk { center: Vec<f64>, radius: f64 },
}

impl Subdomain {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Subdomain::Box {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    /// Square of side `side` centered at `center`.
    pub fn centered_square(center: [f64; 2], side: f64) -> Self {
        Subdomain::Box {
            lo: vec![center[0] - side / 2.0, center[1] - side / 2.0],
            hi: vec![center[0] + side / 2.0, center[1] + side / 2.0],
        }
    }

    fn dim(&self) -> usize {
        match self {
            Subdomain::Box { lo, .. } => lo.len(),
            Subdomain::Disk { center, .. } => center.len(),
        }
    }

    fn contains(&self, x: &[f64], slack: f64) -> bool {
        match self {
            Subdomain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - slack && *v <= b + slack),
            Subdomain::Disk { center, radius } => dist(x, center) <= radius + slack,
        }
    }

    /// Euclidean distance from `x` to the set (zero inside).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Subdomain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| {
                    let e = (a - v).max(v - b).max(0.0);
                    e * e
                })
                .sum::<f64>()
                .sqrt(),
            Subdomain::Disk { center, radius } => (dist(x, center) - radius).max(0.0),
        }
    }
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Config form of a hole.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubdomainDef {
    Box { lo: Vec<Num>, hi: Vec<Num> },
    Disk { center: Vec<Num>, radius: Num },
    /// Centered square (2D) or centered interval (1D) covering `fraction` of the domain.
    CenteredFraction { fraction: f64 },
}

impl SubdomainDef {
    pub fn build(&self, extents: &[(f64, f64)]) -> Result<Subdomain> {
        let vals = |v: &[Num]| v.iter().map(Num::value).collect::<Result<Vec<_>>>();
        Ok(match self {
            SubdomainDef::Box { lo, hi } => Subdomain::Box {
                lo: vals(lo)?,
                hi: vals(hi)?,
            },
            SubdomainDef::Disk { center, radius } => Subdomain::Disk {
                center: vals(center)?,
                radius: radius.value()?,
            },
            SubdomainDef::CenteredFraction { fraction } => {
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return Err(HjbError::Config("hole fraction must lie in (0, 1)".into()));
                }
                let scale = fraction.powf(1.0 / extents.len() as f64);
                let (lo, hi) = extents
                    .iter()
                    .map(|&(a, b)| {
                        let mid = 0.5 * (a + b);
                        let half = 0.5 * scale * (b - a);
                        (mid - half, mid + half)
                    })
                    .unzip();
                Subdomain::Box { lo, hi }
            }
        })
    }
}

/// The `[domain]` config section.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainDef {
    pub extents: Vec<[Num; 2]>,
    pub n: Vec<usize>,
    #[serde(default)]
    pub holes: Vec<SubdomainDef>,
}

impl DomainDef {
    pub fn extents(&self) -> Result<Vec<(f64, f64)>> {
        self.extents
            .iter()
            .map(|[a, b]| Ok((a.value()?, b.value()?)))
            .collect()
    }

    pub fn build(&self) -> Result<Grid> {
        let extents = self.extents()?;
        let holes = self
            .holes
            .iter()
            .map(|h| h.build(&extents))
            .collect::<Result<Vec<_>>>()?;
        build_grid(&extents, &self.n, &holes)
    }
}

/// Interior nodes of a uniform lattice on a box, minus excised holes.
///
/// Lattice indices run with the first axis fastest; node `i` on an axis sits
/// at `lo + (i + 1)·h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: Vec<(f64, f64)>,
    n: Vec<usize>,
    h: Vec<f64>,
    holes: Vec<Subdomain>,
    excised: Vec<bool>,
    active_of: Vec<Option<usize>>,
    lattice_of: Vec<usize>,
    components: usize,
}

/// Builds a grid with `n[axis]` interior nodes per axis and the given holes.
pub fn build_grid(extents: &[(f64, f64)], n: &[usize], holes: &[Subdomain]) -> Result<Grid> {
    let dim = extents.len();
    if !(dim == 1 || dim == 2) || n.len() != dim {
        return Err(HjbError::InvalidGrid(format!(
            "need 1 or 2 axes with matching node counts, got {dim} extents and {} counts",
            n.len()
        )));
    }
    for (k, &(lo, hi)) in extents.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(HjbError::InvalidGrid(format!("degenerate extent on axis {k}")));
        }
        if n[k] < 3 {
            return Err(HjbError::InvalidGrid(format!("axis {k} needs n >= 3")));
        }
    }
    let h: Vec<f64> = extents
        .iter()
        .zip(n)
        .map(|(&(lo, hi), &k)| (hi - lo) / (k + 1) as f64)
        .collect();
    let total: usize = n.iter().product();
    let mut grid = Grid {
        dim,
        extents: extents.to_vec(),
        n: n.to_vec(),
        h,
        holes: Vec::new(),
        excised: vec![false; total],
        active_of: Vec::new(),
        lattice_of: Vec::new(),
        components: 0,
    };
    for hole in holes {
        grid.excise(hole)?;
    }
    grid.reindex()?;
    Ok(grid)
}

/// The same grid with `gamma` additionally excised. `gamma` must lie inside the box.
pub fn restrict_domain(grid: &Grid, gamma: &Subdomain) -> Result<Grid> {
    let inside = match gamma {
        Subdomain::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .zip(&grid.extents)
            .all(|((a, b), &(l, r))| a <= b && *a > l && *b < r),
        Subdomain::Disk { center, radius } => center
            .iter()
            .zip(&grid.extents)
            .all(|(c, &(l, r))| c - radius > l && c + radius < r),
    };
    if !inside {
        return Err(HjbError::InvalidGrid("excised set must lie strictly inside the domain".into()));
    }
    let mut out = grid.clone();
    out.excise(gamma)?;
    out.reindex()?;
    Ok(out)
}

/// Distance from every active node to the nearest boundary point, holes included.
pub fn distance_field(grid: &Arc<Grid>) -> Field {
    Field::from_fn(grid, |x| {
        let mut d = f64::INFINITY;
        for (v, &(lo, hi)) in x.iter().zip(&grid.extents) {
            d = d.min(v - lo).min(hi - v);
        }
        for hole in &grid.holes {
            d = d.min(hole.distance(x));
        }
        d
    })
}

impl Grid {
    fn excise(&mut self, hole: &Subdomain) -> Result<()> {
        if hole.dim() != self.dim {
            return Err(HjbError::DimensionMismatch {
                expected: self.dim,
                got: hole.dim(),
            });
        }
        let slack = 1e-9 * self.h.iter().cloned().fold(f64::INFINITY, f64::min);
        for l in 0..self.excised.len() {
            if hole.contains(&self.lattice_position(l), slack) {
                self.excised[l] = true;
            }
        }
        self.holes.push(hole.clone());
        Ok(())
    }

    fn reindex(&mut self) -> Result<()> {
        self.active_of = vec![None; self.excised.len()];
        self.lattice_of.clear();
        for (l, &ex) in self.excised.iter().enumerate() {
            if !ex {
                self.active_of[l] = Some(self.lattice_of.len());
                self.lattice_of.push(l);
            }
        }
        if self.lattice_of.is_empty() {
            return Err(HjbError::InvalidGrid("holes cover every interior node".into()));
        }
        self.components = self.count_components();
        Ok(())
    }

    fn count_components(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(k) = queue.pop_front() {
                for axis in 0..self.dim {
                    for dir in [-1, 1] {
                        if let Some(j) = self.neighbor(k, axis, dir) {
                            if !seen[j] {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        count
    }

    fn lattice_coords(&self, l: usize) -> [usize; 2] {
        if self.dim == 1 {
            [l, 0]
        } else {
            [l % self.n[0], l / self.n[0]]
        }
    }

    fn lattice_position(&self, l: usize) -> Vec<f64> {
        let c = self.lattice_coords(l);
        (0..self.dim)
            .map(|k| self.extents[k].0 + (c[k] + 1) as f64 * self.h[k])
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn holes(&self) -> &[Subdomain] {
        &self.holes
    }

    /// Number of active (non-excised interior) nodes.
    pub fn len(&self) -> usize {
        self.lattice_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice_of.is_empty()
    }

    pub fn excised_count(&self) -> usize {
        self.excised.iter().filter(|&&e| e).count()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    /// Measure of the excised set as seen by the grid.
    pub fn excised_measure(&self) -> f64 {
        self.excised_count() as f64 * self.cell_volume()
    }

    pub fn domain_measure(&self) -> f64 {
        self.extents.iter().map(|(a, b)| b - a).product()
    }

    /// Connected components of the active node set under nearest-neighbour adjacency.
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn position(&self, k: usize) -> Vec<f64> {
        self.lattice_position(self.lattice_of[k])
    }

    /// Active neighbour of node `k` one step along `axis` in direction `dir`
    /// (±1); `None` when that neighbour is on the boundary or in a hole.
    pub fn neighbor(&self, k: usize, axis: usize, dir: i32) -> Option<usize> {
        let l = self.lattice_of[k];
        let c = self.lattice_coords(l);
        let i = c[axis] as i64 + dir as i64;
        if i < 0 || i >= self.n[axis] as i64 {
            return None;
        }
        let stride = if axis == 0 { 1 } else { self.n[0] };
        let l2 = (l as i64 + dir as i64 * stride as i64) as usize;
        self.active_of[l2]
    }

    /// Largest distance between nonzero entries and the diagonal in the
    /// natural ordering of active nodes.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for k in 0..self.len() {
            for axis in 0..self.dim {
                for dir in [-1, 1] {
                    if let Some(j) = self.neighbor(k, axis, dir) {
                        bw = bw.max(j.abs_diff(k));
                    }
                }
            }
        }
        bw
    }
}

/// One value per active node of a grid; boundary values are implicitly zero.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Arc<Grid>,
    pub values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl Field {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(HjbError::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HjbError::Precondition("field values must be finite".into()));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Field {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(&grid.position(k))).collect();
        Field {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(HjbError::GridMismatch)
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^p` norm with the cell volume as quadrature weight.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let vol = self.grid.cell_volume();
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v)
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn positive_part(&self) -> Field {
        self.map(|v| v.max(0.0))
    }

    pub fn negative_part(&self) -> Field {
        self.map(|v| (-v).max(0.0))
    }

    /// Sup-norm distance to `other`.
    pub fn distance(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Writes `x[,y],value` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = ["x", "y"][..self.grid.dim].to_vec();
        header.push("value");
        wtr.write_record(&header).map_err(csv_err)?;
        for (k, v) in self.values.iter().enumerate() {
            let mut row: Vec<String> = self.grid.position(k).iter().map(fmt_num).collect();
            row.push(fmt_num(v));
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> HjbError {
    HjbError::Io(std::io::Error::other(e.to_string()))
}

/// Shortest round-trip representation; keeps outputs byte-stable.
pub(crate) fn fmt_num(v: &f64) -> String {
    format!("{v:e}")
}
