//! Discrete spaces, coefficient layouts, evaluation and P0 projections.
//!
//! Coefficient layouts (vector spaces interleave components per attachment):
//! - CR vector: `2 * e + c` for every edge `e`, boundary edges included;
//! - DG1 vector: `6 * t + 2 * i + c` for vertex `i` of triangle `t`;
//! - P0 scalar: `t`;
//! - P0 vector: `2 * t + c`;
//! - P0 boundary vector: `2 * k + c` for the `k`-th boundary edge in edge-id order.
//!
//! Constrained coefficients stay in the vector and carry prescribed values;
//! `dof_count` counts only the free ones.

use crate::error::{invalid, Result};
use crate::mesh::Grid;
use crate::quadrature::{edge_rule, triangle_rule};
use crate::{Mat2, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    CrVector,
    Dg1Vector,
    P0Scalar,
    P0Vector,
    P0BoundaryVector,
}

impl SpaceKind {
    pub fn is_velocity(self) -> bool {
        matches!(self, SpaceKind::CrVector | SpaceKind::Dg1Vector)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Constraints {
    /// CR only: midpoint values on boundary edges are prescribed.
    pub dirichlet: bool,
    /// Recorded for the saddle solver, which appends a multiplier row.
    pub mean_zero: bool,
}

#[derive(Clone, Debug)]
pub struct FeSpace {
    pub kind: SpaceKind,
    pub constraints: Constraints,
    n_coeffs: usize,
    /// Free dof index of every coefficient, `None` if prescribed.
    free: Vec<Option<usize>>,
    dof_count: usize,
    /// Boundary edge ids, for the boundary control space.
    boundary_edges: Vec<usize>,
    /// Position of each edge in `boundary_edges`.
    boundary_slot: Vec<Option<usize>>,
}

impl FeSpace {
    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    pub fn free_index(&self, coeff: usize) -> Option<usize> {
        self.free[coeff]
    }

    pub fn is_constrained(&self, coeff: usize) -> bool {
        self.free[coeff].is_none()
    }

    pub fn boundary_edges(&self) -> &[usize] {
        &self.boundary_edges
    }

    pub fn boundary_slot(&self, e: usize) -> Option<usize> {
        self.boundary_slot[e]
    }

    pub fn zero(&self) -> FeFunction {
        FeFunction {
            kind: self.kind,
            coeffs: vec![0.0; self.n_coeffs],
        }
    }

    pub fn function(&self, coeffs: Vec<f64>) -> Result<FeFunction> {
        if coeffs.len() != self.n_coeffs {
            return Err(invalid(format!(
                "coefficient length {} does not match space size {}",
                coeffs.len(),
                self.n_coeffs
            )));
        }
        Ok(FeFunction {
            kind: self.kind,
            coeffs,
        })
    }

    /// Coefficient indices of the local basis of triangle `t`.
    ///
    /// CR: `[edge_of(local i)]`, component c at `2 * e + c`.
    pub fn local_coeffs(&self, grid: &Grid, t: usize) -> [[usize; 2]; 3] {
        match self.kind {
            SpaceKind::CrVector => {
                let e = grid.topo.edge_of_triangle[t];
                [0, 1, 2].map(|i| [2 * e[i], 2 * e[i] + 1])
            }
            SpaceKind::Dg1Vector => [0, 1, 2].map(|i| [6 * t + 2 * i, 6 * t + 2 * i + 1]),
            _ => panic!("local_coeffs is defined for velocity spaces only"),
        }
    }

    fn check(&self, f: &FeFunction) -> Result<()> {
        if f.kind != self.kind || f.coeffs.len() != self.n_coeffs {
            return Err(invalid("function does not belong to this space"));
        }
        Ok(())
    }

    /// Value of a vector velocity function at barycentric point `l` of `t`.
    pub fn velocity_at(&self, grid: &Grid, f: &FeFunction, t: usize, l: [f64; 3]) -> Vec2 {
        let local = self.local_coeffs(grid, t);
        let mut v = [0.0; 2];
        for i in 0..3 {
            let phi = match self.kind {
                SpaceKind::CrVector => 1.0 - 2.0 * l[i],
                _ => l[i],
            };
            v[0] += phi * f.coeffs[local[i][0]];
            v[1] += phi * f.coeffs[local[i][1]];
        }
        v
    }

    /// Constant gradient of a velocity function on `t`, `m[i][j] = d v_i / d x_j`.
    pub fn velocity_gradient(&self, grid: &Grid, f: &FeFunction, t: usize) -> Mat2 {
        let g = grid.geometry(t);
        let local = self.local_coeffs(grid, t);
        let scale = match self.kind {
            SpaceKind::CrVector => -2.0,
            _ => 1.0,
        };
        let mut m = [[0.0; 2]; 2];
        for i in 0..3 {
            for c in 0..2 {
                let coef = scale * f.coeffs[local[i][c]];
                m[c][0] += coef * g.grad_bary[i][0];
                m[c][1] += coef * g.grad_bary[i][1];
            }
        }
        m
    }

    /// Evaluates `f` at physical point `x` inside triangle `t`.
    pub fn eval(&self, grid: &Grid, f: &FeFunction, t: usize, x: Vec2) -> Result<Vec2> {
        self.check(f)?;
        if t >= grid.n_triangles() {
            return Err(invalid(format!("triangle {t} out of range")));
        }
        let l = grid.geometry(t).barycentric(x);
        if l.iter().any(|&li| !(-1e-12..=1.0 + 1e-12).contains(&li)) {
            return Err(invalid(format!("point {x:?} is outside triangle {t}")));
        }
        Ok(match self.kind {
            SpaceKind::CrVector | SpaceKind::Dg1Vector => self.velocity_at(grid, f, t, l),
            SpaceKind::P0Scalar => [f.coeffs[t], 0.0],
            SpaceKind::P0Vector => [f.coeffs[2 * t], f.coeffs[2 * t + 1]],
            SpaceKind::P0BoundaryVector => {
                return Err(invalid("boundary control functions live on edges, not triangles"))
            }
        })
    }

    /// Cell means of a velocity function as a P0 vector coefficient array.
    pub fn cell_means(&self, grid: &Grid, f: &FeFunction) -> Vec<f64> {
        let mut out = vec![0.0; 2 * grid.n_triangles()];
        for t in 0..grid.n_triangles() {
            let local = self.local_coeffs(grid, t);
            for c in 0..2 {
                // both CR and DG1 bases have local mean 1/3
                out[2 * t + c] = (0..3).map(|i| f.coeffs[local[i][c]]).sum::<f64>() / 3.0;
            }
        }
        out
    }

    /// Boundary-edge means of the trace of a velocity function, laid out
    /// like the boundary control space.
    pub fn boundary_means(&self, grid: &Grid, f: &FeFunction) -> Vec<f64> {
        let edges: Vec<usize> = grid.topo.boundary_edge_ids().collect();
        let mut out = vec![0.0; 2 * edges.len()];
        for (k, &e) in edges.iter().enumerate() {
            let (t, _) = grid.topo.triangles_of_edge[e];
            let i = grid.topo.local_index[e].0 as usize;
            let local = self.local_coeffs(grid, t);
            for c in 0..2 {
                out[2 * k + c] = match self.kind {
                    // psi_i is 1 on edge i and the other two have zero edge mean
                    SpaceKind::CrVector => f.coeffs[local[i][c]],
                    _ => 0.5 * (f.coeffs[local[(i + 1) % 3][c]] + f.coeffs[local[(i + 2) % 3][c]]),
                };
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    pub kind: SpaceKind,
    pub coeffs: Vec<f64>,
}

pub fn build_space(grid: &Grid, kind: SpaceKind, constraints: Constraints) -> Result<FeSpace> {
    if constraints.dirichlet && kind != SpaceKind::CrVector {
        return Err(invalid(format!(
            "{kind:?} does not support strong Dirichlet constraints"
        )));
    }
    let ne = grid.n_edges();
    let nt = grid.n_triangles();
    let boundary_edges: Vec<usize> = grid.topo.boundary_edge_ids().collect();
    let mut boundary_slot = vec![None; ne];
    for (k, &e) in boundary_edges.iter().enumerate() {
        boundary_slot[e] = Some(k);
    }
    let n_coeffs = match kind {
        SpaceKind::CrVector => 2 * ne,
        SpaceKind::Dg1Vector => 6 * nt,
        SpaceKind::P0Scalar => nt,
        SpaceKind::P0Vector => 2 * nt,
        SpaceKind::P0BoundaryVector => 2 * boundary_edges.len(),
    };
    let mut free = vec![None; n_coeffs];
    let mut dof_count = 0;
    for (i, slot) in free.iter_mut().enumerate() {
        let fixed = constraints.dirichlet && grid.topo.is_boundary(i / 2);
        if !fixed {
            *slot = Some(dof_count);
            dof_count += 1;
        }
    }
    Ok(FeSpace {
        kind,
        constraints,
        n_coeffs,
        free,
        dof_count,
        boundary_edges,
        boundary_slot,
    })
}

pub const PROJECTION_ORDER: usize = 10;

/// Quadrature mean of samples; the weights are a convex combination, so the
/// result is kept inside the sample range to absorb rounding.
fn convex_mean(samples: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut acc, mut wsum) = (0.0, 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (w, v) in samples {
        acc += w * v;
        wsum += w;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (acc / wsum).clamp(lo, hi)
}

/// Q-orthogonal projection of a scalar field onto cellwise constants.
pub fn project_p0(grid: &Grid, g: impl Fn(Vec2) -> f64) -> FeFunction {
    let rule = triangle_rule(PROJECTION_ORDER).expect("static order");
    let coeffs = (0..grid.n_triangles())
        .map(|t| {
            let geo = grid.geometry(t);
            convex_mean(
                rule.points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, &w)| (w, g(geo.point(*l)))),
            )
        })
        .collect();
    FeFunction {
        kind: SpaceKind::P0Scalar,
        coeffs,
    }
}

/// Cell averages of a vector field, as a P0 vector function.
pub fn project_p0_vector(grid: &Grid, g: impl Fn(Vec2) -> Vec2) -> FeFunction {
    let rule = triangle_rule(PROJECTION_ORDER).expect("static order");
    let mut coeffs = vec![0.0; 2 * grid.n_triangles()];
    for t in 0..grid.n_triangles() {
        let geo = grid.geometry(t);
        let vals: Vec<Vec2> = rule.points.iter().map(|l| g(geo.point(*l))).collect();
        for c in 0..2 {
            coeffs[2 * t + c] = convex_mean(rule.weights.iter().zip(&vals).map(|(&w, v)| (w, v[c])));
        }
    }
    FeFunction {
        kind: SpaceKind::P0Vector,
        coeffs,
    }
}

/// Boundary-edge averages of a vector field.
pub fn project_boundary_p0(grid: &Grid, g: impl Fn(Vec2) -> Vec2) -> FeFunction {
    let rule = edge_rule(PROJECTION_ORDER).expect("static order");
    let edges: Vec<usize> = grid.topo.boundary_edge_ids().collect();
    let mut coeffs = vec![0.0; 2 * edges.len()];
    for (k, &e) in edges.iter().enumerate() {
        let (a, b) = grid.edge_points(e);
        let vals: Vec<Vec2> = rule.points.iter().map(|&s| g(crate::geometry::lerp(a, b, s))).collect();
        for c in 0..2 {
            coeffs[2 * k + c] = convex_mean(rule.weights.iter().zip(&vals).map(|(&w, v)| (w, v[c])));
        }
    }
    FeFunction {
        kind: SpaceKind::P0BoundaryVector,
        coeffs,
    }
}

/// Componentwise box `[lower, upper]`; infinite entries are allowed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec2,
    pub upper: Vec2,
}

impl Bounds {
    pub fn new(lower: Vec2, upper: Vec2) -> Result<Self> {
        for c in 0..2 {
            if lower[c].is_nan() || upper[c].is_nan() || lower[c] >= upper[c] {
                return Err(invalid(format!(
                    "bounds need lower < upper, got [{}, {}]",
                    lower[c], upper[c]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn scalar(lower: f64, upper: f64) -> Result<Self> {
        Self::new([lower; 2], [upper; 2])
    }

    pub fn unbounded() -> Self {
        Self {
            lower: [f64::NEG_INFINITY; 2],
            upper: [f64::INFINITY; 2],
        }
    }

    /// Clamp of one component (`c` selects the bound pair).
    pub fn clamp_component(&self, v: f64, c: usize) -> f64 {
        v.max(self.lower[c]).min(self.upper[c])
    }

    /// Clamp of an interleaved coefficient array.
    pub fn clamp_interleaved(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, &x)| self.clamp_component(x, i % 2))
            .collect()
    }

    pub fn contains_interleaved(&self, v: &[f64]) -> bool {
        v.iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lower[i % 2] && x <= self.upper[i % 2])
    }
}

/// `min{y_b, max{y_a, v}}` after checking `y_a < y_b`.
pub fn clamp(v: f64, y_a: f64, y_b: f64) -> Result<f64> {
    if y_a.is_nan() || y_b.is_nan() || y_a >= y_b {
        return Err(invalid(format!("clamp needs y_a < y_b, got [{y_a}, {y_b}]")));
    }
    Ok(v.max(y_a).min(y_b))
}
