//! Bilinear forms, mass and coupling matrices, and load vectors.
//!
//! All matrices act on the full coefficient layouts of [`crate::spaces`];
//! constrained coefficients are eliminated later by the system builder.
//! Jumps on an edge use `T+`, `T-` and `n+` from [`crate::mesh::EdgeTopology`]:
//! `[v] = (v+ - v-) n+` with `v- = 0` on boundary edges, and means are
//! `{w} = (w+ + w-) / 2` with `{w} = w+` on boundary edges.

use crate::error::{invalid, Result};
use crate::geometry::{lerp, TriangleGeometry};
use crate::mesh::Grid;
use crate::quadrature::{edge_rule, triangle_rule, EdgeRule};
use crate::spaces::{FeSpace, SpaceKind};
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Cr,
    Dg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Distributed,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeSet {
    All,
    Interior,
}

impl EdgeSet {
    /// Edges carrying the DG penalty and consistency terms.
    pub fn for_problem(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Distributed => EdgeSet::All,
            ProblemKind::Neumann => EdgeSet::Interior,
        }
    }

    fn contains(self, grid: &Grid, e: usize) -> bool {
        self == EdgeSet::All || !grid.topo.is_boundary(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    /// Interior penalty parameter (DG only).
    pub sigma: f64,
    pub load_order: usize,
    pub error_order: usize,
    pub solver_tol: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl MethodConfig {
    pub fn cr() -> Self {
        Self {
            method: Method::Cr,
            sigma: 10.0,
            load_order: 6,
            error_order: 6,
            solver_tol: 1e-10,
            kkt_tol: 1e-9,
            max_iter: 50,
        }
    }

    pub fn dg(sigma: f64) -> Self {
        Self {
            method: Method::Dg,
            sigma,
            ..Self::cr()
        }
    }

    pub fn velocity_kind(&self) -> SpaceKind {
        match self.method {
            Method::Cr => SpaceKind::CrVector,
            Method::Dg => SpaceKind::Dg1Vector,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method == Method::Dg && !(self.sigma > 0.0) {
            return Err(invalid(format!("penalty sigma must be positive, got {}", self.sigma)));
        }
        if !(self.solver_tol > 0.0 && self.kkt_tol > 0.0) || self.max_iter == 0 {
            return Err(invalid("tolerances must be positive and max_iter >= 1"));
        }
        Ok(())
    }
}

fn require(space: &FeSpace, kind: SpaceKind, what: &str) -> Result<()> {
    if space.kind != kind {
        return Err(invalid(format!("{what} needs a {kind:?} space, got {:?}", space.kind)));
    }
    Ok(())
}

fn require_velocity(space: &FeSpace) -> Result<()> {
    if !space.kind.is_velocity() {
        return Err(invalid(format!("expected a velocity space, got {:?}", space.kind)));
    }
    Ok(())
}

fn require_pressure(grid: &Grid, space: &FeSpace) -> Result<()> {
    require(space, SpaceKind::P0Scalar, "pressure")?;
    if space.n_coeffs() != grid.n_triangles() {
        return Err(invalid("pressure space was built on another mesh"));
    }
    Ok(())
}

fn require_mesh(grid: &Grid, space: &FeSpace) -> Result<()> {
    let expect = match space.kind {
        SpaceKind::CrVector => 2 * grid.n_edges(),
        SpaceKind::Dg1Vector => 6 * grid.n_triangles(),
        SpaceKind::P0Scalar => grid.n_triangles(),
        SpaceKind::P0Vector => 2 * grid.n_triangles(),
        SpaceKind::P0BoundaryVector => 2 * grid.topo.boundary_edge_ids().count(),
    };
    if space.n_coeffs() != expect {
        return Err(invalid("space was built on another mesh"));
    }
    Ok(())
}

/// Local CR stiffness `4 |T| grad(l_i) . grad(l_j)` (one component).
pub fn cr_local_stiffness(g: &TriangleGeometry) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let d = g.grad_bary[i][0] * g.grad_bary[j][0] + g.grad_bary[i][1] * g.grad_bary[j][1];
            k[i][j] = 4.0 * g.area * d;
        }
    }
    k
}

/// Local P1 stiffness `|T| grad(l_i) . grad(l_j)` (one component).
pub fn p1_local_stiffness(g: &TriangleGeometry) -> [[f64; 3]; 3] {
    cr_local_stiffness(g).map(|r| r.map(|v| 0.25 * v))
}

/// Local mass (one component). CR basis functions are L2-orthogonal.
pub fn local_mass(kind: SpaceKind, g: &TriangleGeometry) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = match kind {
                SpaceKind::CrVector => {
                    if i == j {
                        g.area / 3.0
                    } else {
                        0.0
                    }
                }
                _ => g.area / 12.0 * if i == j { 2.0 } else { 1.0 },
            };
        }
    }
    m
}

fn scatter_blockdiag(b: &mut TripletBuilder, local: &[[usize; 2]; 3], k: &[[f64; 3]; 3]) {
    for i in 0..3 {
        for j in 0..3 {
            for c in 0..2 {
                b.add(local[i][c], local[j][c], k[i][j]);
            }
        }
    }
}

/// Broken gradient stiffness `sum_T int_T grad v : grad z` for CR or DG1.
pub fn assemble_broken_stiffness(grid: &Grid, space: &FeSpace) -> Result<SparseMatrix> {
    require_velocity(space)?;
    require_mesh(grid, space)?;
    let n = space.n_coeffs();
    let mut b = TripletBuilder::with_capacity(n, n, 18 * grid.n_triangles());
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        let k = match space.kind {
            SpaceKind::CrVector => cr_local_stiffness(&g),
            _ => p1_local_stiffness(&g),
        };
        scatter_blockdiag(&mut b, &space.local_coeffs(grid, t), &k);
    }
    Ok(b.build())
}

pub fn assemble_diffusion_cr(grid: &Grid, space: &FeSpace) -> Result<SparseMatrix> {
    require(space, SpaceKind::CrVector, "CR diffusion")?;
    assemble_broken_stiffness(grid, space)
}

/// `B[q, z] = -sum_T int_T q div z` for CR velocities and P0 pressures.
pub fn assemble_divergence_cr(grid: &Grid, vel: &FeSpace, pres: &FeSpace) -> Result<SparseMatrix> {
    require(vel, SpaceKind::CrVector, "CR divergence")?;
    require_mesh(grid, vel)?;
    require_pressure(grid, pres)?;
    let mut b = TripletBuilder::with_capacity(pres.n_coeffs(), vel.n_coeffs(), 6 * grid.n_triangles());
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        let local = vel.local_coeffs(grid, t);
        for i in 0..3 {
            for c in 0..2 {
                // grad psi_i = -2 grad l_i
                b.add(t, local[i][c], 2.0 * g.area * g.grad_bary[i][c]);
            }
        }
    }
    Ok(b.build())
}

/// Trace of one DG nodal basis function on an edge.
struct Trace {
    /// Coefficient index of the x-component.
    base: usize,
    /// `+1` on `T+`, `-1` on `T-`.
    side: f64,
    /// Constant `grad(l_i) . n+`.
    grad_n: f64,
    values: Vec<f64>,
}

fn edge_traces(grid: &Grid, e: usize, rule: &EdgeRule) -> Vec<Trace> {
    let (tp, tm) = grid.topo.triangles_of_edge[e];
    let n = grid.topo.normal[e];
    let (a, b) = grid.edge_points(e);
    let pts: Vec<Vec2> = rule.points.iter().map(|&s| lerp(a, b, s)).collect();
    let mut out = Vec::with_capacity(6);
    for (t, side) in std::iter::once((tp, 1.0)).chain(tm.map(|t| (t, -1.0))) {
        let g = grid.geometry(t);
        let bary: Vec<[f64; 3]> = pts.iter().map(|&x| g.barycentric(x)).collect();
        for i in 0..3 {
            out.push(Trace {
                base: 6 * t + 2 * i,
                side,
                grad_n: g.grad_bary[i][0] * n[0] + g.grad_bary[i][1] * n[1],
                values: bary.iter().map(|l| l[i]).collect(),
            });
        }
    }
    out
}

/// Consistency part `A0` and jump Gram matrix `J` of the SIPG form, so that
/// the diffusion matrix is `A0 + sigma J`.
pub fn assemble_dg_parts(grid: &Grid, space: &FeSpace, edges: EdgeSet) -> Result<(SparseMatrix, SparseMatrix)> {
    require(space, SpaceKind::Dg1Vector, "DG diffusion")?;
    require_mesh(grid, space)?;
    let n = space.n_coeffs();
    let rule = edge_rule(2)?;
    let mut a0 = TripletBuilder::with_capacity(n, n, 18 * grid.n_triangles() + 72 * grid.n_edges());
    for t in 0..grid.n_triangles() {
        scatter_blockdiag(
            &mut a0,
            &space.local_coeffs(grid, t),
            &p1_local_stiffness(&grid.geometry(t)),
        );
    }
    let mut jump = TripletBuilder::with_capacity(n, n, 72 * grid.n_edges());
    for e in 0..grid.n_edges() {
        if !edges.contains(grid, e) {
            continue;
        }
        let h = grid.topo.h_e[e];
        let mean_w = if grid.topo.is_boundary(e) { 1.0 } else { 0.5 };
        let tr = edge_traces(grid, e, &rule);
        let int_jump: Vec<f64> = tr
            .iter()
            .map(|k| k.side * h * rule.weights.iter().zip(&k.values).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        for (ik, k) in tr.iter().enumerate() {
            for (il, l) in tr.iter().enumerate() {
                // -int {grad v} . [z] - int {grad z} . [v], with v = trial l, z = test k
                let cons = -(mean_w * l.grad_n * int_jump[ik] + mean_w * k.grad_n * int_jump[il]);
                let gram: f64 = k.side
                    * l.side
                    * rule
                        .weights
                        .iter()
                        .zip(k.values.iter().zip(&l.values))
                        .map(|(w, (a, b))| w * a * b)
                        .sum::<f64>();
                for c in 0..2 {
                    a0.add(k.base + c, l.base + c, cons);
                    // (1/h) int [v][z] = (1/h) * h * sum w ...
                    jump.add(k.base + c, l.base + c, gram);
                }
            }
        }
    }
    Ok((a0.build(), jump.build()))
}

pub fn assemble_diffusion_dg(grid: &Grid, space: &FeSpace, sigma: f64, edges: EdgeSet) -> Result<SparseMatrix> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("penalty sigma must be positive, got {sigma}")));
    }
    let (a0, j) = assemble_dg_parts(grid, space, edges)?;
    Ok(a0.add(&j.scaled(sigma)))
}

/// DG divergence `-sum_T int_T q div z + sum_e int_e {q} [z]`.
pub fn assemble_divergence_dg(grid: &Grid, vel: &FeSpace, pres: &FeSpace, edges: EdgeSet) -> Result<SparseMatrix> {
    require(vel, SpaceKind::Dg1Vector, "DG divergence")?;
    require_mesh(grid, vel)?;
    require_pressure(grid, pres)?;
    let rule = edge_rule(2)?;
    let mut b = TripletBuilder::with_capacity(
        pres.n_coeffs(),
        vel.n_coeffs(),
        6 * grid.n_triangles() + 24 * grid.n_edges(),
    );
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        for i in 0..3 {
            for c in 0..2 {
                b.add(t, 6 * t + 2 * i + c, -g.area * g.grad_bary[i][c]);
            }
        }
    }
    for e in 0..grid.n_edges() {
        if !edges.contains(grid, e) {
            continue;
        }
        let (tp, tm) = grid.topo.triangles_of_edge[e];
        let n = grid.topo.normal[e];
        let h = grid.topo.h_e[e];
        let means: Vec<(usize, f64)> = match tm {
            Some(tm) => vec![(tp, 0.5), (tm, 0.5)],
            None => vec![(tp, 1.0)],
        };
        for k in edge_traces(grid, e, &rule) {
            let int_jump = k.side * h * rule.weights.iter().zip(&k.values).map(|(w, v)| w * v).sum::<f64>();
            for &(t, w) in &means {
                for c in 0..2 {
                    b.add(t, k.base + c, w * n[c] * int_jump);
                }
            }
        }
    }
    Ok(b.build())
}

/// The same divergence form after elementwise integration by parts:
/// `sum_T int_T z . grad q - sum_e int_e [[q]] . {z}`, with `[[q]] = (q+ - q-) n+`.
/// Pressures are P0, so only the edge term survives. The edge set is the
/// complement of the primal one: interior edges for the distributed form,
/// all edges for the Neumann form.
pub fn assemble_divergence_dg_dual(
    grid: &Grid,
    vel: &FeSpace,
    pres: &FeSpace,
    primal_edges: EdgeSet,
) -> Result<SparseMatrix> {
    require(vel, SpaceKind::Dg1Vector, "DG divergence")?;
    require_mesh(grid, vel)?;
    require_pressure(grid, pres)?;
    let dual_edges = match primal_edges {
        EdgeSet::All => EdgeSet::Interior,
        EdgeSet::Interior => EdgeSet::All,
    };
    let rule = edge_rule(2)?;
    let mut b = TripletBuilder::with_capacity(pres.n_coeffs(), vel.n_coeffs(), 24 * grid.n_edges());
    for e in 0..grid.n_edges() {
        if !dual_edges.contains(grid, e) {
            continue;
        }
        let (tp, tm) = grid.topo.triangles_of_edge[e];
        let n = grid.topo.normal[e];
        let h = grid.topo.h_e[e];
        let mean_w = if tm.is_some() { 0.5 } else { 1.0 };
        let jumps: Vec<(usize, f64)> = std::iter::once((tp, 1.0)).chain(tm.map(|t| (t, -1.0))).collect();
        for k in edge_traces(grid, e, &rule) {
            let int_val = h * rule.weights.iter().zip(&k.values).map(|(w, v)| w * v).sum::<f64>();
            for &(t, s) in &jumps {
                for c in 0..2 {
                    b.add(t, k.base + c, -s * n[c] * mean_w * int_val);
                }
            }
        }
    }
    Ok(b.build())
}

pub fn assemble_velocity_mass(grid: &Grid, space: &FeSpace) -> Result<SparseMatrix> {
    require_velocity(space)?;
    require_mesh(grid, space)?;
    let n = space.n_coeffs();
    let mut b = TripletBuilder::with_capacity(n, n, 18 * grid.n_triangles());
    for t in 0..grid.n_triangles() {
        let m = local_mass(space.kind, &grid.geometry(t));
        scatter_blockdiag(&mut b, &space.local_coeffs(grid, t), &m);
    }
    Ok(b.build())
}

/// `C[z, y] = <y, E_h z>_Q`: cellwise for a P0 vector control, boundary
/// edgewise for a P0 boundary control.
pub fn assemble_control_coupling(grid: &Grid, vel: &FeSpace, control: &FeSpace) -> Result<SparseMatrix> {
    require_velocity(vel)?;
    require_mesh(grid, vel)?;
    require_mesh(grid, control)?;
    let mut b = TripletBuilder::with_capacity(vel.n_coeffs(), control.n_coeffs(), 6 * grid.n_triangles());
    match control.kind {
        SpaceKind::P0Vector => {
            for t in 0..grid.n_triangles() {
                let area = grid.topo.area[t];
                let local = vel.local_coeffs(grid, t);
                for loc in &local {
                    for c in 0..2 {
                        b.add(loc[c], 2 * t + c, area / 3.0);
                    }
                }
            }
        }
        SpaceKind::P0BoundaryVector => {
            for (k, &e) in control.boundary_edges().iter().enumerate() {
                let (t, _) = grid.topo.triangles_of_edge[e];
                let i = grid.topo.local_index[e].0 as usize;
                let h = grid.topo.h_e[e];
                let local = vel.local_coeffs(grid, t);
                for c in 0..2 {
                    match vel.kind {
                        SpaceKind::CrVector => b.add(local[i][c], 2 * k + c, h),
                        _ => {
                            b.add(local[(i + 1) % 3][c], 2 * k + c, 0.5 * h);
                            b.add(local[(i + 2) % 3][c], 2 * k + c, 0.5 * h);
                        }
                    }
                }
            }
        }
        other => return Err(invalid(format!("{other:?} is not a control space"))),
    }
    Ok(b.build())
}

/// `F[z] = int_Omega g . z` by quadrature of the given order.
pub fn assemble_load(grid: &Grid, space: &FeSpace, g: impl Fn(Vec2) -> Vec2, order: usize) -> Result<Vec<f64>> {
    require_velocity(space)?;
    require_mesh(grid, space)?;
    let rule = triangle_rule(order)?;
    let mut f = vec![0.0; space.n_coeffs()];
    for t in 0..grid.n_triangles() {
        let geo = grid.geometry(t);
        let local = space.local_coeffs(grid, t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let v = g(geo.point(*l));
            let jw = 2.0 * geo.area * w;
            for i in 0..3 {
                let phi = match space.kind {
                    SpaceKind::CrVector => 1.0 - 2.0 * l[i],
                    _ => l[i],
                };
                f[local[i][0]] += jw * phi * v[0];
                f[local[i][1]] += jw * phi * v[1];
            }
        }
    }
    Ok(f)
}

/// Cell areas, i.e. the pressure mean functional.
pub fn pressure_mean_vector(grid: &Grid) -> Vec<f64> {
    grid.topo.area.clone()
}

/// `int_Omega z_c` for each component `c` as coefficient functionals.
pub fn velocity_mean_vectors(grid: &Grid, space: &FeSpace) -> Result<[Vec<f64>; 2]> {
    require_velocity(space)?;
    let mut out = [vec![0.0; space.n_coeffs()], vec![0.0; space.n_coeffs()]];
    for t in 0..grid.n_triangles() {
        let area = grid.topo.area[t];
        for loc in &space.local_coeffs(grid, t) {
            for c in 0..2 {
                out[c][loc[c]] += area / 3.0;
            }
        }
    }
    Ok(out)
}
