//! Discrete optimality system and its primal-dual active set solution.
//!
//! The adjoint pressure is carried internally as `s = -r`, which makes the
//! monolithic state/adjoint matrix symmetric:
//!
//! ```text
//! [ -M   0   A     B^T ] [u]   [ -G          ]
//! [  0   0   B     0   ] [p] = [  0          ]
//! [  A   B^T N/lam 0   ] [phi] [ F + C_A y_A ]
//! [  B   0   0     0   ] [s]   [  0          ]
//! ```
//!
//! with `N = C_I D^{-1} C_I^T` built from the inactive control components,
//! plus the mean-value multipliers of each model problem. For Neumann control
//! the integral condition on the control contributes a shift `kappa` per
//! component, so that `y = clamp(-(Pi_h phi + kappa) / lam)`.

use std::sync::Arc;

use crate::assembly::{
    assemble_control_coupling, assemble_diffusion_cr, assemble_diffusion_dg, assemble_divergence_cr,
    assemble_divergence_dg, assemble_load, assemble_velocity_mass, pressure_mean_vector, velocity_mean_vectors,
    EdgeSet, Method, MethodConfig, ProblemKind,
};
use crate::error::{invalid, Error, Result};
use crate::mesh::Grid;
use crate::quadrature::triangle_rule;
use crate::saddle::{BlockLayout, BlockSystemBuilder};
use crate::spaces::{build_space, project_boundary_p0, Bounds, Constraints, FeFunction, FeSpace, SpaceKind};
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::Vec2;

/// A vector field on the plane.
pub type Field = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;

pub fn field(f: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static) -> Field {
    Arc::new(f)
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub f: Field,
    pub u_d: Field,
    /// Velocity trace for the distributed problem; `None` means zero.
    pub dirichlet: Option<Field>,
    pub lambda: f64,
    pub bounds: Bounds,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("kind", &self.kind)
            .field("dirichlet", &self.dirichlet.is_some())
            .field("lambda", &self.lambda)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, f: Field, u_d: Field, lambda: f64, bounds: Bounds) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Bounds::new(bounds.lower, bounds.upper)?;
        Ok(Self {
            kind,
            f,
            u_d,
            dirichlet: None,
            lambda,
            bounds,
        })
    }

    pub fn with_dirichlet(mut self, g: Field) -> Result<Self> {
        if self.kind != ProblemKind::Distributed {
            return Err(invalid("Dirichlet data only applies to the distributed problem"));
        }
        self.dirichlet = Some(g);
        Ok(self)
    }

    /// For Neumann control: `y_a <= -(1/|Gamma|) int f <= y_b` per component,
    /// with `int f` and `|Gamma|` evaluated on `grid`.
    pub fn check_compatibility(&self, grid: &Grid, order: usize) -> Result<()> {
        if self.kind != ProblemKind::Neumann {
            return Ok(());
        }
        let fi = integrate_field(grid, &self.f, order)?;
        let gamma: f64 = grid.topo.boundary_edge_ids().map(|e| grid.topo.h_e[e]).sum();
        for c in 0..2 {
            let m = -fi[c] / gamma;
            if m < self.bounds.lower[c] || m > self.bounds.upper[c] {
                return Err(invalid(format!(
                    "Neumann data incompatible: -(1/|Gamma|) int f_{c} = {m} outside [{}, {}]",
                    self.bounds.lower[c], self.bounds.upper[c]
                )));
            }
        }
        Ok(())
    }
}

pub fn integrate_field(grid: &Grid, f: &Field, order: usize) -> Result<Vec2> {
    let rule = triangle_rule(order)?;
    let mut acc = [0.0; 2];
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let v = f(g.point(*l));
            acc[0] += 2.0 * g.area * w * v[0];
            acc[1] += 2.0 * g.area * w * v[1];
        }
    }
    Ok(acc)
}

/// Spaces and assembled operators shared by all active-set iterations.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub kind: ProblemKind,
    pub method: Method,
    pub vel: FeSpace,
    pub pres: FeSpace,
    pub control: FeSpace,
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    pub m: SparseMatrix,
    /// Velocity coefficients x control coefficients.
    pub c: SparseMatrix,
    /// Diagonal of the control mass (cell areas or edge lengths, per component).
    pub d: Vec<f64>,
    pub load_f: Vec<f64>,
    pub load_ud: Vec<f64>,
    /// Velocity coefficients with the prescribed values filled in.
    pub dirichlet_values: Vec<f64>,
    pub pressure_mean: Vec<f64>,
    pub velocity_means: [Vec<f64>; 2],
    pub f_integral: Vec2,
}

impl Discretization {
    pub fn new(grid: &Grid, spec: &ProblemSpec, config: &MethodConfig) -> Result<Self> {
        config.validate()?;
        if config.method == Method::Dg && spec.dirichlet.is_some() {
            return Err(invalid(
                "the DG discretization supports homogeneous Dirichlet data only",
            ));
        }
        let dirichlet = config.method == Method::Cr && spec.kind == ProblemKind::Distributed;
        let vel = build_space(
            grid,
            config.velocity_kind(),
            Constraints {
                dirichlet,
                mean_zero: spec.kind == ProblemKind::Neumann,
            },
        )?;
        let pres = build_space(
            grid,
            SpaceKind::P0Scalar,
            Constraints {
                dirichlet: false,
                mean_zero: spec.kind == ProblemKind::Distributed,
            },
        )?;
        let control_kind = match spec.kind {
            ProblemKind::Distributed => SpaceKind::P0Vector,
            ProblemKind::Neumann => SpaceKind::P0BoundaryVector,
        };
        let control = build_space(grid, control_kind, Constraints::default())?;
        let edges = EdgeSet::for_problem(spec.kind);
        let (a, b) = match config.method {
            Method::Cr => (
                assemble_diffusion_cr(grid, &vel)?,
                assemble_divergence_cr(grid, &vel, &pres)?,
            ),
            Method::Dg => (
                assemble_diffusion_dg(grid, &vel, config.sigma, edges)?,
                assemble_divergence_dg(grid, &vel, &pres, edges)?,
            ),
        };
        let m = assemble_velocity_mass(grid, &vel)?;
        let c = assemble_control_coupling(grid, &vel, &control)?;
        let d: Vec<f64> = match spec.kind {
            ProblemKind::Distributed => (0..control.n_coeffs()).map(|i| grid.topo.area[i / 2]).collect(),
            ProblemKind::Neumann => {
                let edges = control.boundary_edges();
                (0..control.n_coeffs()).map(|i| grid.topo.h_e[edges[i / 2]]).collect()
            }
        };
        let load_f = assemble_load(grid, &vel, |x| (spec.f)(x), config.load_order)?;
        let load_ud = assemble_load(grid, &vel, |x| (spec.u_d)(x), config.load_order)?;
        let mut dirichlet_values = vec![0.0; vel.n_coeffs()];
        if let (true, Some(g)) = (dirichlet, &spec.dirichlet) {
            let avg = project_boundary_p0(grid, |x| g(x));
            for (k, e) in grid.topo.boundary_edge_ids().enumerate() {
                dirichlet_values[2 * e] = avg.coeffs[2 * k];
                dirichlet_values[2 * e + 1] = avg.coeffs[2 * k + 1];
            }
        }
        Ok(Self {
            kind: spec.kind,
            method: config.method,
            pressure_mean: pressure_mean_vector(grid),
            velocity_means: velocity_mean_vectors(grid, &vel)?,
            f_integral: integrate_field(grid, &spec.f, config.load_order)?,
            vel,
            pres,
            control,
            a,
            b,
            m,
            c,
            d,
            load_f,
            load_ud,
            dirichlet_values,
        })
    }

    /// Degrees of freedom: free velocity, pressure and control unknowns.
    pub fn ndof(&self) -> usize {
        self.vel.dof_count() + self.pres.dof_count() + self.control.n_coeffs()
    }

    /// `Pi_h E_h v` for a velocity coefficient vector: `D^{-1} C^T v`.
    pub fn project_velocity(&self, v: &[f64]) -> Vec<f64> {
        self.c
            .transpose_mul_vec(v)
            .iter()
            .zip(&self.d)
            .map(|(x, d)| x / d)
            .collect()
    }

    fn free_velocity(&self) -> (Vec<Option<usize>>, usize) {
        let map = (0..self.vel.n_coeffs()).map(|i| self.vel.free_index(i)).collect();
        (map, self.vel.dof_count())
    }
}

fn restrict(m: &SparseMatrix, rows: &[Option<usize>], nr: usize, cols: &[Option<usize>], nc: usize) -> SparseMatrix {
    let mut b = TripletBuilder::with_capacity(nr, nc, m.nnz());
    for (i, j, v) in m.triplets() {
        if let (Some(r), Some(c)) = (rows[i], cols[j]) {
            b.add(r, c, v);
        }
    }
    b.build()
}

fn restrict_vec(v: &[f64], map: &[Option<usize>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &x) in v.iter().enumerate() {
        if let Some(r) = map[i] {
            out[r] += x;
        }
    }
    out
}

fn identity_map(n: usize) -> Vec<Option<usize>> {
    (0..n).map(Some).collect()
}

/// Per control component: `-1` lower active, `1` upper active, `0` inactive.
pub type ActiveSet = Vec<i8>;

/// Solution of one linear KKT solve for a fixed active set.
#[derive(Clone, Debug)]
struct LinearSolve {
    u: Vec<f64>,
    p: Vec<f64>,
    phi: Vec<f64>,
    s: Vec<f64>,
    kappa: Vec2,
    residual: f64,
}

fn solve_for_active_set(
    disc: &Discretization,
    spec: &ProblemSpec,
    active: &ActiveSet,
    tol: f64,
) -> Result<LinearSolve> {
    let lam = spec.lambda;
    let (vmap, nv) = disc.free_velocity();
    let nt = disc.pres.n_coeffs();
    let pmap = identity_map(nt);
    let neumann = disc.kind == ProblemKind::Neumann;

    let n_inactive = [0, 1].map(|c| {
        active
            .iter()
            .enumerate()
            .filter(|&(k, &a)| a == 0 && k % 2 == c)
            .count()
    });
    let mut layout = BlockLayout::default();
    let bu = layout.push("u", nv);
    let bp = layout.push("p", nt);
    let bphi = layout.push("phi", nv);
    let bs = layout.push("s", nt);
    layout.pair(bu, bphi);
    layout.pair(bp, bs);
    let (mut bmp, mut bms, mut bmu, mut bmphi, mut bkappa) = (None, None, None, None, [None, None]);
    if neumann {
        bmu = Some(layout.push("mu_u", 2));
        bmphi = Some(layout.push("mu_phi", 2));
        for c in 0..2 {
            if n_inactive[c] > 0 {
                bkappa[c] = Some(layout.push(if c == 0 { "kappa_x" } else { "kappa_y" }, 1));
            }
        }
    } else {
        bmp = Some(layout.push("mu_p", 1));
        bms = Some(layout.push("mu_s", 1));
    }
    let mut sys = BlockSystemBuilder::new(layout);

    let a = restrict(&disc.a, &vmap, nv, &vmap, nv);
    let m = restrict(&disc.m, &vmap, nv, &vmap, nv);
    let b = restrict(&disc.b, &pmap, nt, &vmap, nv);
    sys.add_block(bu, bu, &m, -1.0);
    sys.add_symmetric_pair(bu, bphi, &a, 1.0);
    sys.add_symmetric_pair(bs, bu, &b, 1.0);
    sys.add_symmetric_pair(bp, bphi, &b, 1.0);

    // N / lambda over inactive control components
    let ct = disc.c.transpose();
    let mut nb = TripletBuilder::new(nv, nv);
    for (k, &state) in active.iter().enumerate() {
        if state != 0 {
            continue;
        }
        let col: Vec<(usize, f64)> = ct.row(k).filter_map(|(i, v)| vmap[i].map(|r| (r, v))).collect();
        for &(i, vi) in &col {
            for &(j, vj) in &col {
                nb.add(i, j, vi * vj / (disc.d[k] * lam));
            }
        }
    }
    sys.add_block(bphi, bphi, &nb.build(), 1.0);

    let mean_p = &disc.pressure_mean;
    if let (Some(bmp), Some(bms)) = (bmp, bms) {
        sys.add_symmetric_vector(bp, bmp, mean_p, 1.0);
        sys.add_symmetric_vector(bs, bms, mean_p, 1.0);
    }
    if let (Some(bmu), Some(bmphi)) = (bmu, bmphi) {
        for c in 0..2 {
            let mv = restrict_vec(&disc.velocity_means[c], &vmap, nv);
            let (ru, rphi) = (sys.layout().range(bmu).start + c, sys.layout().range(bmphi).start + c);
            let (u0, phi0) = (sys.layout().range(bu).start, sys.layout().range(bphi).start);
            for (i, &v) in mv.iter().enumerate() {
                if v != 0.0 {
                    sys.add_entry(ru, u0 + i, v);
                    sys.add_entry(u0 + i, ru, v);
                    sys.add_entry(rphi, phi0 + i, v);
                    sys.add_entry(phi0 + i, rphi, v);
                }
            }
        }
    }

    // control values on the active set
    let mut y_active = vec![0.0; disc.control.n_coeffs()];
    for (k, &state) in active.iter().enumerate() {
        y_active[k] = match state {
            -1 => spec.bounds.lower[k % 2],
            1 => spec.bounds.upper[k % 2],
            _ => 0.0,
        };
    }
    let cy = disc.c.mul_vec(&y_active);

    // right-hand sides, with the prescribed velocity moved over
    let g = &disc.dirichlet_values;
    let mg = disc.m.mul_vec(g);
    let ag = disc.a.mul_vec(g);
    let bg = disc.b.mul_vec(g);
    {
        let rhs_c = restrict_vec(
            &disc.load_ud.iter().zip(&mg).map(|(x, y)| -x + y).collect::<Vec<_>>(),
            &vmap,
            nv,
        );
        sys.rhs_block_mut(bu).copy_from_slice(&rhs_c);
        let rhs_a: Vec<f64> = disc
            .load_f
            .iter()
            .zip(&cy)
            .zip(&ag)
            .map(|((f, c), a)| f + c - a)
            .collect();
        sys.rhs_block_mut(bphi)
            .copy_from_slice(&restrict_vec(&rhs_a, &vmap, nv));
        let rb: Vec<f64> = bg.iter().map(|x| -x).collect();
        sys.rhs_block_mut(bs).copy_from_slice(&rb);
    }
    if let Some(bmu) = bmu {
        for c in 0..2 {
            let gm: f64 = disc.velocity_means[c].iter().zip(g).map(|(a, b)| a * b).sum();
            sys.rhs_block_mut(bmu)[c] = -gm;
        }
    }
    for c in 0..2 {
        if let Some(bk) = bkappa[c] {
            let kr = sys.layout().range(bk).start;
            let phi0 = sys.layout().range(bphi).start;
            let mut col = vec![0.0; nv];
            let mut gamma_i = 0.0;
            let mut active_integral = 0.0;
            for (k, &state) in active.iter().enumerate() {
                if k % 2 != c {
                    continue;
                }
                if state == 0 {
                    gamma_i += disc.d[k];
                    for (i, v) in ct.row(k) {
                        if let Some(r) = vmap[i] {
                            col[r] += v;
                        }
                    }
                } else {
                    active_integral += disc.d[k] * y_active[k];
                }
            }
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    sys.add_entry(phi0 + i, kr, v / lam);
                    sys.add_entry(kr, phi0 + i, v / lam);
                }
            }
            sys.add_entry(kr, kr, gamma_i / lam);
            sys.rhs_block_mut(bk)[0] = disc.f_integral[c] + active_integral;
        }
    }

    let system = sys.build();
    let x = system.solve(tol)?;
    let residual = system.relative_residual(&x);
    let lay = &system.layout;
    let expand = |block: usize, fixed: &[f64]| -> Vec<f64> {
        let r = lay.range(block);
        let mut full = fixed.to_vec();
        for (i, slot) in vmap.iter().enumerate() {
            if let Some(k) = slot {
                full[i] = x[r.start + k];
            }
        }
        full
    };
    let u = expand(bu, g);
    let phi = expand(bphi, &vec![0.0; g.len()]);
    let p = x[lay.range(bp)].to_vec();
    let s = x[lay.range(bs)].to_vec();
    let mut kappa = [0.0; 2];
    for c in 0..2 {
        if let Some(bk) = bkappa[c] {
            kappa[c] = x[lay.range(bk).start];
        }
    }
    Ok(LinearSolve {
        u,
        p,
        phi,
        s,
        kappa,
        residual,
    })
}

/// Solves the Stokes problem `A u + B^T p = load`, `B u = 0` with the
/// problem's mean constraints; `with_dirichlet` applies the prescribed trace.
pub fn solve_stokes(
    disc: &Discretization,
    load: &[f64],
    with_dirichlet: bool,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (vmap, nv) = disc.free_velocity();
    let nt = disc.pres.n_coeffs();
    let pmap = identity_map(nt);
    let mut layout = BlockLayout::default();
    let bu = layout.push("u", nv);
    let bp = layout.push("p", nt);
    let bm = layout.push("mean", if disc.kind == ProblemKind::Neumann { 2 } else { 1 });
    let mut sys = BlockSystemBuilder::new(layout);
    sys.add_block(bu, bu, &restrict(&disc.a, &vmap, nv, &vmap, nv), 1.0);
    sys.add_symmetric_pair(bp, bu, &restrict(&disc.b, &pmap, nt, &vmap, nv), 1.0);
    let zero = vec![0.0; disc.vel.n_coeffs()];
    let g = if with_dirichlet { &disc.dirichlet_values } else { &zero };
    let ag = disc.a.mul_vec(g);
    let bg = disc.b.mul_vec(g);
    let rhs: Vec<f64> = load.iter().zip(&ag).map(|(l, a)| l - a).collect();
    sys.rhs_block_mut(bu).copy_from_slice(&restrict_vec(&rhs, &vmap, nv));
    sys.rhs_block_mut(bp)
        .copy_from_slice(&bg.iter().map(|x| -x).collect::<Vec<_>>());
    let m0 = sys.layout().range(bm).start;
    match disc.kind {
        ProblemKind::Distributed => sys.add_symmetric_vector(bp, bm, &disc.pressure_mean, 1.0),
        ProblemKind::Neumann => {
            let u0 = sys.layout().range(bu).start;
            for c in 0..2 {
                let mv = restrict_vec(&disc.velocity_means[c], &vmap, nv);
                for (i, &v) in mv.iter().enumerate() {
                    if v != 0.0 {
                        sys.add_entry(m0 + c, u0 + i, v);
                        sys.add_entry(u0 + i, m0 + c, v);
                    }
                }
                sys.rhs_block_mut(bm)[c] = -disc.velocity_means[c].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    let system = sys.build();
    let x = system.solve(tol)?;
    let mut u = g.clone();
    for (i, slot) in vmap.iter().enumerate() {
        if let Some(k) = slot {
            u[i] = x[*k];
        }
    }
    Ok((u, x[system.layout.range(bp)].to_vec()))
}

/// Record of one active-set iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterateRecord {
    pub lower: usize,
    pub upper: usize,
    pub changed: usize,
    pub kkt_residual: f64,
}

#[derive(Clone, Debug)]
pub struct OptimalitySolution {
    pub u: FeFunction,
    pub p: FeFunction,
    pub phi: FeFunction,
    pub r: FeFunction,
    pub y: FeFunction,
    pub active_lower: Vec<bool>,
    pub active_upper: Vec<bool>,
    /// Shift of the Neumann integral condition (zero for distributed control).
    pub kappa: Vec2,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub linear_residual: f64,
    pub history: Vec<IterateRecord>,
}

/// `y_h = clamp(-Pi_h E_h phi_h / lambda)`, projected onto the integral
/// condition for Neumann control.
pub fn control_update(disc: &Discretization, phi: &FeFunction, spec: &ProblemSpec) -> Result<FeFunction> {
    let v: Vec<f64> = disc
        .project_velocity(&phi.coeffs)
        .iter()
        .map(|x| -x / spec.lambda)
        .collect();
    let coeffs = match spec.kind {
        ProblemKind::Distributed => spec.bounds.clamp_interleaved(&v),
        ProblemKind::Neumann => neumann_admissible_project(&v, &disc.d, disc.f_integral, &spec.bounds)?,
    };
    disc.control.function(coeffs)
}

/// Weighted projection onto `{y_a <= x <= y_b, sum_k d_k x_k + int f = 0}`
/// per component: `x = clamp(y + t)` where `t` solves the monotone
/// piecewise linear equation exactly.
pub fn neumann_admissible_project(y: &[f64], d: &[f64], f_integral: Vec2, bounds: &Bounds) -> Result<Vec<f64>> {
    let t = neumann_shift(y, d, f_integral, bounds)?;
    Ok(y.iter()
        .enumerate()
        .map(|(k, &v)| bounds.clamp_component(v + t[k % 2], k % 2))
        .collect())
}

/// The per-component shift `t` of [`neumann_admissible_project`].
pub fn neumann_shift(y: &[f64], d: &[f64], f_integral: Vec2, bounds: &Bounds) -> Result<Vec2> {
    let mut shift = [0.0; 2];
    for c in 0..2 {
        let idx: Vec<usize> = (0..y.len()).filter(|k| k % 2 == c).collect();
        let (lo, hi) = (bounds.lower[c], bounds.upper[c]);
        let target = -f_integral[c];
        let total: f64 = idx.iter().map(|&k| d[k]).sum();
        let phi = |t: f64| idx.iter().map(|&k| d[k] * (y[k] + t).clamp(lo, hi)).sum::<f64>();
        let mut knots: Vec<f64> = idx
            .iter()
            .flat_map(|&k| [lo - y[k], hi - y[k]])
            .filter(|t| t.is_finite())
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let slope_left = if lo.is_finite() { 0.0 } else { total };
        let slope_right = if hi.is_finite() { 0.0 } else { total };
        let t = if knots.is_empty() {
            (target - idx.iter().map(|&k| d[k] * y[k]).sum::<f64>()) / total
        } else {
            let vals: Vec<f64> = knots.iter().map(|&t| phi(t)).collect();
            let tol = 1e-13 * (1.0 + target.abs() + total);
            if target < vals[0] - tol {
                if slope_left == 0.0 {
                    return Err(invalid(format!("integral condition infeasible for component {c}")));
                }
                knots[0] - (vals[0] - target) / slope_left
            } else if target > vals[vals.len() - 1] + tol {
                if slope_right == 0.0 {
                    return Err(invalid(format!("integral condition infeasible for component {c}")));
                }
                knots[knots.len() - 1] + (target - vals[vals.len() - 1]) / slope_right
            } else {
                let j = vals.partition_point(|&v| v < target);
                if j == 0 {
                    knots[0]
                } else if j == vals.len() {
                    knots[knots.len() - 1]
                } else {
                    let (t0, t1, v0, v1) = (knots[j - 1], knots[j], vals[j - 1], vals[j]);
                    if v1 > v0 {
                        t0 + (target - v0) / (v1 - v0) * (t1 - t0)
                    } else {
                        t0
                    }
                }
            }
        };
        shift[c] = t;
    }
    Ok(shift)
}

/// Smallest value of `<E_h phi + lambda y + kappa, x - y>_Q` over the box
/// vertices per component; nonnegative iff the discrete variational
/// inequality holds. For an infinite bound a unit step towards it is used.
/// The Neumann shift is estimated from the inactive components.
pub fn vi_residual(disc: &Discretization, phi: &FeFunction, y: &FeFunction, spec: &ProblemSpec) -> f64 {
    let pi = disc.project_velocity(&phi.coeffs);
    let mult: Vec<f64> = pi.iter().zip(&y.coeffs).map(|(p, y)| p + spec.lambda * y).collect();
    let mut kappa = [0.0; 2];
    if spec.kind == ProblemKind::Neumann {
        for (c, kc) in kappa.iter_mut().enumerate() {
            let (lo, hi) = (spec.bounds.lower[c], spec.bounds.upper[c]);
            let inner: Vec<f64> = (0..mult.len())
                .filter(|&k| k % 2 == c && y.coeffs[k] > lo && y.coeffs[k] < hi)
                .map(|k| mult[k])
                .collect();
            if !inner.is_empty() {
                *kc = -inner.iter().sum::<f64>() / inner.len() as f64;
            }
        }
    }
    let mut worst = 0.0f64;
    for (k, (&mk, &yk)) in mult.iter().zip(&y.coeffs).enumerate() {
        let c = k % 2;
        let m = disc.d[k] * (mk + kappa[c]);
        let lo = spec.bounds.lower[c];
        let hi = spec.bounds.upper[c];
        let down = if lo.is_finite() { lo - yk } else { -1.0 };
        let up = if hi.is_finite() { hi - yk } else { 1.0 };
        worst = worst.min(m * down).min(m * up);
    }
    worst
}

/// `1/2 |u - u_d|^2 + lambda/2 |y|_Q^2`.
pub fn cost(
    grid: &Grid,
    disc: &Discretization,
    spec: &ProblemSpec,
    u: &FeFunction,
    y: &FeFunction,
    order: usize,
) -> Result<f64> {
    let rule = triangle_rule(order)?;
    let mut track = 0.0;
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let uh = disc.vel.velocity_at(grid, u, t, *l);
            let ud = (spec.u_d)(g.point(*l));
            track += 2.0 * g.area * w * ((uh[0] - ud[0]).powi(2) + (uh[1] - ud[1]).powi(2));
        }
    }
    let reg: f64 = y.coeffs.iter().zip(&disc.d).map(|(y, d)| d * y * y).sum();
    Ok(0.5 * track + 0.5 * spec.lambda * reg)
}

fn classify(w: &[f64], bounds: &Bounds) -> ActiveSet {
    w.iter()
        .enumerate()
        .map(|(k, &v)| {
            let c = k % 2;
            if v < bounds.lower[c] {
                -1
            } else if v > bounds.upper[c] {
                1
            } else {
                0
            }
        })
        .collect()
}

pub fn solve_optimality(grid: &Grid, spec: &ProblemSpec, config: &MethodConfig) -> Result<OptimalitySolution> {
    let disc = Discretization::new(grid, spec, config)?;
    solve_optimality_with(grid, &disc, spec, config)
}

pub fn solve_optimality_with(
    grid: &Grid,
    disc: &Discretization,
    spec: &ProblemSpec,
    config: &MethodConfig,
) -> Result<OptimalitySolution> {
    spec.check_compatibility(grid, config.load_order)?;
    let nc = disc.control.n_coeffs();
    let mut active: ActiveSet = vec![0; nc];
    let mut history = Vec::new();
    let mut last_change = 0;
    for it in 1..=config.max_iter {
        let sol = solve_for_active_set(disc, spec, &active, config.solver_tol)?;
        let pi = disc.project_velocity(&sol.phi);
        let w: Vec<f64> = pi
            .iter()
            .enumerate()
            .map(|(k, p)| -(p + sol.kappa[k % 2]) / spec.lambda)
            .collect();
        // Neumann: the next active set comes from the exact admissible
        // projection, which keeps every component's inactive set nonempty.
        let next = match spec.kind {
            ProblemKind::Distributed => classify(&w, &spec.bounds),
            ProblemKind::Neumann => {
                let v: Vec<f64> = pi.iter().map(|p| -p / spec.lambda).collect();
                let t = neumann_shift(&v, &disc.d, disc.f_integral, &spec.bounds)?;
                let shifted: Vec<f64> = v.iter().enumerate().map(|(k, x)| x + t[k % 2]).collect();
                classify(&shifted, &spec.bounds)
            }
        };
        let y = spec.bounds.clamp_interleaved(&w);
        let phi_fn = disc.vel.function(sol.phi.clone())?;
        let y_fn = disc.control.function(y)?;
        let fixed_point = control_update(disc, &phi_fn, spec)?;
        let fp_err = fixed_point
            .coeffs
            .iter()
            .zip(&y_fn.coeffs)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let integral_err = if spec.kind == ProblemKind::Neumann {
            (0..2)
                .map(|c| {
                    let s: f64 = (0..nc).filter(|k| k % 2 == c).map(|k| disc.d[k] * y_fn.coeffs[k]).sum();
                    (s + disc.f_integral[c]).abs()
                })
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let kkt = sol.residual.max(fp_err).max(integral_err);
        let changed = next.iter().zip(&active).filter(|(a, b)| a != b).count();
        history.push(IterateRecord {
            lower: active.iter().filter(|&&a| a == -1).count(),
            upper: active.iter().filter(|&&a| a == 1).count(),
            changed,
            kkt_residual: kkt,
        });
        last_change = changed;
        if changed == 0 && kkt <= config.kkt_tol {
            return Ok(OptimalitySolution {
                u: disc.vel.function(sol.u)?,
                p: disc.pres.function(sol.p)?,
                phi: phi_fn,
                r: disc.pres.function(sol.s.iter().map(|x| -x).collect())?,
                active_lower: active.iter().map(|&a| a == -1).collect(),
                active_upper: active.iter().map(|&a| a == 1).collect(),
                y: y_fn,
                kappa: sol.kappa,
                iterations: it,
                kkt_residual: kkt,
                linear_residual: sol.residual,
                history,
            });
        }
        active = next;
    }
    Err(Error::IterationFailure {
        iterations: config.max_iter,
        last_change,
    })
}
