//! Oracles shared by the integration tests and the acceptance gate. None of
//! them calls the library's quadrature, basis evaluation or solvers.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stokes_optctrl::assembly::MethodConfig;
use stokes_optctrl::assembly::{
    assemble_control_coupling, assemble_diffusion_cr, assemble_diffusion_dg, assemble_divergence_cr,
    assemble_divergence_dg, assemble_divergence_dg_dual, assemble_velocity_mass, velocity_mean_vectors, EdgeSet,
    ProblemKind,
};
use stokes_optctrl::mesh::{generate_lshape, generate_unit_square, refine_nvb, Grid, Triangulation};
use stokes_optctrl::optctrl::{field, solve_optimality_with, Discretization, ProblemSpec};
use stokes_optctrl::spaces::Bounds;
use stokes_optctrl::spaces::{build_space, Constraints, FeSpace, SpaceKind};
use stokes_optctrl::sparse::SparseMatrix;
use stokes_optctrl::Vec2;

/// Gauss-Legendre nodes and weights on `[0, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// `int_T f` by the collapsed Duffy map with `n x n` Gauss points.
pub fn integrate_triangle(v: &[Vec2; 3], n: usize, f: impl Fn(Vec2) -> f64) -> f64 {
    let gl = gauss_legendre(n);
    let area2 = ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1])).abs();
    let mut acc = 0.0;
    for &(s, ws) in &gl {
        for &(t, wt) in &gl {
            let (a, b) = (s, t * (1.0 - s));
            let x = [
                v[0][0] + a * (v[1][0] - v[0][0]) + b * (v[2][0] - v[0][0]),
                v[0][1] + a * (v[1][1] - v[0][1]) + b * (v[2][1] - v[0][1]),
            ];
            acc += ws * wt * (1.0 - s) * area2 * f(x);
        }
    }
    acc
}

/// `int_[a,b] f ds` with `n` Gauss points.
pub fn integrate_segment(a: Vec2, b: Vec2, n: usize, f: impl Fn(Vec2) -> f64) -> f64 {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    gauss_legendre(n)
        .iter()
        .map(|&(s, w)| w * len * f([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]))
        .sum()
}

/// Barycentric coordinates by Cramer's rule.
pub fn barycentric(v: &[Vec2; 3], x: Vec2) -> [f64; 3] {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let l1 = ((x[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (x[1] - v[0][1])) / det;
    let l2 = ((v[1][0] - v[0][0]) * (x[1] - v[0][1]) - (x[0] - v[0][0]) * (v[1][1] - v[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Gradients of the barycentric coordinates by central differences of the
/// affine map, which are exact.
pub fn barycentric_gradients(v: &[Vec2; 3]) -> [Vec2; 3] {
    let c = [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0];
    let h = 0.25 * (v[1][0] - v[0][0]).abs().max((v[2][1] - v[0][1]).abs()).max(1e-3);
    let px = barycentric(v, [c[0] + h, c[1]]);
    let mx = barycentric(v, [c[0] - h, c[1]]);
    let py = barycentric(v, [c[0], c[1] + h]);
    let my = barycentric(v, [c[0], c[1] - h]);
    [0, 1, 2].map(|i| [(px[i] - mx[i]) / (2.0 * h), (py[i] - my[i]) / (2.0 * h)])
}

pub fn basis_value(kind: SpaceKind, l: [f64; 3], i: usize) -> f64 {
    match kind {
        SpaceKind::CrVector => 1.0 - 2.0 * l[i],
        _ => l[i],
    }
}

pub fn basis_gradient(kind: SpaceKind, g: &[Vec2; 3], i: usize) -> Vec2 {
    match kind {
        SpaceKind::CrVector => [-2.0 * g[i][0], -2.0 * g[i][1]],
        _ => g[i],
    }
}

pub fn triangle_vertices(grid: &Grid, t: usize) -> [Vec2; 3] {
    let tri = grid.mesh.triangles()[t];
    tri.map(|v| grid.mesh.vertices()[v])
}

fn edge_endpoints(grid: &Grid, e: usize) -> (Vec2, Vec2) {
    let [a, b] = grid.topo.edges[e];
    (grid.mesh.vertices()[a], grid.mesh.vertices()[b])
}

/// Unit normal of edge `e` pointing away from the opposite vertex of `t`.
fn outward_normal(grid: &Grid, t: usize, e: usize) -> Vec2 {
    let (a, b) = edge_endpoints(grid, e);
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
    let v = triangle_vertices(grid, t);
    let c = [(v[0][0] + v[1][0] + v[2][0]) / 3.0, (v[0][1] + v[1][1] + v[2][1]) / 3.0];
    if (c[0] - a[0]) * n[0] + (c[1] - a[1]) * n[1] > 0.0 {
        n = [-n[0], -n[1]];
    }
    n
}

/// Triangles on each side of an edge: `(T+, sign +1)` and `(T-, -1)`.
fn sides(grid: &Grid, e: usize) -> Vec<(usize, f64)> {
    let (tp, tm) = grid.topo.triangles_of_edge[e];
    std::iter::once((tp, 1.0)).chain(tm.map(|t| (t, -1.0))).collect()
}

fn in_edge_set(grid: &Grid, e: usize, set: EdgeSet) -> bool {
    set == EdgeSet::All || !grid.topo.is_boundary(e)
}

const QN: usize = 6;

/// Oracle matrices on the full coefficient layouts.
pub struct Oracles;

impl Oracles {
    pub fn stiffness(grid: &Grid, space: &FeSpace) -> DMatrix<f64> {
        let n = space.n_coeffs();
        let mut k = DMatrix::zeros(n, n);
        for t in 0..grid.n_triangles() {
            let v = triangle_vertices(grid, t);
            let g = barycentric_gradients(&v);
            let loc = space.local_coeffs(grid, t);
            for i in 0..3 {
                for j in 0..3 {
                    let (gi, gj) = (basis_gradient(space.kind, &g, i), basis_gradient(space.kind, &g, j));
                    let val = integrate_triangle(&v, 2, |_| gi[0] * gj[0] + gi[1] * gj[1]);
                    for c in 0..2 {
                        k[(loc[i][c], loc[j][c])] += val;
                    }
                }
            }
        }
        k
    }

    pub fn mass(grid: &Grid, space: &FeSpace) -> DMatrix<f64> {
        let n = space.n_coeffs();
        let mut m = DMatrix::zeros(n, n);
        for t in 0..grid.n_triangles() {
            let v = triangle_vertices(grid, t);
            let loc = space.local_coeffs(grid, t);
            for i in 0..3 {
                for j in 0..3 {
                    let val = integrate_triangle(&v, QN, |x| {
                        let l = barycentric(&v, x);
                        basis_value(space.kind, l, i) * basis_value(space.kind, l, j)
                    });
                    for c in 0..2 {
                        m[(loc[i][c], loc[j][c])] += val;
                    }
                }
            }
        }
        m
    }

    /// `B[T, z] = -int_T div z` as the boundary flux `-int_{dT} z . n`.
    pub fn divergence_cr(grid: &Grid, space: &FeSpace) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(grid.n_triangles(), space.n_coeffs());
        for t in 0..grid.n_triangles() {
            let v = triangle_vertices(grid, t);
            let loc = space.local_coeffs(grid, t);
            for &e in &grid.topo.edge_of_triangle[t] {
                let (a, bb) = edge_endpoints(grid, e);
                let n = outward_normal(grid, t, e);
                for i in 0..3 {
                    let flux = integrate_segment(a, bb, QN, |x| basis_value(space.kind, barycentric(&v, x), i));
                    for c in 0..2 {
                        b[(t, loc[i][c])] -= flux * n[c];
                    }
                }
            }
        }
        b
    }

    /// `-sum_T int_T q div z + sum_{e in set} int_e {q} [z]`.
    pub fn divergence_dg(grid: &Grid, space: &FeSpace, set: EdgeSet) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(grid.n_triangles(), space.n_coeffs());
        for t in 0..grid.n_triangles() {
            let v = triangle_vertices(grid, t);
            let g = barycentric_gradients(&v);
            let loc = space.local_coeffs(grid, t);
            for i in 0..3 {
                let gi = basis_gradient(space.kind, &g, i);
                for c in 0..2 {
                    b[(t, loc[i][c])] -= integrate_triangle(&v, 2, |_| gi[c]);
                }
            }
        }
        for e in 0..grid.n_edges() {
            if !in_edge_set(grid, e, set) {
                continue;
            }
            let (a, bb) = edge_endpoints(grid, e);
            let s = sides(grid, e);
            let n = outward_normal(grid, s[0].0, e);
            let mean_w = if s.len() == 2 { 0.5 } else { 1.0 };
            for &(tz, sz) in &s {
                let v = triangle_vertices(grid, tz);
                let loc = space.local_coeffs(grid, tz);
                for i in 0..3 {
                    let int = integrate_segment(a, bb, QN, |x| basis_value(space.kind, barycentric(&v, x), i));
                    for &(tq, _) in &s {
                        for c in 0..2 {
                            b[(tq, loc[i][c])] += mean_w * sz * n[c] * int;
                        }
                    }
                }
            }
        }
        b
    }

    /// `sum_{e in set} (1/h_e) int_e [v] . [z]`.
    pub fn jump_gram(grid: &Grid, space: &FeSpace, set: EdgeSet) -> DMatrix<f64> {
        let n = space.n_coeffs();
        let mut j = DMatrix::zeros(n, n);
        for e in 0..grid.n_edges() {
            if !in_edge_set(grid, e, set) {
                continue;
            }
            let (a, bb) = edge_endpoints(grid, e);
            let h = ((bb[0] - a[0]).powi(2) + (bb[1] - a[1]).powi(2)).sqrt();
            let s = sides(grid, e);
            for &(tk, sk) in &s {
                for &(tl, sl) in &s {
                    let (vk, vl) = (triangle_vertices(grid, tk), triangle_vertices(grid, tl));
                    let (lk, ll) = (space.local_coeffs(grid, tk), space.local_coeffs(grid, tl));
                    for i in 0..3 {
                        for m in 0..3 {
                            let val = integrate_segment(a, bb, QN, |x| {
                                basis_value(space.kind, barycentric(&vk, x), i)
                                    * basis_value(space.kind, barycentric(&vl, x), m)
                            });
                            for c in 0..2 {
                                j[(lk[i][c], ll[m][c])] += sk * sl * val / h;
                            }
                        }
                    }
                }
            }
        }
        j
    }

    /// SIPG consistency terms `-int_e {grad v} n . [z] - int_e {grad z} n . [v]`.
    pub fn dg_consistency(grid: &Grid, space: &FeSpace, set: EdgeSet) -> DMatrix<f64> {
        let n = space.n_coeffs();
        let mut a = DMatrix::zeros(n, n);
        for e in 0..grid.n_edges() {
            if !in_edge_set(grid, e, set) {
                continue;
            }
            let (p, q) = edge_endpoints(grid, e);
            let s = sides(grid, e);
            let nrm = outward_normal(grid, s[0].0, e);
            let mean_w = if s.len() == 2 { 0.5 } else { 1.0 };
            for &(tv, _) in &s {
                let gv = barycentric_gradients(&triangle_vertices(grid, tv));
                let lv = space.local_coeffs(grid, tv);
                for &(tz, sz) in &s {
                    let vz = triangle_vertices(grid, tz);
                    let lz = space.local_coeffs(grid, tz);
                    for i in 0..3 {
                        let dn = {
                            let g = basis_gradient(space.kind, &gv, i);
                            g[0] * nrm[0] + g[1] * nrm[1]
                        };
                        for m in 0..3 {
                            let int = integrate_segment(p, q, QN, |x| basis_value(space.kind, barycentric(&vz, x), m));
                            let val = -mean_w * dn * sz * int;
                            for c in 0..2 {
                                // trial v = (i, tv), test z = (m, tz), plus the symmetric term
                                a[(lz[m][c], lv[i][c])] += val;
                                a[(lv[i][c], lz[m][c])] += val;
                            }
                        }
                    }
                }
            }
        }
        a
    }

    /// `C[z, y] = <y, E_h z>` for cellwise or boundary-edgewise controls.
    pub fn control_coupling(grid: &Grid, space: &FeSpace, control: &FeSpace) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(space.n_coeffs(), control.n_coeffs());
        match control.kind {
            SpaceKind::P0Vector => {
                for t in 0..grid.n_triangles() {
                    let v = triangle_vertices(grid, t);
                    let loc = space.local_coeffs(grid, t);
                    for i in 0..3 {
                        let val = integrate_triangle(&v, QN, |x| basis_value(space.kind, barycentric(&v, x), i));
                        for k in 0..2 {
                            c[(loc[i][k], 2 * t + k)] += val;
                        }
                    }
                }
            }
            _ => {
                for (slot, &e) in control.boundary_edges().iter().enumerate() {
                    let t = grid.topo.triangles_of_edge[e].0;
                    let (a, b) = edge_endpoints(grid, e);
                    let v = triangle_vertices(grid, t);
                    let loc = space.local_coeffs(grid, t);
                    for i in 0..3 {
                        let val = integrate_segment(a, b, QN, |x| basis_value(space.kind, barycentric(&v, x), i));
                        for k in 0..2 {
                            c[(loc[i][k], 2 * slot + k)] += val;
                        }
                    }
                }
            }
        }
        c
    }
}

pub fn dense(s: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(s.nrows(), s.ncols());
    for (i, j, v) in s.triplets() {
        d[(i, j)] += v;
    }
    d
}

/// `max |a - b| / max |b|`.
pub fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale.max(f64::MIN_POSITIVE)
}

/// Unit square refined by random newest vertex bisection.
pub fn random_mesh(seed: u64, rounds: usize) -> Triangulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = if seed.is_multiple_of(2) {
        generate_unit_square(2).unwrap()
    } else {
        generate_lshape(1).unwrap()
    };
    for _ in 0..rounds {
        let marked: Vec<usize> = (0..m.n_triangles()).filter(|_| rng.gen_bool(0.3)).collect();
        m = refine_nvb(&m, &marked).unwrap();
    }
    m
}

/// Four triangles around the centre of the unit square.
pub fn crossed_square() -> Triangulation {
    let m = generate_unit_square(1).unwrap();
    refine_nvb(&m, &[0]).unwrap()
}

/// Relative gaps of every assembled local operator against the oracles.
pub fn matrix_gaps(grid: &Grid) -> Vec<(&'static str, f64)> {
    let free = Constraints::default();
    let cr = build_space(grid, SpaceKind::CrVector, free).unwrap();
    let dg = build_space(grid, SpaceKind::Dg1Vector, free).unwrap();
    let p0 = build_space(grid, SpaceKind::P0Scalar, free).unwrap();
    let yd = build_space(grid, SpaceKind::P0Vector, free).unwrap();
    let yn = build_space(grid, SpaceKind::P0BoundaryVector, free).unwrap();
    let sigma = 7.0;
    let mut out = vec![
        (
            "cr stiffness",
            relative_gap(
                &dense(&assemble_diffusion_cr(grid, &cr).unwrap()),
                &Oracles::stiffness(grid, &cr),
            ),
        ),
        (
            "cr mass",
            relative_gap(
                &dense(&assemble_velocity_mass(grid, &cr).unwrap()),
                &Oracles::mass(grid, &cr),
            ),
        ),
        (
            "dg mass",
            relative_gap(
                &dense(&assemble_velocity_mass(grid, &dg).unwrap()),
                &Oracles::mass(grid, &dg),
            ),
        ),
        (
            "cr divergence",
            relative_gap(
                &dense(&assemble_divergence_cr(grid, &cr, &p0).unwrap()),
                &Oracles::divergence_cr(grid, &cr),
            ),
        ),
        (
            "cr control coupling",
            relative_gap(
                &dense(&assemble_control_coupling(grid, &cr, &yd).unwrap()),
                &Oracles::control_coupling(grid, &cr, &yd),
            ),
        ),
        (
            "cr boundary control coupling",
            relative_gap(
                &dense(&assemble_control_coupling(grid, &cr, &yn).unwrap()),
                &Oracles::control_coupling(grid, &cr, &yn),
            ),
        ),
        (
            "dg control coupling",
            relative_gap(
                &dense(&assemble_control_coupling(grid, &dg, &yd).unwrap()),
                &Oracles::control_coupling(grid, &dg, &yd),
            ),
        ),
    ];
    for (set, name_j, name_a, name_b) in [
        (
            EdgeSet::All,
            "dg jump gram (all edges)",
            "dg diffusion (all edges)",
            "dg divergence (all edges)",
        ),
        (
            EdgeSet::Interior,
            "dg jump gram (interior)",
            "dg diffusion (interior)",
            "dg divergence (interior)",
        ),
    ] {
        let j = Oracles::jump_gram(grid, &dg, set);
        let (_, lib_j) = stokes_optctrl::assembly::assemble_dg_parts(grid, &dg, set).unwrap();
        out.push((name_j, relative_gap(&dense(&lib_j), &j)));
        let a = Oracles::stiffness(grid, &dg) + Oracles::dg_consistency(grid, &dg, set) + j * sigma;
        out.push((
            name_a,
            relative_gap(&dense(&assemble_diffusion_dg(grid, &dg, sigma, set).unwrap()), &a),
        ));
        out.push((
            name_b,
            relative_gap(
                &dense(&assemble_divergence_dg(grid, &dg, &p0, set).unwrap()),
                &Oracles::divergence_dg(grid, &dg, set),
            ),
        ));
    }
    out
}

/// Gap between the volume-plus-edge and the integrated-by-parts DG
/// divergence assemblies for both edge sets.
pub fn dual_route_gap(grid: &Grid) -> f64 {
    let free = Constraints::default();
    let dg = build_space(grid, SpaceKind::Dg1Vector, free).unwrap();
    let p0 = build_space(grid, SpaceKind::P0Scalar, free).unwrap();
    [EdgeSet::All, EdgeSet::Interior]
        .iter()
        .map(|&set| {
            let primal = dense(&assemble_divergence_dg(grid, &dg, &p0, set).unwrap());
            let dual = dense(&assemble_divergence_dg_dual(grid, &dg, &p0, set).unwrap());
            relative_gap(&dual, &primal)
        })
        .fold(0.0, f64::max)
}

/// Optimal discrete solution found by enumerating every active-set pattern
/// of the reduced quadratic program.
pub struct Enumerated {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
    pub cost: f64,
    pub patterns: usize,
    pub consistent: usize,
}

/// Saddle matrix `[[A, B^T, W], [B, 0, 0, m], ...]` on the free velocity
/// coefficients with the mean-value multipliers of `kind`.
struct StokesOperator {
    k: DMatrix<f64>,
    free: Vec<usize>,
    nv: usize,
    np: usize,
}

impl StokesOperator {
    fn new(grid: &Grid, disc: &Discretization) -> Self {
        let free: Vec<usize> = (0..disc.vel.n_coeffs())
            .filter(|&i| !disc.vel.is_constrained(i))
            .collect();
        let (nf, np) = (free.len(), disc.pres.n_coeffs());
        let a = dense(&disc.a);
        let b = dense(&disc.b);
        let means = velocity_mean_vectors(grid, &disc.vel).unwrap();
        let nmult = match disc.kind {
            ProblemKind::Distributed => 1,
            ProblemKind::Neumann => 2,
        };
        let n = nf + np + nmult;
        let mut k = DMatrix::zeros(n, n);
        for (ii, &i) in free.iter().enumerate() {
            for (jj, &j) in free.iter().enumerate() {
                k[(ii, jj)] = a[(i, j)];
            }
            for q in 0..np {
                k[(nf + q, ii)] = b[(q, i)];
                k[(ii, nf + q)] = b[(q, i)];
            }
        }
        match disc.kind {
            ProblemKind::Distributed => {
                for q in 0..np {
                    k[(nf + np, nf + q)] = grid.topo.area[q];
                    k[(nf + q, nf + np)] = grid.topo.area[q];
                }
            }
            ProblemKind::Neumann => {
                for c in 0..2 {
                    for (ii, &i) in free.iter().enumerate() {
                        k[(nf + np + c, ii)] = means[c][i];
                        k[(ii, nf + np + c)] = means[c][i];
                    }
                }
            }
        }
        Self {
            k,
            free,
            nv: disc.vel.n_coeffs(),
            np,
        }
    }

    /// Velocity (full layout) and pressure for a velocity load on the full layout.
    fn solve(&self, load: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nf = self.free.len();
        let mut rhs = DVector::zeros(self.k.nrows());
        for (ii, &i) in self.free.iter().enumerate() {
            rhs[ii] = load[i];
        }
        let x = self
            .k
            .clone()
            .lu()
            .solve(&rhs)
            .expect("oracle saddle system is singular");
        let mut u = DVector::zeros(self.nv);
        for (ii, &i) in self.free.iter().enumerate() {
            u[i] = x[ii];
        }
        (u, x.rows(nf, self.np).into_owned())
    }
}

/// Exhaustive search over all `3^k` lower/inactive/upper patterns. The
/// control-to-state map is formed densely, so the reduced Hessian is
/// `S^T M S + lambda D` and every pattern is an equality-constrained QP
/// checked for primal feasibility and multiplier signs.
pub fn enumerate_kkt(grid: &Grid, disc: &Discretization, spec: &ProblemSpec) -> Enumerated {
    assert!(
        disc.dirichlet_values.iter().all(|&v| v == 0.0),
        "oracle needs homogeneous Dirichlet data"
    );
    let nc = disc.control.n_coeffs();
    assert!(nc <= 10, "enumeration over {nc} components is too large");
    let op = StokesOperator::new(grid, disc);
    let m = dense(&disc.m);
    let c = dense(&disc.c);
    let f = DVector::from_column_slice(&disc.load_f);
    let lud = DVector::from_column_slice(&disc.load_ud);
    let (u0, _) = op.solve(&f);
    let mut s = DMatrix::zeros(op.nv, nc);
    for k in 0..nc {
        let (uk, _) = op.solve(&c.column(k).into_owned());
        s.set_column(k, &uk);
    }
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(&disc.d));
    let h = s.transpose() * &m * &s + &d * spec.lambda;
    let g = s.transpose() * (&m * &u0 - &lud);
    // per-component integral rows for boundary control
    let ng = if spec.kind == ProblemKind::Neumann { 2 } else { 0 };
    let mut gm = DMatrix::zeros(ng, nc);
    let mut grhs = DVector::zeros(ng);
    for cc in 0..ng {
        for k in (cc..nc).step_by(2) {
            gm[(cc, k)] = disc.d[k];
        }
        grhs[cc] = -disc.f_integral[cc];
    }
    let (lo, hi) = (spec.bounds.lower, spec.bounds.upper);
    let cost_of = |y: &DVector<f64>| 0.5 * (y.transpose() * &h * y)[(0, 0)] + g.dot(y);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let (mut patterns, mut consistent) = (0, 0);
    let total = 3usize.pow(nc as u32);
    for code in 0..total {
        patterns += 1;
        let state: Vec<i8> = (0..nc).map(|k| ((code / 3usize.pow(k as u32)) % 3) as i8 - 1).collect();
        let inactive: Vec<usize> = (0..nc).filter(|&k| state[k] == 0).collect();
        let mut y = DVector::zeros(nc);
        for k in 0..nc {
            y[k] = match state[k] {
                -1 => lo[k % 2],
                1 => hi[k % 2],
                _ => 0.0,
            };
        }
        let ni = inactive.len();
        let mut kk = DMatrix::zeros(ni + ng, ni + ng);
        let mut rhs = DVector::zeros(ni + ng);
        let hy = &h * &y;
        for (a, &i) in inactive.iter().enumerate() {
            for (b, &j) in inactive.iter().enumerate() {
                kk[(a, b)] = h[(i, j)];
            }
            rhs[a] = -g[i] - hy[i];
            for cc in 0..ng {
                kk[(a, ni + cc)] = gm[(cc, i)];
                kk[(ni + cc, a)] = gm[(cc, i)];
            }
        }
        let gy = &gm * &y;
        for cc in 0..ng {
            rhs[ni + cc] = grhs[cc] - gy[cc];
        }
        // a component fully at its bounds leaves a zero multiplier row
        for cc in 0..ng {
            if inactive.iter().all(|&i| i % 2 != cc) {
                if rhs[ni + cc].abs() > 1e-12 {
                    rhs = DVector::zeros(0);
                    break;
                }
                kk[(ni + cc, ni + cc)] = 1.0;
            }
        }
        if rhs.len() != ni + ng {
            continue;
        }
        let sol = if ni + ng == 0 {
            Some(DVector::zeros(0))
        } else {
            kk.clone().lu().solve(&rhs)
        };
        let Some(sol) = sol else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        for (a, &i) in inactive.iter().enumerate() {
            y[i] = sol[a];
        }
        let mu = sol.rows(ni, ng).into_owned();
        let grad = &h * &y + &g + gm.transpose() * &mu;
        let tol = 1e-10 * (1.0 + g.amax() + h.amax());
        let ok = (0..nc).all(|k| {
            let (l, u) = (lo[k % 2], hi[k % 2]);
            match state[k] {
                0 => y[k] >= l - 1e-12 && y[k] <= u + 1e-12,
                -1 => grad[k] >= -tol,
                _ => grad[k] <= tol,
            }
        });
        if !ok {
            continue;
        }
        consistent += 1;
        let j = cost_of(&y);
        if best.as_ref().is_none_or(|(bj, _)| j < *bj) {
            best = Some((j, y.clone()));
        }
    }
    let (cost, y) = best.expect("no consistent active-set pattern");
    let f_total = &f + &c * &y;
    let (u, p) = op.solve(&f_total);
    // adjoint pairing a(z, phi) - b(z, r): the saddle solve returns -r
    let (phi, s) = op.solve(&(&m * &u - &lud));
    let r = -s;
    Enumerated {
        y: y.iter().cloned().collect(),
        u: u.iter().cloned().collect(),
        p: p.iter().cloned().collect(),
        phi: phi.iter().cloned().collect(),
        r: r.iter().cloned().collect(),
        cost,
        patterns,
        consistent,
    }
}

/// `max_i |a_i - b_i| / max(1, max_i |b_i|)`.
pub fn field_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn strong_spec(kind: ProblemKind, lambda: f64, bounds: Bounds) -> ProblemSpec {
    let f = match kind {
        ProblemKind::Distributed => field(|x| [(3.0 * x[1]).sin(), (2.0 * x[0]).cos() - 0.4]),
        // zero mean, so the integral condition admits a small control
        ProblemKind::Neumann => field(|x| [(PI * x[0]).cos(), (2.0 * PI * x[1]).sin()]),
    };
    let ud = field(|x| [4.0 * x[0] * x[1] - 1.0, 2.0 * (x[0] - x[1])]);
    ProblemSpec::new(kind, f, ud, lambda, bounds).unwrap()
}

pub struct BruteForceRun {
    pub tag: String,
    pub n_controls: usize,
    pub at_bound: usize,
    pub patterns: usize,
    pub max_gap: f64,
    pub worst_field: &'static str,
}

/// Library solution against enumeration on the four-triangle mesh for both
/// problems, both methods and a scan of `lambda` that moves the active set.
pub fn brute_force_runs() -> Vec<BruteForceRun> {
    let grid = Grid::new(crossed_square());
    let bounds = Bounds::new([-0.02, -0.03], [0.015, 0.02]).unwrap();
    let mut runs = Vec::new();
    for kind in [ProblemKind::Distributed, ProblemKind::Neumann] {
        for config in [MethodConfig::cr(), MethodConfig::dg(10.0)] {
            for lambda in [1e-3, 1e-2, 1e-1, 1.0] {
                let spec = strong_spec(kind, lambda, bounds);
                let disc = Discretization::new(&grid, &spec, &config).unwrap();
                let sol = solve_optimality_with(&grid, &disc, &spec, &config).unwrap();
                let brute = enumerate_kkt(&grid, &disc, &spec);
                let at_bound = brute
                    .y
                    .iter()
                    .enumerate()
                    .filter(|&(k, &v)| v == bounds.lower[k % 2] || v == bounds.upper[k % 2])
                    .count();
                let (worst_field, max_gap) = [
                    ("y", field_gap(&sol.y.coeffs, &brute.y)),
                    ("u", field_gap(&sol.u.coeffs, &brute.u)),
                    ("p", field_gap(&sol.p.coeffs, &brute.p)),
                    ("phi", field_gap(&sol.phi.coeffs, &brute.phi)),
                    ("r", field_gap(&sol.r.coeffs, &brute.r)),
                ]
                .into_iter()
                .fold(("y", 0.0), |a, b| if b.1 > a.1 { b } else { a });
                runs.push(BruteForceRun {
                    tag: format!("{kind:?} {:?} lambda={lambda}", config.method),
                    n_controls: brute.y.len(),
                    at_bound,
                    patterns: brute.patterns,
                    max_gap,
                    worst_field,
                });
            }
        }
    }
    runs
}

/// Central-difference gradient of a vector field, `m[i][j] = d f_i / d x_j`.
pub fn fd_gradient(f: &dyn Fn(Vec2) -> Vec2, x: Vec2, h: f64) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut xp = x;
        let mut xm = x;
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(xp), f(xm));
        for i in 0..2 {
            m[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    m
}

/// Five-point Laplacian of each component.
pub fn fd_laplacian(f: &dyn Fn(Vec2) -> Vec2, x: Vec2, h: f64) -> Vec2 {
    let c = f(x);
    let mut out = [-4.0 * c[0], -4.0 * c[1]];
    for (dx, dy) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
        let v = f([x[0] + dx, x[1] + dy]);
        out[0] += v[0];
        out[1] += v[1];
    }
    [out[0] / (h * h), out[1] / (h * h)]
}
