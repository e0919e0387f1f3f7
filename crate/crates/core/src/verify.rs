//! Manufactured solutions, error norms and convergence rates.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{EdgeSet, Method, MethodConfig, ProblemKind};
use crate::error::{invalid, Result};
use crate::mesh::{generate_lshape, generate_unit_square, Grid, Triangulation};
use crate::optctrl::{field, Discretization, Field, OptimalitySolution, ProblemSpec};
use crate::quadrature::{edge_rule, triangle_rule};
use crate::spaces::{Bounds, FeFunction, FeSpace};
use crate::{Mat2, Vec2};

pub type ScalarField = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type GradientField = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    UnitSquare,
    LShape,
}

impl Domain {
    pub fn mesh(self, n: usize) -> Result<Triangulation> {
        match self {
            Domain::UnitSquare => generate_unit_square(n),
            Domain::LShape => generate_lshape(n),
        }
    }
}

/// Closed-form optimal state, adjoint and control with the data derived
/// from them.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub domain: Domain,
    pub lambda: f64,
    pub bounds: Bounds,
    pub u: Field,
    pub grad_u: GradientField,
    pub p: ScalarField,
    pub phi: Field,
    pub grad_phi: GradientField,
    pub r: ScalarField,
    pub f: Field,
    pub u_d: Field,
    pub dirichlet: Option<Field>,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("lambda", &self.lambda)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl ManufacturedCase {
    /// `y = clamp(-phi / lambda)`.
    pub fn control(&self, x: Vec2) -> Vec2 {
        let v = (self.phi)(x);
        [0, 1].map(|c| self.bounds.clamp_component(-v[c] / self.lambda, c))
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        let s = ProblemSpec::new(
            ProblemKind::Distributed,
            self.f.clone(),
            self.u_d.clone(),
            self.lambda,
            self.bounds,
        )?;
        match &self.dirichlet {
            Some(g) => s.with_dirichlet(g.clone()),
            None => Ok(s),
        }
    }

    pub fn mesh(&self, n: usize) -> Result<Triangulation> {
        self.domain.mesh(n)
    }
}

/// Smooth divergence-free pair with zero trace on the unit square grid
/// lines: `v = (sin^2(pi x) sin(pi y) cos(pi y), -sin^2(pi y) sin(pi x) cos(pi x))`
/// and `q = sin(2 pi x) sin(2 pi y)`.
pub mod smooth {
    use super::*;

    pub fn velocity(x: Vec2) -> Vec2 {
        let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        [
            sx * sx * 0.5 * (2.0 * PI * x[1]).sin(),
            -sy * sy * 0.5 * (2.0 * PI * x[0]).sin(),
        ]
    }

    pub fn gradient(x: Vec2) -> Mat2 {
        let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        let (s2x, s2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
        let (c2x, c2y) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
        [
            [0.5 * PI * s2x * s2y, PI * sx * sx * c2y],
            [-PI * sy * sy * c2x, -0.5 * PI * s2x * s2y],
        ]
    }

    pub fn laplacian(x: Vec2) -> Vec2 {
        let (s2x, s2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
        let (c2x, c2y) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
        [PI * PI * s2y * (2.0 * c2x - 1.0), -PI * PI * s2x * (2.0 * c2y - 1.0)]
    }

    pub fn pressure(x: Vec2) -> f64 {
        (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin()
    }

    pub fn pressure_gradient(x: Vec2) -> Vec2 {
        let (s2x, s2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
        let (c2x, c2y) = ((2.0 * PI * x[0]).cos(), (2.0 * PI * x[1]).cos());
        [2.0 * PI * c2x * s2y, 2.0 * PI * s2x * c2y]
    }

    /// `u + laplace(phi) + grad(r)` with `u = phi` and `r` the smooth pair.
    pub fn tracking_data(u: Vec2, x: Vec2) -> Vec2 {
        let l = laplacian(x);
        let g = pressure_gradient(x);
        [u[0] + l[0] + g[0], u[1] + l[1] + g[1]]
    }
}

/// Componentwise control bounds of the reference experiments.
pub const DEFAULT_BOUNDS: (f64, f64) = (-0.1, 0.25);

fn default_bounds() -> Result<Bounds> {
    Bounds::scalar(DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1)
}

/// Unit square, smooth state equal to the adjoint.
pub fn example1(lambda: f64) -> Result<ManufacturedCase> {
    example1_bounded(lambda, default_bounds()?)
}

pub fn example1_bounded(lambda: f64, bounds: Bounds) -> Result<ManufacturedCase> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let y = move |x: Vec2| {
        let v = smooth::velocity(x);
        [0, 1].map(|c| bounds.clamp_component(-v[c] / lambda, c))
    };
    let f = field(move |x| {
        let l = smooth::laplacian(x);
        let g = smooth::pressure_gradient(x);
        let yv = y(x);
        [-l[0] + g[0] - yv[0], -l[1] + g[1] - yv[1]]
    });
    let u_d = field(|x| smooth::tracking_data(smooth::velocity(x), x));
    Ok(ManufacturedCase {
        name: "ex1",
        domain: Domain::UnitSquare,
        lambda,
        bounds,
        u: field(smooth::velocity),
        grad_u: Arc::new(smooth::gradient),
        p: Arc::new(smooth::pressure),
        phi: field(smooth::velocity),
        grad_phi: Arc::new(smooth::gradient),
        r: Arc::new(smooth::pressure),
        f,
        u_d,
        dirichlet: None,
    })
}

pub const EXAMPLE2_ALPHA: f64 = 856399.0 / 1572864.0;
pub const EXAMPLE2_OPENING: f64 = 1.5 * PI;

/// Angular profile of the corner singularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngularProfile {
    /// `1/(1+a)` on both sine terms, minus signs on both cosines.
    AsPrinted,
    /// `1/(1+a)` and `-1/(1-a)` on the sines, opposite cosine signs.
    Standard,
}

/// `r^alpha`-type Stokes solution at a reentrant corner of given opening.
#[derive(Clone, Copy, Debug)]
pub struct CornerSingularity {
    pub alpha: f64,
    pub opening: f64,
    pub profile: AngularProfile,
}

impl CornerSingularity {
    /// `(sin_coeff, cos_coeff, frequency)` terms of the profile.
    fn terms(&self) -> [(f64, f64, f64); 2] {
        let a = self.alpha;
        let amp = (a * self.opening).cos();
        match self.profile {
            AngularProfile::Standard => [(amp / (1.0 + a), -1.0, 1.0 + a), (-amp / (1.0 - a), 1.0, 1.0 - a)],
            AngularProfile::AsPrinted => [(amp / (1.0 + a), -1.0, 1.0 + a), (amp / (1.0 + a), -1.0, a - 1.0)],
        }
    }

    /// The profile and its first three derivatives.
    pub fn profile_derivatives(&self, t: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (s, c, k) in self.terms() {
            for (n, o) in out.iter_mut().enumerate() {
                let shift = n as f64 * PI / 2.0;
                *o += k.powi(n as i32) * (s * (k * t + shift).sin() + c * (k * t + shift).cos());
            }
        }
        out
    }

    fn polar(x: Vec2) -> (f64, f64) {
        let r = x[0].hypot(x[1]);
        let mut t = x[1].atan2(x[0]);
        if t < 0.0 {
            t += 2.0 * PI;
        }
        (r, t)
    }

    pub fn velocity(&self, x: Vec2) -> Vec2 {
        let (r, t) = Self::polar(x);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let [w, w1, _, _] = self.profile_derivatives(t);
        let a = self.alpha;
        let ra = r.powf(a);
        [
            ra * ((1.0 + a) * t.sin() * w + t.cos() * w1),
            ra * (-(1.0 + a) * t.cos() * w + t.sin() * w1),
        ]
    }

    pub fn gradient(&self, x: Vec2) -> Mat2 {
        let (r, t) = Self::polar(x);
        let [w, w1, w2, _] = self.profile_derivatives(t);
        let a = self.alpha;
        let (s, c) = t.sin_cos();
        let v = [(1.0 + a) * s * w + c * w1, -(1.0 + a) * c * w + s * w1];
        let dv = [
            (1.0 + a) * c * w + a * s * w1 + c * w2,
            (1.0 + a) * s * w - a * c * w1 + s * w2,
        ];
        let ra1 = r.powf(a - 1.0);
        [0, 1].map(|i| [ra1 * (a * c * v[i] - s * dv[i]), ra1 * (a * s * v[i] + c * dv[i])])
    }

    /// Unbounded at the corner, where it is an error.
    pub fn pressure(&self, x: Vec2) -> Result<f64> {
        let (r, t) = Self::polar(x);
        if r == 0.0 {
            return Err(invalid("corner pressure is unbounded at the origin"));
        }
        Ok(self.pressure_unchecked(r, t))
    }

    fn pressure_unchecked(&self, r: f64, t: f64) -> f64 {
        let [_, w1, _, w3] = self.profile_derivatives(t);
        let a = self.alpha;
        -r.powf(a - 1.0) * ((1.0 + a).powi(2) * w1 + w3) / (1.0 - a)
    }
}

/// Residual figures used to pick the angular profile.
#[derive(Clone, Copy, Debug)]
pub struct ProfileCheck {
    pub profile: AngularProfile,
    /// Max of `|-laplace u + grad p|` at sample points, by central differences.
    pub momentum: f64,
    /// Max of `|div u|` at the same points.
    pub divergence: f64,
    /// Max of `|u|` on the two edges meeting at the corner.
    pub corner_trace: f64,
}

impl ProfileCheck {
    pub fn passes(&self) -> bool {
        self.momentum <= 1e-6 && self.divergence <= 1e-8 && self.corner_trace <= CORNER_TRACE_TOL
    }
}

pub const FD_STEP: f64 = 1e-5;
/// The exponent is a rounded root of the corner eigenvalue equation, so the
/// trace vanishes only to about `1e-6`.
pub const CORNER_TRACE_TOL: f64 = 1e-4;

/// Central-difference momentum and divergence residuals of `sing` at
/// `samples` random L-shape points with `r > 0.1`, plus its trace on the
/// corner edges.
pub fn check_profile(sing: &CornerSingularity, samples: usize, seed: u64) -> ProfileCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut momentum = 0.0f64;
    let mut divergence = 0.0f64;
    let mut n = 0;
    while n < samples {
        let x: Vec2 = [rng.gen_range(-0.95..0.95), rng.gen_range(-0.95..0.95)];
        if (x[0] > -0.05 && x[1] < 0.05) || x[0].hypot(x[1]) <= 0.1 {
            continue;
        }
        n += 1;
        let step = |c: usize, s: f64| {
            let mut y = x;
            y[c] += s;
            y
        };
        let p = |y: Vec2| sing.pressure(y).unwrap_or(f64::NAN);
        let g = sing.gradient(x);
        for i in 0..2 {
            let mut lap = 0.0;
            for c in 0..2 {
                lap += (sing.gradient(step(c, h))[i][c] - sing.gradient(step(c, -h))[i][c]) / (2.0 * h);
            }
            let dp = (p(step(i, h)) - p(step(i, -h))) / (2.0 * h);
            momentum = momentum.max((-lap + dp).abs());
        }
        divergence = divergence.max((g[0][0] + g[1][1]).abs());
    }
    let mut corner_trace = 0.0f64;
    for k in 1..=50 {
        let s = k as f64 / 50.0;
        for x in [[s, 0.0], [0.0, -s]] {
            let v = sing.velocity(x);
            corner_trace = corner_trace.max(v[0].hypot(v[1]));
        }
    }
    ProfileCheck {
        profile: sing.profile,
        momentum,
        divergence,
        corner_trace,
    }
}

/// Checks both profiles and keeps the one that passes.
pub fn select_profile(alpha: f64, opening: f64) -> Result<(CornerSingularity, [ProfileCheck; 2])> {
    let checks = [AngularProfile::AsPrinted, AngularProfile::Standard].map(|profile| {
        check_profile(
            &CornerSingularity {
                alpha,
                opening,
                profile,
            },
            100,
            7,
        )
    });
    let chosen = checks
        .iter()
        .find(|c| c.passes())
        .ok_or_else(|| invalid(format!("no angular profile passes the residual checks: {checks:?}")))?;
    Ok((
        CornerSingularity {
            alpha,
            opening,
            profile: chosen.profile,
        },
        checks,
    ))
}

/// L-shape with a corner singularity in the state; adjoint as in
/// [`example1`]. The velocity has inhomogeneous Dirichlet data.
pub fn example2(lambda: f64) -> Result<(ManufacturedCase, [ProfileCheck; 2])> {
    example2_bounded(lambda, default_bounds()?)
}

pub fn example2_bounded(lambda: f64, bounds: Bounds) -> Result<(ManufacturedCase, [ProfileCheck; 2])> {
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let (sing, checks) = select_profile(EXAMPLE2_ALPHA, EXAMPLE2_OPENING)?;
    // the singular pair is Stokes-homogeneous, so f = -y
    let f = field(move |x| {
        let v = smooth::velocity(x);
        [0, 1].map(|c| -bounds.clamp_component(-v[c] / lambda, c))
    });
    let u_d = field(move |x| smooth::tracking_data(sing.velocity(x), x));
    let case = ManufacturedCase {
        name: "ex2",
        domain: Domain::LShape,
        lambda,
        bounds,
        u: field(move |x| sing.velocity(x)),
        grad_u: Arc::new(move |x| sing.gradient(x)),
        p: Arc::new(move |x| {
            let (r, t) = CornerSingularity::polar(x);
            sing.pressure_unchecked(r, t)
        }),
        phi: field(smooth::velocity),
        grad_phi: Arc::new(smooth::gradient),
        r: Arc::new(smooth::pressure),
        f,
        u_d,
        dirichlet: Some(field(move |x| sing.velocity(x))),
    };
    Ok((case, checks))
}

/// Smooth Neumann boundary-control data on the unit square.
pub fn neumann_smooth(lambda: f64) -> Result<ProblemSpec> {
    neumann_smooth_bounded(lambda, default_bounds()?)
}

pub fn neumann_smooth_bounded(lambda: f64, bounds: Bounds) -> Result<ProblemSpec> {
    let f = field(|x| {
        let s = -0.5 * (PI * x[0]).sin() * (PI * x[1]).sin();
        [s, s]
    });
    let u_d = field(|x| {
        let v = smooth::velocity(x);
        [0.5 * v[0], 0.5 * v[1]]
    });
    ProblemSpec::new(ProblemKind::Neumann, f, u_d, lambda, bounds)
}

/// Errors of one discrete solution against a manufactured case.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorRecord {
    pub u_energy: f64,
    pub u_l2: f64,
    pub p_l2: f64,
    pub phi_energy: f64,
    pub phi_l2: f64,
    pub r_l2: f64,
    pub y: f64,
}

impl ErrorRecord {
    /// `|u-u_h|_h + |p-p_h| + |phi-phi_h|_h + |r-r_h| + |y-y_h|_Q`.
    pub fn total(&self) -> f64 {
        self.u_energy + self.p_l2 + self.phi_energy + self.r_l2 + self.y
    }
}

struct VelocityErrors {
    energy: f64,
    l2: f64,
}

fn velocity_errors(
    grid: &Grid,
    space: &FeSpace,
    uh: &FeFunction,
    u: &Field,
    grad: &GradientField,
    jumps: Option<EdgeSet>,
    order: usize,
) -> Result<VelocityErrors> {
    let rule = triangle_rule(order)?;
    let (mut energy, mut l2) = (0.0, 0.0);
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        let gh = space.velocity_gradient(grid, uh, t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let x = g.point(*l);
            let jw = 2.0 * g.area * w;
            let ge = grad(x);
            let ue = u(x);
            let vh = space.velocity_at(grid, uh, t, *l);
            for i in 0..2 {
                for j in 0..2 {
                    energy += jw * (ge[i][j] - gh[i][j]).powi(2);
                }
                l2 += jw * (ue[i] - vh[i]).powi(2);
            }
        }
    }
    if let Some(set) = jumps {
        let erule = edge_rule(order)?;
        for e in 0..grid.n_edges() {
            let (tp, tm) = grid.topo.triangles_of_edge[e];
            if tm.is_none() && set == EdgeSet::Interior {
                continue;
            }
            let (a, b) = grid.edge_points(e);
            let gp = grid.geometry(tp);
            let mut acc = 0.0;
            for (s, w) in erule.points.iter().zip(&erule.weights) {
                let x = crate::geometry::lerp(a, b, *s);
                let vp = space.velocity_at(grid, uh, tp, gp.barycentric(x));
                let vm = match tm {
                    Some(tm) => space.velocity_at(grid, uh, tm, grid.geometry(tm).barycentric(x)),
                    None => u(x),
                };
                acc += w * ((vp[0] - vm[0]).powi(2) + (vp[1] - vm[1]).powi(2));
            }
            // (1/h_e) int_e = mean over the edge
            energy += acc;
        }
    }
    Ok(VelocityErrors {
        energy: energy.sqrt(),
        l2: l2.sqrt(),
    })
}

/// L2 error of a cellwise constant against `q`; modulo constants when
/// `mean_free`.
fn pressure_error(grid: &Grid, ph: &FeFunction, q: &ScalarField, mean_free: bool, order: usize) -> Result<f64> {
    let rule = triangle_rule(order)?;
    let (mut sq, mut mean) = (0.0, 0.0);
    let mut area = 0.0;
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        area += g.area;
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let d = q(g.point(*l)) - ph.coeffs[t];
            let jw = 2.0 * g.area * w;
            sq += jw * d * d;
            mean += jw * d;
        }
    }
    let v = if mean_free { sq - mean * mean / area } else { sq };
    Ok(v.max(0.0).sqrt())
}

fn control_error(
    grid: &Grid,
    disc: &Discretization,
    yh: &FeFunction,
    case: &ManufacturedCase,
    order: usize,
) -> Result<f64> {
    let rule = triangle_rule(order)?;
    let mut sq = 0.0;
    for t in 0..grid.n_triangles() {
        let g = grid.geometry(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let y = case.control(g.point(*l));
            let jw = 2.0 * g.area * w;
            sq += jw * ((y[0] - yh.coeffs[2 * t]).powi(2) + (y[1] - yh.coeffs[2 * t + 1]).powi(2));
        }
    }
    debug_assert_eq!(disc.control.n_coeffs(), 2 * grid.n_triangles());
    Ok(sq.sqrt())
}

/// Energy errors use the broken gradient, plus `sum_e (1/h_e)|[[v - v_h]]|^2`
/// for DG; pressures are compared modulo constants.
pub fn error_norms(
    grid: &Grid,
    disc: &Discretization,
    sol: &OptimalitySolution,
    case: &ManufacturedCase,
    config: &MethodConfig,
) -> Result<ErrorRecord> {
    if disc.kind != ProblemKind::Distributed {
        return Err(invalid("manufactured cases are distributed-control problems"));
    }
    if sol.u.coeffs.len() != disc.vel.n_coeffs() || sol.p.coeffs.len() != grid.n_triangles() {
        return Err(invalid("solution does not belong to this mesh"));
    }
    let order = config.error_order;
    let jumps = (config.method == Method::Dg).then_some(EdgeSet::All);
    let u = velocity_errors(grid, &disc.vel, &sol.u, &case.u, &case.grad_u, jumps, order)?;
    let phi = velocity_errors(grid, &disc.vel, &sol.phi, &case.phi, &case.grad_phi, jumps, order)?;
    Ok(ErrorRecord {
        u_energy: u.energy,
        u_l2: u.l2,
        p_l2: pressure_error(grid, &sol.p, &case.p, true, order)?,
        phi_energy: phi.energy,
        phi_l2: phi.l2,
        r_l2: pressure_error(grid, &sol.r, &case.r, true, order)?,
        y: control_error(grid, disc, &sol.y, case, order)?,
    })
}

/// Optimality certificates of a converged discrete solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Certificate {
    /// Every control coefficient lies in its box.
    pub bounds_feasible: bool,
    /// `max |y_h - P(-Pi_h phi_h / lambda)|` with `P` the admissible projection.
    pub fixed_point: f64,
    /// Nonnegative iff the discrete variational inequality holds.
    pub vi_residual: f64,
    /// `max(|B u_h|, |B phi_h|) / (max|B| |.|)` in the Euclidean norm.
    pub divergence: f64,
    /// `max_c |int_Gamma y_c + int_Omega f_c|` (zero for distributed control).
    pub compatibility: f64,
}

impl Certificate {
    /// Fixed point and VI to `kkt_tol`-sized thresholds, divergence to the solver tolerance.
    pub fn passes(&self, fixed_point_tol: f64, vi_tol: f64, solver_tol: f64) -> bool {
        self.bounds_feasible
            && self.fixed_point <= fixed_point_tol
            && self.vi_residual >= -vi_tol
            && self.divergence <= solver_tol
    }
}

pub fn certify(disc: &Discretization, spec: &ProblemSpec, sol: &OptimalitySolution) -> Result<Certificate> {
    let update = crate::optctrl::control_update(disc, &sol.phi, spec)?;
    let fixed_point = update
        .coeffs
        .iter()
        .zip(&sol.y.coeffs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let bmax = disc.b.max_abs();
    let rel_div = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bv = disc.b.mul_vec(v).iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            0.0
        } else {
            bv / (bmax * n)
        }
    };
    let compatibility = match spec.kind {
        ProblemKind::Distributed => 0.0,
        ProblemKind::Neumann => (0..2)
            .map(|c| {
                let s: f64 = (c..sol.y.coeffs.len())
                    .step_by(2)
                    .map(|k| disc.d[k] * sol.y.coeffs[k])
                    .sum();
                (s + disc.f_integral[c]).abs()
            })
            .fold(0.0, f64::max),
    };
    Ok(Certificate {
        bounds_feasible: spec.bounds.contains_interleaved(&sol.y.coeffs),
        fixed_point,
        vi_residual: crate::optctrl::vi_residual(disc, &sol.phi, &sol.y, spec),
        divergence: rel_div(&sol.u.coeffs).max(rel_div(&sol.phi.coeffs)),
        compatibility,
    })
}

/// Mesh-size or dof-count base of a convergence rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateBase {
    MeshSize,
    Ndof,
}

/// Successive rates: `log(e_{k-1}/e_k) / log(h_{k-1}/h_k)`, or
/// `-log(e_{k-1}/e_k) / log(N_{k-1}/N_k)` for a dof base.
pub fn eoc(errors: &[f64], base: &[f64], wrt: RateBase) -> Result<Vec<f64>> {
    if errors.len() != base.len() || errors.len() < 2 {
        return Err(invalid("rates need at least two matching levels"));
    }
    if errors.iter().chain(base).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("rates need positive finite errors and sizes"));
    }
    let sign = match wrt {
        RateBase::MeshSize => 1.0,
        RateBase::Ndof => -1.0,
    };
    Ok(errors
        .windows(2)
        .zip(base.windows(2))
        .map(|(e, b)| sign * (e[0] / e[1]).ln() / (b[0] / b[1]).ln())
        .collect())
}

/// Least-squares slope of `-log e` against `log N` (dof base) or of
/// `log e` against `log h` (mesh-size base).
pub fn fitted_rate(errors: &[f64], base: &[f64], wrt: RateBase) -> Result<f64> {
    eoc(errors, base, wrt)?;
    let n = errors.len() as f64;
    let xs: Vec<f64> = base.iter().map(|b| b.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(match wrt {
        RateBase::MeshSize => slope,
        RateBase::Ndof => -slope,
    })
}

/// One uniform level of a convergence study.
#[derive(Clone, Debug)]
pub struct StudyRow {
    pub n: usize,
    pub h: f64,
    pub ndof: usize,
    pub errors: ErrorRecord,
    pub iterations: usize,
    pub solution: Option<Box<OptimalitySolution>>,
}

/// Uniform study on structured meshes `n = n0, 2 n0, ...`.
pub fn uniform_study(
    case: &ManufacturedCase,
    config: &MethodConfig,
    n0: usize,
    levels: usize,
) -> Result<Vec<StudyRow>> {
    let spec = case.spec()?;
    let mut rows = Vec::with_capacity(levels);
    for level in 0..levels {
        let n = n0 << level;
        let run = || -> Result<StudyRow> {
            let grid = Grid::new(case.mesh(n)?);
            let disc = Discretization::new(&grid, &spec, config)?;
            let sol = crate::optctrl::solve_optimality_with(&grid, &disc, &spec, config)?;
            let errors = error_norms(&grid, &disc, &sol, case, config)?;
            Ok(StudyRow {
                n,
                h: grid.mesh.h(),
                ndof: disc.ndof(),
                errors,
                iterations: sol.iterations,
                solution: None,
            })
        };
        rows.push(run().map_err(|e| e.at_level(level))?);
    }
    Ok(rows)
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or(String::new(), |v| format!("{v:.4}"))
}

/// Table with columns `h, err_u_h, rate, err_p, rate, err_phi_h, rate,
/// err_r, rate, err_y, rate`; the first row has empty rates.
pub fn error_table_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("h,err_u_h,rate,err_p,rate,err_phi_h,rate,err_r,rate,err_y,rate\n");
    let cols = |e: &ErrorRecord| [e.u_energy, e.p_l2, e.phi_energy, e.r_l2, e.y];
    for (k, row) in rows.iter().enumerate() {
        let _ = write!(s, "{:.6e}", row.h);
        for (c, v) in cols(&row.errors).into_iter().enumerate() {
            let rate = (k > 0).then(|| {
                let prev = cols(&rows[k - 1].errors)[c];
                (prev / v).ln() / (rows[k - 1].h / row.h).ln()
            });
            let _ = write!(s, ",{v:.6e},{}", fmt_rate(rate));
        }
        s.push('\n');
    }
    s
}

/// Fixed-width rendering of [`error_table_csv`].
pub fn error_table_text(rows: &[StudyRow]) -> String {
    let mut s = format!(
        "{:>8} {:>10} {:>6} {:>10} {:>6} {:>10} {:>6} {:>10} {:>6} {:>10} {:>6}\n",
        "h", "|u-uh|_h", "rate", "|p-ph|", "rate", "|phi-phih|", "rate", "|r-rh|", "rate", "|y-yh|", "rate"
    );
    let cols = |e: &ErrorRecord| [e.u_energy, e.p_l2, e.phi_energy, e.r_l2, e.y];
    for (k, row) in rows.iter().enumerate() {
        let _ = write!(s, "{:>8.4}", row.h);
        for (c, v) in cols(&row.errors).into_iter().enumerate() {
            let rate = if k > 0 {
                let prev = cols(&rows[k - 1].errors)[c];
                format!("{:.2}", (prev / v).ln() / (rows[k - 1].h / row.h).ln())
            } else {
                "-".into()
            };
            let _ = write!(s, " {v:>10.4} {rate:>6}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_values() {
        let c = example1(1.0).unwrap();
        let v = (c.u)([0.5, 0.5]);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        let v = (c.u)([0.5, 0.25]);
        assert!((v[0] - 0.5).abs() < 1e-15 && v[1].abs() < 1e-15);
        assert!(((c.p)([0.25, 0.25]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standard_profile_is_selected() {
        let (sing, checks) = select_profile(EXAMPLE2_ALPHA, EXAMPLE2_OPENING).unwrap();
        assert_eq!(sing.profile, AngularProfile::Standard);
        assert!(!checks[0].passes() && checks[1].passes());
        assert_eq!(sing.velocity([0.0, 0.0]), [0.0, 0.0]);
        assert!(sing.pressure([0.0, 0.0]).is_err());
    }

    #[test]
    fn rates() {
        assert!((eoc(&[0.2, 0.1], &[0.5, 0.25], RateBase::MeshSize).unwrap()[0] - 1.0).abs() < 1e-15);
        let col = [0.8877, 0.5350, 0.2680, 0.1346, 0.0674, 0.0337];
        let h: Vec<f64> = (0..6).map(|k| 0.25 / (1 << k) as f64).collect();
        let r = eoc(&col, &h, RateBase::MeshSize).unwrap();
        for (a, b) in r.iter().zip([0.73, 0.99, 0.99, 0.99, 0.99]) {
            assert!((a - b).abs() < 0.015, "{a} vs {b}");
        }
        let pcol = [0.9362, 0.3511, 0.1682, 0.0819, 0.0406, 0.0202];
        let r = eoc(&pcol, &h, RateBase::MeshSize).unwrap();
        for (a, b) in r.iter().zip([1.41, 1.06, 1.03, 1.01, 1.00]) {
            assert!((a - b).abs() < 0.015, "{a} vs {b}");
        }
        assert!(eoc(&[0.1, 0.0], &[1.0, 0.5], RateBase::MeshSize).is_err());
        let n = [100.0, 400.0, 1600.0];
        let e = [0.1, 0.05, 0.025];
        assert!((fitted_rate(&e, &n, RateBase::Ndof).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_row_table_has_empty_rates() {
        let row = StudyRow {
            n: 4,
            h: 0.25,
            ndof: 10,
            errors: ErrorRecord {
                u_energy: 1.0,
                ..Default::default()
            },
            iterations: 1,
            solution: None,
        };
        let csv = error_table_csv(&[row]);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 11);
        assert!(line.split(',').skip(2).step_by(2).all(str::is_empty));
    }
}
