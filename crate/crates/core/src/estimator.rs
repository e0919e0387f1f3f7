//! Residual a posteriori indicators for the discrete optimality system.
//!
//! Every term is stored squared and per triangle. Interior edge terms are
//! split equally between the two neighbours; boundary edge terms belong to
//! their only triangle. The estimator total is the square root of the sum
//! of all stored terms except the two oscillations.

use std::fmt::Write as _;

use crate::assembly::{Method, MethodConfig, ProblemKind};
use crate::error::{invalid, Result};
use crate::geometry::lerp;
use crate::mesh::Grid;
use crate::optctrl::{Discretization, OptimalitySolution, ProblemSpec};
use crate::quadrature::{edge_rule, triangle_rule};
use crate::spaces::{FeFunction, FeSpace};
use crate::{Mat2, Vec2};

/// Squared indicator contributions, one entry per triangle in each field.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementIndicators {
    /// `h_T^2 |f + y_h|^2` (distributed) or `h_T^2 |f|^2` (Neumann).
    pub state_volume: Vec<f64>,
    /// `h_T^2 |u_h - u_d|^2`.
    pub adjoint_volume: Vec<f64>,
    /// `|div u_h|^2`, DG only.
    pub state_divergence: Vec<f64>,
    /// `|div phi_h|^2`, DG only.
    pub adjoint_divergence: Vec<f64>,
    /// `h_e |[[p_h I - grad u_h]]|^2` on interior edges.
    pub state_stress_jump: Vec<f64>,
    /// `h_e |[[r_h I + grad phi_h]]|^2` on interior edges.
    pub adjoint_stress_jump: Vec<f64>,
    /// `h_e^{-1} |[[u_h]]|^2`, weighted by `sigma^2` for DG.
    pub state_jump: Vec<f64>,
    /// `h_e^{-1} |[[phi_h]]|^2`, weighted by `sigma^2` for DG.
    pub adjoint_jump: Vec<f64>,
    /// Neumann only: `h_e |(p_h I - grad u_h) n + y_h|^2` on boundary edges.
    pub state_boundary: Vec<f64>,
    /// Neumann only: `h_e |(r_h I + grad phi_h) n|^2` on boundary edges.
    pub adjoint_boundary: Vec<f64>,
    /// `|phi_h - Pi_h phi_h|^2` on the cell or on its boundary edges.
    pub control_consistency: Vec<f64>,
    pub osc_f: Vec<f64>,
    pub osc_ud: Vec<f64>,
}

pub const TERM_NAMES: [&str; 13] = [
    "state_volume",
    "adjoint_volume",
    "state_divergence",
    "adjoint_divergence",
    "state_stress_jump",
    "adjoint_stress_jump",
    "state_jump",
    "adjoint_jump",
    "state_boundary",
    "adjoint_boundary",
    "control_consistency",
    "osc_f",
    "osc_ud",
];

impl ElementIndicators {
    fn zeros(n: usize) -> Self {
        let z = vec![0.0; n];
        Self {
            state_volume: z.clone(),
            adjoint_volume: z.clone(),
            state_divergence: z.clone(),
            adjoint_divergence: z.clone(),
            state_stress_jump: z.clone(),
            adjoint_stress_jump: z.clone(),
            state_jump: z.clone(),
            adjoint_jump: z.clone(),
            state_boundary: z.clone(),
            adjoint_boundary: z.clone(),
            control_consistency: z.clone(),
            osc_f: z.clone(),
            osc_ud: z,
        }
    }

    pub fn n_triangles(&self) -> usize {
        self.state_volume.len()
    }

    /// All terms in [`TERM_NAMES`] order.
    pub fn terms(&self) -> [&[f64]; 13] {
        [
            &self.state_volume,
            &self.adjoint_volume,
            &self.state_divergence,
            &self.adjoint_divergence,
            &self.state_stress_jump,
            &self.adjoint_stress_jump,
            &self.state_jump,
            &self.adjoint_jump,
            &self.state_boundary,
            &self.adjoint_boundary,
            &self.control_consistency,
            &self.osc_f,
            &self.osc_ud,
        ]
    }

    fn state_terms(&self) -> [&[f64]; 5] {
        [
            &self.state_volume,
            &self.state_divergence,
            &self.state_stress_jump,
            &self.state_jump,
            &self.state_boundary,
        ]
    }

    fn adjoint_terms(&self) -> [&[f64]; 5] {
        [
            &self.adjoint_volume,
            &self.adjoint_divergence,
            &self.adjoint_stress_jump,
            &self.adjoint_jump,
            &self.adjoint_boundary,
        ]
    }

    /// Marking indicator `eta_T^2`: every term except the oscillations.
    pub fn element_squared(&self) -> Vec<f64> {
        let terms = self.terms();
        (0..self.n_triangles())
            .map(|t| terms[..11].iter().map(|v| v[t]).sum())
            .collect()
    }

    pub fn eta_state(&self) -> f64 {
        sum_sqrt(&self.state_terms())
    }

    pub fn eta_adjoint(&self) -> f64 {
        sum_sqrt(&self.adjoint_terms())
    }

    pub fn consistency(&self) -> f64 {
        self.control_consistency.iter().sum::<f64>().sqrt()
    }

    pub fn oscillation(&self) -> f64 {
        sum_sqrt(&[&self.osc_f, &self.osc_ud])
    }

    pub fn total(&self) -> f64 {
        self.element_squared().iter().sum::<f64>().sqrt()
    }

    /// CSV with one row per triangle: id, every term of [`TERM_NAMES`], and
    /// the marking indicator.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("triangle_id");
        for name in TERM_NAMES {
            s.push(',');
            s.push_str(name);
        }
        s.push_str(",total\n");
        let terms = self.terms();
        let totals = self.element_squared();
        for t in 0..self.n_triangles() {
            let _ = write!(s, "{t}");
            for v in terms {
                let _ = write!(s, ",{:.12e}", v[t]);
            }
            let _ = writeln!(s, ",{:.12e}", totals[t]);
        }
        s
    }
}

fn sum_sqrt(parts: &[&[f64]]) -> f64 {
    parts.iter().map(|v| v.iter().sum::<f64>()).sum::<f64>().sqrt()
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn sq(a: Vec2) -> f64 {
    a[0] * a[0] + a[1] * a[1]
}

/// `(s I + sign * G) n` for a constant pressure-like `s` and gradient `G`.
fn traction(s: f64, g: &Mat2, sign: f64, n: Vec2) -> Vec2 {
    [
        s * n[0] + sign * (g[0][0] * n[0] + g[0][1] * n[1]),
        s * n[1] + sign * (g[1][0] * n[0] + g[1][1] * n[1]),
    ]
}

fn divergence(g: &Mat2) -> f64 {
    g[0][0] + g[1][1]
}

/// Velocity value at physical point `x` of triangle `t`.
fn value_at(grid: &Grid, space: &FeSpace, f: &FeFunction, t: usize, x: Vec2) -> Vec2 {
    space.velocity_at(grid, f, t, grid.geometry(t).barycentric(x))
}

/// Computes every indicator of the estimator matching `disc.kind` and
/// `disc.method`, with quadrature of order `config.error_order`.
pub fn estimate(
    grid: &Grid,
    disc: &Discretization,
    spec: &ProblemSpec,
    sol: &OptimalitySolution,
    config: &MethodConfig,
) -> Result<ElementIndicators> {
    let nt = grid.n_triangles();
    if disc.pres.n_coeffs() != nt
        || sol.u.coeffs.len() != disc.vel.n_coeffs()
        || sol.phi.coeffs.len() != disc.vel.n_coeffs()
        || sol.p.coeffs.len() != nt
        || sol.r.coeffs.len() != nt
        || sol.y.coeffs.len() != disc.control.n_coeffs()
    {
        return Err(invalid("solution, discretization and mesh do not match"));
    }
    if spec.kind != disc.kind {
        return Err(invalid("problem kind differs from the discretization"));
    }
    let neumann = disc.kind == ProblemKind::Neumann;
    let dg = disc.method == Method::Dg;
    let jump_weight = if dg { config.sigma * config.sigma } else { 1.0 };
    let trule = triangle_rule(config.error_order)?;
    let erule = edge_rule(config.error_order)?;
    let vel = &disc.vel;
    let mut ind = ElementIndicators::zeros(nt);

    let grads_u: Vec<Mat2> = (0..nt).map(|t| vel.velocity_gradient(grid, &sol.u, t)).collect();
    let grads_phi: Vec<Mat2> = (0..nt).map(|t| vel.velocity_gradient(grid, &sol.phi, t)).collect();

    for t in 0..nt {
        let g = grid.geometry(t);
        let h2 = grid.topo.h_t[t].powi(2);
        let y_t = if neumann {
            [0.0; 2]
        } else {
            [sol.y.coeffs[2 * t], sol.y.coeffs[2 * t + 1]]
        };
        let points: Vec<(Vec2, f64, [f64; 3])> = trule
            .points
            .iter()
            .zip(&trule.weights)
            .map(|(l, w)| (g.point(*l), 2.0 * g.area * w, *l))
            .collect();
        let (mut f_res, mut ud_res) = (0.0, 0.0);
        let (mut f_int, mut ud_int) = ([0.0; 2], [0.0; 2]);
        let (mut f_sq, mut ud_sq) = (0.0, 0.0);
        for &(x, jw, l) in &points {
            let f = (spec.f)(x);
            let ud = (spec.u_d)(x);
            let uh = vel.velocity_at(grid, &sol.u, t, l);
            f_res += jw * sq([f[0] + y_t[0], f[1] + y_t[1]]);
            ud_res += jw * sq(sub(uh, ud));
            for c in 0..2 {
                f_int[c] += jw * f[c];
                ud_int[c] += jw * ud[c];
            }
            f_sq += jw * sq(f);
            ud_sq += jw * sq(ud);
        }
        ind.state_volume[t] = h2 * f_res;
        ind.adjoint_volume[t] = h2 * ud_res;
        // |g - mean g|^2 integrated = int |g|^2 - |int g|^2 / |T|
        ind.osc_f[t] = h2 * (f_sq - sq(f_int) / g.area).max(0.0);
        ind.osc_ud[t] = h2 * (ud_sq - sq(ud_int) / g.area).max(0.0);
        if dg {
            ind.state_divergence[t] = g.area * divergence(&grads_u[t]).powi(2);
            ind.adjoint_divergence[t] = g.area * divergence(&grads_phi[t]).powi(2);
        }
        if !neumann {
            // phi_h is linear on T, so phi_h - mean is exact at the rule points
            let mean: Vec2 = {
                let local = vel.local_coeffs(grid, t);
                [0, 1].map(|c| (0..3).map(|i| sol.phi.coeffs[local[i][c]]).sum::<f64>() / 3.0)
            };
            ind.control_consistency[t] = points
                .iter()
                .map(|&(_, jw, l)| jw * sq(sub(vel.velocity_at(grid, &sol.phi, t, l), mean)))
                .sum();
        }
    }

    let dirichlet = spec.dirichlet.as_ref();
    for e in 0..grid.n_edges() {
        let (tp, tm) = grid.topo.triangles_of_edge[e];
        let he = grid.topo.h_e[e];
        let n = grid.topo.normal[e];
        let (a, b) = grid.edge_points(e);
        let xs: Vec<(Vec2, f64)> = erule
            .points
            .iter()
            .zip(&erule.weights)
            .map(|(s, w)| (lerp(a, b, *s), *w))
            .collect();
        match tm {
            Some(tm) => {
                let ds = sub(
                    traction(sol.p.coeffs[tp], &grads_u[tp], -1.0, n),
                    traction(sol.p.coeffs[tm], &grads_u[tm], -1.0, n),
                );
                let dr = sub(
                    traction(sol.r.coeffs[tp], &grads_phi[tp], 1.0, n),
                    traction(sol.r.coeffs[tm], &grads_phi[tm], 1.0, n),
                );
                let stress = he * he * sq(ds);
                let adj_stress = he * he * sq(dr);
                // (1/h_e) int_e |v+ - v-|^2 is the edge mean of the squared jump
                let (mut ju, mut jphi) = (0.0, 0.0);
                for &(x, w) in &xs {
                    ju += w * sq(sub(
                        value_at(grid, vel, &sol.u, tp, x),
                        value_at(grid, vel, &sol.u, tm, x),
                    ));
                    jphi += w * sq(sub(
                        value_at(grid, vel, &sol.phi, tp, x),
                        value_at(grid, vel, &sol.phi, tm, x),
                    ));
                }
                for t in [tp, tm] {
                    ind.state_stress_jump[t] += 0.5 * stress;
                    ind.adjoint_stress_jump[t] += 0.5 * adj_stress;
                    ind.state_jump[t] += 0.5 * jump_weight * ju;
                    ind.adjoint_jump[t] += 0.5 * jump_weight * jphi;
                }
            }
            None => {
                if neumann {
                    let k = disc
                        .control
                        .boundary_slot(e)
                        .ok_or_else(|| invalid("boundary edge without a control slot"))?;
                    let y = [sol.y.coeffs[2 * k], sol.y.coeffs[2 * k + 1]];
                    let s = traction(sol.p.coeffs[tp], &grads_u[tp], -1.0, n);
                    ind.state_boundary[tp] += he * he * sq([s[0] + y[0], s[1] + y[1]]);
                    ind.adjoint_boundary[tp] += he * he * sq(traction(sol.r.coeffs[tp], &grads_phi[tp], 1.0, n));
                    let vals: Vec<Vec2> = xs.iter().map(|&(x, _)| value_at(grid, vel, &sol.phi, tp, x)).collect();
                    let mean = [0, 1].map(|c| xs.iter().zip(&vals).map(|((_, w), v)| w * v[c]).sum::<f64>());
                    ind.control_consistency[tp] += he
                        * xs.iter()
                            .zip(&vals)
                            .map(|((_, w), v)| w * sq(sub(*v, mean)))
                            .sum::<f64>();
                } else {
                    let (mut ju, mut jphi) = (0.0, 0.0);
                    for &(x, w) in &xs {
                        let g = dirichlet.map_or([0.0; 2], |g| g(x));
                        ju += w * sq(sub(value_at(grid, vel, &sol.u, tp, x), g));
                        jphi += w * sq(value_at(grid, vel, &sol.phi, tp, x));
                    }
                    ind.state_jump[tp] += jump_weight * ju;
                    ind.adjoint_jump[tp] += jump_weight * jphi;
                }
            }
        }
    }
    Ok(ind)
}

/// `eta_total / total_error`.
pub fn efficiency_index(indicators: &ElementIndicators, total_error: f64) -> Result<f64> {
    if !(total_error > 0.0) || !total_error.is_finite() {
        return Err(invalid(format!(
            "efficiency index needs a positive error, got {total_error}"
        )));
    }
    Ok(indicators.total() / total_error)
}
