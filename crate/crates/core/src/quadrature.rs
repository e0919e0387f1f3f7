//! Gauss rules on the reference triangle and the unit segment.
//!
//! Triangle rules are collapsed tensor Gauss-Legendre rules: all weights are
//! positive and points are interior, so no tabulated rules are needed.

use crate::error::{invalid, Result};

pub const MAX_TRIANGLE_ORDER: usize = 10;
pub const MAX_EDGE_ORDER: usize = 21;

#[derive(Clone, Debug)]
pub struct QuadRule<P> {
    pub points: Vec<P>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// Barycentric points, weights summing to 1/2 (reference triangle area).
pub type TriangleRule = QuadRule<[f64; 3]>;
/// Points in `[0, 1]`, weights summing to 1.
pub type EdgeRule = QuadRule<f64>;

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 0..m {
        // Chebyshev-type initial guess for the k-th root on [-1, 1]
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=m {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

pub fn edge_rule(order: usize) -> Result<EdgeRule> {
    if !(1..=MAX_EDGE_ORDER).contains(&order) {
        return Err(invalid(format!("edge rule order {order} not in 1..={MAX_EDGE_ORDER}")));
    }
    let (points, weights) = gauss_legendre((order + 1).div_ceil(2));
    Ok(QuadRule { points, weights, order })
}

pub fn triangle_rule(order: usize) -> Result<TriangleRule> {
    if !(1..=MAX_TRIANGLE_ORDER).contains(&order) {
        return Err(invalid(format!(
            "triangle rule order {order} not in 1..={MAX_TRIANGLE_ORDER}"
        )));
    }
    // the Duffy Jacobian (1 - s) raises the degree in s by one
    let (gp, gw) = gauss_legendre((order + 2).div_ceil(2));
    let mut points = Vec::with_capacity(gp.len() * gp.len());
    let mut weights = Vec::with_capacity(gp.len() * gp.len());
    for (&s, &ws) in gp.iter().zip(&gw) {
        for (&t, &wt) in gp.iter().zip(&gw) {
            let x = s;
            let y = t * (1.0 - s);
            points.push([1.0 - x - y, x, y]);
            weights.push(ws * wt * (1.0 - s));
        }
    }
    Ok(QuadRule { points, weights, order })
}
