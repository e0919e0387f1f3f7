//! Affine triangle geometry shared by assembly, estimators and error norms.

use crate::Vec2;

/// Geometric data of one straight-sided triangle.
#[derive(Clone, Copy, Debug)]
pub struct TriangleGeometry {
    pub vertices: [Vec2; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates, constant on the element.
    pub grad_bary: [Vec2; 3],
}

impl TriangleGeometry {
    pub fn new(vertices: [Vec2; 3]) -> Self {
        let [p0, p1, p2] = vertices;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let area = 0.5 * det;
        let inv = 1.0 / det;
        let mut grad_bary = [[0.0; 2]; 3];
        for i in 0..3 {
            let a = vertices[(i + 1) % 3];
            let b = vertices[(i + 2) % 3];
            grad_bary[i] = [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv];
        }
        Self {
            vertices,
            area,
            grad_bary,
        }
    }

    /// Signed area (positive for counterclockwise ordering).
    pub fn signed_area(&self) -> f64 {
        self.area
    }

    pub fn diameter(&self) -> f64 {
        (0..3)
            .map(|i| dist(self.vertices[i], self.vertices[(i + 1) % 3]))
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self) -> Vec2 {
        let [a, b, c] = self.vertices;
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Physical point for barycentric coordinates `l`.
    pub fn point(&self, l: [f64; 3]) -> Vec2 {
        let [a, b, c] = self.vertices;
        [
            l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
            l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        ]
    }

    /// Barycentric coordinates of a physical point.
    pub fn barycentric(&self, x: Vec2) -> [f64; 3] {
        let mut l = [0.0; 3];
        for (i, li) in l.iter_mut().enumerate() {
            let v = self.vertices[i];
            let g = self.grad_bary[i];
            // lambda_i is affine with value 1 at vertex i
            *li = 1.0 + g[0] * (x[0] - v[0]) + g[1] * (x[1] - v[1]);
        }
        l
    }

    /// Midpoint of local edge `i` (the edge opposite vertex `i`).
    pub fn edge_midpoint(&self, i: usize) -> Vec2 {
        let a = self.vertices[(i + 1) % 3];
        let b = self.vertices[(i + 2) % 3];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Outward unit normal and length of local edge `i`.
    pub fn edge_normal(&self, i: usize) -> (Vec2, f64) {
        let a = self.vertices[(i + 1) % 3];
        let b = self.vertices[(i + 2) % 3];
        let t = [b[0] - a[0], b[1] - a[1]];
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        // counterclockwise ordering: the outward normal is the tangent rotated clockwise
        ([t[1] / len, -t[0] / len], len)
    }

    /// Smallest interior angle in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..3 {
            let p = self.vertices[i];
            let a = self.vertices[(i + 1) % 3];
            let b = self.vertices[(i + 2) % 3];
            let u = [a[0] - p[0], a[1] - p[1]];
            let v = [b[0] - p[0], b[1] - p[1]];
            let cos = (u[0] * v[0] + u[1] * v[1]) / (norm(u) * norm(v));
            best = best.min(cos.clamp(-1.0, 1.0).acos());
        }
        best
    }
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn norm(a: Vec2) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn lerp(a: Vec2, b: Vec2, t: f64) -> Vec2 {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}
