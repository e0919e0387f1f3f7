//! Conforming triangulations, edge topology and newest-vertex bisection.
//!
//! Triangles are stored counterclockwise. Local edge `i` of a triangle is the
//! edge opposite local vertex `i`; `refinement_edge[t]` names the local edge
//! that newest-vertex bisection splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::geometry::{dist, TriangleGeometry};
use crate::Vec2;

const COORD_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Triangulation {
    vertices: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    refinement_edge: Vec<u8>,
    /// Boundary edges keyed by sorted vertex pair.
    boundary: BTreeMap<(usize, usize), u32>,
    nominal_h: Option<f64>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn local_edge(tri: &[usize; 3], i: usize) -> (usize, usize) {
    (tri[(i + 1) % 3], tri[(i + 2) % 3])
}

impl Triangulation {
    /// Builds a triangulation and checks orientation, edge multiplicity and
    /// that the tagged edges are exactly the edges with one neighbour.
    ///
    /// Triangles are stored rotated so that the refinement edge is local
    /// edge 0; the stored vertex order is therefore exactly what
    /// [`Triangulation::to_text`] writes.
    pub fn new(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        refinement_edge: Vec<u8>,
        boundary: BTreeMap<(usize, usize), u32>,
    ) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            refinement_edge,
            boundary,
            nominal_h: None,
        };
        mesh.validate()?;
        Ok(mesh.canonical())
    }

    fn canonical(mut self) -> Self {
        for (tri, r) in self.triangles.iter_mut().zip(self.refinement_edge.iter_mut()) {
            tri.rotate_left(*r as usize);
            *r = 0;
        }
        self
    }

    fn validate(&self) -> Result<()> {
        if self.refinement_edge.len() != self.triangles.len() {
            return Err(invalid("refinement_edge length differs from triangle count"));
        }
        let nv = self.vertices.len();
        let mut count: HashMap<(usize, usize), u32> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(invalid(format!("triangle {t} references a missing vertex")));
            }
            if self.refinement_edge[t] > 2 {
                return Err(invalid(format!("triangle {t} has refinement edge > 2")));
            }
            if self.geometry(t).area <= 0.0 {
                return Err(invalid(format!("triangle {t} is not counterclockwise")));
            }
            for i in 0..3 {
                let (a, b) = local_edge(tri, i);
                *count.entry(key(a, b)).or_default() += 1;
            }
        }
        for (e, &c) in &count {
            let tagged = self.boundary.contains_key(e);
            match (c, tagged) {
                (1, true) | (2, false) => {}
                (1, false) => {
                    return Err(invalid(format!(
                        "edge {e:?} has one neighbour but no boundary tag (hanging node?)"
                    )))
                }
                _ => return Err(invalid(format!("edge {e:?} has {c} neighbours, tagged={tagged}"))),
            }
        }
        if let Some(e) = self.boundary.keys().find(|e| !count.contains_key(e)) {
            return Err(invalid(format!("boundary tag on non-edge {e:?}")));
        }
        Ok(())
    }

    /// Assigns tags to the one-neighbour edges via `classify(midpoint)` and
    /// takes the longest edge of each triangle as its refinement edge.
    fn from_triangles(vertices: Vec<Vec2>, triangles: Vec<[usize; 3]>, classify: impl Fn(Vec2) -> u32) -> Result<Self> {
        let mut count: BTreeMap<(usize, usize), u32> = BTreeMap::new();
        for tri in &triangles {
            for i in 0..3 {
                let (a, b) = local_edge(tri, i);
                *count.entry(key(a, b)).or_default() += 1;
            }
        }
        let boundary = count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|((a, b), _)| {
                let (pa, pb) = (vertices[a], vertices[b]);
                ((a, b), classify([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]))
            })
            .collect();
        let refinement_edge = triangles
            .iter()
            .map(|tri| {
                let len = |i: usize| {
                    let (a, b) = local_edge(tri, i);
                    dist(vertices[a], vertices[b])
                };
                let mut best = 0;
                for i in 1..3 {
                    if len(i) > len(best) * (1.0 + 1e-12) {
                        best = i;
                    }
                }
                best as u8
            })
            .collect();
        Self::new(vertices, triangles, refinement_edge, boundary)
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn refinement_edge(&self) -> &[u8] {
        &self.refinement_edge
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Boundary edges as (sorted vertex pair, tag), in ascending pair order.
    pub fn boundary_edges(&self) -> impl Iterator<Item = ((usize, usize), u32)> + '_ {
        self.boundary.iter().map(|(&k, &v)| (k, v))
    }

    pub fn boundary_tag(&self, a: usize, b: usize) -> Option<u32> {
        self.boundary.get(&key(a, b)).copied()
    }

    pub fn geometry(&self, t: usize) -> TriangleGeometry {
        let [a, b, c] = self.triangles[t];
        TriangleGeometry::new([self.vertices[a], self.vertices[b], self.vertices[c]])
    }

    /// Reported mesh size: `1/n` for structured meshes, else the max diameter.
    pub fn h(&self) -> f64 {
        self.nominal_h.unwrap_or_else(|| self.max_diameter())
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.geometry(t).diameter())
            .fold(0.0, f64::max)
    }

    pub fn min_angle(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| self.geometry(t).min_angle())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.geometry(t).area).sum()
    }

    /// Plain-text export: header `V T E`, vertex lines, triangle lines
    /// (rotated so the refinement edge is local edge 0), boundary lines `a b tag`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.boundary.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?}", v[0], v[1]);
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            let r = self.refinement_edge[t] as usize;
            let _ = writeln!(s, "{} {} {}", tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]);
        }
        for (&(a, b), tag) in &self.boundary {
            let _ = writeln!(s, "{a} {b} {tag}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut fields = |what: &str| -> Result<Vec<String>> {
            lines
                .next()
                .map(|l| l.split_whitespace().map(str::to_owned).collect())
                .ok_or_else(|| invalid(format!("mesh text truncated while reading {what}")))
        };
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| invalid(format!("cannot parse `{s}` in mesh text")))
        }
        let header = fields("header")?;
        if header.len() != 3 {
            return Err(invalid("mesh header must be `V T E`"));
        }
        let (nv, nt, ne): (usize, usize, usize) = (num(&header[0])?, num(&header[1])?, num(&header[2])?);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let f = fields("vertex")?;
            if f.len() != 2 {
                return Err(invalid("vertex line must have 2 entries"));
            }
            vertices.push([num(&f[0])?, num(&f[1])?]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let f = fields("triangle")?;
            if f.len() != 3 {
                return Err(invalid("triangle line must have 3 entries"));
            }
            triangles.push([num(&f[0])?, num(&f[1])?, num(&f[2])?]);
        }
        let mut boundary = BTreeMap::new();
        for _ in 0..ne {
            let f = fields("boundary edge")?;
            if f.len() != 3 {
                return Err(invalid("boundary line must have 3 entries"));
            }
            let (a, b): (usize, usize) = (num(&f[0])?, num(&f[1])?);
            boundary.insert(key(a, b), num(&f[2])?);
        }
        Self::new(vertices, triangles, vec![0; nt], boundary)
    }
}

/// Unit square `(0,1)^2` split into `n x n` squares, each cut along the
/// bottom-left to top-right diagonal. Tags: 0 bottom, 1 right, 2 top, 3 left.
pub fn generate_unit_square(n: usize) -> Result<Triangulation> {
    if n == 0 {
        return Err(invalid("unit square needs n >= 1"));
    }
    let nf = n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut mesh = Triangulation::from_triangles(vertices, triangles, |m| {
        if m[1] < COORD_TOL {
            0
        } else if m[0] > 1.0 - COORD_TOL {
            1
        } else if m[1] > 1.0 - COORD_TOL {
            2
        } else {
            3
        }
    })?;
    mesh.nominal_h = Some(1.0 / nf);
    Ok(mesh)
}

/// L-shape `(-1,1)^2 \ ([0,1) x (-1,0])` with `n` squares per unit length.
///
/// Tags walk the boundary counterclockwise from the reentrant corner:
/// 0 `y=0, x>0`; 1 `x=1`; 2 `y=1`; 3 `x=-1`; 4 `y=-1`; 5 `x=0, y<0`.
pub fn generate_lshape(n: usize) -> Result<Triangulation> {
    if n == 0 {
        return Err(invalid("L-shape needs n >= 1"));
    }
    let m = 2 * n;
    let nf = n as f64;
    let coord = |i: usize| (i as f64 - nf) / nf;
    let excluded_vertex = |i: usize, j: usize| i > n && j < n;
    let mut index = vec![usize::MAX; (m + 1) * (m + 1)];
    let mut vertices = Vec::new();
    for j in 0..=m {
        for i in 0..=m {
            if !excluded_vertex(i, j) {
                index[j * (m + 1) + i] = vertices.len();
                vertices.push([coord(i), coord(j)]);
            }
        }
    }
    let id = |i: usize, j: usize| index[j * (m + 1) + i];
    let mut triangles = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if i >= n && j < n {
                continue;
            }
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut mesh = Triangulation::from_triangles(vertices, triangles, |p| {
        let near = |a: f64, b: f64| (a - b).abs() < COORD_TOL;
        if near(p[1], 0.0) && p[0] > 0.0 {
            0
        } else if near(p[0], 1.0) {
            1
        } else if near(p[1], 1.0) {
            2
        } else if near(p[0], -1.0) {
            3
        } else if near(p[1], -1.0) {
            4
        } else {
            5
        }
    })?;
    mesh.nominal_h = Some(1.0 / nf);
    Ok(mesh)
}

/// Edge-based connectivity derived from a [`Triangulation`].
///
/// Edges are numbered in order of first appearance when visiting triangles
/// by index and local edges `0, 1, 2`. The first triangle seen is `T+`, and
/// `normal[e]` is the unit normal pointing out of `T+` into `T-`.
#[derive(Clone, Debug)]
pub struct EdgeTopology {
    pub edges: Vec<[usize; 2]>,
    pub edge_of_triangle: Vec<[usize; 3]>,
    pub triangles_of_edge: Vec<(usize, Option<usize>)>,
    /// Local edge index inside `T+` and (if present) `T-`.
    pub local_index: Vec<(u8, u8)>,
    pub normal: Vec<Vec2>,
    pub h_e: Vec<f64>,
    pub h_t: Vec<f64>,
    pub area: Vec<f64>,
    pub boundary_tag: Vec<Option<u32>>,
}

impl EdgeTopology {
    pub fn build(mesh: &Triangulation) -> Self {
        let nt = mesh.n_triangles();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * nt / 2 + 8);
        let mut edges = Vec::new();
        let mut edge_of_triangle = vec![[0; 3]; nt];
        let mut triangles_of_edge: Vec<(usize, Option<usize>)> = Vec::new();
        let mut local_index: Vec<(u8, u8)> = Vec::new();
        let mut normal = Vec::new();
        let mut h_e = Vec::new();
        let mut h_t = Vec::with_capacity(nt);
        let mut area = Vec::with_capacity(nt);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let g = mesh.geometry(t);
            h_t.push(g.diameter());
            area.push(g.area);
            for i in 0..3 {
                let (a, b) = local_edge(tri, i);
                match lookup.get(&key(a, b)) {
                    Some(&e) => {
                        triangles_of_edge[e].1 = Some(t);
                        local_index[e].1 = i as u8;
                        edge_of_triangle[t][i] = e;
                    }
                    None => {
                        let e = edges.len();
                        lookup.insert(key(a, b), e);
                        let (k0, k1) = key(a, b);
                        edges.push([k0, k1]);
                        triangles_of_edge.push((t, None));
                        local_index.push((i as u8, u8::MAX));
                        let (n, len) = g.edge_normal(i);
                        normal.push(n);
                        h_e.push(len);
                        edge_of_triangle[t][i] = e;
                    }
                }
            }
        }
        let boundary_tag = edges.iter().map(|&[a, b]| mesh.boundary_tag(a, b)).collect();
        Self {
            edges,
            edge_of_triangle,
            triangles_of_edge,
            local_index,
            normal,
            h_e,
            h_t,
            area,
            boundary_tag,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_boundary(&self, e: usize) -> bool {
        self.triangles_of_edge[e].1.is_none()
    }

    pub fn boundary_edge_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(|&e| self.is_boundary(e))
    }

    pub fn interior_edge_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(|&e| !self.is_boundary(e))
    }

    /// Copy with `T+` and `T-` exchanged on every interior edge.
    pub fn with_flipped_orientation(&self) -> Self {
        let mut out = self.clone();
        for e in 0..out.n_edges() {
            if let (tp, Some(tm)) = out.triangles_of_edge[e] {
                out.triangles_of_edge[e] = (tm, Some(tp));
                let (lp, lm) = out.local_index[e];
                out.local_index[e] = (lm, lp);
                out.normal[e] = [-out.normal[e][0], -out.normal[e][1]];
            }
        }
        out
    }
}

/// A triangulation bundled with its edge topology.
#[derive(Clone, Debug)]
pub struct Grid {
    pub mesh: Triangulation,
    pub topo: EdgeTopology,
}

impl Grid {
    pub fn new(mesh: Triangulation) -> Self {
        let topo = EdgeTopology::build(&mesh);
        Self { mesh, topo }
    }

    pub fn n_triangles(&self) -> usize {
        self.mesh.n_triangles()
    }

    pub fn n_edges(&self) -> usize {
        self.topo.n_edges()
    }

    pub fn geometry(&self, t: usize) -> TriangleGeometry {
        self.mesh.geometry(t)
    }

    /// Endpoints of edge `e`, ordered counterclockwise with respect to `T+`.
    pub fn edge_points(&self, e: usize) -> (Vec2, Vec2) {
        let (tp, _) = self.topo.triangles_of_edge[e];
        let i = self.topo.local_index[e].0 as usize;
        let tri = self.mesh.triangles()[tp];
        let v = self.mesh.vertices();
        (v[tri[(i + 1) % 3]], v[tri[(i + 2) % 3]])
    }
}

/// Newest-vertex bisection of the marked triangles plus conforming closure.
pub fn refine_nvb(mesh: &Triangulation, marked: &[usize]) -> Result<Triangulation> {
    let nt = mesh.n_triangles();
    if let Some(&t) = marked.iter().find(|&&t| t >= nt) {
        return Err(invalid(format!("marked triangle {t} out of range (have {nt})")));
    }
    if marked.is_empty() {
        return Ok(mesh.clone());
    }
    let topo = EdgeTopology::build(mesh);
    let ref_edge = |t: usize| topo.edge_of_triangle[t][mesh.refinement_edge[t] as usize];
    let mut edge_marked = vec![false; topo.n_edges()];
    let mut stack = Vec::new();
    for &t in marked {
        let e = ref_edge(t);
        if !edge_marked[e] {
            edge_marked[e] = true;
            stack.push(e);
        }
    }
    // closure: a triangle with any marked edge must also split its refinement edge
    while let Some(e) = stack.pop() {
        let (tp, tm) = topo.triangles_of_edge[e];
        for t in std::iter::once(tp).chain(tm) {
            let r = ref_edge(t);
            if !edge_marked[r] {
                edge_marked[r] = true;
                stack.push(r);
            }
        }
    }

    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut boundary = BTreeMap::new();
    for (e, &[a, b]) in topo.edges.iter().enumerate() {
        if !edge_marked[e] {
            continue;
        }
        let (pa, pb) = (vertices[a], vertices[b]);
        let m = vertices.len();
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        midpoint.insert((a, b), m);
    }
    for (&(a, b), &tag) in &mesh.boundary {
        match midpoint.get(&(a, b)) {
            Some(&m) => {
                boundary.insert(key(a, m), tag);
                boundary.insert(key(m, b), tag);
            }
            None => {
                boundary.insert((a, b), tag);
            }
        }
    }

    fn bisect(tri: [usize; 3], midpoint: &HashMap<(usize, usize), usize>, out: &mut Vec<[usize; 3]>) {
        let [a, b, c] = tri;
        match midpoint.get(&key(b, c)) {
            Some(&m) => {
                bisect([m, a, b], midpoint, out);
                bisect([m, c, a], midpoint, out);
            }
            None => out.push(tri),
        }
    }

    let mut triangles = Vec::with_capacity(2 * nt);
    let mut refinement_edge = Vec::with_capacity(2 * nt);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !edge_marked[ref_edge(t)] {
            triangles.push(*tri);
            refinement_edge.push(mesh.refinement_edge[t]);
            continue;
        }
        let r = mesh.refinement_edge[t] as usize;
        let rotated = [tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]];
        bisect(rotated, &midpoint, &mut triangles);
        refinement_edge.resize(triangles.len(), 0);
    }
    Triangulation::new(vertices, triangles, refinement_edge, boundary)
}

/// Marks every triangle once.
pub fn refine_uniform(mesh: &Triangulation) -> Result<Triangulation> {
    let all: Vec<usize> = (0..mesh.n_triangles()).collect();
    refine_nvb(mesh, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn euler_ok(mesh: &Triangulation) -> bool {
        let topo = EdgeTopology::build(mesh);
        let (v, e, t) = (
            mesh.n_vertices() as i64,
            topo.n_edges() as i64,
            mesh.n_triangles() as i64,
        );
        let b = topo.boundary_edge_ids().count() as i64;
        v - e + t == 1 && 2 * e == 3 * t + b
    }

    #[test]
    fn unit_square_counts() {
        let m1 = generate_unit_square(1).unwrap();
        assert_eq!((m1.n_triangles(), m1.n_vertices()), (2, 4));
        assert_eq!(EdgeTopology::build(&m1).n_edges(), 5);
        let m4 = generate_unit_square(4).unwrap();
        assert_eq!((m4.n_triangles(), m4.n_vertices()), (32, 25));
        assert_eq!(EdgeTopology::build(&m4).n_edges(), 56);
        assert_eq!(m4.h(), 0.25);
        assert!((m4.max_diameter() - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!(euler_ok(&m4));
        assert!(generate_unit_square(0).is_err());
    }

    #[test]
    fn lshape_counts() {
        let m1 = generate_lshape(1).unwrap();
        assert_eq!(m1.n_triangles(), 6);
        let m2 = generate_lshape(2).unwrap();
        assert_eq!((m2.n_triangles(), m2.n_vertices()), (24, 21));
        assert!(euler_ok(&m2));
        for n in 1..5 {
            let m = generate_lshape(n).unwrap();
            assert!(m.vertices().iter().any(|v| v[0] == 0.0 && v[1] == 0.0));
            assert!((m.area() - 3.0).abs() < 1e-13);
        }
        assert!(generate_lshape(0).is_err());
        let tags: std::collections::BTreeSet<u32> = m2.boundary_edges().map(|(_, t)| t).collect();
        assert_eq!(tags.len(), 6);
    }

    #[test]
    fn interior_normals_are_opposite() {
        let mesh = generate_lshape(3).unwrap();
        let topo = EdgeTopology::build(&mesh);
        for e in topo.interior_edge_ids() {
            let (tp, tm) = topo.triangles_of_edge[e];
            let (np, _) = mesh.geometry(tp).edge_normal(topo.local_index[e].0 as usize);
            let (nm, _) = mesh.geometry(tm.unwrap()).edge_normal(topo.local_index[e].1 as usize);
            assert!((np[0] + nm[0]).abs() < 1e-14 && (np[1] + nm[1]).abs() < 1e-14);
            assert_eq!(np, topo.normal[e]);
            assert!(topo.h_e[e] <= topo.h_t[tp] + 1e-15);
        }
    }

    #[test]
    fn empty_marking_is_identity() {
        let mesh = generate_unit_square(3).unwrap();
        assert_eq!(refine_nvb(&mesh, &[]).unwrap(), mesh);
        assert!(refine_nvb(&mesh, &[18]).is_err());
    }

    #[test]
    fn diagonal_bisection_splits_both_neighbours() {
        let mesh = generate_unit_square(1).unwrap();
        let fine = refine_nvb(&mesh, &[0]).unwrap();
        assert_eq!(fine.n_triangles(), 4);
        assert_eq!(fine.n_vertices(), 5);
    }

    #[test]
    fn uniform_sweep_doubles() {
        let mut mesh = generate_unit_square(2).unwrap();
        for _ in 0..4 {
            let nt = mesh.n_triangles();
            mesh = refine_uniform(&mesh).unwrap();
            assert_eq!(mesh.n_triangles(), 2 * nt);
        }
    }

    #[test]
    fn boundary_tags_are_inherited() {
        let mesh = generate_unit_square(1).unwrap();
        let fine = refine_uniform(&refine_uniform(&mesh).unwrap()).unwrap();
        for ((a, b), tag) in fine.boundary_edges() {
            let (pa, pb) = (fine.vertices()[a], fine.vertices()[b]);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let expect = if mid[1] == 0.0 {
                0
            } else if mid[0] == 1.0 {
                1
            } else if mid[1] == 1.0 {
                2
            } else {
                3
            };
            assert_eq!(tag, expect);
        }
    }

    #[test]
    fn text_round_trip() {
        let mesh = generate_lshape(2).unwrap();
        let mesh = refine_nvb(&mesh, &[0, 5, 7]).unwrap();
        let text = mesh.to_text();
        let back = Triangulation::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.vertices(), mesh.vertices());
        // refinement edges survive the round trip
        let again = refine_nvb(&back, &[3]).unwrap();
        let direct = refine_nvb(&mesh, &[3]).unwrap();
        assert_eq!(again.n_triangles(), direct.n_triangles());
        assert!(Triangulation::from_text("3 1 0\n0 0\n1 0\n").is_err());
    }

    #[test]
    fn random_rounds_preserve_shape_and_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for start in [generate_unit_square(2).unwrap(), generate_lshape(1).unwrap()] {
            let bound = start.min_angle();
            let area = start.area();
            let mut mesh = start;
            for _ in 0..10 {
                let marked: Vec<usize> = (0..mesh.n_triangles()).filter(|_| rng.gen_bool(0.2)).collect();
                mesh = refine_nvb(&mesh, &marked).unwrap();
                assert!(mesh.min_angle() >= bound - 1e-12);
                assert!((mesh.area() - area).abs() < 1e-14 * area.max(1.0) * 10.0);
                assert!(euler_ok(&mesh));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn refinement_conforming_and_area_exact(seed in any::<u64>(), rounds in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mesh = generate_lshape(1).unwrap();
            let bound = mesh.min_angle();
            for _ in 0..rounds {
                let marked: Vec<usize> = (0..mesh.n_triangles()).filter(|_| rng.gen_bool(0.3)).collect();
                let parent = mesh.clone();
                mesh = refine_nvb(&parent, &marked).unwrap();
                // every marked parent is gone and areas are conserved
                prop_assert!(mesh.n_triangles() >= parent.n_triangles() + marked.len());
                prop_assert!((mesh.area() - parent.area()).abs() <= 1e-14 * 3.0 * 4.0);
                prop_assert!(mesh.min_angle() >= bound - 1e-12);
            }
        }
    }
}
