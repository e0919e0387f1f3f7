//! Dense spectral probes of the discrete forms on small meshes: ellipticity
//! of the interior penalty form, the discrete inf-sup constant, and the
//! bound of the W norm by the discrete energy norm.
//!
//! Every probe works on the constrained subspace the solver uses: CR
//! Dirichlet coefficients are dropped, Neumann velocities are restricted to
//! zero mean and distributed-control pressures to zero mean.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    assemble_broken_stiffness, assemble_dg_parts, assemble_velocity_mass, pressure_mean_vector, velocity_mean_vectors,
    EdgeSet, Method, MethodConfig, ProblemKind,
};
use crate::error::{invalid, Error, Result};
use crate::mesh::Grid;
use crate::optctrl::{Discretization, ProblemSpec};
use crate::spaces::{build_space, Constraints, FeSpace, SpaceKind};
use crate::sparse::SparseMatrix;

/// Minimum Rayleigh quotient required of the penalty form.
pub const COERCIVITY_THRESHOLD: f64 = 0.1;

/// Orthonormal coordinates of the constrained subspace of a coefficient
/// space: kept coefficients, then the Euclidean complement of `functionals`.
struct Subspace {
    kept: Vec<usize>,
    /// `kept.len() x dim` with orthonormal columns, `None` for the identity.
    complement: Option<Mat<f64>>,
}

impl Subspace {
    fn new(n: usize, keep: impl Fn(usize) -> bool, functionals: &[&[f64]]) -> Result<Self> {
        let kept: Vec<usize> = (0..n).filter(|&i| keep(i)).collect();
        if functionals.is_empty() {
            return Ok(Self { kept, complement: None });
        }
        let m = functionals.len();
        if kept.len() <= m {
            return Err(invalid("constrained subspace is empty"));
        }
        let k = Mat::from_fn(kept.len(), m, |i, j| functionals[j][kept[i]]);
        let q = k.qr().compute_Q();
        Ok(Self {
            complement: Some(q.subcols(m, kept.len() - m).to_owned()),
            kept,
        })
    }

    fn dim(&self) -> usize {
        self.complement.as_ref().map_or(self.kept.len(), |q| q.ncols())
    }

    fn position(&self, n: usize) -> Vec<Option<usize>> {
        let mut pos = vec![None; n];
        for (k, &i) in self.kept.iter().enumerate() {
            pos[i] = Some(k);
        }
        pos
    }

    fn reduce_vectors(&self, x: &Mat<f64>) -> Mat<f64> {
        match &self.complement {
            Some(q) => q.transpose() * x,
            None => x.clone(),
        }
    }
}

/// `rows^T S cols` for a sparse `S`.
fn restrict(s: &SparseMatrix, rows: &Subspace, cols: &Subspace) -> Mat<f64> {
    let (rp, cp) = (rows.position(s.nrows()), cols.position(s.ncols()));
    let mut d = Mat::<f64>::zeros(rows.kept.len(), cols.kept.len());
    for (i, j, v) in s.triplets() {
        if let (Some(a), Some(b)) = (rp[i], cp[j]) {
            d[(a, b)] += v;
        }
    }
    let d = rows.reduce_vectors(&d);
    match &cols.complement {
        Some(q) => d * q,
        None => d,
    }
}

/// Eigenvalues of the pencil `(a, b)` in nondecreasing order; `b` must be
/// symmetric positive definite.
fn pencil_eigenvalues(a: &Mat<f64>, b: &Mat<f64>) -> Result<Vec<f64>> {
    let llt = b
        .llt(Side::Lower)
        .map_err(|_| invalid("norm matrix is not positive definite on the probe subspace"))?;
    let l = llt.L();
    let mut x = a.clone();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut y = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(y.as_mut());
    let sym = Mat::from_fn(y.nrows(), y.ncols(), |i, j| 0.5 * (y[(i, j)] + y[(j, i)]));
    sym.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::SolverFailure {
            reason: "symmetric eigensolver did not converge".into(),
            dim: sym.nrows(),
        })
}

/// `|v|_h^2` matrix: broken stiffness, plus the jump Gram matrix on `edges`
/// for DG.
pub fn energy_norm_matrix(grid: &Grid, space: &FeSpace, edges: EdgeSet) -> Result<SparseMatrix> {
    let k = assemble_broken_stiffness(grid, space)?;
    match space.kind {
        SpaceKind::CrVector => Ok(k),
        SpaceKind::Dg1Vector => Ok(k.add(&assemble_dg_parts(grid, space, edges)?.1)),
        other => Err(invalid(format!("{other:?} is not a velocity space"))),
    }
}

fn velocity_space(grid: &Grid, method: Method, kind: ProblemKind) -> Result<FeSpace> {
    let vk = match method {
        Method::Cr => SpaceKind::CrVector,
        Method::Dg => SpaceKind::Dg1Vector,
    };
    build_space(
        grid,
        vk,
        Constraints {
            dirichlet: method == Method::Cr && kind == ProblemKind::Distributed,
            mean_zero: kind == ProblemKind::Neumann,
        },
    )
}

fn velocity_subspace(grid: &Grid, space: &FeSpace, kind: ProblemKind) -> Result<Subspace> {
    let means = velocity_mean_vectors(grid, space)?;
    let functionals: Vec<&[f64]> = match kind {
        ProblemKind::Neumann => means.iter().map(|v| v.as_slice()).collect(),
        ProblemKind::Distributed => Vec::new(),
    };
    Subspace::new(space.n_coeffs(), |i| !space.is_constrained(i), &functionals)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoercivityReport {
    pub sigma: f64,
    /// Smallest eigenvalue of `A v = mu H v` on the constrained subspace.
    pub min_eigenvalue: f64,
    /// Smallest Rayleigh quotient over the random samples.
    pub min_sampled: f64,
    pub samples: usize,
}

impl CoercivityReport {
    pub fn passes(&self) -> bool {
        self.min_eigenvalue > COERCIVITY_THRESHOLD && self.min_sampled > COERCIVITY_THRESHOLD
    }
}

/// Ellipticity of the DG form `A0 + sigma J` relative to `|.|_h^2`.
pub fn coercivity_probe(
    grid: &Grid,
    kind: ProblemKind,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("penalty sigma must be positive, got {sigma}")));
    }
    let space = velocity_space(grid, Method::Dg, kind)?;
    let edges = EdgeSet::for_problem(kind);
    let (a0, j) = assemble_dg_parts(grid, &space, edges)?;
    let a = a0.add(&j.scaled(sigma));
    let h = energy_norm_matrix(grid, &space, edges)?;
    let sub = velocity_subspace(grid, &space, kind)?;
    let (ar, hr) = (restrict(&a, &sub, &sub), restrict(&h, &sub, &sub));
    let min_eigenvalue = pencil_eigenvalues(&ar, &hr)?[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_sampled = f64::INFINITY;
    for _ in 0..samples {
        let x = Mat::from_fn(sub.dim(), 1, |_, _| rng.gen_range(-1.0..1.0));
        let num = (x.transpose() * &ar * &x)[(0, 0)];
        let den = (x.transpose() * &hr * &x)[(0, 0)];
        min_sampled = min_sampled.min(num / den);
    }
    Ok(CoercivityReport {
        sigma,
        min_eigenvalue,
        min_sampled,
        samples,
    })
}

/// Discrete inf-sup constant `min_q max_v b(v, q) / (|v|_h |q|)`, the square
/// root of the smallest eigenvalue of `B H^{-1} B^T` against the pressure
/// mass.
pub fn inf_sup_constant(grid: &Grid, spec: &ProblemSpec, config: &MethodConfig) -> Result<f64> {
    let disc = Discretization::new(grid, spec, config)?;
    let edges = EdgeSet::for_problem(spec.kind);
    let h = energy_norm_matrix(grid, &disc.vel, edges)?;
    let vsub = velocity_subspace(grid, &disc.vel, spec.kind)?;
    let pmean = pressure_mean_vector(grid);
    let pfun: Vec<&[f64]> = match spec.kind {
        ProblemKind::Distributed => vec![pmean.as_slice()],
        ProblemKind::Neumann => Vec::new(),
    };
    let psub = Subspace::new(disc.pres.n_coeffs(), |_| true, &pfun)?;
    let hr = restrict(&h, &vsub, &vsub);
    let br = restrict(&disc.b, &psub, &vsub);
    let mp = restrict(&SparseMatrix::diagonal(&grid.topo.area), &psub, &psub);
    let llt = hr
        .llt(Side::Lower)
        .map_err(|_| invalid("velocity norm is not positive definite on the probe subspace"))?;
    let mut x = br.transpose().to_owned();
    llt.L().solve_lower_triangular_in_place(x.as_mut());
    let schur = x.transpose() * &x;
    let mu = pencil_eigenvalues(&schur, &mp)?[0];
    Ok(mu.max(0.0).sqrt())
}

/// Smallest `C` with `|v|_W <= C |v|_h` on the constrained velocity space.
pub fn w_norm_constant(grid: &Grid, kind: ProblemKind, config: &MethodConfig) -> Result<f64> {
    config.validate()?;
    let space = velocity_space(grid, config.method, kind)?;
    let h = energy_norm_matrix(grid, &space, EdgeSet::for_problem(kind))?;
    let m = assemble_velocity_mass(grid, &space)?;
    let sub = velocity_subspace(grid, &space, kind)?;
    let ev = pencil_eigenvalues(&restrict(&m, &sub, &sub), &restrict(&h, &sub, &sub))?;
    Ok(ev[ev.len() - 1].sqrt())
}

/// Largest over smallest value of a positive sequence.
pub fn spread(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("spread needs positive finite values"));
    }
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    Ok(max / min)
}
