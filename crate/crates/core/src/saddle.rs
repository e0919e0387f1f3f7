//! Symmetric indefinite block systems and their direct solution.

use std::ops::Range;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::Solve;
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, IntranodeLbltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::{amd, SupernodalThreshold};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Conj, Mat, Par, Side};

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Named contiguous unknown blocks of a monolithic system.
#[derive(Clone, Debug, Default)]
pub struct BlockLayout {
    names: Vec<String>,
    ranges: Vec<Range<usize>>,
    pairs: Vec<(usize, usize)>,
}

impl BlockLayout {
    pub fn push(&mut self, name: &str, len: usize) -> usize {
        let start = self.dim();
        self.names.push(name.to_owned());
        self.ranges.push(start..start + len);
        self.ranges.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.ranges[block].clone()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Declares that entry `i` of block `a` and entry `i` of block `b` are
    /// eliminated together. Both blocks must have equal length.
    pub fn pair(&mut self, a: usize, b: usize) {
        assert_eq!(
            self.ranges[a].len(),
            self.ranges[b].len(),
            "paired blocks differ in length"
        );
        self.pairs.push((a, b));
    }

    /// Elimination group of every unknown; unpaired unknowns form singleton
    /// groups.
    pub fn groups(&self) -> Vec<usize> {
        let mut g: Vec<usize> = (0..self.dim()).collect();
        for &(a, b) in &self.pairs {
            for (i, j) in self.ranges[a].clone().zip(self.ranges[b].clone()) {
                g[j] = g[i];
            }
        }
        g
    }
}

/// A block-assembled square system `K x = b`.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub layout: BlockLayout,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Accumulates blocks of a system with a fixed [`BlockLayout`].
pub struct BlockSystemBuilder {
    layout: BlockLayout,
    entries: TripletBuilder,
    rhs: Vec<f64>,
}

impl BlockSystemBuilder {
    pub fn new(layout: BlockLayout) -> Self {
        let n = layout.dim();
        Self {
            layout,
            entries: TripletBuilder::new(n, n),
            rhs: vec![0.0; n],
        }
    }

    /// Adds `scale * m` at block position `(row, col)`.
    pub fn add_block(&mut self, row: usize, col: usize, m: &SparseMatrix, scale: f64) {
        let (r0, c0) = (self.layout.ranges[row].start, self.layout.ranges[col].start);
        debug_assert_eq!(m.nrows(), self.layout.ranges[row].len());
        debug_assert_eq!(m.ncols(), self.layout.ranges[col].len());
        for (i, j, v) in m.triplets() {
            self.entries.add(r0 + i, c0 + j, scale * v);
        }
    }

    /// Adds `scale * m` at `(row, col)` and `scale * m^T` at `(col, row)`.
    pub fn add_symmetric_pair(&mut self, row: usize, col: usize, m: &SparseMatrix, scale: f64) {
        let (r0, c0) = (self.layout.ranges[row].start, self.layout.ranges[col].start);
        for (i, j, v) in m.triplets() {
            self.entries.add(r0 + i, c0 + j, scale * v);
            self.entries.add(c0 + j, r0 + i, scale * v);
        }
    }

    /// Adds a dense vector as column `col` (a one-column block) in block row
    /// `row` and as the matching row, keeping the system symmetric.
    pub fn add_symmetric_vector(&mut self, row: usize, col: usize, v: &[f64], scale: f64) {
        let r0 = self.layout.ranges[row].start;
        let c = self.layout.ranges[col].start;
        for (i, &x) in v.iter().enumerate() {
            self.entries.add(r0 + i, c, scale * x);
            self.entries.add(c, r0 + i, scale * x);
        }
    }

    pub fn add_entry(&mut self, i: usize, j: usize, v: f64) {
        self.entries.add(i, j, v);
    }

    pub fn rhs_block_mut(&mut self, block: usize) -> &mut [f64] {
        let r = self.layout.ranges[block].clone();
        &mut self.rhs[r]
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn build(self) -> BlockSystem {
        BlockSystem {
            layout: self.layout,
            matrix: self.entries.build(),
            rhs: self.rhs,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(k: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = b.to_vec();
    k.mul_vec_add(-1.0, x, &mut r);
    r
}

const REFINEMENT_STEPS: usize = 12;

/// Below this dimension the unsymmetric LU is cheap and serves as a fallback
/// when the symmetric factorization misses the tolerance.
const LU_FALLBACK_MAX_DIM: usize = 40_000;

fn failure(reason: String, dim: usize) -> Error {
    Error::SolverFailure { reason, dim }
}

/// Fill-reducing ordering that keeps each group contiguous: minimum degree
/// on the quotient graph, then group members in index order.
fn grouped_ordering(k: &SparseMatrix, groups: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = k.nrows();
    debug_assert_eq!(groups.len(), n);
    let mut id = vec![usize::MAX; n];
    let mut ng = 0;
    for &g in groups {
        if id[g] == usize::MAX {
            id[g] = ng;
            ng += 1;
        }
    }
    let gid = |i: usize| id[groups[i]];
    let pattern: Vec<Triplet<usize, usize, f64>> = k
        .triplets()
        .map(|(i, j, _)| (gid(i), gid(j)))
        .filter(|&(a, b)| a < b)
        .map(|(a, b)| Triplet::new(a, b, 1.0))
        .collect();
    let q = SparseColMat::<usize, f64>::try_new_from_triplets(ng, ng, &pattern)
        .map_err(|e| failure(format!("quotient graph: {e:?}"), n))?;
    let mut qfwd = vec![0usize; ng];
    let mut qinv = vec![0usize; ng];
    let mut mem = MemBuffer::try_new(amd::order_scratch::<usize>(ng, q.compute_nnz()))
        .map_err(|e| failure(format!("ordering workspace: {e:?}"), n))?;
    amd::order(
        &mut qfwd,
        &mut qinv,
        q.symbolic(),
        amd::Control::default(),
        MemStack::new(&mut mem),
    )
    .map_err(|e| failure(format!("minimum degree ordering: {e:?}"), n))?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ng];
    for i in 0..n {
        members[gid(i)].push(i);
    }
    let fwd: Vec<usize> = qfwd.iter().flat_map(|&g| members[g].iter().copied()).collect();
    let mut inv = vec![0usize; n];
    for (pos, &i) in fwd.iter().enumerate() {
        inv[i] = pos;
    }
    Ok((fwd, inv))
}

/// Relative size of the diagonal shift placed on structurally zero diagonal
/// entries before factorization; refinement against the unshifted matrix
/// removes it.
const PIVOT_PERTURBATION: f64 = 1e-10;

/// Supernodal `L B L^T` factorization with AMD ordering and Bunch-Kaufman
/// pivoting inside each supernode, of the matrix with zero diagonal entries
/// shifted by `-PIVOT_PERTURBATION * max|K|`.
struct SymmetricFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    subdiag: Vec<f64>,
    fwd: Vec<usize>,
    inv: Vec<usize>,
}

impl SymmetricFactor {
    fn new(k: &SparseMatrix, groups: &[usize]) -> Result<Self> {
        let n = k.nrows();
        let (ofwd, oinv) = grouped_ordering(k, groups)?;
        let perm = PermRef::new_checked(&ofwd, &oinv, n);
        let shift = -PIVOT_PERTURBATION * k.max_abs();
        let mut has_diag = vec![false; n];
        let mut upper: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(k.nnz() / 2 + n);
        for (i, j, v) in k.triplets().filter(|&(i, j, _)| i <= j) {
            if i == j && v != 0.0 {
                has_diag[i] = true;
            }
            upper.push(Triplet::new(i, j, v));
        }
        upper.extend((0..n).filter(|&i| !has_diag[i]).map(|i| Triplet::new(i, i, shift)));
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &upper)
            .map_err(|e| failure(format!("matrix construction: {e:?}"), n))?;
        let symbolic = factorize_symbolic_cholesky(
            a.symbolic(),
            Side::Upper,
            SymmetricOrdering::Custom(perm),
            CholeskySymbolicParams {
                supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
                ..Default::default()
            },
        )
        .map_err(|e| failure(format!("symbolic factorization: {e:?}"), n))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut subdiag = vec![0.0; n];
        let mut fwd = vec![0usize; n];
        let mut inv = vec![0usize; n];
        let mut mem =
            MemBuffer::try_new(symbolic.factorize_numeric_intranode_lblt_scratch::<f64>(Par::Seq, Default::default()))
                .map_err(|e| failure(format!("workspace allocation: {e:?}"), n))?;
        symbolic.factorize_numeric_intranode_lblt(
            &mut values,
            &mut subdiag,
            &mut fwd,
            &mut inv,
            a.as_ref(),
            Side::Upper,
            Par::Seq,
            MemStack::new(&mut mem),
            Default::default(),
        );
        Ok(Self {
            symbolic,
            values,
            subdiag,
            fwd,
            inv,
        })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let perm = unsafe { PermRef::new_unchecked(&self.fwd, &self.inv, n) };
        let lblt = IntranodeLbltRef::new(&self.symbolic, &self.values, &self.subdiag, perm);
        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        lblt.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut mem));
        (0..n).map(|i| x[(i, 0)]).collect()
    }
}

/// Runs refinement `x += S(b - K x)` and returns the best iterate with its
/// relative residual.
fn refine(k: &SparseMatrix, b: &[f64], bnorm: f64, tol: f64, solve: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<f64>, f64) {
    let mut x = solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return (x, f64::INFINITY);
    }
    let mut r = residual(k, &x, b);
    let mut rel = norm(&r) / bnorm;
    for _ in 0..REFINEMENT_STEPS {
        if rel <= 0.01 * tol {
            break;
        }
        let dx = solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let rt = residual(k, &trial, b);
        let rel_t = norm(&rt) / bnorm;
        if !(rel_t < rel) {
            break;
        }
        x = trial;
        r = rt;
        rel = rel_t;
    }
    (x, rel)
}

/// A factorization of a symmetric matrix that can be applied repeatedly.
pub struct SymmetricSolver<'a> {
    matrix: &'a SparseMatrix,
    factor: SymmetricFactor,
}

impl<'a> SymmetricSolver<'a> {
    /// Factors `k`, keeping unknowns with equal `groups` entries adjacent in
    /// the elimination order.
    pub fn new(k: &'a SparseMatrix, groups: &[usize]) -> Result<Self> {
        if k.ncols() != k.nrows() || groups.len() != k.nrows() || groups.iter().any(|&g| g >= k.nrows()) {
            return Err(failure(
                format!("non-square matrix {}x{} or bad groups", k.nrows(), k.ncols()),
                k.nrows(),
            ));
        }
        faer::set_global_parallelism(Par::Seq);
        Ok(Self {
            matrix: k,
            factor: SymmetricFactor::new(k, groups)?,
        })
    }

    /// Solves with refinement; fails unless `|b - K x| <= tol |b|`.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = self.matrix.nrows();
        if b.len() != n {
            return Err(failure(format!("rhs length {} for dimension {n}", b.len()), n));
        }
        let bnorm = norm(b);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let (x, rel) = refine(self.matrix, b, bnorm, tol, |r| self.factor.solve(r));
        if rel.is_infinite() {
            return Err(failure("non-finite solution (numerically singular pivot)".into(), n));
        }
        if !(rel <= tol) {
            return Err(Error::ConvergenceFailure { residual: rel, tol });
        }
        Ok(x)
    }
}

fn solve_lu(k: &SparseMatrix, b: &[f64], bnorm: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = k.nrows();
    let trips: Vec<Triplet<usize, usize, f64>> = k.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| failure(format!("matrix construction: {e:?}"), n))?;
    let lu = mat.sp_lu().map_err(|e| failure(format!("sparse LU: {e:?}"), n))?;
    Ok(refine(k, b, bnorm, tol, |rhs| {
        let col = Col::<f64>::from_fn(n, |i| rhs[i]);
        let x = lu.solve(&col);
        (0..n).map(|i| x[i]).collect()
    }))
}

/// Solves the symmetric system `K x = b` by a symmetric `L B L^T`
/// factorization with iterative refinement, falling back to sparse LU on
/// small systems. Fails unless `|b - K x| <= tol |b|`.
pub fn solve_symmetric_indefinite(k: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let groups: Vec<usize> = (0..k.nrows()).collect();
    solve_grouped(k, &groups, b, tol)
}

/// As [`solve_symmetric_indefinite`], eliminating each group of unknowns
/// contiguously. `groups[i]` is a representative index of the group of `i`.
pub fn solve_grouped(k: &SparseMatrix, groups: &[usize], b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = k.nrows();
    if k.ncols() != n || b.len() != n || groups.len() != n || groups.iter().any(|&g| g >= n) {
        return Err(failure(
            format!("shape mismatch: {}x{} with rhs {}", k.nrows(), k.ncols(), b.len()),
            n,
        ));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    faer::set_global_parallelism(Par::Seq);
    let (mut x, mut rel) = match SymmetricFactor::new(k, groups) {
        Ok(f) => refine(k, b, bnorm, tol, |r| f.solve(r)),
        Err(_) => (Vec::new(), f64::INFINITY),
    };
    if !(rel <= tol) && n <= LU_FALLBACK_MAX_DIM {
        let (xl, rl) = solve_lu(k, b, bnorm, tol)?;
        if rl < rel || !rel.is_finite() {
            x = xl;
            rel = rl;
        }
    }
    if !rel.is_finite() {
        return Err(failure("non-finite solution (numerically singular pivot)".into(), n));
    }
    if !(rel <= tol) {
        return Err(Error::ConvergenceFailure { residual: rel, tol });
    }
    Ok(x)
}

impl BlockSystem {
    pub fn solve(&self, tol: f64) -> Result<Vec<f64>> {
        solve_grouped(&self.matrix, &self.layout.groups(), &self.rhs, tol)
    }

    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        norm(&residual(&self.matrix, x, &self.rhs)) / norm(&self.rhs).max(f64::MIN_POSITIVE)
    }
}
