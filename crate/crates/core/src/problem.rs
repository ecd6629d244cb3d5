//! Canonical representation and validation of multi-affine quadratic
//! equality-constrained problems
//!
//! ```text
//! minimize    f(x) + sum_i I_i(x_i) + phi(z)
//! subject to  A(x) + Q z = 0
//! ```
//!
//! where `x` is partitioned into blocks, each component of `A` is
//! `(A(x))_i = x' C_i x / 2 + d_i' x + e_i` with every diagonal block of
//! `C_i` zero (so `A` is affine in each block when the others are fixed),
//! `f` and `phi` are strongly convex quadratics, and each `I_i` is the
//! indicator of a closed convex set.

use nalgebra::{DMatrix, DVector};
use std::ops::Range;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Relative singular-value threshold below which `Q` counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Iteration cap for the phase-1 feasibility solve used to check that a
/// polyhedron is nonempty.
pub const FEASIBILITY_ITER_CAP: usize = 10_000;

/// Partition of the primal vector into contiguous blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidProblem("block sizes must be non-empty".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidProblem("all block sizes must be >= 1".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0usize;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self { sizes, offsets, total: acc })
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, j: usize) -> usize {
        self.sizes[j]
    }

    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    /// Coordinate range of block `j` inside the stacked vector.
    pub fn range(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j] + self.sizes[j]
    }

    /// Index of the block containing global coordinate `c`.
    pub fn block_of(&self, c: usize) -> usize {
        debug_assert!(c < self.total);
        match self.offsets.binary_search(&c) {
            Ok(j) => j,
            Err(j) => j - 1,
        }
    }
}

/// Symmetric sparse matrix stored as canonical upper-triangle triplets
/// (row <= col, sorted, duplicates merged, exact zeros dropped).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSparse {
    dim: usize,
    upper: Vec<(usize, usize, f64)>,
}

impl SymmetricSparse {
    /// Builds from arbitrary triplets of the full symmetric matrix. Entries
    /// below the diagonal are mirrored to the upper triangle; duplicates are
    /// summed.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut upper: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::Dimension {
                    context: "sparse triplet index",
                    expected: dim,
                    got: r.max(c),
                });
            }
            let (r, c) = if r <= c { (r, c) } else { (c, r) };
            upper.push((r, c, v));
        }
        upper.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len());
        for (r, c, v) in upper {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != 0.0);
        Ok(Self { dim, upper: merged })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, upper: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.len()
    }

    pub fn is_zero(&self) -> bool {
        self.upper.is_empty()
    }

    /// Upper-triangle triplets in canonical order.
    pub fn upper_triplets(&self) -> &[(usize, usize, f64)] {
        &self.upper
    }

    /// Quadratic form `x' C x` (not halved).
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for &(r, c, v) in &self.upper {
            if r == c {
                acc += v * x[r] * x[r];
            } else {
                acc += 2.0 * v * x[r] * x[c];
            }
        }
        acc
    }

    /// `out += C x` treating the storage as the full symmetric matrix.
    pub fn add_matvec(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for &(r, c, v) in &self.upper {
            out[r] += v * x[c];
            if r != c {
                out[c] += v * x[r];
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.upper {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v;
            }
        }
        m
    }

    /// Spectral norm via power iteration on `C^2` (handles the +/- eigenvalue
    /// pairs typical of cross-product couplings, where plain power iteration
    /// on `C` stalls).
    pub fn spectral_norm(&self) -> f64 {
        if self.upper.is_empty() || self.dim == 0 {
            return 0.0;
        }
        let n = self.dim;
        let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
        v /= v.norm();
        let mut buf = DVector::zeros(n);
        let mut buf2 = DVector::zeros(n);
        let mut lambda_sq = 0.0f64;
        for _ in 0..10_000 {
            buf.fill(0.0);
            self.add_matvec(&v, &mut buf);
            buf2.fill(0.0);
            self.add_matvec(&buf, &mut buf2);
            let next = v.dot(&buf2);
            let norm = buf2.norm();
            if norm == 0.0 {
                return 0.0;
            }
            buf2.unscale_mut(norm);
            std::mem::swap(&mut v, &mut buf2);
            if (next - lambda_sq).abs() <= 1e-13 * (1.0 + next.abs()) {
                lambda_sq = next;
                break;
            }
            lambda_sq = next;
        }
        lambda_sq.max(0.0).sqrt()
    }
}

/// Strongly convex quadratic `v -> v' P v / 2 + q' v + r` with `P` symmetric
/// positive definite.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    p: DMatrix<f64>,
    q: DVector<f64>,
    r: f64,
    // (lambda_min, lambda_max) of P, computed on first use
    extremal: OnceLock<(f64, f64)>,
}

impl PartialEq for QuadraticObjective {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.q == other.q && self.r == other.r
    }
}

impl QuadraticObjective {
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::Dimension {
                context: "quadratic objective P",
                expected: p.nrows(),
                got: p.ncols(),
            });
        }
        if q.len() != p.nrows() {
            return Err(Error::Dimension {
                context: "quadratic objective q",
                expected: p.nrows(),
                got: q.len(),
            });
        }
        // Symmetrize so downstream algebra can rely on P = P'.
        let p = (&p + p.transpose()) * 0.5;
        Ok(Self { p, q, r, extremal: OnceLock::new() })
    }

    /// Isotropic quadratic `w/2 ||v||^2`.
    pub fn isotropic(dim: usize, weight: f64) -> Self {
        Self {
            p: DMatrix::identity(dim, dim) * weight,
            q: DVector::zeros(dim),
            r: 0.0,
            extremal: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        0.5 * (&self.p * v).dot(v) + self.q.dot(v) + self.r
    }

    pub fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p * v + &self.q
    }

    fn extremal_eigs(&self) -> (f64, f64) {
        *self.extremal.get_or_init(|| {
            if self.dim() == 0 {
                return (f64::INFINITY, 0.0);
            }
            let eigs = self.p.clone().symmetric_eigenvalues();
            (eigs.min(), eigs.max())
        })
    }

    /// Strong-convexity constant, `lambda_min(P)`.
    pub fn mu(&self) -> f64 {
        self.extremal_eigs().0
    }

    /// Smoothness constant, `lambda_max(P)`.
    pub fn lip(&self) -> f64 {
        self.extremal_eigs().1
    }

    /// Unconstrained minimizer `-P^{-1} q`.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let chol = nalgebra::Cholesky::new(self.p.clone())
            .ok_or_else(|| Error::InvalidProblem("objective Hessian is not positive definite".into()))?;
        Ok(-chol.solve(&self.q))
    }
}

/// Closed convex set constraining one block, as an indicator function.
#[derive(Debug, Clone, PartialEq)]
pub enum IndicatorSet {
    Free {
        dim: usize,
    },
    /// Elementwise bounds; entries may be +/- infinity.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// `{ v : G v <= h }`.
    Polyhedron {
        g: DMatrix<f64>,
        h: DVector<f64>,
    },
}

impl IndicatorSet {
    pub fn dim(&self) -> usize {
        match self {
            IndicatorSet::Free { dim } => *dim,
            IndicatorSet::Box { lower, .. } => lower.len(),
            IndicatorSet::Polyhedron { g, .. } => g.ncols(),
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, IndicatorSet::Free { .. })
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        match self {
            IndicatorSet::Free { .. } => true,
            IndicatorSet::Box { lower, upper } => (0..v.len())
                .all(|i| v[i] >= lower[i] - tol && v[i] <= upper[i] + tol),
            IndicatorSet::Polyhedron { g, h } => {
                let res = g * v - h;
                res.iter().all(|&t| t <= tol)
            }
        }
    }
}

/// Single constraint row `x' C x / 2 + d' x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub c: SymmetricSparse,
    pub d: DVector<f64>,
    pub e: f64,
}

impl ConstraintRow {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.c.quad_form(x) + self.d.dot(x) + self.e
    }

    /// Gradient `C x + d`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.d.clone();
        self.c.add_matvec(x, &mut g);
        g
    }
}

/// The constraint map `A(x)` with its block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAffineOperator {
    rows: Vec<ConstraintRow>,
    blocks: BlockStructure,
}

impl MultiAffineOperator {
    pub fn new(blocks: BlockStructure, rows: Vec<ConstraintRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.c.dim() != blocks.total() {
                return Err(Error::Dimension {
                    context: "constraint row C dimension",
                    expected: blocks.total(),
                    got: row.c.dim(),
                });
            }
            if row.d.len() != blocks.total() {
                return Err(Error::Dimension {
                    context: "constraint row d length",
                    expected: blocks.total(),
                    got: row.d.len(),
                });
            }
            let _ = i;
        }
        Ok(Self { rows, blocks })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_x(&self) -> usize {
        self.blocks.total()
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    /// `max_i ||C_i||` (spectral norms).
    pub fn c_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.c.spectral_norm())
            .fold(0.0, f64::max)
    }

    /// `max_i ||d_i||`.
    pub fn d_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.d.norm()).fold(0.0, f64::max)
    }

    /// `max_i |e_i|`.
    pub fn e_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.e.abs()).fold(0.0, f64::max)
    }

    /// Triplets of `C_i` whose row and column fall in the same block
    /// (violations of the multi-affine property), as `(row, block)` pairs.
    pub fn diagonal_block_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(p, t, v) in row.c.upper_triplets() {
                if v != 0.0 && self.blocks.block_of(p) == self.blocks.block_of(t) {
                    let b = self.blocks.block_of(p);
                    if !out.contains(&(i, b)) {
                        out.push((i, b));
                    }
                }
            }
        }
        out
    }
}

/// Extra smooth (possibly nonconvex) objective term attached to a single
/// primal coordinate. Only used by problem instances that deliberately step
/// outside the quadratic-objective theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothExtra {
    /// `coeff * sin^2(x[coord])`.
    SinSq { coeff: f64, coord: usize },
}

impl SmoothExtra {
    pub fn coord(&self) -> usize {
        match self {
            SmoothExtra::SinSq { coord, .. } => *coord,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            SmoothExtra::SinSq { coeff, .. } => coeff * x.sin().powi(2),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            SmoothExtra::SinSq { coeff, .. } => coeff * (2.0 * x).sin(),
        }
    }

    /// Upper bound on `|d^2/dx^2|`, used for gradient step sizes.
    pub fn curvature_bound(&self) -> f64 {
        match self {
            SmoothExtra::SinSq { coeff, .. } => 2.0 * coeff.abs(),
        }
    }
}

/// A full problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub blocks: BlockStructure,
    pub f: QuadraticObjective,
    pub indicators: Vec<IndicatorSet>,
    pub a: MultiAffineOperator,
    pub q: DMatrix<f64>,
    pub phi: QuadraticObjective,
    /// Non-quadratic smooth objective terms (empty for instances inside the
    /// theory).
    pub extras: Vec<SmoothExtra>,
    /// Marks instances that knowingly violate the strong-convexity
    /// assumptions; descent diagnostics are not asserted for them.
    pub outside_theory: bool,
}

impl ProblemSpec {
    pub fn n_x(&self) -> usize {
        self.blocks.total()
    }

    pub fn n_c(&self) -> usize {
        self.a.n_rows()
    }

    pub fn n_z(&self) -> usize {
        self.q.ncols()
    }

    /// Extras whose coordinate lies in block `j`, with block-local indices.
    pub fn extras_for_block(&self, j: usize) -> Vec<(usize, SmoothExtra)> {
        let range = self.blocks.range(j);
        self.extras
            .iter()
            .filter(|ex| range.contains(&ex.coord()))
            .map(|ex| (ex.coord() - range.start, *ex))
            .collect()
    }

    /// Sum of extra terms at the full vector `x`.
    pub fn extras_value(&self, x: &DVector<f64>) -> f64 {
        self.extras.iter().map(|ex| ex.value(x[ex.coord()])).sum()
    }

    /// Adds extra-term gradients into `grad`.
    pub fn extras_add_gradient(&self, x: &DVector<f64>, grad: &mut DVector<f64>) {
        for ex in &self.extras {
            grad[ex.coord()] += ex.derivative(x[ex.coord()]);
        }
    }

    /// `f(x)` plus extra terms (the smooth part of the objective on `x`).
    pub fn objective_x(&self, x: &DVector<f64>) -> f64 {
        self.f.value(x) + self.extras_value(x)
    }
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch { context: String, expected: usize, got: usize },
    /// `C_i` has a nonzero entry inside a diagonal block.
    MultiAffineViolated { row: usize, block: usize },
    QRankDeficient { rank: usize, singular_values: Vec<f64> },
    FNotPositiveDefinite { min_eig: f64 },
    PhiNotPositiveDefinite { min_eig: f64 },
    BoxBoundsInverted { block: usize },
    EmptyPolyhedron { block: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DimensionMismatch { context, expected, got } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Violation::MultiAffineViolated { row, block } => write!(
                f,
                "constraint row {row} has a nonzero entry inside diagonal block {block}"
            ),
            Violation::QRankDeficient { rank, singular_values } => write!(
                f,
                "Q is not full row rank (rank {rank}, singular values {singular_values:?})"
            ),
            Violation::FNotPositiveDefinite { min_eig } => {
                write!(f, "f is not strongly convex (lambda_min(P) = {min_eig:.3e})")
            }
            Violation::PhiNotPositiveDefinite { min_eig } => {
                write!(f, "phi is not strongly convex (lambda_min(P) = {min_eig:.3e})")
            }
            Violation::BoxBoundsInverted { block } => {
                write!(f, "box bounds inverted on block {block}")
            }
            Violation::EmptyPolyhedron { block } => {
                write!(f, "polyhedron on block {block} appears empty")
            }
        }
    }
}

/// Spectral and smoothness constants of a problem instance.
///
/// Quantities that do not exist for rank-deficient `Q` are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSet {
    pub mu_f: f64,
    pub lip_f: f64,
    pub mu_phi: f64,
    pub lip_phi: f64,
    /// `max_i ||C_i||`.
    pub c_norm: f64,
    /// `max_i ||d_i||`.
    pub d_norm: f64,
    /// `max_i |e_i|`.
    pub e_norm: f64,
    /// Smallest positive eigenvalue of `Q'Q`.
    pub lambda_min_pos_qtq: Option<f64>,
    /// Smallest eigenvalue of `QQ'` (zero when rank deficient).
    pub lambda_min_qqt: f64,
    /// Smallest positive eigenvalue of `QQ'`.
    pub lambda_min_pos_qqt: Option<f64>,
    /// `||(QQ')^{-1} Q||`; `None` when `QQ'` is singular.
    pub pinv_q_norm: Option<f64>,
}

/// Result of validating a [`ProblemSpec`]: every violated invariant plus the
/// computed constants. Validation never fails; it reports.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub constants: ConstantSet,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// True when the only violations are `Q` rank deficiencies, which an
    /// explicit override may waive.
    pub fn only_rank_violations(&self) -> bool {
        !self.violations.is_empty()
            && self
                .violations
                .iter()
                .all(|v| matches!(v, Violation::QRankDeficient { .. }))
    }

    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn singular_values_of(q: &DMatrix<f64>) -> Vec<f64> {
    if q.nrows() == 0 || q.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = q.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

fn q_spectral_quantities(q: &DMatrix<f64>) -> (Vec<f64>, usize, Option<f64>, f64, Option<f64>, Option<f64>) {
    let sv = singular_values_of(q);
    let n_c = q.nrows();
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let tol = RANK_TOLERANCE * sigma_max;
    let rank = sv.iter().filter(|&&s| s > tol && s > 0.0).count();
    let sigma_min_pos = sv.iter().copied().filter(|&s| s > tol && s > 0.0).fold(f64::INFINITY, f64::min);
    let lambda_min_pos = if sigma_min_pos.is_finite() {
        Some(sigma_min_pos * sigma_min_pos)
    } else {
        None
    };
    // lambda_min(QQ') is the square of the n_c-th singular value (0 if fewer).
    let lambda_min_qqt = if n_c == 0 {
        0.0
    } else {
        sv.get(n_c - 1).map(|s| s * s).unwrap_or(0.0)
    };
    let pinv_norm = if rank == n_c && n_c > 0 {
        Some(1.0 / sigma_min_pos)
    } else if n_c == 0 {
        Some(0.0)
    } else {
        None
    };
    (sv, rank, lambda_min_pos, lambda_min_qqt, lambda_min_pos, pinv_norm)
}

/// Phase-1 feasibility solve: projected gradient on
/// `psi(v) = ||max(Gv - h, 0)||^2 / 2`. Returns a feasible point if found.
pub fn polyhedron_feasible_point(g: &DMatrix<f64>, h: &DVector<f64>) -> Option<DVector<f64>> {
    let n = g.ncols();
    let mut v = DVector::zeros(n);
    if g.nrows() == 0 {
        return Some(v);
    }
    let sv_max = singular_values_of(g).first().copied().unwrap_or(0.0);
    if sv_max == 0.0 {
        // G = 0: feasible iff h >= 0.
        return if h.iter().all(|&t| t >= 0.0) { Some(v) } else { None };
    }
    let step = 1.0 / (sv_max * sv_max);
    for _ in 0..FEASIBILITY_ITER_CAP {
        let mut res = g * &v - h;
        let viol = res.iter().fold(0.0f64, |m, &t| m.max(t));
        if viol <= 1e-9 {
            return Some(v);
        }
        res.iter_mut().for_each(|t| *t = t.max(0.0));
        v -= step * (g.transpose() * res);
    }
    None
}

/// Checks every invariant of `spec` and computes its constants.
pub fn validate(spec: &ProblemSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let n_x = spec.blocks.total();
    let n_c = spec.a.n_rows();
    let n_z = spec.q.ncols();

    if spec.f.dim() != n_x {
        violations.push(Violation::DimensionMismatch {
            context: "f over n_x".into(),
            expected: n_x,
            got: spec.f.dim(),
        });
    }
    if spec.a.n_x() != n_x {
        violations.push(Violation::DimensionMismatch {
            context: "operator over n_x".into(),
            expected: n_x,
            got: spec.a.n_x(),
        });
    }
    if spec.q.nrows() != n_c {
        violations.push(Violation::DimensionMismatch {
            context: "rows(Q) vs n_c".into(),
            expected: n_c,
            got: spec.q.nrows(),
        });
    }
    if spec.phi.dim() != n_z {
        violations.push(Violation::DimensionMismatch {
            context: "phi over n_z".into(),
            expected: n_z,
            got: spec.phi.dim(),
        });
    }
    if spec.indicators.len() != spec.blocks.num_blocks() {
        violations.push(Violation::DimensionMismatch {
            context: "one indicator per block".into(),
            expected: spec.blocks.num_blocks(),
            got: spec.indicators.len(),
        });
    } else {
        for (j, set) in spec.indicators.iter().enumerate() {
            if set.dim() != spec.blocks.size(j) {
                violations.push(Violation::DimensionMismatch {
                    context: format!("indicator dim on block {j}"),
                    expected: spec.blocks.size(j),
                    got: set.dim(),
                });
            }
        }
    }
    for ex in &spec.extras {
        if ex.coord() >= n_x {
            violations.push(Violation::DimensionMismatch {
                context: "extra term coordinate".into(),
                expected: n_x,
                got: ex.coord(),
            });
        }
    }

    for (row, block) in spec.a.diagonal_block_violations() {
        violations.push(Violation::MultiAffineViolated { row, block });
    }

    let mu_f = spec.f.mu();
    let lip_f = spec.f.lip();
    if !(mu_f > 0.0) {
        violations.push(Violation::FNotPositiveDefinite { min_eig: mu_f });
    }
    let mu_phi = spec.phi.mu();
    let lip_phi = spec.phi.lip();
    if n_z > 0 && !(mu_phi > 0.0) {
        violations.push(Violation::PhiNotPositiveDefinite { min_eig: mu_phi });
    }

    for (j, set) in spec.indicators.iter().enumerate() {
        match set {
            IndicatorSet::Box { lower, upper } => {
                if (0..lower.len()).any(|i| lower[i] > upper[i]) {
                    violations.push(Violation::BoxBoundsInverted { block: j });
                }
            }
            IndicatorSet::Polyhedron { g, h } => {
                if polyhedron_feasible_point(g, h).is_none() {
                    violations.push(Violation::EmptyPolyhedron { block: j });
                }
            }
            IndicatorSet::Free { .. } => {}
        }
    }

    let (sv, rank, lpos_qtq, lmin_qqt, lpos_qqt, pinv_norm) = q_spectral_quantities(&spec.q);
    if rank < n_c {
        violations.push(Violation::QRankDeficient { rank, singular_values: sv });
    }

    let constants = ConstantSet {
        mu_f,
        lip_f,
        mu_phi,
        lip_phi,
        c_norm: spec.a.c_norm(),
        d_norm: spec.a.d_norm(),
        e_norm: spec.a.e_norm(),
        lambda_min_pos_qtq: lpos_qtq,
        lambda_min_qqt: lmin_qqt,
        lambda_min_pos_qqt: lpos_qqt,
        pinv_q_norm: pinv_norm,
    };

    ValidationReport { violations, constants }
}

/// Computes the constant set alone; errors on dimension inconsistencies.
pub fn spectral_constants(spec: &ProblemSpec) -> Result<ConstantSet> {
    if spec.f.dim() != spec.n_x() {
        return Err(Error::Dimension {
            context: "f over n_x",
            expected: spec.n_x(),
            got: spec.f.dim(),
        });
    }
    if spec.q.nrows() != spec.n_c() {
        return Err(Error::Dimension {
            context: "rows(Q) vs n_c",
            expected: spec.n_c(),
            got: spec.q.nrows(),
        });
    }
    if spec.phi.dim() != spec.n_z() {
        return Err(Error::Dimension {
            context: "phi over n_z",
            expected: spec.n_z(),
            got: spec.phi.dim(),
        });
    }
    let (_, _, lpos_qtq, lmin_qqt, lpos_qqt, pinv_norm) = q_spectral_quantities(&spec.q);
    Ok(ConstantSet {
        mu_f: spec.f.mu(),
        lip_f: spec.f.lip(),
        mu_phi: spec.phi.mu(),
        lip_phi: spec.phi.lip(),
        c_norm: spec.a.c_norm(),
        d_norm: spec.a.d_norm(),
        e_norm: spec.a.e_norm(),
        lambda_min_pos_qtq: lpos_qtq,
        lambda_min_qqt: lmin_qqt,
        lambda_min_pos_qqt: lpos_qqt,
        pinv_q_norm: pinv_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example22() -> ProblemSpec {
        crate::instances::example22()
    }

    #[test]
    fn block_structure_offsets() {
        let b = BlockStructure::new(vec![2, 3, 1]).unwrap();
        assert_eq!(b.total(), 6);
        assert_eq!(b.offset(0), 0);
        assert_eq!(b.offset(1), 2);
        assert_eq!(b.offset(2), 5);
        assert_eq!(b.block_of(0), 0);
        assert_eq!(b.block_of(4), 1);
        assert_eq!(b.block_of(5), 2);
        assert!(BlockStructure::new(vec![]).is_err());
        assert!(BlockStructure::new(vec![1, 0]).is_err());
    }

    #[test]
    fn sparse_canonicalization_merges_and_mirrors() {
        let c = SymmetricSparse::from_triplets(3, vec![(1, 0, 0.5), (0, 1, 0.5), (2, 2, 0.0)]).unwrap();
        assert_eq!(c.upper_triplets(), &[(0, 1, 1.0)]);
        let x = DVector::from_vec(vec![2.0, 3.0, 4.0]);
        assert_relative_eq!(c.quad_form(&x), 2.0 * 1.0 * 2.0 * 3.0);
    }

    #[test]
    fn spectral_norm_matches_dense_eigendecomposition() {
        let c = SymmetricSparse::from_triplets(
            4,
            vec![(0, 1, 1.0), (2, 3, -1.0), (0, 3, 0.25)],
        )
        .unwrap();
        let dense = c.to_dense();
        let eigs = dense.symmetric_eigenvalues();
        let expected = eigs.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
        assert_relative_eq!(c.spectral_norm(), expected, epsilon = 1e-9);
    }

    #[test]
    fn validate_example22_is_valid_with_unit_c_norm() {
        let spec = example22();
        let report = validate(&spec);
        assert!(report.is_valid(), "{}", report.summary());
        // ||C|| = 1: eigenvalues of the 2x2 anti-diagonal +-1 matrix are +-1.
        assert_relative_eq!(report.constants.c_norm, 1.0, epsilon = 1e-10);
        assert_relative_eq!(report.constants.mu_phi, 2.0);
        assert_relative_eq!(report.constants.lip_phi, 2.0);
        assert_eq!(report.constants.lambda_min_pos_qtq, Some(1.0));
        assert_eq!(report.constants.pinv_q_norm, Some(1.0));
    }

    #[test]
    fn validate_rejects_rank_deficient_q() {
        let spec = crate::instances::example210();
        let report = validate(&spec);
        assert!(!report.is_valid());
        assert!(report.only_rank_violations());
    }

    #[test]
    fn validate_rejects_nonzero_diagonal_block() {
        let mut spec = example22();
        // Put an entry inside block 0's diagonal block (coordinate (0,0)).
        let bad = SymmetricSparse::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let mut rows = spec.a.rows().to_vec();
        rows[0].c = bad;
        spec.a = MultiAffineOperator::new(spec.blocks.clone(), rows).unwrap();
        let report = validate(&spec);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MultiAffineViolated { row: 0, block: 0 })));
    }

    #[test]
    fn spectral_constants_deterministic() {
        let spec = crate::instances::toy_q(10.0, 1.0, 1.0);
        let a = spectral_constants(&spec).unwrap();
        let b = spectral_constants(&spec).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a.c_norm, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn empty_polyhedron_detected() {
        // { v : v <= -1 and -v <= -1 } is empty.
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_vec(vec![-1.0, -1.0]);
        assert!(polyhedron_feasible_point(&g, &h).is_none());
        let g2 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let h2 = DVector::from_vec(vec![0.0]);
        assert!(polyhedron_feasible_point(&g2, &h2).is_some());
    }
}
