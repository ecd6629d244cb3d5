//! The outer ADMM loop: penalty selection, initialization, Gauss-Seidel
//! block sweeps, stopping, and divergence detection.
//!
//! One iteration updates the blocks of `x` in order (each minimizing the
//! augmented Lagrangian with every other variable fixed), then `z` by a
//! positive-definite linear solve, then the dual ascent step
//! `w <- w + rho (A(x) + Qz)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::io::Write as IoWrite;

use crate::algebra::eval_a;
use crate::error::{Error, Result};
use crate::problem::{spectral_constants, validate, ProblemSpec};
use crate::subproblem::{project, solve_qp_exact, solve_qp_inexact, BlockQp};

/// Penalty parameter: fixed, or computed from the problem's constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoSetting {
    Auto,
    Fixed(f64),
}

/// Subproblem accuracy: exact block solves, or a fixed number of
/// projected-gradient steps per block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMode {
    Exact,
    Inexact { inner_iters: usize },
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rho: RhoSetting,
    /// Multiplier applied on top of the automatic penalty bound.
    pub rho_safety: f64,
    pub max_iter: usize,
    /// Tolerance on the primal residual `||A(x) + Qz||`.
    pub tol_primal: f64,
    /// Tolerance on the combined step norm `sqrt(dx^2 + dz^2 + dw^2)`.
    pub tol_step: f64,
    /// Tolerance on the max blockwise KKT residual at termination.
    pub tol_kkt: f64,
    pub mode: SolveMode,
    /// Dual-norm divergence threshold; `None` means `1e6 (1 + ||w0||)`.
    pub divergence_w_norm: Option<f64>,
    /// Divergence is only declared after this many iterations.
    pub min_iters_before_divergence: usize,
    /// Seed for any randomized initialization done by callers.
    pub seed: u64,
    /// Waives the full-row-rank validation failure (and nothing else).
    pub allow_rank_deficient: bool,
    /// In inexact mode, also solve each block exactly to measure the true
    /// suboptimality instead of the worst-case bound.
    pub certify_inexact: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: RhoSetting::Auto,
            rho_safety: 1.0,
            max_iter: 5000,
            tol_primal: 1e-10,
            tol_step: 1e-10,
            tol_kkt: 1e-8,
            mode: SolveMode::Exact,
            divergence_w_norm: None,
            min_iters_before_divergence: 100,
            seed: 0,
            allow_rank_deficient: false,
            certify_inexact: false,
        }
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    /// Augmented Lagrangian value at `(x^k, z^k, w^k)`.
    pub lagrangian: f64,
    /// `||A(x) + Qz||`.
    pub primal_residual: f64,
    pub dx: f64,
    pub dz: f64,
    pub dw: f64,
    /// `||Q'w + grad phi(z)||`.
    pub dual_identity_residual: f64,
    /// Max blockwise KKT residual at the current point.
    pub block_kkt: f64,
    /// Sum of subproblem suboptimality bounds for this sweep.
    pub subopt: f64,
    /// Set when a block solve hit its iteration cap.
    pub warning_not_converged: bool,
}

impl IterationRecord {
    pub fn combined_step(&self) -> f64 {
        (self.dx * self.dx + self.dz * self.dz + self.dw * self.dw).sqrt()
    }
}

/// Current iterates and history of one run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub rho: f64,
    pub k: usize,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterReached,
    Diverged,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Converged => write!(f, "converged"),
            Termination::MaxIterReached => write!(f, "max-iter-reached"),
            Termination::Diverged => write!(f, "diverged"),
        }
    }
}

/// Final state plus the limit-point optimality residuals.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub termination: Termination,
    pub state: SolverState,
    /// Blockwise KKT residuals of the convex subproblems at the final point.
    pub blockwise_kkt: Vec<f64>,
    pub dual_identity_residual: f64,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.state.k
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.state.history.last().expect("history is never empty")
    }
}

/// The penalty lower bound of the convergence theory:
/// `max{ 4 L_phi^2 / (mu_phi lambda_min+(Q'Q)), 4 L_phi^2 / (mu_phi sqrt(lambda_min+(QQ'))) }`.
pub fn auto_rho(spec: &ProblemSpec) -> Result<f64> {
    let c = spectral_constants(spec)?;
    let lqtq = c
        .lambda_min_pos_qtq
        .ok_or_else(|| Error::Rank("Q'Q has no positive eigenvalue; automatic rho undefined".into()))?;
    let lqqt = c
        .lambda_min_pos_qqt
        .ok_or_else(|| Error::Rank("QQ' has no positive eigenvalue; automatic rho undefined".into()))?;
    let l2 = c.lip_phi * c.lip_phi;
    Ok((4.0 * l2 / (c.mu_phi * lqtq)).max(4.0 * l2 / (c.mu_phi * lqqt.sqrt())))
}

/// Applies the Moore-Penrose pseudo-inverse machinery of `Q`.
struct QPseudo {
    /// `Q^+` (n_z x n_c).
    pinv: DMatrix<f64>,
}

impl QPseudo {
    fn new(q: &DMatrix<f64>) -> Result<Self> {
        let (n_c, n_z) = (q.nrows(), q.ncols());
        if n_c == 0 || n_z == 0 {
            return Ok(Self { pinv: DMatrix::zeros(n_z, n_c) });
        }
        let svd = q.clone().svd(true, true);
        let u = svd.u.as_ref().ok_or_else(|| Error::Rank("SVD of Q failed".into()))?;
        let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Rank("SVD of Q failed".into()))?;
        let sigma_max = svd.singular_values.max();
        let tol = crate::problem::RANK_TOLERANCE * sigma_max;
        let k = svd.singular_values.len();
        let mut sigma_inv = DMatrix::zeros(k, k);
        for i in 0..k {
            let s = svd.singular_values[i];
            if s > tol && s > 0.0 {
                sigma_inv[(i, i)] = 1.0 / s;
            }
        }
        let pinv = v_t.transpose() * sigma_inv * u.transpose();
        Ok(Self { pinv })
    }
}

/// Builds the initial state: `x0` projected onto the indicators,
/// `z0 = -Q^+ A(x0)` (the minimum-norm solution of `A(x0) + Qz = 0`), and
/// `w0 = -(QQ')^{-1} Q grad phi(z0)` so that `Q'w0 = -grad phi(z0)` holds in
/// the row space of `Q`.
pub fn initialize(spec: &ProblemSpec, x0: Option<&DVector<f64>>, rho: f64) -> Result<SolverState> {
    let ctx = SweepContext::new(spec, rho)?;
    initialize_with_ctx(spec, x0, rho, &ctx)
}

fn initialize_with_ctx(
    spec: &ProblemSpec,
    x0: Option<&DVector<f64>>,
    rho: f64,
    ctx: &SweepContext,
) -> Result<SolverState> {
    let n_x = spec.n_x();
    let mut x = match x0 {
        Some(v) => {
            if v.len() != n_x {
                return Err(Error::Dimension { context: "initial x0", expected: n_x, got: v.len() });
            }
            v.clone()
        }
        None => DVector::zeros(n_x),
    };
    for j in 0..spec.blocks.num_blocks() {
        let range = spec.blocks.range(j);
        let block = DVector::from_iterator(range.len(), range.clone().map(|c| x[c]));
        let projected = project(&spec.indicators[j], &block)?;
        for (local, c) in range.enumerate() {
            x[c] = projected[local];
        }
    }

    let a0 = eval_a(&spec.a, &x)?;
    let pseudo = QPseudo::new(&spec.q)?;
    let z = -(&pseudo.pinv * &a0);
    // (QQ')^{-1} Q = (Q^+)' for full-row-rank Q; the pseudo-inverse keeps
    // this meaningful under the rank-deficiency override.
    let w = -(pseudo.pinv.transpose() * spec.phi.gradient(&z));

    let mut state = SolverState { x, z, w, rho, k: 0, history: Vec::new() };
    let record = ctx.make_record(spec, &state, 0.0, 0.0, 0.0, 0.0, false)?;
    state.history.push(record);
    Ok(state)
}

/// Cached per-run machinery: the z-step factorization and a per-block index
/// of the sparse couplings.
pub(crate) struct SweepContext {
    rho: f64,
    z_chol: Cholesky<f64, Dyn>,
    /// For each block: `(row, local_col, other_global_coord, value)`.
    coupling: Vec<Vec<(usize, usize, usize, f64)>>,
}

impl SweepContext {
    pub(crate) fn new(spec: &ProblemSpec, rho: f64) -> Result<Self> {
        if rho <= 0.0 && spec.n_z() > 0 {
            return Err(Error::InvalidProblem(format!("rho must be positive, got {rho}")));
        }
        let qt = spec.q.transpose();
        let system = spec.phi.p() + rho * &qt * &spec.q;
        let z_chol = Cholesky::new(system)
            .ok_or_else(|| Error::InvalidProblem("z-step system not positive definite".into()))?;

        let blocks = &spec.blocks;
        let mut coupling = vec![Vec::new(); blocks.num_blocks()];
        for (i, row) in spec.a.rows().iter().enumerate() {
            for &(p, t, v) in row.c.upper_triplets() {
                let jp = blocks.block_of(p);
                let jt = blocks.block_of(t);
                if jp == jt {
                    return Err(Error::InvalidOperator(format!(
                        "constraint row {i} has a nonzero diagonal-block entry ({p},{t})"
                    )));
                }
                coupling[jp].push((i, p - blocks.offset(jp), t, v));
                coupling[jt].push((i, t - blocks.offset(jt), p, v));
            }
        }
        Ok(Self { rho, z_chol, coupling })
    }

    /// Jacobian of `A` restricted to block `j` at the current `x`
    /// (the `M` of the block's affine form).
    fn block_matrix(&self, spec: &ProblemSpec, x: &DVector<f64>, j: usize) -> DMatrix<f64> {
        let range = spec.blocks.range(j);
        let nj = range.len();
        let mut m = DMatrix::zeros(spec.n_c(), nj);
        for (i, row) in spec.a.rows().iter().enumerate() {
            for local in 0..nj {
                m[(i, local)] = row.d[range.start + local];
            }
        }
        for &(i, local, other, v) in &self.coupling[j] {
            m[(i, local)] += v * x[other];
        }
        m
    }

    /// Assembles the block QP without the constant term (which the
    /// minimization never needs).
    fn assemble_fast(
        &self,
        spec: &ProblemSpec,
        x: &DVector<f64>,
        a_val: &DVector<f64>,
        qz: &DVector<f64>,
        w: &DVector<f64>,
        j: usize,
    ) -> (BlockQp, DMatrix<f64>, DVector<f64>) {
        let range = spec.blocks.range(j);
        let nj = range.len();
        let m = self.block_matrix(spec, x, j);
        let xj = DVector::from_iterator(nj, range.clone().map(|c| x[c]));
        // r = b + Qz with b = A(x) - M x_j.
        let r = a_val - &m * &xj + qz;
        let p = spec.f.p();
        let p_jj = p.view((range.start, range.start), (nj, nj)).into_owned();
        let h = &p_jj + self.rho * m.transpose() * &m;
        let qj = DVector::from_iterator(nj, range.clone().map(|c| spec.f.q()[c]));
        let g = p.rows(range.start, nj) * x + qj - &p_jj * &xj + m.transpose() * (w + self.rho * &r);
        let qp = BlockQp {
            h,
            g,
            c0: 0.0,
            set: spec.indicators[j].clone(),
            extras: spec.extras_for_block(j),
        };
        (qp, m, xj)
    }

    fn block_kkts(
        &self,
        spec: &ProblemSpec,
        x: &DVector<f64>,
        a_val: &DVector<f64>,
        qz: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Vec<f64> {
        (0..spec.blocks.num_blocks())
            .map(|j| {
                let (qp, _, xj) = self.assemble_fast(spec, x, a_val, qz, w, j);
                qp.kkt_residual(&xj)
            })
            .collect()
    }

    fn make_record(
        &self,
        spec: &ProblemSpec,
        state: &SolverState,
        dx: f64,
        dz: f64,
        dw: f64,
        subopt: f64,
        warning: bool,
    ) -> Result<IterationRecord> {
        let a_val = eval_a(&spec.a, &state.x)?;
        let qz = &spec.q * &state.z;
        let residual = &a_val + &qz;
        let lagrangian = spec.objective_x(&state.x)
            + spec.phi.value(&state.z)
            + state.w.dot(&residual)
            + 0.5 * self.rho * residual.norm_squared();
        let dual_identity =
            (spec.q.transpose() * &state.w + spec.phi.gradient(&state.z)).norm();
        let block_kkt = self
            .block_kkts(spec, &state.x, &a_val, &qz, &state.w)
            .into_iter()
            .fold(0.0f64, f64::max);
        Ok(IterationRecord {
            k: state.k,
            lagrangian,
            primal_residual: residual.norm(),
            dx,
            dz,
            dw,
            dual_identity_residual: dual_identity,
            block_kkt,
            subopt,
            warning_not_converged: warning,
        })
    }

    /// One full Gauss-Seidel ADMM iteration, in place. Appends an
    /// [`IterationRecord`]. Deterministic: identical inputs give identical
    /// outputs.
    pub(crate) fn sweep_once(
        &self,
        spec: &ProblemSpec,
        state: &mut SolverState,
        mode: SolveMode,
        certify_inexact: bool,
    ) -> Result<()> {
        debug_assert_eq!(state.rho, self.rho);
        let mut a_val = eval_a(&spec.a, &state.x)?;
        let qz = &spec.q * &state.z;

        let mut dx_sq = 0.0f64;
        let mut subopt = 0.0f64;
        let mut warning = false;

        for j in 0..spec.blocks.num_blocks() {
            let (qp, m, xj) = self.assemble_fast(spec, &state.x, &a_val, &qz, &state.w, j);
            let solved = match mode {
                SolveMode::Exact => solve_qp_exact(&qp, Some(&xj)),
                SolveMode::Inexact { inner_iters } => {
                    let reference = if certify_inexact {
                        Some(solve_qp_exact(&qp, Some(&xj))?)
                    } else {
                        None
                    };
                    solve_qp_inexact(&qp, &xj, inner_iters, reference.as_ref())
                }
            };
            let result = match solved {
                Ok(r) => r,
                Err(Error::NotConverged { best, .. }) => {
                    warning = true;
                    *best
                }
                Err(e) => return Err(e),
            };
            let delta = &result.minimizer - &xj;
            dx_sq += delta.norm_squared();
            subopt += result.suboptimality_bound;
            // A is affine in the block: update it incrementally.
            a_val += &m * &delta;
            let range = spec.blocks.range(j);
            for (local, c) in range.enumerate() {
                state.x[c] = result.minimizer[local];
            }
        }

        // Fresh evaluation kills incremental drift and makes the dual update
        // reproducible from (x, z) alone.
        let a_val = eval_a(&spec.a, &state.x)?;

        let qt = spec.q.transpose();
        let rhs = -(spec.phi.q() + &qt * &state.w + self.rho * &qt * &a_val);
        let z_next = self.z_chol.solve(&rhs);
        let dz = (&z_next - &state.z).norm();
        state.z = z_next;

        let residual = &a_val + &spec.q * &state.z;
        let dw_vec = self.rho * &residual;
        state.w += &dw_vec;
        let dw = dw_vec.norm();

        state.k += 1;
        let mut record = self.make_record(spec, state, dx_sq.sqrt(), dz, dw, subopt, warning)?;
        // make_record recomputes the residual from the same (x, z); keep the
        // primal residual consistent with the dual step above.
        record.primal_residual = residual.norm();
        state.history.push(record);
        Ok(())
    }
}

/// Runs a single ADMM iteration on `state`.
pub fn sweep(spec: &ProblemSpec, state: &mut SolverState, config: &SolverConfig) -> Result<()> {
    let ctx = SweepContext::new(spec, state.rho)?;
    ctx.sweep_once(spec, state, config.mode, config.certify_inexact)
}

fn resolve_rho(spec: &ProblemSpec, config: &SolverConfig) -> Result<f64> {
    match config.rho {
        RhoSetting::Fixed(v) => {
            if v <= 0.0 {
                return Err(Error::InvalidProblem(format!("rho must be positive, got {v}")));
            }
            Ok(v)
        }
        RhoSetting::Auto => Ok(auto_rho(spec)? * config.rho_safety),
    }
}

/// Runs ADMM until the joint stopping test (primal residual, combined step
/// norm, and blockwise KKT residual all below tolerance), the iteration cap,
/// or dual-norm divergence.
pub fn solve(spec: &ProblemSpec, config: &SolverConfig, x0: Option<&DVector<f64>>) -> Result<SolveReport> {
    let report = validate(spec);
    if !report.is_valid() {
        let waived = config.allow_rank_deficient && report.only_rank_violations();
        if !waived {
            return Err(Error::InvalidProblem(report.summary()));
        }
    }

    let rho = resolve_rho(spec, config)?;
    let ctx = SweepContext::new(spec, rho)?;
    let mut state = initialize_with_ctx(spec, x0, rho, &ctx)?;
    let divergence_threshold = config
        .divergence_w_norm
        .unwrap_or_else(|| 1e6 * (1.0 + state.w.norm()));

    let mut termination = Termination::MaxIterReached;
    for _ in 0..config.max_iter {
        ctx.sweep_once(spec, &mut state, config.mode, config.certify_inexact)?;
        let record = state.history.last().expect("record just pushed");
        if record.primal_residual <= config.tol_primal
            && record.combined_step() <= config.tol_step
            && record.block_kkt <= config.tol_kkt
        {
            termination = Termination::Converged;
            break;
        }
        if state.k >= config.min_iters_before_divergence && state.w.norm() >= divergence_threshold {
            termination = Termination::Diverged;
            break;
        }
    }

    let a_val = eval_a(&spec.a, &state.x)?;
    let qz = &spec.q * &state.z;
    let blockwise_kkt = ctx.block_kkts(spec, &state.x, &a_val, &qz, &state.w);
    let dual_identity_residual =
        (spec.q.transpose() * &state.w + spec.phi.gradient(&state.z)).norm();

    Ok(SolveReport { termination, state, blockwise_kkt, dual_identity_residual })
}

/// Writes the iteration history as CSV: one row per iteration, header row,
/// 17 significant digits.
pub fn write_history_csv<W: IoWrite>(
    history: &[IterationRecord],
    lstar: Option<f64>,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(
        out,
        "k,lagrangian,gap,primal_residual,dx,dz,dw,dual_identity_residual,block_kkt,subopt"
    )?;
    for rec in history {
        let gap = match lstar {
            Some(l) => rec.lagrangian - l,
            None => f64::NAN,
        };
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            rec.k,
            rec.lagrangian,
            gap,
            rec.primal_residual,
            rec.dx,
            rec.dz,
            rec.dw,
            rec.dual_identity_residual,
            rec.block_kkt,
            rec.subopt,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use approx::assert_relative_eq;

    #[test]
    fn auto_rho_example22() {
        let spec = instances::example22();
        // L_phi = mu_phi = 2, Q = I: max{16/2, 16/2} = 8.
        assert_relative_eq!(auto_rho(&spec).unwrap(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn auto_rho_scales_linearly_with_phi() {
        for t in [0.5, 1.0, 3.0, 10.0] {
            let mut spec = instances::example22();
            spec.phi = crate::problem::QuadraticObjective::isotropic(2, 2.0 * t);
            assert_relative_eq!(auto_rho(&spec).unwrap(), 8.0 * t, max_relative = 1e-12);
        }
    }

    #[test]
    fn auto_rho_scaled_coupling() {
        let mut spec = instances::example22();
        spec.q = DMatrix::identity(2, 2) * 2.0;
        // lambda+(Q'Q) = 4, sqrt(lambda+(QQ')) = 2: max{16/8, 16/4} = 4.
        assert_relative_eq!(auto_rho(&spec).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn initialize_example22() {
        let spec = instances::example22();
        let state = initialize(&spec, Some(&DVector::zeros(2)), 8.0).unwrap();
        assert_relative_eq!(state.z[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(state.z[1], -1.0, epsilon = 1e-12);
        assert_relative_eq!(state.w[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(state.w[1], 2.0, epsilon = 1e-12);
        assert_eq!(state.history.len(), 1);
        assert!(state.history[0].primal_residual <= 1e-12);
    }

    #[test]
    fn initialize_feasible_image_for_random_points() {
        let spec = instances::toy_q(3.0, 1.0, 1.0);
        for xv in [[0.2, -1.0, 0.7, 2.0], [5.0, 5.0, 5.0, 5.0], [0.0, 0.0, 0.0, 0.0]] {
            let x0 = DVector::from_row_slice(&xv);
            let state = initialize(&spec, Some(&x0), 1.0).unwrap();
            let a0 = eval_a(&spec.a, &state.x).unwrap();
            let res = (&a0 + &spec.q * &state.z).norm();
            assert!(res <= 1e-10 * (1.0 + a0.norm()), "residual {res}");
        }
    }

    #[test]
    fn sweep_descends_from_initialization() {
        let spec = instances::example22();
        let mut state = initialize(&spec, Some(&DVector::zeros(2)), 8.0).unwrap();
        let l0 = state.history[0].lagrangian;
        sweep(&spec, &mut state, &SolverConfig::default()).unwrap();
        let l1 = state.history[1].lagrangian;
        assert!(l1 < l0, "sweep did not descend: {l1} >= {l0}");
    }

    #[test]
    fn sweep_fixes_stationary_points() {
        // Analytic stationary point of the toy problem: x = 0, z = -1/q,
        // w = mu_z / q^2.
        let q = 10.0;
        let spec = instances::toy_q(q, 1.0, 1.0);
        let mut state = initialize(&spec, Some(&DVector::zeros(4)), 0.4).unwrap();
        state.z = DVector::from_element(1, -1.0 / q);
        state.w = DVector::from_element(1, 1.0 / (q * q));
        let x_before = state.x.clone();
        sweep(&spec, &mut state, &SolverConfig::default()).unwrap();
        assert!((&state.x - &x_before).norm() <= 1e-10);
        assert!((state.z[0] + 1.0 / q).abs() <= 1e-10);
        assert!((state.w[0] - 1.0 / (q * q)).abs() <= 1e-10);
    }

    #[test]
    fn solve_toy_reaches_analytic_optimum() {
        let q = 10.0;
        let spec = instances::toy_q(q, 1.0, 1.0);
        let report = solve(
            &spec,
            &SolverConfig { max_iter: 3000, ..Default::default() },
            Some(&DVector::from_element(4, 1.0)),
        )
        .unwrap();
        assert_eq!(report.termination, Termination::Converged);
        assert!(report.state.x.norm() <= 1e-6, "x = {}", report.state.x.norm());
        assert_relative_eq!(report.state.z[0], -0.1, epsilon = 1e-6);
        assert_relative_eq!(report.state.w[0], 0.01, epsilon = 1e-6);
    }

    #[test]
    fn solve_rejects_rank_deficient_without_override() {
        let spec = instances::example210();
        let err = solve(&spec, &SolverConfig::default(), None);
        assert!(matches!(err, Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn solve_diverges_on_counterexample_with_override() {
        let spec = instances::example210();
        let config = SolverConfig {
            rho: RhoSetting::Fixed(1000.0),
            allow_rank_deficient: true,
            max_iter: 5000,
            ..Default::default()
        };
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let report = solve(&spec, &config, Some(&x0)).unwrap();
        assert_eq!(report.termination, Termination::Diverged);
        assert!(report.state.x.norm() <= 1e-3);
        assert!(report.state.w.norm() >= 1e6);
        assert!(report.state.k <= 5000);
    }

    #[test]
    fn w_update_is_bitwise_construction() {
        let spec = instances::example22();
        let mut state = initialize(&spec, Some(&DVector::from_vec(vec![0.3, -0.2])), 8.0).unwrap();
        for _ in 0..5 {
            let w_before = state.w.clone();
            sweep(&spec, &mut state, &SolverConfig::default()).unwrap();
            let a_val = eval_a(&spec.a, &state.x).unwrap();
            let residual = &a_val + &spec.q * &state.z;
            let expected = &w_before + state.rho * &residual;
            assert_eq!(expected, state.w);
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let spec = instances::example22();
        let config = SolverConfig { max_iter: 50, ..Default::default() };
        let a = solve(&spec, &config, Some(&DVector::from_vec(vec![0.7, -0.4]))).unwrap();
        let b = solve(&spec, &config, Some(&DVector::from_vec(vec![0.7, -0.4]))).unwrap();
        assert_eq!(a.state.x, b.state.x);
        assert_eq!(a.state.history.len(), b.state.history.len());
        for (ra, rb) in a.state.history.iter().zip(&b.state.history) {
            assert_eq!(ra.lagrangian, rb.lagrangian);
            assert_eq!(ra.primal_residual, rb.primal_residual);
        }
    }

    #[test]
    fn csv_format_has_expected_header_and_rows() {
        let spec = instances::example22();
        let mut state = initialize(&spec, None, 8.0).unwrap();
        sweep(&spec, &mut state, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_history_csv(&state.history, Some(0.0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,lagrangian,gap,primal_residual,dx,dz,dw,dual_identity_residual,block_kkt,subopt"
        );
        assert_eq!(lines.count(), 2);
    }
}
