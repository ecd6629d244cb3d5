//! Per-block and z subproblem solvers: exact (Cholesky / accelerated
//! projected gradient) and inexact (a fixed number of projected-gradient
//! steps), plus Euclidean projections onto indicator sets.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::algebra::{eval_a, reduce_block};
use crate::error::{Error, Result};
use crate::problem::{IndicatorSet, ProblemSpec, SmoothExtra};

/// KKT tolerance of exact constrained block solves, relative to `1 + ||g||`.
pub const EXACT_KKT_TOL: f64 = 1e-10;

/// Iteration cap of exact projected-gradient block solves.
pub const EXACT_ITER_CAP: usize = 100_000;

/// The strongly convex quadratic (plus optional smooth extras) a single
/// block minimizes: `u -> u' H u / 2 + g' u + c0 + extras(u)` over `set`.
#[derive(Debug, Clone)]
pub struct BlockQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
    pub set: IndicatorSet,
    /// Non-quadratic smooth terms with block-local coordinates.
    pub extras: Vec<(usize, SmoothExtra)>,
}

impl BlockQp {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let mut v = 0.5 * (&self.h * u).dot(u) + self.g.dot(u) + self.c0;
        for &(local, ex) in &self.extras {
            v += ex.value(u[local]);
        }
        v
    }

    pub fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut grad = &self.h * u + &self.g;
        for &(local, ex) in &self.extras {
            grad[local] += ex.derivative(u[local]);
        }
        grad
    }

    /// Step-size Lipschitz constant: `lambda_max(H)` plus extra curvature.
    pub fn lipschitz(&self) -> f64 {
        let lam = if self.dim() == 0 {
            0.0
        } else {
            self.h.clone().symmetric_eigenvalues().max()
        };
        lam + self.extras.iter().map(|(_, ex)| ex.curvature_bound()).sum::<f64>()
    }

    /// Fixed-point optimality residual `||u - proj(u - grad(u))||`.
    pub fn kkt_residual(&self, u: &DVector<f64>) -> f64 {
        let grad = self.gradient(u);
        match &self.set {
            IndicatorSet::Free { .. } => grad.norm(),
            set => {
                let trial = u - &grad;
                let proj = project(set, &trial).unwrap_or(trial);
                (u - proj).norm()
            }
        }
    }
}

/// Outcome of one subproblem solve.
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub minimizer: DVector<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub inner_iterations: usize,
    /// Upper estimate of the value gap to the exact minimizer.
    pub suboptimality_bound: f64,
}

/// Euclidean projection onto an indicator set.
pub fn project(set: &IndicatorSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != set.dim() {
        return Err(Error::Dimension { context: "projection input", expected: set.dim(), got: v.len() });
    }
    match set {
        IndicatorSet::Free { .. } => Ok(v.clone()),
        IndicatorSet::Box { lower, upper } => {
            Ok(DVector::from_fn(v.len(), |i, _| v[i].max(lower[i]).min(upper[i])))
        }
        IndicatorSet::Polyhedron { g, h } => project_polyhedron(g, h, v),
    }
}

/// Dykstra's alternating projections over the halfspace rows of `Gv <= h`.
fn project_polyhedron(g: &DMatrix<f64>, h: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let rows = g.nrows();
    if rows == 0 {
        return Ok(v.clone());
    }
    let row_sq: Vec<f64> = (0..rows).map(|i| g.row(i).norm_squared()).collect();
    let mut y = v.clone();
    let mut corrections: Vec<DVector<f64>> = vec![DVector::zeros(v.len()); rows];
    let scale = 1.0 + v.norm();
    for _cycle in 0..50_000 {
        let mut movement = 0.0f64;
        for i in 0..rows {
            if row_sq[i] == 0.0 {
                if h[i] < 0.0 {
                    return Err(Error::EmptySet);
                }
                continue;
            }
            let before = &y + &corrections[i];
            let excess = g.row(i).dot(&before.transpose()) - h[i];
            let after = if excess > 0.0 {
                &before - (excess / row_sq[i]) * g.row(i).transpose()
            } else {
                before.clone()
            };
            corrections[i] = &before - &after;
            movement = movement.max((&after - &y).norm());
            y = after;
        }
        let violation = (g * &y - h).iter().fold(0.0f64, |m, &t| m.max(t));
        if movement <= 1e-13 * scale && violation <= 1e-12 * scale {
            return Ok(y);
        }
    }
    let violation = (g * &y - h).iter().fold(0.0f64, |m, &t| m.max(t));
    if violation <= 1e-9 * scale {
        Ok(y)
    } else {
        Err(Error::EmptySet)
    }
}

/// Assembles the quadratic subproblem of block `j` at the current point:
/// with `(M, b) = reduce_block(A, x, j)` and `r = b + Qz`,
/// `H = P_jj + rho M'M` and `g = (Px + q)|_j - P_jj x_j + M'(w + rho r)`.
pub fn assemble_block_qp(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    z: &DVector<f64>,
    w: &DVector<f64>,
    rho: f64,
    j: usize,
) -> Result<BlockQp> {
    let form = reduce_block(&spec.a, x, j)?;
    let range = spec.blocks.range(j);
    let nj = range.len();
    let p = spec.f.p();

    let r = &form.b + &spec.q * z;
    let p_jj = p.view((range.start, range.start), (nj, nj)).into_owned();
    let h = &p_jj + rho * form.m.transpose() * &form.m;

    let xj = DVector::from_iterator(nj, range.clone().map(|c| x[c]));
    let p_rows = p.rows(range.start, nj);
    let qj = DVector::from_iterator(nj, range.clone().map(|c| spec.f.q()[c]));
    let g = p_rows * x + qj - &p_jj * &xj + form.m.transpose() * (w + rho * &r);

    // c0 makes u -> u'Hu/2 + g'u + c0 + extras(u) equal the smooth Lagrangian
    // at x with block j replaced by u.
    let mut x0 = x.clone();
    for c in range.clone() {
        x0[c] = 0.0;
    }
    let extras = spec.extras_for_block(j);
    let mut extras_elsewhere = spec.extras_value(x);
    for &(local, ex) in &extras {
        extras_elsewhere -= ex.value(x[range.start + local]);
    }
    let c0 = spec.f.value(&x0)
        + extras_elsewhere
        + spec.phi.value(z)
        + w.dot(&r)
        + 0.5 * rho * r.norm_squared();

    Ok(BlockQp { h, g, c0, set: spec.indicators[j].clone(), extras })
}

fn direct_solve(qp: &BlockQp) -> Result<SubproblemResult> {
    let chol = Cholesky::new(qp.h.clone())
        .ok_or_else(|| Error::InvalidProblem("block Hessian not positive definite".into()))?;
    let u = -chol.solve(&qp.g);
    Ok(SubproblemResult {
        objective_value: qp.objective(&u),
        kkt_residual: qp.kkt_residual(&u),
        minimizer: u,
        inner_iterations: 0,
        suboptimality_bound: 0.0,
    })
}

/// Solves the block subproblem exactly: a Cholesky solve when the set is
/// free and there are no extra terms, otherwise accelerated projected
/// gradient with step `1/lambda_max(H)` run to the KKT tolerance.
pub fn solve_qp_exact(qp: &BlockQp, start: Option<&DVector<f64>>) -> Result<SubproblemResult> {
    if qp.set.is_free() && qp.extras.is_empty() {
        return direct_solve(qp);
    }
    let lip = qp.lipschitz();
    if lip == 0.0 {
        let u = project(&qp.set, &DVector::zeros(qp.dim()))?;
        return Ok(SubproblemResult {
            objective_value: qp.objective(&u),
            kkt_residual: qp.kkt_residual(&u),
            minimizer: u,
            inner_iterations: 0,
            suboptimality_bound: 0.0,
        });
    }
    let step = 1.0 / lip;
    let tol = EXACT_KKT_TOL * (1.0 + qp.g.norm());
    let start = match start {
        Some(u) => project(&qp.set, u)?,
        None => project(&qp.set, &DVector::zeros(qp.dim()))?,
    };

    // FISTA with function-value restart.
    let mut u = start;
    let mut u_prev = u.clone();
    let mut t = 1.0f64;
    let mut best = u.clone();
    let mut best_val = qp.objective(&u);
    for iter in 0..EXACT_ITER_CAP {
        let momentum = if iter == 0 { 0.0 } else { (t - 1.0) / {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let m = t_next;
            t = m;
            m
        } };
        let y = if momentum == 0.0 { u.clone() } else { &u + momentum * (&u - &u_prev) };
        let grad = qp.gradient(&y);
        let next = project(&qp.set, &(&y - step * grad))?;
        u_prev = u;
        u = next;
        let val = qp.objective(&u);
        if val < best_val {
            best_val = val;
            best = u.clone();
        } else if val > best_val + 1e-12 * (1.0 + best_val.abs()) {
            // restart momentum
            t = 1.0;
            u_prev = u.clone();
        }
        let kkt = qp.kkt_residual(&u);
        if kkt <= tol {
            let mu_eff = (qp.h.clone().symmetric_eigenvalues().min()
                - qp.extras.iter().map(|(_, ex)| ex.curvature_bound()).sum::<f64>())
            .max(0.0);
            let subopt = if mu_eff > 0.0 { (lip * kkt).powi(2) / (2.0 * mu_eff) } else { 0.0 };
            return Ok(SubproblemResult {
                objective_value: val,
                kkt_residual: kkt,
                minimizer: u,
                inner_iterations: iter + 1,
                suboptimality_bound: subopt,
            });
        }
    }
    let kkt = qp.kkt_residual(&best);
    Err(Error::NotConverged {
        iterations: EXACT_ITER_CAP,
        kkt_residual: kkt,
        best: Box::new(SubproblemResult {
            objective_value: best_val,
            kkt_residual: kkt,
            minimizer: best,
            inner_iterations: EXACT_ITER_CAP,
            suboptimality_bound: f64::INFINITY,
        }),
    })
}

/// Runs exactly `inner_iters` plain projected-gradient steps from `start`.
///
/// When `reference` (an exact solve of the same subproblem) is provided the
/// suboptimality bound is the measured value gap; otherwise the standard
/// worst-case projected-gradient bound with the initial distance estimated
/// from the observed steps.
pub fn solve_qp_inexact(
    qp: &BlockQp,
    start: &DVector<f64>,
    inner_iters: usize,
    reference: Option<&SubproblemResult>,
) -> Result<SubproblemResult> {
    if inner_iters == 0 {
        return Err(Error::InsufficientData("inner_iters must be >= 1".into()));
    }
    let lip = qp.lipschitz();
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut u = project(&qp.set, start)?;
    let start_proj = u.clone();
    let mut last_step_norm = 0.0;
    for _ in 0..inner_iters {
        let grad = qp.gradient(&u);
        let next = project(&qp.set, &(&u - step * grad))?;
        last_step_norm = (&next - &u).norm();
        u = next;
    }
    let objective_value = qp.objective(&u);
    let suboptimality_bound = match reference {
        Some(exact) => (objective_value - exact.objective_value).max(0.0),
        None => {
            let mu_eff = (qp.h.clone().symmetric_eigenvalues().min()
                - qp.extras.iter().map(|(_, ex)| ex.curvature_bound()).sum::<f64>())
            .max(0.0);
            let ratio = if mu_eff > 0.0 { lip / mu_eff } else { 1e6 };
            let dist = (&u - &start_proj).norm() + ratio * last_step_norm;
            lip * dist * dist / (2.0 * inner_iters as f64)
        }
    };
    Ok(SubproblemResult {
        kkt_residual: qp.kkt_residual(&u),
        objective_value,
        minimizer: u,
        inner_iterations: inner_iters,
        suboptimality_bound,
    })
}

/// Solves the z update `min_z phi(z) + <w, Qz> + rho/2 ||A(x) + Qz||^2` via
/// the normal equations `(P_phi + rho Q'Q) z = -(q_phi + Q'w + rho Q'A(x))`.
/// The system matrix is positive definite because `mu_phi > 0` even when
/// `Q'Q` is singular.
pub fn solve_z(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    w: &DVector<f64>,
    rho: f64,
) -> Result<SubproblemResult> {
    if w.len() != spec.n_c() {
        return Err(Error::Dimension { context: "solve_z dual", expected: spec.n_c(), got: w.len() });
    }
    let a_val = eval_a(&spec.a, x)?;
    let qt = spec.q.transpose();
    let system = spec.phi.p() + rho * &qt * &spec.q;
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::InvalidProblem("z-step system not positive definite".into()))?;
    let rhs = -(spec.phi.q() + &qt * w + rho * &qt * &a_val);
    let z = chol.solve(&rhs);

    let residual = &a_val + &spec.q * &z;
    let objective_value = spec.phi.value(&z) + w.dot(&(&spec.q * &z)) + 0.5 * rho * residual.norm_squared();
    let kkt = (spec.phi.gradient(&z) + &qt * (w + rho * residual)).norm();
    Ok(SubproblemResult {
        minimizer: z,
        objective_value,
        kkt_residual: kkt,
        inner_iterations: 0,
        suboptimality_bound: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use approx::assert_relative_eq;

    fn free_qp(h: DMatrix<f64>, g: DVector<f64>, c0: f64) -> BlockQp {
        let dim = g.len();
        BlockQp { h, g, c0, set: IndicatorSet::Free { dim }, extras: Vec::new() }
    }

    #[test]
    fn exact_free_identity_hessian() {
        let qp = free_qp(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]), 3.0);
        let res = solve_qp_exact(&qp, None).unwrap();
        assert_relative_eq!(res.minimizer[0], 1.0);
        assert_relative_eq!(res.minimizer[1], 1.0);
        assert_relative_eq!(res.objective_value, 3.0 - 1.0);
        assert!(res.suboptimality_bound <= 1e-12 * (1.0 + res.objective_value.abs()));
    }

    #[test]
    fn exact_box_clips_unconstrained_optimum() {
        let qp = BlockQp {
            h: DMatrix::identity(2, 2) * 2.0,
            g: DVector::from_vec(vec![-4.0, -4.0]),
            c0: 0.0,
            set: IndicatorSet::Box {
                lower: DVector::from_vec(vec![0.0, 0.0]),
                upper: DVector::from_vec(vec![0.5, 0.5]),
            },
            extras: Vec::new(),
        };
        // Unconstrained optimum (2,2), clipped to (0.5,0.5) since H is diagonal.
        let res = solve_qp_exact(&qp, None).unwrap();
        assert_relative_eq!(res.minimizer[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(res.minimizer[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn exact_halfspace_block() {
        let qp = BlockQp {
            h: DMatrix::identity(1, 1),
            g: DVector::from_vec(vec![-1.0]),
            c0: 0.0,
            set: IndicatorSet::Polyhedron {
                g: DMatrix::from_row_slice(1, 1, &[1.0]),
                h: DVector::from_vec(vec![0.0]),
            },
            extras: Vec::new(),
        };
        // Unconstrained optimum u = 1, constrained to u <= 0 -> 0.
        let res = solve_qp_exact(&qp, None).unwrap();
        assert_relative_eq!(res.minimizer[0], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn inexact_single_step_is_one_gradient_step() {
        let qp = free_qp(DMatrix::identity(3, 3), DVector::from_vec(vec![2.0, -1.0, 0.5]), 0.0);
        let res = solve_qp_inexact(&qp, &DVector::zeros(3), 1, None).unwrap();
        // One step from 0 with step 1/lambda_max = 1: -g.
        assert_relative_eq!((res.minimizer + qp.g.clone()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn inexact_converges_to_exact_with_many_iterations() {
        // Non-trivial multi-dimensional QP so the inexact path really iterates.
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let g = DVector::from_vec(vec![1.0, -2.0, 0.25]);
        let qp = BlockQp {
            h,
            g,
            c0: 0.0,
            set: IndicatorSet::Box {
                lower: DVector::from_vec(vec![-0.2, -10.0, -10.0]),
                upper: DVector::from_vec(vec![10.0, 10.0, 0.1]),
            },
            extras: Vec::new(),
        };
        let exact = solve_qp_exact(&qp, None).unwrap();
        let start = DVector::zeros(3);
        let mut last_dist = f64::INFINITY;
        for iters in [10usize, 100, 10_000] {
            let inexact = solve_qp_inexact(&qp, &start, iters, None).unwrap();
            let dist = (&inexact.minimizer - &exact.minimizer).norm();
            assert!(dist <= last_dist + 1e-15, "distance not monotone: {dist} > {last_dist}");
            last_dist = dist;
        }
        assert!(last_dist <= 1e-8, "10k-step PG should match exact: {last_dist}");
    }

    #[test]
    fn assemble_matches_lagrangian_on_example22() {
        let spec = instances::example22();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let z = DVector::from_vec(vec![0.1, 0.2]);
        let w = DVector::from_vec(vec![0.5, -0.25]);
        let rho = 8.0;
        for j in 0..2 {
            let qp = assemble_block_qp(&spec, &x, &z, &w, rho, j).unwrap();
            for uval in [-1.0, 0.0, 1.0] {
                let u = DVector::from_vec(vec![uval]);
                let mut xt = x.clone();
                xt[spec.blocks.offset(j)] = uval;
                let l = crate::algebra::eval_lagrangian(&spec, &xt, &z, &w, rho).unwrap();
                assert_relative_eq!(qp.objective(&u), l.smooth_value, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn assemble_rho_zero_drops_penalty() {
        let spec = instances::example22();
        let x = DVector::from_vec(vec![0.5, 1.5]);
        let z = DVector::from_vec(vec![0.0, 0.0]);
        let w = DVector::from_vec(vec![1.0, 2.0]);
        let qp = assemble_block_qp(&spec, &x, &z, &w, 0.0, 0).unwrap();
        let form = reduce_block(&spec.a, &x, 0).unwrap();
        let p = spec.f.p();
        let expected_h = p.view((0, 0), (1, 1)).into_owned();
        assert_relative_eq!(qp.h[(0, 0)], expected_h[(0, 0)]);
        let expected_g = (p.rows(0, 1) * &x)[(0, 0)] + spec.f.q()[0] - p[(0, 0)] * x[0]
            + (form.m.transpose() * &w)[0];
        assert_relative_eq!(qp.g[0], expected_g, max_relative = 1e-14);
    }

    #[test]
    fn z_step_first_order_identity() {
        let spec = instances::example22();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let w = DVector::zeros(2);
        let res = solve_z(&spec, &x, &w, 8.0).unwrap();
        // (2 + 8) z = -8 A(x) with A(x) = (1,1): z = (-0.8, -0.8).
        assert_relative_eq!(res.minimizer[0], -0.8, epsilon = 1e-12);
        assert_relative_eq!(res.minimizer[1], -0.8, epsilon = 1e-12);
        assert!(res.kkt_residual <= 1e-10);
    }

    #[test]
    fn z_step_scalar_case() {
        // phi = ||z||^2/2, Q = I, w = 0, rho = 1, A(x) = (1,1) -> z = -0.5.
        let spec = {
            let mut s = instances::example22();
            s.phi = crate::problem::QuadraticObjective::isotropic(2, 1.0);
            s
        };
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let res = solve_z(&spec, &x, &DVector::zeros(2), 1.0).unwrap();
        assert_relative_eq!(res.minimizer[0], -0.5, epsilon = 1e-12);
        assert_relative_eq!(res.minimizer[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_cases() {
        let free = IndicatorSet::Free { dim: 3 };
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(project(&free, &v).unwrap(), v);

        let boxset = IndicatorSet::Box {
            lower: DVector::from_vec(vec![0.0, 0.0, 0.0]),
            upper: DVector::from_vec(vec![1.0, 1.0, 1.0]),
        };
        let p = project(&boxset, &DVector::from_vec(vec![-3.0, 0.4, 7.0])).unwrap();
        assert_eq!(p, DVector::from_vec(vec![0.0, 0.4, 1.0]));

        let half = IndicatorSet::Polyhedron {
            g: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            h: DVector::from_vec(vec![0.0]),
        };
        let p = project(&half, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.0, epsilon = 1e-12);
    }
}
