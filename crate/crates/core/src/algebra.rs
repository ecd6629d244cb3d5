//! Evaluation of the constraint operator, its per-block affine reductions,
//! and the augmented Lagrangian with its derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{MultiAffineOperator, ProblemSpec};

/// The affine view of `A` in one block: `A(x) = M x_j + b` when all other
/// blocks are held at their current values.
#[derive(Debug, Clone)]
pub struct BlockAffineForm {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Evaluates `A(x)` row by row.
pub fn eval_a(op: &MultiAffineOperator, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != op.n_x() {
        return Err(Error::Dimension {
            context: "eval_a input",
            expected: op.n_x(),
            got: x.len(),
        });
    }
    Ok(DVector::from_iterator(
        op.n_rows(),
        op.rows().iter().map(|row| row.eval(x)),
    ))
}

/// Reduces `A` to its affine form in block `j` at the point `x`.
///
/// The zero diagonal block of each `C_i` guarantees no quadratic term in
/// `x_j` survives, so `eval_a(x) == M x_j + b` exactly. A nonzero entry in
/// the diagonal block is reported as `InvalidOperator`.
pub fn reduce_block(op: &MultiAffineOperator, x: &DVector<f64>, j: usize) -> Result<BlockAffineForm> {
    if x.len() != op.n_x() {
        return Err(Error::Dimension {
            context: "reduce_block input",
            expected: op.n_x(),
            got: x.len(),
        });
    }
    let blocks = op.blocks();
    if j >= blocks.num_blocks() {
        return Err(Error::Dimension {
            context: "reduce_block block index",
            expected: blocks.num_blocks(),
            got: j,
        });
    }
    let range = blocks.range(j);
    let nj = range.len();
    let mut m = DMatrix::zeros(op.n_rows(), nj);
    for (i, row) in op.rows().iter().enumerate() {
        for local in 0..nj {
            m[(i, local)] = row.d[range.start + local];
        }
        for &(p, t, v) in row.c.upper_triplets() {
            let p_in = range.contains(&p);
            let t_in = range.contains(&t);
            if p_in && t_in {
                return Err(Error::InvalidOperator(format!(
                    "constraint row {i} has a nonzero diagonal-block entry ({p},{t}) in block {j}"
                )));
            }
            if p_in {
                m[(i, p - range.start)] += v * x[t];
            } else if t_in {
                m[(i, t - range.start)] += v * x[p];
            }
        }
    }
    // b = A evaluated with block j zeroed.
    let mut x0 = x.clone();
    for c in range {
        x0[c] = 0.0;
    }
    let b = eval_a(op, &x0)?;
    Ok(BlockAffineForm { m, b })
}

/// Augmented Lagrangian value and first derivatives at one point.
///
/// `smooth_value` is the value of the differentiable part; when an indicator
/// constraint is violated the mathematical value is infinite and
/// `indicator_feasible` is false (diagnostics still want the smooth part, so
/// no non-finite float is stored). `grad_x` excludes indicator subgradients.
#[derive(Debug, Clone)]
pub struct LagrangianPoint {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub w: DVector<f64>,
    pub rho: f64,
    pub smooth_value: f64,
    pub indicator_feasible: bool,
    pub grad_x: DVector<f64>,
    pub grad_z: DVector<f64>,
    pub grad_w: DVector<f64>,
}

impl LagrangianPoint {
    /// The Lagrangian value: the smooth part, or `+inf` when an indicator is
    /// violated.
    pub fn value(&self) -> f64 {
        if self.indicator_feasible {
            self.smooth_value
        } else {
            f64::INFINITY
        }
    }
}

/// Evaluates the augmented Lagrangian
/// `f(x) + phi(z) + <w, A(x)+Qz> + rho/2 ||A(x)+Qz||^2` and its gradients.
pub fn eval_lagrangian(
    spec: &ProblemSpec,
    x: &DVector<f64>,
    z: &DVector<f64>,
    w: &DVector<f64>,
    rho: f64,
) -> Result<LagrangianPoint> {
    if x.len() != spec.n_x() {
        return Err(Error::Dimension { context: "lagrangian x", expected: spec.n_x(), got: x.len() });
    }
    if z.len() != spec.n_z() {
        return Err(Error::Dimension { context: "lagrangian z", expected: spec.n_z(), got: z.len() });
    }
    if w.len() != spec.n_c() {
        return Err(Error::Dimension { context: "lagrangian w", expected: spec.n_c(), got: w.len() });
    }

    let a_val = eval_a(&spec.a, x)?;
    let residual = &a_val + &spec.q * z;
    let smooth_value = spec.objective_x(x)
        + spec.phi.value(z)
        + w.dot(&residual)
        + 0.5 * rho * residual.norm_squared();

    // grad_x = grad f(x) + J_A(x)' (w + rho (A(x)+Qz)), row i of J_A = C_i x + d_i.
    let mut grad_x = spec.f.gradient(x);
    spec.extras_add_gradient(x, &mut grad_x);
    let dual_term = w + rho * &residual;
    for (i, row) in spec.a.rows().iter().enumerate() {
        let coeff = dual_term[i];
        if coeff != 0.0 {
            grad_x.axpy(coeff, &row.gradient(x), 1.0);
        }
    }

    let grad_z = spec.phi.gradient(z) + spec.q.transpose() * &dual_term;

    let indicator_feasible = spec
        .indicators
        .iter()
        .enumerate()
        .all(|(j, set)| {
            let range = spec.blocks.range(j);
            let block = DVector::from_iterator(range.len(), range.map(|c| x[c]));
            set.contains(&block, 1e-9 * (1.0 + block.norm()))
        });

    Ok(LagrangianPoint {
        x: x.clone(),
        z: z.clone(),
        w: w.clone(),
        rho,
        smooth_value,
        indicator_feasible,
        grad_x,
        grad_z,
        grad_w: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn eval_a_example22() {
        let spec = instances::example22();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let a = eval_a(&spec.a, &x).unwrap();
        // row1 = 1*1 + 1 + 1 = 3, row2 = -1 + 1 + 1 = 1
        assert_relative_eq!(a[0], 3.0);
        assert_relative_eq!(a[1], 1.0);
    }

    #[test]
    fn eval_a_constant_operator() {
        let spec = instances::linear_two_block(1.0, 1.0);
        let mut rows = spec.a.rows().to_vec();
        rows[0].d = DVector::zeros(2);
        let op = crate::problem::MultiAffineOperator::new(spec.blocks.clone(), rows).unwrap();
        for xv in [[0.0, 0.0], [3.0, -7.0], [1e3, 2e3]] {
            let a = eval_a(&op, &DVector::from_row_slice(&xv)).unwrap();
            assert_relative_eq!(a[0], 1.0);
        }
    }

    #[test]
    fn eval_a_toy() {
        let spec = instances::toy_q(10.0, 1.0, 1.0);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let a = eval_a(&spec.a, &x).unwrap();
        // 1*2 - 3*4 + 1 = -9 (the qz term lives in Qz, not in A)
        assert_relative_eq!(a[0], -9.0);
    }

    #[test]
    fn reduce_block_example22() {
        let spec = instances::example22();
        // x2 = 3 fixed, reduce over block 0 (x1).
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let form = reduce_block(&spec.a, &x, 0).unwrap();
        assert_relative_eq!(form.m[(0, 0)], 4.0); // x2 + 1
        assert_relative_eq!(form.m[(1, 0)], -3.0); // -x2
        assert_relative_eq!(form.b[0], 1.0);
        assert_relative_eq!(form.b[1], 4.0);
        // Contract: eval_a(x) = M x_j + b at the actual x_j.
        let a = eval_a(&spec.a, &x).unwrap();
        let recon = &form.m * DVector::from_vec(vec![x[0]]) + &form.b;
        assert_relative_eq!(a[0], recon[0], max_relative = 1e-14);
        assert_relative_eq!(a[1], recon[1], max_relative = 1e-14);
    }

    #[test]
    fn reduce_block_linear_case() {
        let spec = instances::linear_two_block(1.0, 1.0);
        let x = DVector::from_vec(vec![5.0, -2.0]);
        let form = reduce_block(&spec.a, &x, 0).unwrap();
        assert_relative_eq!(form.m[(0, 0)], 1.0);
        // b = e + d . x with block 0 zeroed = 1 + (-2)
        assert_relative_eq!(form.b[0], -1.0);
    }

    #[test]
    fn lagrangian_at_feasible_point_is_objective() {
        let spec = instances::example22();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let z = DVector::from_vec(vec![-1.0, -1.0]);
        let w = DVector::zeros(2);
        let point = eval_lagrangian(&spec, &x, &z, &w, 8.0).unwrap();
        // A(x) = (1,1), A+Qz = 0, so value = f + phi = 0 + 2.
        assert_relative_eq!(point.value(), 2.0);
        assert_relative_eq!(point.grad_w.norm(), 0.0);
    }

    #[test]
    fn lagrangian_penalty_free_when_feasible() {
        let spec = instances::toy_q(10.0, 1.0, 1.0);
        let x = DVector::zeros(4);
        let z = DVector::from_element(1, -0.1);
        let w = DVector::zeros(1);
        for rho in [0.1, 8.0, 1e4] {
            let p = eval_lagrangian(&spec, &x, &z, &w, rho).unwrap();
            assert_relative_eq!(p.value(), 0.5 * 0.01, epsilon = 1e-15);
        }
    }
}
