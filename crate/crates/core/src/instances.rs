//! Small reference problem instances used by the test suites and the CLI.

use nalgebra::{DMatrix, DVector};

use crate::problem::{
    BlockStructure, ConstraintRow, IndicatorSet, MultiAffineOperator, ProblemSpec,
    QuadraticObjective, SmoothExtra, SymmetricSparse,
};

fn free_blocks(blocks: &BlockStructure) -> Vec<IndicatorSet> {
    (0..blocks.num_blocks())
        .map(|j| IndicatorSet::Free { dim: blocks.size(j) })
        .collect()
}

/// Two scalar blocks coupled by a bilinear term:
///
/// ```text
/// min x1^2 + x2^2 + z1^2 + z2^2
/// s.t.  x1 x2 + x1 + 1 + z1 = 0
///      -x1 x2 + x2 + 1 + z2 = 0
/// ```
pub fn example22() -> ProblemSpec {
    let blocks = BlockStructure::new(vec![1, 1]).unwrap();
    let rows = vec![
        ConstraintRow {
            c: SymmetricSparse::from_triplets(2, vec![(0, 1, 1.0)]).unwrap(),
            d: DVector::from_vec(vec![1.0, 0.0]),
            e: 1.0,
        },
        ConstraintRow {
            c: SymmetricSparse::from_triplets(2, vec![(0, 1, -1.0)]).unwrap(),
            d: DVector::from_vec(vec![0.0, 1.0]),
            e: 1.0,
        },
    ];
    let a = MultiAffineOperator::new(blocks.clone(), rows).unwrap();
    ProblemSpec {
        indicators: free_blocks(&blocks),
        f: QuadraticObjective::isotropic(2, 2.0),
        phi: QuadraticObjective::isotropic(2, 2.0),
        q: DMatrix::identity(2, 2),
        a,
        blocks,
        extras: Vec::new(),
        outside_theory: false,
    }
}

/// The divergence counterexample `min x^2 + y^2 s.t. xy = 1`, encoded with a
/// zero coupling matrix so that the rank assumption fails. Validation rejects
/// it; running it anyway (with the override) makes the dual blow up.
pub fn example210() -> ProblemSpec {
    let blocks = BlockStructure::new(vec![1, 1]).unwrap();
    let rows = vec![ConstraintRow {
        c: SymmetricSparse::from_triplets(2, vec![(0, 1, 1.0)]).unwrap(),
        d: DVector::zeros(2),
        e: -1.0,
    }];
    let a = MultiAffineOperator::new(blocks.clone(), rows).unwrap();
    ProblemSpec {
        indicators: free_blocks(&blocks),
        f: QuadraticObjective::isotropic(2, 2.0),
        phi: QuadraticObjective::isotropic(1, 2.0),
        q: DMatrix::zeros(1, 1),
        a,
        blocks,
        extras: Vec::new(),
        outside_theory: false,
    }
}

/// Four scalar blocks with one bilinear constraint row; `q` controls how
/// dominant the linear part of the constraint is:
///
/// ```text
/// min mu_x/2 (x1^2 + .. + x4^2) + mu_z/2 z^2
/// s.t. x1 x2 - x3 x4 + q z + 1 = 0
/// ```
pub fn toy_q(q: f64, mu_x: f64, mu_z: f64) -> ProblemSpec {
    let blocks = BlockStructure::new(vec![1, 1, 1, 1]).unwrap();
    let rows = vec![ConstraintRow {
        c: SymmetricSparse::from_triplets(4, vec![(0, 1, 1.0), (2, 3, -1.0)]).unwrap(),
        d: DVector::zeros(4),
        e: 1.0,
    }];
    let a = MultiAffineOperator::new(blocks.clone(), rows).unwrap();
    ProblemSpec {
        indicators: free_blocks(&blocks),
        f: QuadraticObjective::isotropic(4, mu_x),
        phi: QuadraticObjective::isotropic(1, mu_z),
        q: DMatrix::from_element(1, 1, q),
        a,
        blocks,
        extras: Vec::new(),
        outside_theory: false,
    }
}

/// Two scalar blocks with a purely linear constraint:
///
/// ```text
/// min mu_x/2 (x1^2 + x2^2) + mu_z/2 z^2   s.t. x1 + x2 + z + 1 = 0
/// ```
pub fn linear_two_block(mu_x: f64, mu_z: f64) -> ProblemSpec {
    let blocks = BlockStructure::new(vec![1, 1]).unwrap();
    let rows = vec![ConstraintRow {
        c: SymmetricSparse::zeros(2),
        d: DVector::from_vec(vec![1.0, 1.0]),
        e: 1.0,
    }];
    let a = MultiAffineOperator::new(blocks.clone(), rows).unwrap();
    ProblemSpec {
        indicators: free_blocks(&blocks),
        f: QuadraticObjective::isotropic(2, mu_x),
        phi: QuadraticObjective::isotropic(1, mu_z),
        q: DMatrix::from_element(1, 1, 1.0),
        a,
        blocks,
        extras: Vec::new(),
        outside_theory: false,
    }
}

/// [`linear_two_block`] with an extra `2 mu_x sin^2(x1)` objective term
/// (i.e. `mu_x/2 * 4 sin^2(x1)`), which breaks convexity of the objective.
/// Flagged `outside_theory`; descent diagnostics are skipped for it.
pub fn nonconvex_linear(mu_x: f64, mu_z: f64) -> ProblemSpec {
    let mut spec = linear_two_block(mu_x, mu_z);
    spec.extras = vec![SmoothExtra::SinSq { coeff: 2.0 * mu_x, coord: 0 }];
    spec.outside_theory = true;
    spec
}
