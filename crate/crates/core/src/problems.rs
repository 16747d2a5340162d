//! Composite objectives `L(x) = f(x) + sum_i R_i(x_i)` in separable form
//! `f(x) = sum_j phi_j(A[j,:] x) + q . x`, with residual-based partial
//! derivatives and closed-form proximal steps.
//!
//! Two concrete instances are provided:
//!
//! - LASSO: `1/2 ||Ax - b||^2 + lambda ||x||_1`.
//! - SVM dual: `1/(2 lambda d^2) || sum_i b_i a_i x_i ||^2 - (1/d) sum_i x_i`
//!   over the box `[0,1]^d`, where `a_i` is sample `i` (one column of the
//!   feature matrix) and `b_i` its label. The `1/(d sqrt(lambda))` factor
//!   and the labels are folded into a pre-scaled effective matrix at
//!   construction time, so the quadratic bound holds with the stored
//!   matrix verbatim and every stepsize rule applies unchanged. This is
//!   one consistent reading of the feature-rows convention; the folding
//!   is recorded in problem manifests as `scaling_applied`.

use thiserror::Error;

use crate::sparsemat::SparseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("prox step requires a positive quadratic coefficient, got {0}")]
    NonpositiveBeta(f64),
    #[error("dual point infeasible: x[{index}] = {value} outside [0, 1]")]
    InfeasibleDualPoint { index: usize, value: f64 },
    #[error("label b[{index}] = {value} is not +1 or -1")]
    NonUnitLabel { index: usize, value: f64 },
    #[error("duality gap is defined for the SVM dual problem only")]
    NotSvmDual,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Per-row scalar convex losses `phi_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    /// `phi_j(w) = 1/2 (w - b_j)^2`; needs the per-row data vector.
    SquareMinusB,
    /// `phi_j(w) = 1/2 w^2`; scaling folded into the matrix.
    ScaledSquare,
}

/// Smooth part of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLoss {
    matrix: SparseMatrix,
    phi: PhiKind,
    b: Option<Vec<f64>>,
    q: Option<Vec<f64>>,
}

impl CompositeLoss {
    pub fn new(
        matrix: SparseMatrix,
        phi: PhiKind,
        b: Option<Vec<f64>>,
        q: Option<Vec<f64>>,
    ) -> Result<Self, ProblemError> {
        if phi == PhiKind::SquareMinusB {
            let b = b.as_ref().ok_or(ProblemError::DimensionMismatch {
                expected: matrix.n_rows(),
                got: 0,
            })?;
            if b.len() != matrix.n_rows() {
                return Err(ProblemError::DimensionMismatch {
                    expected: matrix.n_rows(),
                    got: b.len(),
                });
            }
        }
        if let Some(q) = &q {
            if q.len() != matrix.n_cols() {
                return Err(ProblemError::DimensionMismatch {
                    expected: matrix.n_cols(),
                    got: q.len(),
                });
            }
        }
        Ok(Self { matrix, phi, b, q })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn phi(&self) -> PhiKind {
        self.phi
    }

    pub fn d(&self) -> usize {
        self.matrix.n_cols()
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn q(&self) -> Option<&[f64]> {
        self.q.as_deref()
    }

    pub fn b(&self) -> Option<&[f64]> {
        self.b.as_deref()
    }

    #[inline]
    fn phi_prime(&self, j: usize, w: f64) -> f64 {
        match self.phi {
            PhiKind::SquareMinusB => w - self.b.as_ref().unwrap()[j],
            PhiKind::ScaledSquare => w,
        }
    }

    #[inline]
    fn phi_value(&self, j: usize, w: f64) -> f64 {
        match self.phi {
            PhiKind::SquareMinusB => {
                let r = w - self.b.as_ref().unwrap()[j];
                0.5 * r * r
            }
            PhiKind::ScaledSquare => 0.5 * w * w,
        }
    }

    /// `f(x)`, evaluating `A x` fresh (one row-major pass).
    pub fn f_value(&self, x: &[f64]) -> f64 {
        let r = self.matrix.mul_vec(x);
        self.f_smooth_from_rows(&r) + self.linear_term(x)
    }

    /// `sum_j phi_j(r_j)` for an already-computed row vector `r = A x`.
    pub fn f_smooth_from_rows(&self, r: &[f64]) -> f64 {
        r.iter()
            .enumerate()
            .map(|(j, &w)| self.phi_value(j, w))
            .sum()
    }

    /// `q . x`, zero when no linear term is present.
    pub fn linear_term(&self, x: &[f64]) -> f64 {
        match &self.q {
            Some(q) => q.iter().zip(x).map(|(qi, xi)| qi * xi).sum(),
            None => 0.0,
        }
    }

    /// Partial derivative of `f` at the implicit point `theta^2 u + z`,
    /// read off the maintained residuals:
    /// `sum_{j in D_i} A_ji phi'_j(theta^2 r_u[j] + r_z[j]) + q_i`.
    /// Costs one pass over column `i`'s nonzeros.
    #[inline]
    pub fn grad_coord(&self, res: &Residuals, theta_sq: f64, i: usize) -> f64 {
        let (rows, vals) = self.matrix.col(i);
        let mut g = 0.0;
        for (&j, &a) in rows.iter().zip(vals) {
            g += a * self.phi_prime(j, theta_sq * res.r_u[j] + res.r_z[j]);
        }
        if let Some(q) = &self.q {
            g += q[i];
        }
        g
    }
}

/// Separable regularizer family; one kind applies to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Zero,
    L1 { lambda: f64 },
    /// Indicator of `[0, 1]` per coordinate.
    Box01,
}

impl Regularizer {
    /// Closed-form solution of the coordinate subproblem
    /// `argmin_t  g t + (beta/2) t^2 + R_i(z_i + t)`.
    #[inline]
    pub fn prox_step(&self, g: f64, beta: f64, z_i: f64) -> Result<f64, ProblemError> {
        if !(beta > 0.0) {
            return Err(ProblemError::NonpositiveBeta(beta));
        }
        Ok(match *self {
            Regularizer::Zero => -g / beta,
            Regularizer::L1 { lambda } => soft_threshold(z_i - g / beta, lambda / beta) - z_i,
            Regularizer::Box01 => (z_i - g / beta).clamp(0.0, 1.0) - z_i,
        })
    }

    /// `R_i(v)`; infinite outside the box for `Box01`.
    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { lambda } => lambda * v.abs(),
            Regularizer::Box01 => {
                if (0.0..=1.0).contains(&v) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn sum_value(&self, x: &[f64]) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            _ => x.iter().map(|&v| self.value(v)).sum(),
        }
    }
}

#[inline]
pub fn soft_threshold(v: f64, r: f64) -> f64 {
    if v > r {
        v - r
    } else if v < -r {
        v + r
    } else {
        0.0
    }
}

/// Maintained row vectors `r_u = A u` and `r_z = A z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub r_u: Vec<f64>,
    pub r_z: Vec<f64>,
}

impl Residuals {
    pub fn zeros(n: usize) -> Self {
        Self {
            r_u: vec![0.0; n],
            r_z: vec![0.0; n],
        }
    }

    /// Fresh residuals from scratch (row-major passes).
    pub fn compute(matrix: &SparseMatrix, u: &[f64], z: &[f64]) -> Self {
        Self {
            r_u: matrix.mul_vec(u),
            r_z: matrix.mul_vec(z),
        }
    }
}

/// A full problem instance: smooth loss plus separable regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeProblem {
    pub loss: CompositeLoss,
    pub reg: Regularizer,
}

impl CompositeProblem {
    /// `1/2 ||Ax - b||^2 + lambda ||x||_1`.
    pub fn lasso(matrix: SparseMatrix, b: Vec<f64>, lambda: f64) -> Result<Self, ProblemError> {
        let loss = CompositeLoss::new(matrix, PhiKind::SquareMinusB, Some(b), None)?;
        Ok(Self {
            loss,
            reg: Regularizer::L1 { lambda },
        })
    }

    /// Dual SVM over the box. `features` has one row per feature and one
    /// column per sample; `labels` must be +1/-1. The effective matrix is
    /// `A_ji * b_i / (d sqrt(lambda))`, the linear term `-1/d` per
    /// coordinate.
    pub fn svm_dual(
        features: SparseMatrix,
        labels: &[f64],
        lambda: f64,
    ) -> Result<Self, ProblemError> {
        let d = features.n_cols();
        if labels.len() != d {
            return Err(ProblemError::DimensionMismatch {
                expected: d,
                got: labels.len(),
            });
        }
        if let Some((i, &v)) = labels.iter().enumerate().find(|(_, &v)| v.abs() != 1.0) {
            return Err(ProblemError::NonUnitLabel { index: i, value: v });
        }
        let scale = 1.0 / (d as f64 * lambda.sqrt());
        let scaled = features.map_values(|_, i, v| v * labels[i] * scale);
        let q = vec![-1.0 / d as f64; d];
        let loss = CompositeLoss::new(scaled, PhiKind::ScaledSquare, None, Some(q))?;
        Ok(Self {
            loss,
            reg: Regularizer::Box01,
        })
    }

    pub fn d(&self) -> usize {
        self.loss.d()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        self.loss.matrix()
    }

    /// `L(x) = f(x) + sum_i R_i(x_i)`; infinite outside the box for
    /// box-constrained problems.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.loss.f_value(x) + self.reg.sum_value(x)
    }

    pub fn suboptimality(&self, x: &[f64], l_star: f64) -> f64 {
        self.objective(x) - l_star
    }

    /// Duality gap of the SVM primal/dual pair at the feasible dual
    /// point `x`. With the folded scaling, writing `r = A x` (the stored,
    /// pre-scaled matrix), the mapped primal point has
    /// `(lambda/2)||w||^2 = 1/2 ||r||^2` and margin terms
    /// `1 - d (A^T r)_i`, so
    /// `gap = ||r||^2 + (1/d) sum_i max(0, 1 - d (A^T r)_i) - (1/d) sum_i x_i`.
    /// Nonnegative by weak duality.
    pub fn svm_duality_gap(&self, x: &[f64]) -> Result<f64, ProblemError> {
        if self.reg != Regularizer::Box01 || self.loss.phi() != PhiKind::ScaledSquare {
            return Err(ProblemError::NotSvmDual);
        }
        if x.len() != self.d() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.d(),
                got: x.len(),
            });
        }
        if let Some((i, &v)) = x.iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v)) {
            return Err(ProblemError::InfeasibleDualPoint { index: i, value: v });
        }
        let d = self.d() as f64;
        let r = self.matrix().mul_vec(x);
        let quad: f64 = r.iter().map(|t| t * t).sum();
        let margins = self.matrix().mul_transpose_vec(&r);
        let hinge: f64 = margins
            .iter()
            .map(|&m| (1.0 - d * m).max(0.0))
            .sum::<f64>()
            / d;
        let linear: f64 = x.iter().sum::<f64>() / d;
        Ok(quad + hinge - linear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_one() -> SparseMatrix {
        SparseMatrix::from_triples(1, 1, &[(0, 0, 1.0)]).unwrap()
    }

    #[test]
    fn grad_with_zero_iterates_is_minus_atb() {
        // 2x2 identity, b = (1,1): gradient at u = z = 0 is -A^T b.
        let m = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let p = CompositeProblem::lasso(m, vec![1.0, 1.0], 0.1).unwrap();
        let res = Residuals::zeros(2);
        assert_eq!(p.loss.grad_coord(&res, 0.3, 0), -1.0);
        assert_eq!(p.loss.grad_coord(&res, 0.3, 1), -1.0);
    }

    #[test]
    fn grad_scalar_case() {
        // A = [1], b = [1], z = [2], u = 0: phi' at 2 is 1.
        let p = CompositeProblem::lasso(one_by_one(), vec![1.0], 0.0).unwrap();
        let res = Residuals::compute(p.matrix(), &[0.0], &[2.0]);
        assert_eq!(p.loss.grad_coord(&res, 0.25, 0), 1.0);
    }

    #[test]
    fn prox_closed_forms() {
        assert_eq!(Regularizer::Zero.prox_step(2.0, 1.0, 0.0).unwrap(), -2.0);
        assert_eq!(
            Regularizer::L1 { lambda: 0.5 }.prox_step(2.0, 1.0, 0.0).unwrap(),
            -1.5
        );
        assert_eq!(
            Regularizer::Box01.prox_step(2.0, 1.0, 0.5).unwrap(),
            -0.5
        );
    }

    #[test]
    fn prox_rejects_bad_beta() {
        assert_eq!(
            Regularizer::Zero.prox_step(1.0, 0.0, 0.0).unwrap_err(),
            ProblemError::NonpositiveBeta(0.0)
        );
    }

    #[test]
    fn lasso_objective_values() {
        let m = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let p = CompositeProblem::lasso(m, vec![3.0, 4.0], 0.1).unwrap();
        // At zero the objective is 1/2 ||b||^2.
        assert_eq!(p.objective(&[0.0, 0.0]), 12.5);

        // Scalar lasso optimum by soft thresholding: x* = 0.9, L* = 0.095.
        let p = CompositeProblem::lasso(one_by_one(), vec![1.0], 0.1).unwrap();
        let x_star = soft_threshold(1.0, 0.1);
        assert_eq!(x_star, 0.9);
        assert!((p.objective(&[x_star]) - 0.095).abs() < 1e-15);
        assert!((p.suboptimality(&[x_star], 0.095)).abs() < 1e-15);
    }

    #[test]
    fn box_objective_infinite_outside() {
        let m = one_by_one();
        let p = CompositeProblem::svm_dual(m, &[1.0], 1.0).unwrap();
        assert!(p.objective(&[0.5]).is_finite());
        assert_eq!(p.objective(&[1.5]), f64::INFINITY);
    }

    #[test]
    fn svm_rejects_non_unit_labels() {
        let err = CompositeProblem::svm_dual(one_by_one(), &[0.5], 1.0).unwrap_err();
        assert_eq!(
            err,
            ProblemError::NonUnitLabel {
                index: 0,
                value: 0.5
            }
        );
    }

    #[test]
    fn gap_at_zero_is_one() {
        // Two samples, two features, unit labels: at x = 0 every hinge
        // term is active and the gap equals 1.
        let features = SparseMatrix::from_triples(
            2,
            2,
            &[(0, 0, 0.7), (1, 0, -0.3), (0, 1, 0.2), (1, 1, 0.9)],
        )
        .unwrap();
        let p = CompositeProblem::svm_dual(features, &[1.0, -1.0], 0.5).unwrap();
        let gap = p.svm_duality_gap(&[0.0, 0.0]).unwrap();
        assert!((gap - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gap_rejects_infeasible_point() {
        let p = CompositeProblem::svm_dual(one_by_one(), &[1.0], 1.0).unwrap();
        assert!(matches!(
            p.svm_duality_gap(&[1.2]),
            Err(ProblemError::InfeasibleDualPoint { index: 0, .. })
        ));
    }

    #[test]
    fn gap_nonnegative_on_random_feasible_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut triples = Vec::new();
        let (n, d) = (6, 10);
        for j in 0..n {
            for i in 0..d {
                if rng.gen_bool(0.5) {
                    triples.push((j, i, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        // Patch any empty row/column deterministically.
        for j in 0..n {
            if !triples.iter().any(|t| t.0 == j) {
                triples.push((j, j % d, 1.0));
            }
        }
        for i in 0..d {
            if !triples.iter().any(|t| t.1 == i) {
                triples.push((i % n, i, 1.0));
            }
        }
        let m = SparseMatrix::from_triples(n, d, &triples).unwrap();
        let labels: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = CompositeProblem::svm_dual(m, &labels, 0.3).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let gap = p.svm_duality_gap(&x).unwrap();
            assert!(gap >= -1e-10, "gap = {gap}");
        }
    }

    #[test]
    fn objective_matches_fresh_residual_route() {
        let m = SparseMatrix::from_triples(
            3,
            4,
            &[
                (0, 0, 1.5),
                (0, 1, -0.5),
                (1, 1, 2.0),
                (1, 2, 1.0),
                (1, 3, -1.0),
                (2, 0, 0.25),
                (2, 3, 3.0),
            ],
        )
        .unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let p = CompositeProblem::lasso(m, b, 0.3).unwrap();
        let x = [0.1, -0.2, 0.3, -0.4];
        let r = p.matrix().mul_vec(&x);
        let via_rows = p.loss.f_smooth_from_rows(&r) + p.reg.sum_value(&x);
        let direct = p.objective(&x);
        assert!((via_rows - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }
}
