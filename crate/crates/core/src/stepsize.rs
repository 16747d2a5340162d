//! The four admissible diagonal stepsize rules and their ingredients.
//!
//! A diagonal `D` is admissible when the expected-separable-overapproximation
//! inequality holds for the distributed tau-nice sampling; smaller `D_ii`
//! means longer coordinate steps and a better iteration bound. The rules:
//!
//! - `D1`: per-row weights `alpha*_j` built from `omega_j` and `omega'_j`;
//!   computable in one pass over the data.
//! - `D2`: uniform factor `beta*` built from the spectral quantities
//!   `sigma`, `sigma'` (exact but expensive: power iteration).
//! - `D3`: classical one-pass upper bound of `D2` via `max_j omega_j`
//!   (requires `tau >= 2`).
//! - `D4`: tighter one-pass upper bound of `D2` via
//!   `sigma_tilde = max_i v_i` (requires `tau >= 2`).
//!
//! For `tau >= 2` and every coordinate: `D1 <= D4 <= D3` and `D2 <= D4`.
//!
//! All sums feeding step lengths accumulate with compensated summation in
//! a fixed order, so results are reproducible and independent of internal
//! parallelism.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kahan;
use crate::sparsemat::{MatrixError, Partition, RowStats, SparseMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum StepsizeError {
    #[error("tau = {tau} out of range; need 1 <= tau <= s = {s}")]
    TauOutOfRange { tau: usize, s: usize },
    #[error("rule {rule} requires tau >= 2 (got tau = {tau})")]
    TauTooSmall { rule: Rule, tau: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Which stepsize rule produced a vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    D1,
    D2,
    D3,
    D4,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::D1, Rule::D2, Rule::D3, Rule::D4];

    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::D1 => "d1",
            Rule::D2 => "d2",
            Rule::D3 => "d3",
            Rule::D4 => "d4",
        }
    }

    /// Whether the rule's derivation requires `tau >= 2`.
    pub fn requires_tau_ge_2(&self) -> bool {
        matches!(self, Rule::D3 | Rule::D4)
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Rule::D1),
            "d2" => Ok(Rule::D2),
            "d3" => Ok(Rule::D3),
            "d4" => Ok(Rule::D4),
            other => Err(format!("unknown stepsize rule '{other}'")),
        }
    }
}

/// Sampling geometry shared by every rule: `tau` coordinates per node,
/// `c` nodes, `s` coordinates per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EsoParams {
    pub tau: usize,
    pub c: usize,
    pub s: usize,
}

impl EsoParams {
    pub fn new(partition: &Partition, tau: usize) -> Result<Self, StepsizeError> {
        if tau < 1 || tau > partition.s() {
            return Err(StepsizeError::TauOutOfRange {
                tau,
                s: partition.s(),
            });
        }
        Ok(Self {
            tau,
            c: partition.c(),
            s: partition.s(),
        })
    }

    /// `s1 = max(1, s - 1)`.
    #[inline]
    pub fn s1(&self) -> f64 {
        1.0f64.max(self.s as f64 - 1.0)
    }

    /// `tau/s - (tau-1)/s1`, the weight of the cross-partition term.
    /// Nonnegative for every `1 <= tau <= s`.
    #[inline]
    pub fn cross_weight(&self) -> f64 {
        self.tau as f64 / self.s as f64 - (self.tau as f64 - 1.0) / self.s1()
    }
}

/// Scalar ingredients of the rules, kept for reporting and sidecar files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StepsizeMeta {
    pub tau: usize,
    pub c: usize,
    pub s: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<f64>,
}

impl StepsizeMeta {
    fn bare(p: &EsoParams) -> Self {
        Self {
            tau: p.tau,
            c: p.c,
            s: p.s,
            ..Self::default()
        }
    }
}

/// A diagonal stepsize vector with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeVector {
    pub rule: Rule,
    pub meta: StepsizeMeta,
    pub values: Vec<f64>,
}

impl StepsizeVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-row weights `alpha*_j = alpha*_1j + alpha*_2j` where
/// `alpha*_1j = 1 + (tau-1)(omega_j - 1)/s1` and
/// `alpha*_2j = (tau/s - (tau-1)/s1) * (omega'_j - 1)/omega'_j * omega_j`.
pub fn compute_alpha_star(stats: &RowStats, p: &EsoParams) -> Vec<f64> {
    let s1 = p.s1();
    let cross = p.cross_weight();
    let tau1 = p.tau as f64 - 1.0;
    stats
        .omega
        .iter()
        .zip(&stats.omega_prime)
        .map(|(&w, &wp)| {
            let w = w as f64;
            let wp = wp as f64;
            let a1 = 1.0 + tau1 * (w - 1.0) / s1;
            let a2 = cross * ((wp - 1.0) / wp) * w;
            a1 + a2
        })
        .collect()
}

/// `D1_ii = sum_j alpha*_j A_ji^2`, summed over column `i`'s nonzero rows.
pub fn compute_d1(m: &SparseMatrix, alpha_star: &[f64], p: &EsoParams) -> StepsizeVector {
    assert_eq!(alpha_star.len(), m.n_rows());
    let values: Vec<f64> = (0..m.n_cols())
        .into_par_iter()
        .map(|i| {
            let (rows, vals) = m.col(i);
            kahan::sum(rows.iter().zip(vals).map(|(&j, &v)| alpha_star[j] * v * v))
        })
        .collect();
    StepsizeVector {
        rule: Rule::D1,
        meta: StepsizeMeta::bare(p),
        values,
    }
}

/// Convenience: `alpha*` and `D1` in one call.
pub fn d1_from_stats(m: &SparseMatrix, stats: &RowStats, p: &EsoParams) -> StepsizeVector {
    let alpha = compute_alpha_star(stats, p);
    compute_d1(m, &alpha, p)
}

/// `beta* = beta*_1 + beta*_2` with `beta*_1 = 1 + (tau-1)(sigma-1)/s1`
/// and `beta*_2 = (tau/s - (tau-1)/s1) * (sigma'-1)/sigma' * sigma`.
pub fn compute_beta_star(sigma: f64, sigma_prime: f64, p: &EsoParams) -> f64 {
    let beta1 = 1.0 + (p.tau as f64 - 1.0) * (sigma - 1.0) / p.s1();
    let beta2 = p.cross_weight() * ((sigma_prime - 1.0) / sigma_prime) * sigma;
    beta1 + beta2
}

/// `D2_ii = beta* * sum_j A_ji^2`.
pub fn compute_d2(
    stats: &RowStats,
    beta_star: f64,
    sigma: f64,
    sigma_prime: f64,
    p: &EsoParams,
) -> StepsizeVector {
    let values = stats.col_sq_norms.iter().map(|&n| beta_star * n).collect();
    StepsizeVector {
        rule: Rule::D2,
        meta: StepsizeMeta {
            beta_star: Some(beta_star),
            sigma: Some(sigma),
            sigma_prime: Some(sigma_prime),
            ..StepsizeMeta::bare(p)
        },
        values,
    }
}

/// `D3_ii = 2 (1 + (tau-1)(max_j omega_j - 1)/s1) * sum_j A_ji^2`.
/// The factor-2 bound behind this rule holds only for `tau >= 2`.
pub fn compute_d3(stats: &RowStats, p: &EsoParams) -> Result<StepsizeVector, StepsizeError> {
    if p.tau < 2 {
        return Err(StepsizeError::TauTooSmall {
            rule: Rule::D3,
            tau: p.tau,
        });
    }
    let max_omega = stats.max_omega() as f64;
    let factor = 2.0 * (1.0 + (p.tau as f64 - 1.0) * (max_omega - 1.0) / p.s1());
    let values = stats.col_sq_norms.iter().map(|&n| factor * n).collect();
    Ok(StepsizeVector {
        rule: Rule::D3,
        meta: StepsizeMeta::bare(p),
        values,
    })
}

/// Per-coordinate averages `v_i = sum_j omega_j A_ji^2 / sum_j A_ji^2`
/// and the cheap spectral bound `sigma_tilde = max_i v_i`.
pub fn compute_sigma_tilde(m: &SparseMatrix, stats: &RowStats) -> (Vec<f64>, f64) {
    let v: Vec<f64> = (0..m.n_cols())
        .into_par_iter()
        .map(|i| {
            let (rows, vals) = m.col(i);
            let num = kahan::sum(
                rows.iter()
                    .zip(vals)
                    .map(|(&j, &a)| stats.omega[j] as f64 * a * a),
            );
            num / stats.col_sq_norms[i]
        })
        .collect();
    let sigma_tilde = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (v, sigma_tilde)
}

/// `D4_ii = tau/(tau-1) (1 + (sigma_tilde - 1)(tau-1)/(s-1)) * sum_j A_ji^2`.
pub fn compute_d4(
    stats: &RowStats,
    sigma_tilde: f64,
    p: &EsoParams,
) -> Result<StepsizeVector, StepsizeError> {
    if p.tau < 2 {
        return Err(StepsizeError::TauTooSmall {
            rule: Rule::D4,
            tau: p.tau,
        });
    }
    let tau = p.tau as f64;
    let factor = tau / (tau - 1.0) * (1.0 + (sigma_tilde - 1.0) * (tau - 1.0) / (p.s as f64 - 1.0));
    let values = stats.col_sq_norms.iter().map(|&n| factor * n).collect();
    Ok(StepsizeVector {
        rule: Rule::D4,
        meta: StepsizeMeta {
            sigma_tilde: Some(sigma_tilde),
            ..StepsizeMeta::bare(p)
        },
        values,
    })
}

/// One power-iteration outcome. `converged == false` means the Rayleigh
/// quotient had not settled within `max_iter` passes; `value` is then the
/// best available lower estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Rayleigh quotient after each pass; non-decreasing.
    pub rayleigh: Vec<f64>,
}

/// Both spectral quantities of `M = A^T A`: `sigma` relative to the
/// diagonal of `M` and `sigma_prime` relative to its block-diagonal part.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimates {
    pub sigma: PowerEstimate,
    pub sigma_prime: PowerEstimate,
}

/// Estimates `sigma` and `sigma_prime` by power iteration on the
/// preconditioned matrix. Each pass costs two sweeps over the nonzeros;
/// convergence is declared when the relative Rayleigh-quotient change
/// drops below `tol`.
///
/// For `sigma_prime` the block-diagonal part is inverted through dense
/// per-block Cholesky, falling back to an eigendecomposition-based
/// pseudo-inverse for singular blocks (which arise whenever a block has
/// linearly dependent columns, e.g. more columns than rows).
pub fn compute_sigma_power(
    m: &SparseMatrix,
    partition: &Partition,
    tol: f64,
    max_iter: usize,
) -> Result<SigmaEstimates, MatrixError> {
    if partition.d() != m.n_cols() {
        return Err(MatrixError::PartitionMismatch {
            expected: partition.d(),
            got: m.n_cols(),
        });
    }
    assert!(tol > 0.0, "tolerance must be positive");

    let diag: Vec<f64> = (0..m.n_cols())
        .map(|i| {
            let (_, vals) = m.col(i);
            kahan::sum(vals.iter().map(|v| v * v))
        })
        .collect();

    let sigma = power_iterate(m, tol, max_iter, &mut DiagPrecond { diag: &diag });

    let blocks = factor_blocks(m, partition);
    let sigma_prime = power_iterate(
        m,
        tol,
        max_iter,
        &mut BlockPrecond {
            partition,
            blocks: &blocks,
            m,
        },
    );

    Ok(SigmaEstimates { sigma, sigma_prime })
}

/// The `B`-side of the generalized pencil: applies `B^+` and the
/// quadratic form `x^T B x`.
trait Precond {
    fn solve_in_place(&mut self, y: &mut [f64]);
    fn quad_form(&mut self, x: &[f64]) -> f64;
}

struct DiagPrecond<'a> {
    diag: &'a [f64],
}

impl Precond for DiagPrecond<'_> {
    fn solve_in_place(&mut self, y: &mut [f64]) {
        for (yi, &d) in y.iter_mut().zip(self.diag) {
            *yi /= d;
        }
    }

    fn quad_form(&mut self, x: &[f64]) -> f64 {
        x.iter().zip(self.diag).map(|(&xi, &d)| d * xi * xi).sum()
    }
}

enum BlockFactor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    /// Pseudo-inverse through the eigendecomposition, for singular blocks.
    Eigen {
        q: DMatrix<f64>,
        inv_eig: Vec<f64>,
    },
}

struct BlockPrecond<'a> {
    partition: &'a Partition,
    blocks: &'a [BlockFactor],
    m: &'a SparseMatrix,
}

impl Precond for BlockPrecond<'_> {
    fn solve_in_place(&mut self, y: &mut [f64]) {
        for (l, factor) in self.blocks.iter().enumerate() {
            let range = self.partition.block(l);
            let mut v = nalgebra::DVector::from_column_slice(&y[range.clone()]);
            match factor {
                BlockFactor::Chol(ch) => ch.solve_mut(&mut v),
                BlockFactor::Eigen { q, inv_eig } => {
                    let mut coeffs = q.transpose() * &v;
                    for (c, &ie) in coeffs.iter_mut().zip(inv_eig) {
                        *c *= ie;
                    }
                    v = q * coeffs;
                }
            }
            y[range].copy_from_slice(v.as_slice());
        }
    }

    fn quad_form(&mut self, x: &[f64]) -> f64 {
        // x^T B x = sum_l || A^(l) x^(l) ||^2, accumulated per block.
        let n = self.m.n_rows();
        let mut total = 0.0;
        let mut w = vec![0.0f64; n];
        for l in 0..self.partition.c() {
            w.iter_mut().for_each(|t| *t = 0.0);
            for i in self.partition.block(l) {
                let (rows, vals) = self.m.col(i);
                let xi = x[i];
                if xi != 0.0 {
                    for (&j, &a) in rows.iter().zip(vals) {
                        w[j] += a * xi;
                    }
                }
            }
            total += w.iter().map(|t| t * t).sum::<f64>();
        }
        total
    }
}

/// Dense per-block Gram matrices of the column blocks, factorized.
fn factor_blocks(m: &SparseMatrix, partition: &Partition) -> Vec<BlockFactor> {
    let s = partition.s();
    (0..partition.c())
        .map(|l| {
            let offset = l * s;
            let mut b = DMatrix::<f64>::zeros(s, s);
            for j in 0..m.n_rows() {
                let (cols, vals) = m.row(j);
                // Columns are sorted; the block's entries form one run.
                let lo = cols.partition_point(|&c| c < offset);
                let hi = cols.partition_point(|&c| c < offset + s);
                for a in lo..hi {
                    for bidx in lo..hi {
                        b[(cols[a] - offset, cols[bidx] - offset)] += vals[a] * vals[bidx];
                    }
                }
            }
            match Cholesky::new(b.clone()) {
                Some(ch) => BlockFactor::Chol(ch),
                None => {
                    let eig = SymmetricEigen::new(b);
                    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
                    let cutoff = max_eig * s as f64 * f64::EPSILON;
                    let inv_eig = eig
                        .eigenvalues
                        .iter()
                        .map(|&e| if e > cutoff { 1.0 / e } else { 0.0 })
                        .collect();
                    BlockFactor::Eigen {
                        q: eig.eigenvectors,
                        inv_eig,
                    }
                }
            }
        })
        .collect()
}

fn power_iterate(
    m: &SparseMatrix,
    tol: f64,
    max_iter: usize,
    precond: &mut dyn Precond,
) -> PowerEstimate {
    let d = m.n_cols();
    let mut x = vec![1.0f64; d];
    normalize_b(&mut x, precond).expect("all-ones start vector");

    let mut rayleigh = Vec::new();
    let mut rho_prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut used_fallback = false;

    while iterations < max_iter {
        iterations += 1;
        // y = M x = A^T (A x)
        let w = m.mul_vec(&x);
        let rho: f64 = w.iter().map(|t| t * t).sum();
        rayleigh.push(rho);

        let mut y = m.mul_transpose_vec(&w);
        precond.solve_in_place(&mut y);
        if normalize_b(&mut y, precond).is_err() {
            // M x vanished: the start vector was B-orthogonal to every
            // eigenvector with a positive eigenvalue. Restart once from a
            // deterministic ramp, which is generically in position.
            if used_fallback {
                break;
            }
            used_fallback = true;
            x = (0..d).map(|i| 1.0 + i as f64).collect();
            if normalize_b(&mut x, precond).is_err() {
                break;
            }
            rho_prev = f64::NEG_INFINITY;
            continue;
        }
        x = y;

        if rho_prev.is_finite() && (rho - rho_prev).abs() <= tol * rho.abs().max(f64::MIN_POSITIVE)
        {
            converged = true;
            break;
        }
        rho_prev = rho;
    }

    let value = rayleigh.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    PowerEstimate {
        value,
        iterations,
        converged,
        rayleigh,
    }
}

fn normalize_b(x: &mut [f64], precond: &mut dyn Precond) -> Result<(), ()> {
    let q = precond.quad_form(x);
    if !(q > 0.0) || !q.is_finite() {
        return Err(());
    }
    let scale = 1.0 / q.sqrt();
    for xi in x.iter_mut() {
        *xi *= scale;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsemat::row_stats;

    fn matrix_e() -> SparseMatrix {
        SparseMatrix::from_triples(
            3,
            4,
            &[
                (0, 0, 1.0),
                (0, 1, 1.0),
                (1, 1, 1.0),
                (1, 2, 1.0),
                (1, 3, 1.0),
                (2, 0, 1.0),
                (2, 3, 1.0),
            ],
        )
        .unwrap()
    }

    fn e_setup(tau: usize) -> (SparseMatrix, RowStats, EsoParams) {
        let m = matrix_e();
        let p = Partition::uniform(4, 2).unwrap();
        let stats = row_stats(&m, &p).unwrap();
        let params = EsoParams::new(&p, tau).unwrap();
        (m, stats, params)
    }

    #[test]
    fn alpha_star_hand_values() {
        // tau=1, s=2 => s1=1; second term vanishes when omega' = 1.
        let (_, stats, params) = e_setup(1);
        let alpha = compute_alpha_star(&stats, &params);
        assert!((alpha[0] - 1.0).abs() < 1e-15);
        assert!((alpha[1] - 1.75).abs() < 1e-15);
        assert!((alpha[2] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn d1_hand_values() {
        let (m, stats, params) = e_setup(1);
        let d1 = d1_from_stats(&m, &stats, &params);
        assert!((d1.values[0] - 2.5).abs() < 1e-15); // rows 0 and 2
        assert!((d1.values[1] - 2.75).abs() < 1e-15);
        assert!((d1.values[2] - 1.75).abs() < 1e-15); // row 1 only
        assert!((d1.values[3] - 3.25).abs() < 1e-15);
    }

    #[test]
    fn d1_single_entry_matrix() {
        let m = SparseMatrix::from_triples(1, 1, &[(0, 0, 1.0)]).unwrap();
        let p = Partition::uniform(1, 1).unwrap();
        let stats = row_stats(&m, &p).unwrap();
        let params = EsoParams::new(&p, 1).unwrap();
        let d1 = d1_from_stats(&m, &stats, &params);
        assert_eq!(d1.values, vec![1.0]);
    }

    #[test]
    fn beta_star_values() {
        // sigma = sigma' = 1 collapses to 1 for any geometry.
        let p = EsoParams { tau: 2, c: 2, s: 4 };
        assert!((compute_beta_star(1.0, 1.0, &p) - 1.0).abs() < 1e-15);

        // Direct evaluation: tau=2, s=4, sigma=3, sigma'=2.
        let got = compute_beta_star(3.0, 2.0, &p);
        let want = 1.0 + 2.0 / 3.0 + (0.5 - 1.0 / 3.0) * 0.5 * 3.0;
        assert!((got - want).abs() < 1e-15);
        assert!((got - 1.916_666_666_666_666_7).abs() < 1e-12);

        // Full sampling: the cross weight stays nonnegative.
        let full = EsoParams { tau: 4, c: 2, s: 4 };
        assert!(full.cross_weight() >= 0.0);
    }

    #[test]
    fn cross_weight_nonnegative_everywhere() {
        for s in 1..=40 {
            for tau in 1..=s {
                let p = EsoParams { tau, c: 2, s };
                assert!(p.cross_weight() >= -1e-18, "tau={tau} s={s}");
            }
        }
    }

    #[test]
    fn d2_uniform_scaling() {
        let m = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let p = Partition::uniform(2, 1).unwrap();
        let stats = row_stats(&m, &p).unwrap();
        let params = EsoParams::new(&p, 1).unwrap();
        let d2 = compute_d2(&stats, 1.0, 1.0, 1.0, &params);
        assert_eq!(d2.values, vec![1.0, 1.0]);
    }

    #[test]
    fn d3_hand_values_and_tau_guard() {
        let (_, stats, params) = e_setup(2);
        let d3 = compute_d3(&stats, &params).unwrap();
        // factor = 2 (1 + (1)(3-1)/1) = 6; col 0 squared norm is 2.
        assert!((d3.values[0] - 12.0).abs() < 1e-12);

        let (_, stats, params) = e_setup(1);
        assert_eq!(
            compute_d3(&stats, &params).unwrap_err(),
            StepsizeError::TauTooSmall {
                rule: Rule::D3,
                tau: 1
            }
        );
    }

    #[test]
    fn sigma_tilde_hand_values() {
        let (m, stats, _) = e_setup(1);
        let (v, st) = compute_sigma_tilde(&m, &stats);
        assert!((v[0] - 2.0).abs() < 1e-15);
        assert!((v[1] - 2.5).abs() < 1e-15);
        assert!((v[2] - 3.0).abs() < 1e-15);
        assert!((v[3] - 2.5).abs() < 1e-15);
        assert!((st - 3.0).abs() < 1e-15);
    }

    #[test]
    fn d4_hand_values_and_tau_guard() {
        let (_, stats, params) = e_setup(2);
        // sigma_tilde = 1: factor reduces to tau/(tau-1) = 2.
        let d4 = compute_d4(&stats, 1.0, &params).unwrap();
        assert!((d4.values[0] - 4.0).abs() < 1e-12);

        // sigma_tilde = 3 matches the D3 factor here (max omega = 3).
        let d4 = compute_d4(&stats, 3.0, &params).unwrap();
        let d3 = compute_d3(&stats, &params).unwrap();
        for (a, b) in d4.values.iter().zip(&d3.values) {
            assert!((a - b).abs() < 1e-12);
        }

        let (_, stats, params) = e_setup(1);
        assert!(matches!(
            compute_d4(&stats, 3.0, &params),
            Err(StepsizeError::TauTooSmall { .. })
        ));
    }

    #[test]
    fn sigma_on_identity() {
        let m = SparseMatrix::from_triples(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let p = Partition::uniform(2, 1).unwrap();
        let est = compute_sigma_power(&m, &p, 1e-10, 200).unwrap();
        assert!((est.sigma.value - 1.0).abs() < 1e-9);
        assert!((est.sigma_prime.value - 1.0).abs() < 1e-9);
        assert!(est.sigma.converged);
    }

    #[test]
    fn sigma_on_rank_one_row() {
        // A = [1 1], c = 2 (s = 1): M = [[1,1],[1,1]], D = B = I;
        // the top generalized eigenvalue is 2 for both quantities.
        let m = SparseMatrix::from_triples(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let p = Partition::uniform(2, 2).unwrap();
        let est = compute_sigma_power(&m, &p, 1e-12, 500).unwrap();
        assert!((est.sigma.value - 2.0).abs() < 1e-9);
        assert!((est.sigma_prime.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn sigma_bounded_by_sigma_tilde_on_example() {
        let (m, stats, _) = e_setup(1);
        let p = Partition::uniform(4, 2).unwrap();
        let est = compute_sigma_power(&m, &p, 1e-10, 1000).unwrap();
        let (_, st) = compute_sigma_tilde(&m, &stats);
        assert!(est.sigma.value <= st + 1e-9);
        assert!(est.sigma.value >= 1.0 - 1e-9);
    }

    #[test]
    fn rayleigh_iterates_non_decreasing() {
        let m = matrix_e();
        let p = Partition::uniform(4, 2).unwrap();
        let est = compute_sigma_power(&m, &p, 1e-12, 1000).unwrap();
        for hist in [&est.sigma.rayleigh, &est.sigma_prime.rayleigh] {
            for w in hist.windows(2) {
                assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn power_iteration_survives_sign_cancellation() {
        // Row [1, -1]: the all-ones start vector is annihilated by M;
        // the ramp restart must still find sigma = 2.
        let m = SparseMatrix::from_triples(1, 2, &[(0, 0, 1.0), (0, 1, -1.0)]).unwrap();
        let p = Partition::uniform(2, 1).unwrap();
        let est = compute_sigma_power(&m, &p, 1e-12, 500).unwrap();
        assert!((est.sigma.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn no_convergence_reports_flag() {
        let m = matrix_e();
        let p = Partition::uniform(4, 2).unwrap();
        let est = compute_sigma_power(&m, &p, 1e-15, 1).unwrap();
        assert!(!est.sigma.converged);
        assert_eq!(est.sigma.iterations, 1);
        assert!(est.sigma.value >= 1.0 - 1e-12);
    }
}
