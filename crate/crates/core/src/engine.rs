//! Per-iteration primitives shared by the single-process solver and the
//! multi-worker harness.
//!
//! Equivalence contract: a run with `w` workers must produce the same
//! iterates as the single-process loop, exactly, for any `w` dividing
//! `c`. Both paths therefore compose the same primitives in the same
//! order with the same floating-point expression shapes:
//!
//! 1. compute update scalars `t_i` for every sampled coordinate against
//!    the iteration-start residual snapshot;
//! 2. apply owned `z`/`u` updates (`du_i = -(coeff * t_i)`, one rounding);
//! 3. accumulate one sparse residual delta per logical node, contributions
//!    merged per row in ascending-coordinate order;
//! 4. apply all node deltas in ascending node order, rows ascending.
//!
//! Residual refreshes rebuild `r = A v` from per-node partials summed in
//! ascending node order, again identical in both paths.

use rayon::prelude::*;

use crate::distributed::ResidualDelta;
use crate::problems::{CompositeProblem, ProblemError, Residuals};
use crate::sparsemat::SparseMatrix;

/// Per-iteration scalars derived from `theta_k`.
///
/// `coeff` multiplies `t_i` in the `u` update. `inv_theta` is tracked
/// separately from `theta` (initialized to `s/tau` rather than
/// `1/(tau/s)`) so that at `k = 0`, and at every iteration in hydra mode,
/// `coeff = inv_theta^2 - s_over_tau * inv_theta` evaluates to exactly
/// zero.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IterationScalars {
    pub theta: f64,
    pub theta_sq: f64,
    /// `s * theta / tau`; the prox quadratic coefficient is this times `D_ii`.
    pub beta_factor: f64,
    /// `1/theta^2 - s/(tau theta)`.
    pub coeff: f64,
}

pub(crate) fn iteration_scalars(theta: f64, inv_theta: f64, s_over_tau: f64) -> IterationScalars {
    IterationScalars {
        theta,
        theta_sq: theta * theta,
        beta_factor: s_over_tau * theta,
        coeff: inv_theta * inv_theta - s_over_tau * inv_theta,
    }
}

/// Computes the update scalar for every coordinate in `coords` from the
/// residual snapshot. Pure read; safe to run coordinates in parallel.
pub(crate) fn compute_node_ts(
    problem: &CompositeProblem,
    res: &Residuals,
    z: &[f64],
    d_values: &[f64],
    sc: &IterationScalars,
    coords: &[usize],
    parallel: bool,
) -> Result<Vec<f64>, ProblemError> {
    let one = |&i: &usize| -> Result<f64, ProblemError> {
        let g = problem.loss.grad_coord(res, sc.theta_sq, i);
        let beta = sc.beta_factor * d_values[i];
        problem.reg.prox_step(g, beta, z[i])
    };
    if parallel {
        coords.par_iter().map(one).collect()
    } else {
        coords.iter().map(one).collect()
    }
}

/// Applies `z_i += t_i`, `u_i += -(coeff * t_i)` for the node's coords.
pub(crate) fn apply_owned_updates(
    z: &mut [f64],
    u: &mut [f64],
    coords: &[usize],
    ts: &[f64],
    coeff: f64,
) {
    for (&i, &t) in coords.iter().zip(ts) {
        z[i] += t;
        u[i] += -(coeff * t);
    }
}

/// Builds the sparse residual delta contributed by one node: for each
/// touched row, the increments to `r_z` and `r_u`. Contributions from
/// several sampled coordinates to the same row are merged in ascending
/// coordinate order.
pub(crate) fn build_node_delta(
    matrix: &SparseMatrix,
    node: usize,
    coords: &[usize],
    ts: &[f64],
    coeff: f64,
) -> ResidualDelta {
    let mut entries: Vec<(usize, f64, f64)> = Vec::new();
    for (&i, &t) in coords.iter().zip(ts) {
        let du = -(coeff * t);
        let (rows, vals) = matrix.col(i);
        for (&j, &a) in rows.iter().zip(vals) {
            entries.push((j, a * t, a * du));
        }
    }
    // Stable sort keeps same-row contributions in coordinate order.
    entries.sort_by_key(|e| e.0);
    let mut rows = Vec::with_capacity(entries.len());
    let mut dz = Vec::with_capacity(entries.len());
    let mut du = Vec::with_capacity(entries.len());
    for (j, z_inc, u_inc) in entries {
        if rows.last() == Some(&(j as u64)) {
            let last = dz.len() - 1;
            dz[last] += z_inc;
            du[last] += u_inc;
        } else {
            rows.push(j as u64);
            dz.push(z_inc);
            du.push(u_inc);
        }
    }
    ResidualDelta {
        node: node as u64,
        rows,
        dz,
        du,
    }
}

/// Applies one node's delta to the residual replicas, rows ascending.
pub(crate) fn apply_delta(res: &mut Residuals, delta: &ResidualDelta) {
    for ((&j, &dz), &du) in delta.rows.iter().zip(&delta.dz).zip(&delta.du) {
        res.r_z[j as usize] += dz;
        res.r_u[j as usize] += du;
    }
}

/// One node's contribution to a fresh `A v`: the sum of its owned
/// columns scaled by `v`, columns ascending.
pub(crate) fn residual_partial(
    matrix: &SparseMatrix,
    cols: std::ops::Range<usize>,
    v: &[f64],
) -> Vec<f64> {
    let mut p = vec![0.0f64; matrix.n_rows()];
    for i in cols {
        let vi = v[i];
        if vi != 0.0 {
            let (rows, vals) = matrix.col(i);
            for (&j, &a) in rows.iter().zip(vals) {
                p[j] += a * vi;
            }
        }
    }
    p
}

/// Sums per-node partials elementwise in ascending node order.
pub(crate) fn fold_partials<'a>(mut parts: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc = parts.next().expect("at least one partial").to_vec();
    for p in parts {
        for (a, &b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    acc
}

/// Divergence guard: admissible stepsizes cannot diverge, so an iterate
/// beyond the cap signals a configuration error.
pub(crate) const ITERATE_CAP: f64 = 1e100;

pub(crate) fn iterates_bounded(z: &[f64], u: &[f64], coords: &[usize]) -> bool {
    coords
        .iter()
        .all(|&i| z[i].abs() <= ITERATE_CAP && u[i].abs() <= ITERATE_CAP)
}
