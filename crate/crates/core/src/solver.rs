//! The accelerated iteration, its non-accelerated reduction, and the
//! iteration-bound calculator.
//!
//! One iteration: every node samples `tau` of its coordinates, computes
//! an update scalar per coordinate by a proximal step against the
//! residual snapshot, applies it to the `(u, z)` iterate pair, and the
//! acceleration parameter `theta` advances once all nodes are done. The
//! running iterate is never formed inside the loop; it is reconstructed
//! as `theta_prev^2 * u + z` on demand.
//!
//! In `hydra` mode `theta` stays frozen at `tau/s`, the `u`-update
//! coefficient is exactly zero, `u` stays at zero, and the method reduces
//! to plain non-accelerated distributed coordinate descent.

use std::time::Instant;

use thiserror::Error;

use crate::engine;
use crate::problems::{CompositeProblem, ProblemError, Residuals};
use crate::sampling::{DistributedSample, DistributedSampler, SamplingError};
use crate::sparsemat::{MatrixError, Partition};
use crate::stepsize::{
    compute_beta_star, compute_d2, compute_d3, compute_d4, compute_sigma_power,
    compute_sigma_tilde, d1_from_stats, EsoParams, Rule, StepsizeError, StepsizeVector,
};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("theta = {0} outside (0, 1]")]
    ThetaOutOfRange(f64),
    #[error("iterate exceeded {cap:e} at iteration {iteration}; stepsizes are inadmissible or inputs are corrupt")]
    NonFiniteIterate { iteration: u64, cap: f64 },
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Stepsize(#[from] StepsizeError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// `hydra2` accelerates via the `theta` schedule; `hydra` freezes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hydra2,
    Hydra,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Hydra2 => f.write_str("hydra2"),
            Mode::Hydra => f.write_str("hydra"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hydra2" => Ok(Mode::Hydra2),
            "hydra" => Ok(Mode::Hydra),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Stepsizes: compute a rule on the fly or reuse a precomputed vector.
#[derive(Debug, Clone)]
pub enum StepsizeSpec {
    Rule(Rule),
    Vector(StepsizeVector),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub tau: usize,
    pub c: usize,
    pub mode: Mode,
    pub stepsize: StepsizeSpec,
    pub max_iter: u64,
    /// Stop once `L(x_k) - l_star <= eps` at a monitor point; requires `l_star`.
    pub eps: Option<f64>,
    pub l_star: Option<f64>,
    /// Monitor cadence; defaults to `max(1, s / (c tau))` iterations.
    pub monitor_every: Option<u64>,
    /// Rebuild residuals from scratch this often to bound drift; 0 disables.
    pub refresh_every: u64,
    /// Replica checksum cadence (multi-worker runs only); 0 disables.
    pub checksum_every: u64,
    pub seed: u64,
    /// Parallelize the per-coordinate compute phase inside an iteration.
    /// Results are bitwise independent of this switch.
    pub parallel: bool,
    /// Relative tolerance for the power iteration behind the `d2` rule.
    pub power_tol: f64,
    /// Power iteration cap; defaults to `10 d`.
    pub power_max_iter: Option<usize>,
}

impl SolverConfig {
    pub fn new(tau: usize, c: usize, stepsize: StepsizeSpec) -> Self {
        Self {
            tau,
            c,
            mode: Mode::Hydra2,
            stepsize,
            max_iter: 1000,
            eps: None,
            l_star: None,
            monitor_every: None,
            refresh_every: 10_000,
            checksum_every: 0,
            seed: 0,
            parallel: false,
            power_tol: 1e-6,
            power_max_iter: None,
        }
    }

    pub fn monitor_cadence(&self, s: usize) -> u64 {
        match self.monitor_every {
            Some(m) => m.max(1),
            None => ((s / (self.c * self.tau)) as u64).max(1),
        }
    }
}

/// The `(u, z)` iterate pair with maintained residuals and the `theta`
/// schedule position.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub residuals: Residuals,
    /// `theta_k` for the next iteration.
    pub theta: f64,
    /// `theta` of the last completed iteration; the output iterate is
    /// `theta_prev^2 * u + z`.
    pub theta_prev: f64,
    /// Completed iterations.
    pub k: u64,
    mode: Mode,
    inv_theta: f64,
    s_over_tau: f64,
    parallel: bool,
}

impl SolverState {
    /// Fresh state at `z_0 = 0`, `u_0 = 0`, `theta_0 = tau/s`.
    pub fn new(problem: &CompositeProblem, params: &EsoParams, mode: Mode) -> Self {
        Self::with_z0(problem, params, mode, vec![0.0; problem.d()])
    }

    /// Fresh state from an arbitrary starting point `z_0` (`x_0 = z_0`).
    pub fn with_z0(
        problem: &CompositeProblem,
        params: &EsoParams,
        mode: Mode,
        z0: Vec<f64>,
    ) -> Self {
        assert_eq!(z0.len(), problem.d());
        let theta0 = params.tau as f64 / params.s as f64;
        // s/tau by direct division: guarantees coeff == 0 exactly at k=0.
        let s_over_tau = params.s as f64 / params.tau as f64;
        let residuals = if z0.iter().all(|&v| v == 0.0) {
            Residuals::zeros(problem.loss.n())
        } else {
            Residuals::compute(problem.matrix(), &vec![0.0; problem.d()], &z0)
        };
        Self {
            u: vec![0.0; problem.d()],
            z: z0,
            residuals,
            theta: theta0,
            theta_prev: theta0,
            k: 0,
            mode,
            inv_theta: s_over_tau,
            s_over_tau,
            parallel: false,
        }
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub(crate) fn scalars(&self) -> engine::IterationScalars {
        engine::iteration_scalars(self.theta, self.inv_theta, self.s_over_tau)
    }

    /// Advances `theta` and the iteration counter after all coordinate
    /// updates of an iteration have been applied.
    pub(crate) fn finish_iteration(&mut self) -> Result<(), SolveError> {
        self.theta_prev = self.theta;
        if self.mode == Mode::Hydra2 {
            self.theta = theta_next(self.theta)?;
            self.inv_theta = 1.0 / self.theta;
        }
        self.k += 1;
        Ok(())
    }

    /// One full iteration over every node's sampled coordinates.
    pub fn step(
        &mut self,
        sample: &DistributedSample,
        stepsize: &StepsizeVector,
        problem: &CompositeProblem,
    ) -> Result<(), SolveError> {
        let sc = self.scalars();
        if self.k == 0 || self.mode == Mode::Hydra {
            debug_assert_eq!(sc.coeff, 0.0, "u-coefficient must vanish exactly");
        }

        // Compute every update scalar against the snapshot.
        let node_ts: Vec<Vec<f64>> = sample
            .sets
            .iter()
            .map(|coords| {
                engine::compute_node_ts(
                    problem,
                    &self.residuals,
                    &self.z,
                    &stepsize.values,
                    &sc,
                    coords,
                    self.parallel,
                )
            })
            .collect::<Result<_, _>>()?;

        for (coords, ts) in sample.sets.iter().zip(&node_ts) {
            engine::apply_owned_updates(&mut self.z, &mut self.u, coords, ts, sc.coeff);
        }
        for (node, (coords, ts)) in sample.sets.iter().zip(&node_ts).enumerate() {
            let delta = engine::build_node_delta(problem.matrix(), node, coords, ts, sc.coeff);
            engine::apply_delta(&mut self.residuals, &delta);
        }

        for coords in &sample.sets {
            if !engine::iterates_bounded(&self.z, &self.u, coords) {
                return Err(SolveError::NonFiniteIterate {
                    iteration: self.k,
                    cap: engine::ITERATE_CAP,
                });
            }
        }

        self.finish_iteration()
    }

    /// Rebuilds both residual vectors from scratch via per-node partials,
    /// summed in ascending node order.
    pub fn refresh_residuals(&mut self, problem: &CompositeProblem, partition: &Partition) {
        let pz: Vec<Vec<f64>> = (0..partition.c())
            .map(|l| engine::residual_partial(problem.matrix(), partition.block(l), &self.z))
            .collect();
        self.residuals.r_z = engine::fold_partials(pz.iter().map(Vec::as_slice));
        let pu: Vec<Vec<f64>> = (0..partition.c())
            .map(|l| engine::residual_partial(problem.matrix(), partition.block(l), &self.u))
            .collect();
        self.residuals.r_u = engine::fold_partials(pu.iter().map(Vec::as_slice));
    }

    /// The output iterate `theta_prev^2 * u + z` (equals `z_0` before the
    /// first iteration, and `z` exactly in hydra mode).
    pub fn reconstruct_x(&self) -> Vec<f64> {
        let th2 = self.theta_prev * self.theta_prev;
        self.u
            .iter()
            .zip(&self.z)
            .map(|(&ui, &zi)| th2 * ui + zi)
            .collect()
    }
}

/// The positive root of `x^2 + theta^2 x - theta^2 = 0`:
/// `theta_next = (sqrt(theta^4 + 4 theta^2) - theta^2) / 2`, so that
/// `theta_next^2 = (1 - theta_next) theta^2`.
pub fn theta_next(theta: f64) -> Result<f64, SolveError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(SolveError::ThetaOutOfRange(theta));
    }
    let t2 = theta * theta;
    Ok(0.5 * ((t2 * t2 + 4.0 * t2).sqrt() - t2))
}

/// One monitored objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub k: u64,
    pub seconds: f64,
    pub objective: f64,
}

/// Objective trace at monitor cadence. Objective evaluation costs a full
/// pass over the data, so it never happens every iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub points: Vec<TracePoint>,
}

impl Trace {
    pub fn best_objective(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.objective)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn last(&self) -> Option<&TracePoint> {
        self.points.last()
    }
}

/// A finished run: final iterate, monitored trace, and the end state.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: Vec<f64>,
    pub trace: Trace,
    pub state: SolverState,
    pub stepsize: StepsizeVector,
}

/// Computes the configured stepsize rule for `problem`'s matrix.
pub fn resolve_stepsize(
    config: &SolverConfig,
    problem: &CompositeProblem,
    partition: &Partition,
) -> Result<StepsizeVector, SolveError> {
    let params = EsoParams::new(partition, config.tau)?;
    match &config.stepsize {
        StepsizeSpec::Vector(v) => {
            if v.values.len() != problem.d() {
                return Err(SolveError::ConfigMismatch(format!(
                    "stepsize vector has {} entries for a {}-coordinate problem",
                    v.values.len(),
                    problem.d()
                )));
            }
            if let Some(bad) = v.values.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
                return Err(SolveError::ConfigMismatch(format!(
                    "stepsize vector contains non-positive entry {bad}"
                )));
            }
            Ok(v.clone())
        }
        StepsizeSpec::Rule(rule) => {
            compute_rule_stepsizes(problem, partition, &params, *rule, config)
        }
    }
}

fn compute_rule_stepsizes(
    problem: &CompositeProblem,
    partition: &Partition,
    params: &EsoParams,
    rule: Rule,
    config: &SolverConfig,
) -> Result<StepsizeVector, SolveError> {
    let m = problem.matrix();
    let stats = crate::sparsemat::row_stats(m, partition)?;
    let v = match rule {
        Rule::D1 => d1_from_stats(m, &stats, params),
        Rule::D2 => {
            let max_iter = config.power_max_iter.unwrap_or(10 * m.n_cols());
            let est = compute_sigma_power(m, partition, config.power_tol, max_iter)?;
            let beta = compute_beta_star(est.sigma.value, est.sigma_prime.value, params);
            compute_d2(&stats, beta, est.sigma.value, est.sigma_prime.value, params)
        }
        Rule::D3 => compute_d3(&stats, params)?,
        Rule::D4 => {
            let (_, sigma_tilde) = compute_sigma_tilde(m, &stats);
            compute_d4(&stats, sigma_tilde, params)?
        }
    };
    Ok(v)
}

/// Runs the method until `max_iter` or until the monitored suboptimality
/// drops below the target.
pub fn solve(config: &SolverConfig, problem: &CompositeProblem) -> Result<SolveOutput, SolveError> {
    let partition = Partition::uniform(problem.d(), config.c)?;
    let stepsize = resolve_stepsize(config, problem, &partition)?;
    let mut sampler = DistributedSampler::new(partition, config.tau, config.seed)?;
    let params = EsoParams::new(&partition, config.tau)?;

    let mut state = SolverState::new(problem, &params, config.mode);
    state.set_parallel(config.parallel);
    let monitor_every = config.monitor_cadence(partition.s());
    let target = match (config.eps, config.l_star) {
        (Some(eps), Some(l_star)) => Some(l_star + eps),
        _ => None,
    };

    let start = Instant::now();
    let mut trace = Trace::default();
    let first = problem.objective(&state.reconstruct_x());
    trace.points.push(TracePoint {
        k: 0,
        seconds: start.elapsed().as_secs_f64(),
        objective: first,
    });
    if target.map_or(false, |t| first <= t) {
        let x = state.reconstruct_x();
        return Ok(SolveOutput {
            x,
            trace,
            state,
            stepsize,
        });
    }

    for k in 0..config.max_iter {
        let sample = sampler.draw(k);
        state.step(&sample, &stepsize, problem)?;
        if config.refresh_every > 0 && state.k % config.refresh_every == 0 {
            state.refresh_residuals(problem, &partition);
        }
        if state.k % monitor_every == 0 {
            let objective = problem.objective(&state.reconstruct_x());
            trace.points.push(TracePoint {
                k: state.k,
                seconds: start.elapsed().as_secs_f64(),
                objective,
            });
            if target.map_or(false, |t| objective <= t) {
                break;
            }
        }
    }
    if trace.points.last().map(|p| p.k) != Some(state.k) {
        trace.points.push(TracePoint {
            k: state.k,
            seconds: start.elapsed().as_secs_f64(),
            objective: problem.objective(&state.reconstruct_x()),
        });
    }

    let x = state.reconstruct_x();
    Ok(SolveOutput {
        x,
        trace,
        state,
        stepsize,
    })
}

/// Worst-case iteration count guaranteeing suboptimality `epsilon` with
/// probability at least `1 - rho`:
/// `k >= (2s/tau) (sqrt((C1 + C2)/(rho epsilon)) - 1) + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationBound {
    pub c1: f64,
    pub c2: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub k_min: u64,
}

pub fn iteration_bound(
    c1: f64,
    c2: f64,
    rho: f64,
    epsilon: f64,
    tau: usize,
    s: usize,
) -> Result<IterationBound, SolveError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(SolveError::InvalidRange(format!(
            "rho = {rho} outside (0, 1)"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(SolveError::InvalidRange(format!(
            "epsilon = {epsilon} must be positive"
        )));
    }
    if c1 < 0.0 || c2 < 0.0 {
        return Err(SolveError::InvalidRange(format!(
            "C1 = {c1}, C2 = {c2} must be nonnegative"
        )));
    }
    if tau == 0 || s < tau {
        return Err(SolveError::InvalidRange(format!(
            "need 1 <= tau <= s, got tau = {tau}, s = {s}"
        )));
    }
    let rhs = 2.0 * s as f64 / tau as f64 * (((c1 + c2) / (rho * epsilon)).sqrt() - 1.0) + 1.0;
    let k_min = if rhs <= 1.0 { 1 } else { rhs.ceil() as u64 };
    Ok(IterationBound {
        c1,
        c2,
        rho,
        epsilon,
        k_min,
    })
}

/// `C1 = (1 - tau/s) L0` for a starting suboptimality `L0`.
pub fn bound_c1(l0: f64, tau: usize, s: usize) -> f64 {
    (1.0 - tau as f64 / s as f64) * l0
}

/// `C2 = 1/2 d0^T D d0` for a starting displacement `d0 = x0 - x*`.
pub fn bound_c2(d_values: &[f64], d0: &[f64]) -> f64 {
    0.5 * crate::kahan::sum(d_values.iter().zip(d0).map(|(&d, &v)| d * v * v))
}
