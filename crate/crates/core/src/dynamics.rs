//! The networked update `x(t+1) = M x(t)` in either state ordering, convergence
//! detection, and the closed-form limit for homogeneous logic matrices.
//!
//! Two orderings of the `n*m` opinions are used:
//!
//! * individual-major `x`: index `i*m + p` holds individual `i`'s opinion on topic `p`;
//!   the system matrix has blocks `w_ij * C_i`.
//! * topic-major `y`: index `p*n + i` holds the same opinion; the system matrix has
//!   blocks `diag(c_pq) * W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;
use crate::linalg;
use crate::model::{self, InfluenceNetwork, LogicMatrix, LogicProfile, ModelError};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_CONSENSUS_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;
/// Consecutive sub-tolerance residuals required to declare convergence.
pub const PATIENCE: usize = 10;
const MAX_SQUARINGS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("no convergence after {steps} steps (last residual {residual:e})")]
    MaxStepsExceeded { steps: usize, residual: f64, last_state: DVector<f64> },
    #[error("initial state has length {found}, system expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    InvalidState(#[from] ModelError),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("powers of the logic matrix do not settle")]
    PowerLimitNonconvergent,
    #[error("influence matrix has no unique stationary distribution")]
    NoPerronVector,
    #[error("trajectory has not converged")]
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    IndividualMajor,
    TopicMajor,
}

/// System matrix together with its ordering and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    pub matrix: DMatrix<f64>,
    pub ordering: Ordering,
    pub n: usize,
    pub m: usize,
}

pub fn build_system(net: &InfluenceNetwork, profile: &LogicProfile, ordering: Ordering) -> SystemMatrix {
    let (n, m) = (net.n(), profile.m());
    let matrix = match ordering {
        Ordering::IndividualMajor => {
            let w = net.weights();
            DMatrix::from_fn(n * m, n * m, |row, col| {
                let (i, p) = (row / m, row % m);
                let (j, q) = (col / m, col % m);
                w[(i, j)] * profile.entry(i, p, q)
            })
        }
        Ordering::TopicMajor => graph::build_multiplex_pattern(net, profile),
    };
    SystemMatrix { matrix, ordering, n, m }
}

/// `perm[k]` is the individual-major index of topic-major position `k`, so that
/// `y[k] = x[perm[k]]`.
pub fn interleave_permutation(n: usize, m: usize) -> Vec<usize> {
    (0..n * m).map(|k| (k % n) * m + k / n).collect()
}

pub fn to_topic_major(x: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
    let perm = interleave_permutation(n, m);
    DVector::from_fn(n * m, |k, _| x[perm[k]])
}

pub fn to_individual_major(y: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
    let perm = interleave_permutation(n, m);
    let mut x = DVector::zeros(n * m);
    for (k, &src) in perm.iter().enumerate() {
        x[src] = y[k];
    }
    x
}

/// Permutation matrix `P` with `P x = y`.
pub fn permutation_matrix(n: usize, m: usize) -> DMatrix<f64> {
    let perm = interleave_permutation(n, m);
    let mut p = DMatrix::zeros(n * m, n * m);
    for (k, &src) in perm.iter().enumerate() {
        p[(k, src)] = 1.0;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { tol: DEFAULT_TOL, max_steps: DEFAULT_MAX_STEPS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub ordering: Ordering,
    pub n: usize,
    pub m: usize,
    /// First step of the run of sub-tolerance residuals that ended the simulation.
    pub converged_at: Option<usize>,
    pub limit: Option<DVector<f64>>,
    /// `residuals[t] = |x(t+1) - x(t)|_inf`.
    pub residuals: Vec<f64>,
}

impl Trajectory {
    /// Opinion of individual `i` on topic `p` in state `state`.
    pub fn opinion(&self, state: &DVector<f64>, i: usize, p: usize) -> f64 {
        match self.ordering {
            Ordering::IndividualMajor => state[i * self.m + p],
            Ordering::TopicMajor => state[p * self.n + i],
        }
    }

    /// Limit rearranged into individual-major order.
    pub fn limit_individual_major(&self) -> Option<DVector<f64>> {
        let lim = self.limit.as_ref()?;
        Some(match self.ordering {
            Ordering::IndividualMajor => lim.clone(),
            Ordering::TopicMajor => to_individual_major(lim, self.n, self.m),
        })
    }
}

/// Iterates `x(t+1) = M x(t)` until the sup-norm step falls below `tol` for
/// [`PATIENCE`] consecutive steps.
pub fn simulate(
    system: &SystemMatrix,
    x0: &DVector<f64>,
    options: &SimulationOptions,
) -> Result<Trajectory, DynamicsError> {
    let dim = system.matrix.nrows();
    if x0.len() != dim {
        return Err(DynamicsError::DimensionMismatch { expected: dim, found: x0.len() });
    }
    if !(options.tol > 0.0) {
        return Err(DynamicsError::InvalidTolerance(options.tol));
    }
    model::check_opinions(x0)?;

    let mut states = vec![x0.clone()];
    let mut residuals = Vec::new();
    let mut run = 0usize;
    let mut next = DVector::zeros(dim);
    for _ in 0..options.max_steps {
        let current = states.last().expect("trajectory starts with x0");
        next.gemv(1.0, &system.matrix, current, 0.0);
        let residual = (&next - current).amax();
        residuals.push(residual);
        states.push(next.clone());
        if residual < options.tol {
            run += 1;
            if run == PATIENCE {
                let t = states.len() - 1 - PATIENCE;
                return Ok(Trajectory {
                    limit: Some(next),
                    states,
                    ordering: system.ordering,
                    n: system.n,
                    m: system.m,
                    converged_at: Some(t),
                    residuals,
                });
            }
        } else {
            run = 0;
        }
    }
    Err(DynamicsError::MaxStepsExceeded {
        steps: options.max_steps,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        last_state: states.pop().expect("trajectory starts with x0"),
    })
}

/// Runs exactly `steps` updates without a convergence test.
pub fn iterate(system: &SystemMatrix, x0: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for _ in 0..steps {
        let next = &system.matrix * states.last().expect("non-empty");
        states.push(next);
    }
    states
}

/// Limit for a population sharing one logic matrix `C`:
/// `x(inf) = (1 g^T (x) C^inf) x(0)`, with `g` the normalised left Perron vector of
/// `W` and `C^inf` obtained by repeated squaring. Individual-major output.
pub fn homogeneous_limit(
    net: &InfluenceNetwork,
    logic: &LogicMatrix,
    x0: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    let (n, m) = (net.n(), logic.m());
    if x0.len() != n * m {
        return Err(DynamicsError::DimensionMismatch { expected: n * m, found: x0.len() });
    }
    let gamma = linalg::left_perron_vector(net.weights()).ok_or(DynamicsError::NoPerronVector)?;
    let c_inf = linalg::power_limit(logic.matrix(), DEFAULT_TOL, MAX_SQUARINGS)
        .ok_or(DynamicsError::PowerLimitNonconvergent)?;
    let mut weighted = DVector::zeros(m);
    for j in 0..n {
        weighted += x0.rows(j * m, m) * gamma[j];
    }
    let per_individual = c_inf * weighted;
    Ok(DVector::from_fn(n * m, |k, _| per_individual[k % m]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopicOutcome {
    Consensus { value: f64 },
    Disagreement { spread: f64 },
}

impl TopicOutcome {
    pub fn is_consensus(&self) -> bool {
        matches!(self, TopicOutcome::Consensus { .. })
    }
}

/// Per-topic classification of a converged trajectory's limit: consensus (reported
/// at the mean) when the spread across individuals is below `consensus_tol`.
pub fn detect_per_topic_outcome(
    traj: &Trajectory,
    consensus_tol: f64,
) -> Result<Vec<TopicOutcome>, DynamicsError> {
    let limit = traj.limit.as_ref().ok_or(DynamicsError::NotConverged)?;
    Ok(classify_limit(traj, limit, consensus_tol))
}

fn classify_limit(traj: &Trajectory, limit: &DVector<f64>, consensus_tol: f64) -> Vec<TopicOutcome> {
    (0..traj.m)
        .map(|p| {
            let values: Vec<f64> = (0..traj.n).map(|i| traj.opinion(limit, i, p)).collect();
            outcome_of(&values, consensus_tol)
        })
        .collect()
}

/// Classifies the opinions of all individuals on one topic.
pub fn outcome_of(values: &[f64], consensus_tol: f64) -> TopicOutcome {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    if spread < consensus_tol {
        TopicOutcome::Consensus { value: values.iter().sum::<f64>() / values.len() as f64 }
    } else {
        TopicOutcome::Disagreement { spread }
    }
}
