//! Direct computation of limiting opinions, block by block, and the three-way cross
//! check between structural prediction, direct computation and simulation.
//!
//! All vectors here are topic-major unless stated otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, Ordering, SimulationOptions, TopicOutcome};
use crate::graph::{self, TopicPartition};
use crate::linalg;
use crate::model::{InfluenceNetwork, LogicProfile};
use crate::predict::{self, PredictionReport, Rule, Verdict};

/// A spectral radius at or above `1 - CERTIFICATE_MARGIN` fails the certificate.
pub const CERTIFICATE_MARGIN: f64 = 1e-12;
pub const DEFAULT_AGREEMENT_TOL: f64 = 1e-6;
pub const FIXED_POINT_RESIDUAL_TOL: f64 = 1e-10;
const POWER_ITERATIONS: usize = 20_000;
const MAX_SQUARINGS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("block {block} fixed-point system is singular")]
    SingularSystem { block: usize },
    #[error("spectral radius {radius} of block {block} is not below one (bound {abs_upper_bound})")]
    CertificateFailure { block: usize, radius: f64, abs_upper_bound: f64 },
    #[error("powers of closed block {block} do not settle")]
    NoLimit { block: usize },
    #[error("initial state has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Predict(#[from] predict::PredictError),
}

/// Topic-major row/column indices of the listed topics.
pub fn topic_indices(topics: &[usize], n: usize) -> Vec<usize> {
    topics.iter().flat_map(|&p| (0..n).map(move |i| p * n + i)).collect()
}

pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| a[(rows[r], cols[c])])
}

fn gather(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |k, _| v[idx[k]])
}

/// Limit of `A_jj^t y_J(0)` for a closed block, via repeated squaring of `A_jj`.
pub fn closed_block_limit(
    a_jj: &DMatrix<f64>,
    y0: &DVector<f64>,
    block: usize,
) -> Result<DVector<f64>, OracleError> {
    let mut power = linalg::power_limit(a_jj, CERTIFICATE_MARGIN, MAX_SQUARINGS)
        .ok_or(OracleError::NoLimit { block })?;
    // two extra squarings push slowly decaying modes well below the stopping tolerance
    for _ in 0..2 {
        power = &power * &power;
    }
    Ok(power * y0)
}

/// Solves `(I - A_jj) y = rhs` by dense LU.
pub fn fixed_point_block(
    a_jj: &DMatrix<f64>,
    rhs: &DVector<f64>,
    block: usize,
) -> Result<DVector<f64>, OracleError> {
    let dim = a_jj.nrows();
    let sys = DMatrix::<f64>::identity(dim, dim) - a_jj;
    let lu = sys.lu();
    if !lu.is_invertible() {
        return Err(OracleError::SingularSystem { block });
    }
    let y = lu.solve(rhs).ok_or(OracleError::SingularSystem { block })?;
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(OracleError::SingularSystem { block })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    /// Largest eigenvalue modulus of the block.
    pub radius: f64,
    /// Collatz-Wielandt upper bound on the spectral radius of `|A_jj|`.
    pub abs_upper_bound: f64,
}

impl SpectralCertificate {
    pub fn holds(&self) -> bool {
        self.radius < 1.0 - CERTIFICATE_MARGIN && self.abs_upper_bound < 1.0 - CERTIFICATE_MARGIN
    }
}

/// Upper bound `max_i (M x)_i / x_i` minimised over power iterates of a nonnegative `M`.
pub fn collatz_wielandt_bound(m: &DMatrix<f64>, iterations: usize) -> f64 {
    let dim = m.nrows();
    if dim == 0 {
        return 0.0;
    }
    let mut x = DVector::from_element(dim, 1.0);
    let mut best = f64::INFINITY;
    for _ in 0..iterations {
        let y = m * &x;
        let mut hi = 0.0f64;
        let mut lo = f64::INFINITY;
        for k in 0..dim {
            let ratio = y[k] / x[k];
            hi = hi.max(ratio);
            lo = lo.min(ratio);
        }
        best = best.min(hi);
        if hi - lo < 1e-14 {
            break;
        }
        let scale = y.amax();
        if scale == 0.0 {
            return 0.0;
        }
        // keep every component positive so the ratio bound stays valid
        x = y.map(|v| (v / scale).max(f64::MIN_POSITIVE));
    }
    best
}

pub fn spectral_certificate(a_jj: &DMatrix<f64>, block: usize) -> Result<SpectralCertificate, OracleError> {
    let cert = SpectralCertificate {
        radius: linalg::spectral_radius(a_jj),
        abs_upper_bound: collatz_wielandt_bound(&linalg::abs_matrix(a_jj), POWER_ITERATIONS),
    };
    if cert.holds() {
        Ok(cert)
    } else {
        Err(OracleError::CertificateFailure { block, radius: cert.radius, abs_upper_bound: cert.abs_upper_bound })
    }
}

/// Per-block spectral data gathered while propagating limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpectrum {
    pub block: usize,
    pub topics: Vec<usize>,
    pub radius: f64,
    pub abs_upper_bound: f64,
    pub certified: bool,
}

/// Full topic-major limit, assembled block by block in partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLimits {
    pub limit: DVector<f64>,
    pub spectra: Vec<BlockSpectrum>,
}

/// Closed blocks: limit of their own powers. Open blocks: the fixed point driven by
/// the full upstream limit vectors, `y_J = (I - A_JJ)^-1 sum_{q outside J} A_Jq y_q`.
pub fn propagate_limits(
    net: &InfluenceNetwork,
    profile: &LogicProfile,
    partition: &TopicPartition,
    y0: &DVector<f64>,
) -> Result<OracleLimits, OracleError> {
    let (n, m) = (net.n(), profile.m());
    if y0.len() != n * m {
        return Err(OracleError::DimensionMismatch { expected: n * m, found: y0.len() });
    }
    let a = graph::build_multiplex_pattern(net, profile);
    let mut limit = DVector::zeros(n * m);
    let mut spectra = Vec::new();
    for (b, block) in partition.blocks.iter().enumerate() {
        let idx = topic_indices(block, n);
        let a_jj = submatrix(&a, &idx, &idx);
        let y_block = if partition.closed[b] {
            closed_block_limit(&a_jj, &gather(y0, &idx), b)?
        } else {
            let ext = topic_indices(&partition.external_dependencies[b], n);
            let rhs = submatrix(&a, &idx, &ext) * gather(&limit, &ext);
            let cert = SpectralCertificate {
                radius: linalg::spectral_radius(&a_jj),
                abs_upper_bound: collatz_wielandt_bound(&linalg::abs_matrix(&a_jj), POWER_ITERATIONS),
            };
            spectra.push(BlockSpectrum {
                block: b,
                topics: block.clone(),
                radius: cert.radius,
                abs_upper_bound: cert.abs_upper_bound,
                certified: cert.holds(),
            });
            fixed_point_block(&a_jj, &rhs, b)?
        };
        for (k, &row) in idx.iter().enumerate() {
            limit[row] = y_block[k];
        }
    }
    Ok(OracleLimits { limit, spectra })
}

/// `|A y - y|_inf`.
pub fn fixed_point_residual(a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    (a * y - y).amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub sim_tol: f64,
    pub consensus_tol: f64,
    pub max_steps: usize,
    pub agreement: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sim_tol: dynamics::DEFAULT_TOL,
            consensus_tol: dynamics::DEFAULT_CONSENSUS_TOL,
            max_steps: dynamics::DEFAULT_MAX_STEPS,
            agreement: DEFAULT_AGREEMENT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCheck {
    pub topic: usize,
    pub predicted: Verdict,
    pub rule: Rule,
    pub simulated: TopicOutcome,
    /// Per-individual limits.
    pub oracle_limit: Vec<f64>,
    pub simulated_limit: Vec<f64>,
    /// `max_i |oracle - simulated|`.
    pub oracle_deviation: f64,
    /// `max_i |alpha - simulated|` for consensus verdicts.
    pub alpha_deviation: Option<f64>,
    /// Whether the simulated category matches the verdict; `None` where the verdict
    /// makes no claim.
    pub category_match: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub topics: Vec<TopicCheck>,
    pub spectra: Vec<BlockSpectrum>,
    pub fixed_point_residual: f64,
    pub converged_at: usize,
    pub tolerances: Tolerances,
    pub agreement: bool,
    pub prediction: PredictionReport,
}

impl VerificationReport {
    pub fn mismatches(&self) -> Vec<usize> {
        self.topics
            .iter()
            .filter(|t| !topic_agrees(t, self.tolerances.agreement))
            .map(|t| t.topic)
            .collect()
    }
}

fn topic_agrees(t: &TopicCheck, tol: f64) -> bool {
    t.oracle_deviation < tol && t.alpha_deviation.is_none_or(|d| d < tol) && t.category_match != Some(false)
}

fn category_match(verdict: &Verdict, simulated: &TopicOutcome, consensus_tol: f64) -> Option<bool> {
    match verdict {
        Verdict::Consensus { .. } => Some(simulated.is_consensus()),
        Verdict::ZeroConsensus => {
            Some(matches!(simulated, TopicOutcome::Consensus { value } if value.abs() < consensus_tol))
        }
        Verdict::Disagreement => Some(!simulated.is_consensus()),
        Verdict::ConjecturedDisagreement | Verdict::Undetermined => None,
    }
}

/// Runs prediction, limit propagation and simulation on one model and compares them.
///
/// `x0` is individual-major.
pub fn cross_validate(
    net: &InfluenceNetwork,
    profile: &LogicProfile,
    x0: &DVector<f64>,
    tol: &Tolerances,
) -> Result<VerificationReport, OracleError> {
    let (n, m) = (net.n(), profile.m());
    if x0.len() != n * m {
        return Err(OracleError::DimensionMismatch { expected: n * m, found: x0.len() });
    }
    let prediction = predict::predict_all(net, profile, x0)?;
    let y0 = dynamics::to_topic_major(x0, n, m);
    let oracle = propagate_limits(net, profile, &prediction.partition, &y0)?;

    let system = dynamics::build_system(net, profile, Ordering::TopicMajor);
    let options = SimulationOptions { tol: tol.sim_tol, max_steps: tol.max_steps };
    let traj = dynamics::simulate(&system, &y0, &options)?;
    let sim_limit = traj.limit.clone().ok_or(DynamicsError::NotConverged)?;
    let outcomes = dynamics::detect_per_topic_outcome(&traj, tol.consensus_tol)?;
    let residual = fixed_point_residual(&system.matrix, &oracle.limit);

    let topics: Vec<TopicCheck> = prediction
        .topics
        .iter()
        .map(|tp| {
            let p = tp.topic;
            let oracle_limit: Vec<f64> = (0..n).map(|i| oracle.limit[p * n + i]).collect();
            let simulated_limit: Vec<f64> = (0..n).map(|i| sim_limit[p * n + i]).collect();
            let oracle_deviation = max_abs_diff(&oracle_limit, &simulated_limit);
            let alpha_deviation = tp.verdict.alpha().map(|alpha| {
                simulated_limit.iter().fold(0.0f64, |acc, &v| acc.max((v - alpha).abs()))
            });
            TopicCheck {
                topic: p,
                predicted: tp.verdict,
                rule: tp.rule,
                simulated: outcomes[p],
                oracle_limit,
                simulated_limit,
                oracle_deviation,
                alpha_deviation,
                category_match: category_match(&tp.verdict, &outcomes[p], tol.consensus_tol),
            }
        })
        .collect();

    let agreement = topics.iter().all(|t| topic_agrees(t, tol.agreement))
        && oracle.spectra.iter().all(|s| s.certified)
        && residual < FIXED_POINT_RESIDUAL_TOL;
    Ok(VerificationReport {
        topics,
        spectra: oracle.spectra,
        fixed_point_residual: residual,
        converged_at: traj.converged_at.unwrap_or(0),
        tolerances: *tol,
        agreement,
        prediction,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::model::{validate_influence, validate_logic, validate_profile};
    use approx::assert_abs_diff_eq;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn scalar_fixed_point() {
        // n = 1 singleton: y = (c_pq alpha_q) / (1 - c_pp)
        let a = mat(&[&[0.2]]);
        let y = fixed_point_block(&a, &DVector::from_vec(vec![-0.8 * 0.5]), 0).unwrap();
        assert_abs_diff_eq!(y[0], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_block() {
        let a = mat(&[&[0.1, 0.2], &[0.3, 0.1]]);
        let y = fixed_point_block(&a, &DVector::zeros(2), 0).unwrap();
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn singular_block_reported() {
        let a = mat(&[&[1.0]]);
        assert_eq!(
            fixed_point_block(&a, &DVector::zeros(1), 3).unwrap_err(),
            OracleError::SingularSystem { block: 3 }
        );
    }

    #[test]
    fn certificate_rejects_stochastic_block() {
        let a = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(matches!(spectral_certificate(&a, 0), Err(OracleError::CertificateFailure { .. })));
    }

    #[test]
    fn certificate_bounded_by_diagonal() {
        let w = mat(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let a = &w * 0.2;
        let cert = spectral_certificate(&a, 0).unwrap();
        assert!(cert.radius <= 0.2 + 1e-12);
        assert!(cert.abs_upper_bound <= 0.2 + 1e-12);
        assert!(cert.radius <= cert.abs_upper_bound + 1e-12);
    }

    #[test]
    fn collatz_wielandt_is_upper_bound() {
        let m = mat(&[&[0.1, 0.5, 0.0], &[0.0, 0.2, 0.6], &[0.3, 0.0, 0.4]]);
        let bound = collatz_wielandt_bound(&m, 10_000);
        let rho = linalg::spectral_radius(&m);
        assert!(bound >= rho - 1e-12);
        assert!(bound - rho < 1e-9);
    }

    #[test]
    fn identity_logic_is_weighted_average() {
        let net = validate_influence(mat(&[&[0.5, 0.5], &[0.25, 0.75]])).unwrap();
        let c = validate_logic(DMatrix::identity(2, 2)).unwrap();
        let profile = validate_profile(vec![c.clone(), c]).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -0.6, 0.9, 0.0]);
        let report = cross_validate(&net, &profile, &x0, &Tolerances::default()).unwrap();
        assert!(report.agreement);
        let expected = [0.3 / 3.0 + 0.9 * 2.0 / 3.0, -0.6 / 3.0];
        for (p, check) in report.topics.iter().enumerate() {
            for &v in &check.oracle_limit {
                assert_abs_diff_eq!(v, expected[p], epsilon = 1e-12);
            }
        }
    }
}
