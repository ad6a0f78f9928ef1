//! Domain types of the multi-topic opinion model and validation of their
//! structural assumptions.
//!
//! Everything downstream (graph analysis, simulation, prediction) consumes the
//! certified types produced here, so the invariants below are checked once:
//!
//! * [`InfluenceNetwork`]: `W` is row-stochastic, nonnegative, has a positive
//!   diagonal and a strongly connected graph.
//! * [`LogicMatrix`]: each row of `C` has unit absolute sum, the diagonal is
//!   positive, and every eigenvalue is either exactly 1 (semi-simple) or strictly
//!   inside the unit circle.
//! * [`LogicProfile`]: all individuals' logic matrices share one zero/nonzero
//!   pattern.
//!
//! Indices are zero-based in the API; error messages print them one-based.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;
use crate::linalg;

/// Entries with magnitude at or below this are structurally zero.
pub const ZERO_TOL: f64 = 1e-12;
/// Tolerance for eigenvalue tests (unit circle, unit eigenvalue, rank threshold).
pub const SPECTRAL_TOL: f64 = 1e-9;
/// Row sums off by at most this much are renormalised instead of rejected.
pub const RENORMALIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("entry ({}, {}) is not finite", .row + 1, .col + 1)]
    NonFinite { row: usize, col: usize },
    #[error("row {} of W sums to {sum}, expected 1", .row + 1)]
    RowSumViolation { row: usize, sum: f64 },
    #[error("entry ({}, {}) of W is negative: {value}", .row + 1, .col + 1)]
    NonnegativityViolation { row: usize, col: usize, value: f64 },
    #[error("diagonal entry {} of W must be positive", .row + 1)]
    ZeroDiagonal { row: usize },
    #[error("influence graph is not strongly connected ({components} components)")]
    NotStronglyConnected { components: usize },
    #[error("row {} of C has absolute sum {sum}, expected 1", .row + 1)]
    RowAbsSumViolation { row: usize, sum: f64 },
    #[error("diagonal entry {} of C must be positive, got {value}", .row + 1)]
    NonpositiveDiagonal { row: usize, value: f64 },
    #[error("eigenvalue {re}{im:+}i has modulus {modulus}; must be 1 or strictly below 1")]
    EigenvalueModulusViolation { re: f64, im: f64, modulus: f64 },
    #[error("eigenvalue 1 is not semi-simple (algebraic multiplicity {algebraic}, geometric {geometric})")]
    NonSemiSimpleUnitEigenvalue { algebraic: usize, geometric: usize },
    #[error("a logic profile needs at least one matrix")]
    EmptyProfile,
    #[error("logic matrix of individual {} is {found}x{found}, expected {expected}x{expected}", .individual + 1)]
    DimensionMismatch { individual: usize, expected: usize, found: usize },
    #[error(
        "individuals {} and {} have different sparsity at ({}, {})",
        .first + 1, .second + 1, .row + 1, .col + 1
    )]
    PatternMismatch { first: usize, second: usize, row: usize, col: usize },
    #[error("opinion vector has length {found}, expected {expected}")]
    StateLength { expected: usize, found: usize },
    #[error("opinion {} = {value} lies outside [-1, 1]", .index + 1)]
    StateOutOfRange { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x > ZERO_TOL {
            Sign::Positive
        } else if x < -ZERO_TOL {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Zero => 0.0,
            Sign::Positive => 1.0,
        }
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(ModelError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(ModelError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(m.nrows())
}

fn snap_zeros(m: &mut DMatrix<f64>) {
    for x in m.iter_mut() {
        if x.abs() <= ZERO_TOL {
            *x = 0.0;
        }
    }
}

/// Rescale rows whose (absolute) sum is within [`RENORMALIZE_TOL`] of one.
/// Returns the renormalised rows, or the first row that is too far off.
fn renormalize_rows(
    m: &mut DMatrix<f64>,
    absolute: bool,
    what: &str,
) -> std::result::Result<Vec<usize>, (usize, f64)> {
    let mut touched = Vec::new();
    for i in 0..m.nrows() {
        let sum: f64 = m.row(i).iter().map(|&x| if absolute { x.abs() } else { x }).sum();
        let gap = (sum - 1.0).abs();
        if gap <= ZERO_TOL {
            continue;
        }
        if gap > RENORMALIZE_TOL {
            return Err((i, sum));
        }
        warn!("{what} row {} sums to {sum:.15}; renormalising", i + 1);
        m.row_mut(i).unscale_mut(sum);
        touched.push(i);
    }
    Ok(touched)
}

/// Directed graph of a square matrix: edge `j -> i` whenever `m[(i, j)] != 0`, `i != j`.
pub fn pattern_adjacency(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for (j, out) in adj.iter_mut().enumerate() {
            if i != j && m[(i, j)] != 0.0 {
                out.push(i);
            }
        }
    }
    adj
}

/// Row-stochastic influence matrix `W` with a strongly connected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceNetwork {
    weights: DMatrix<f64>,
    renormalized_rows: Vec<usize>,
}

impl InfluenceNetwork {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Rows that were within rounding distance of stochastic and got rescaled.
    pub fn renormalized_rows(&self) -> &[usize] {
        &self.renormalized_rows
    }
}

pub fn validate_influence(weights: DMatrix<f64>) -> Result<InfluenceNetwork> {
    let n = check_square(&weights)?;
    let mut w = weights;
    snap_zeros(&mut w);
    for i in 0..n {
        for j in 0..n {
            if w[(i, j)] < 0.0 {
                return Err(ModelError::NonnegativityViolation { row: i, col: j, value: w[(i, j)] });
            }
        }
    }
    let renormalized_rows = renormalize_rows(&mut w, false, "W")
        .map_err(|(row, sum)| ModelError::RowSumViolation { row, sum })?;
    if let Some(row) = (0..n).find(|&i| w[(i, i)] <= 0.0) {
        return Err(ModelError::ZeroDiagonal { row });
    }
    let components = graph::strongly_connected_components(&pattern_adjacency(&w)).len();
    if components != 1 {
        return Err(ModelError::NotStronglyConnected { components });
    }
    Ok(InfluenceNetwork { weights: w, renormalized_rows })
}

/// One individual's logic matrix `C_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicMatrix {
    matrix: DMatrix<f64>,
    unit_multiplicity: usize,
    renormalized_rows: Vec<usize>,
}

impl LogicMatrix {
    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of eigenvalues equal to 1 (counted with multiplicity).
    pub fn unit_multiplicity(&self) -> usize {
        self.unit_multiplicity
    }

    pub fn renormalized_rows(&self) -> &[usize] {
        &self.renormalized_rows
    }
}

/// Checks that every eigenvalue is 1 or strictly inside the unit circle and that
/// eigenvalue 1 is semi-simple. Returns the multiplicity of eigenvalue 1.
///
/// Eigenvalues within [`SPECTRAL_TOL`] of 1 count as 1. Anything else with modulus
/// above `1 - SPECTRAL_TOL` is rejected: near-unit eigenvalues elsewhere on the
/// circle are not accepted silently. Semi-simplicity is tested through
/// `rank(C - I) == m - multiplicity`.
pub fn check_unit_spectrum(c: &DMatrix<f64>) -> Result<usize> {
    let m = c.nrows();
    let mut unit = 0;
    for z in c.complex_eigenvalues().iter() {
        let modulus = z.norm();
        let to_one = (z - nalgebra::Complex::new(1.0, 0.0)).norm();
        if to_one <= SPECTRAL_TOL {
            unit += 1;
        } else if modulus > 1.0 - SPECTRAL_TOL {
            return Err(ModelError::EigenvalueModulusViolation { re: z.re, im: z.im, modulus });
        }
    }
    if unit > 0 {
        let shifted = c - DMatrix::<f64>::identity(m, m);
        let rank = linalg::numerical_rank(&shifted, SPECTRAL_TOL);
        let geometric = m - rank;
        if geometric != unit {
            return Err(ModelError::NonSemiSimpleUnitEigenvalue { algebraic: unit, geometric });
        }
    }
    Ok(unit)
}

pub fn validate_logic(matrix: DMatrix<f64>) -> Result<LogicMatrix> {
    let m = check_square(&matrix)?;
    let mut c = matrix;
    snap_zeros(&mut c);
    let renormalized_rows = renormalize_rows(&mut c, true, "C")
        .map_err(|(row, sum)| ModelError::RowAbsSumViolation { row, sum })?;
    if let Some(row) = (0..m).find(|&p| c[(p, p)] <= 0.0) {
        return Err(ModelError::NonpositiveDiagonal { row, value: c[(row, row)] });
    }
    let unit_multiplicity = check_unit_spectrum(&c)?;
    Ok(LogicMatrix { matrix: c, unit_multiplicity, renormalized_rows })
}

/// The `n` logic matrices of a population, all with one common sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicProfile {
    matrices: Vec<LogicMatrix>,
    pattern: Vec<bool>,
    m: usize,
}

pub fn validate_profile(matrices: Vec<LogicMatrix>) -> Result<LogicProfile> {
    let first = matrices.first().ok_or(ModelError::EmptyProfile)?;
    let m = first.m();
    for (i, c) in matrices.iter().enumerate() {
        if c.m() != m {
            return Err(ModelError::DimensionMismatch { individual: i, expected: m, found: c.m() });
        }
    }
    let pattern: Vec<bool> = (0..m * m).map(|k| first.matrix[(k / m, k % m)] != 0.0).collect();
    for (i, c) in matrices.iter().enumerate().skip(1) {
        for p in 0..m {
            for q in 0..m {
                if (c.matrix[(p, q)] != 0.0) != pattern[p * m + q] {
                    return Err(ModelError::PatternMismatch { first: 0, second: i, row: p, col: q });
                }
            }
        }
    }
    Ok(LogicProfile { matrices, pattern, m })
}

impl LogicProfile {
    /// Number of individuals.
    pub fn n(&self) -> usize {
        self.matrices.len()
    }

    /// Number of topics.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn matrices(&self) -> &[LogicMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, individual: usize) -> &DMatrix<f64> {
        &self.matrices[individual].matrix
    }

    /// `c_{pq,i}`.
    pub fn entry(&self, individual: usize, p: usize, q: usize) -> f64 {
        self.matrices[individual].matrix[(p, q)]
    }

    /// Whether `c_{pq,i}` is nonzero (for every individual `i`).
    pub fn pattern(&self, p: usize, q: usize) -> bool {
        self.pattern[p * self.m + q]
    }

    /// Topics `q != p` that topic `p` depends on.
    pub fn dependencies(&self, p: usize) -> Vec<usize> {
        (0..self.m).filter(|&q| q != p && self.pattern(p, q)).collect()
    }

    /// Logic graph: edge `q -> p` when topic `p` depends on topic `q`.
    pub fn pattern_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for p in 0..self.m {
            for q in self.dependencies(p) {
                adj[q].push(p);
            }
        }
        adj
    }

    pub fn is_homogeneous(&self) -> bool {
        self.matrices.windows(2).all(|w| w[0].matrix == w[1].matrix)
    }

    /// The profile restricted to a subset of topics (rows and columns), kept in the
    /// given order. Used for the diagonal blocks of the condensed logic graph.
    pub fn submatrices(&self, topics: &[usize]) -> Vec<DMatrix<f64>> {
        self.matrices
            .iter()
            .map(|c| DMatrix::from_fn(topics.len(), topics.len(), |a, b| c.matrix[(topics[a], topics[b])]))
            .collect()
    }
}

/// Two individuals `i < j` whose weights on cell `(p, q)` are nonzero with opposite
/// signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompetingWitness {
    pub q: usize,
    pub i: usize,
    pub j: usize,
}

/// All competing logical interdependencies on topic `p`.
pub fn detect_competing(profile: &LogicProfile, p: usize) -> Vec<CompetingWitness> {
    let mut out = Vec::new();
    for q in profile.dependencies(p) {
        let signs: Vec<Sign> = (0..profile.n()).map(|i| Sign::of(profile.entry(i, p, q))).collect();
        for i in 0..signs.len() {
            for j in i + 1..signs.len() {
                let opposite = matches!(
                    (signs[i], signs[j]),
                    (Sign::Positive, Sign::Negative) | (Sign::Negative, Sign::Positive)
                );
                if opposite {
                    out.push(CompetingWitness { q, i, j });
                }
            }
        }
    }
    out
}

/// Whether any topic in `topics` has a competing interdependence on a topic that
/// is also in `topics`.
pub fn has_competition_within(profile: &LogicProfile, topics: &[usize]) -> bool {
    topics
        .iter()
        .any(|&p| detect_competing(profile, p).iter().any(|w| topics.contains(&w.q)))
}

/// Opinions of all individuals at one time step, individual-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionState {
    values: DVector<f64>,
    step: usize,
}

impl OpinionState {
    pub fn new(values: DVector<f64>, step: usize) -> Result<Self> {
        check_opinions(&values)?;
        Ok(OpinionState { values, step })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Opinion of individual `i` on topic `p` for a population with `m` topics.
    pub fn opinion(&self, m: usize, i: usize, p: usize) -> f64 {
        self.values[i * m + p]
    }
}

/// Every entry must lie in `[-1, 1]`.
pub fn check_opinions(values: &DVector<f64>) -> Result<()> {
    match values.iter().position(|x| !(-1.0..=1.0).contains(x)) {
        Some(index) => Err(ModelError::StateOutOfRange { index, value: values[index] }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        linalg::from_rows(&v).unwrap()
    }

    #[test]
    fn complete_two_node_network_is_valid() {
        let net = validate_influence(mat(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        assert_eq!(net.n(), 2);
    }

    #[test]
    fn identity_network_is_not_strongly_connected() {
        let err = validate_influence(DMatrix::identity(2, 2)).unwrap_err();
        assert_eq!(err, ModelError::NotStronglyConnected { components: 2 });
    }

    #[test]
    fn influence_errors_name_offending_entry() {
        assert_eq!(
            validate_influence(mat(&[&[0.6, 0.5], &[0.5, 0.5]])).unwrap_err(),
            ModelError::RowSumViolation { row: 0, sum: 1.1 }
        );
        assert!(matches!(
            validate_influence(mat(&[&[1.5, -0.5], &[0.5, 0.5]])).unwrap_err(),
            ModelError::NonnegativityViolation { row: 0, col: 1, .. }
        ));
        assert_eq!(
            validate_influence(mat(&[&[0.0, 1.0], &[0.5, 0.5]])).unwrap_err(),
            ModelError::ZeroDiagonal { row: 0 }
        );
        assert!(matches!(
            validate_influence(mat(&[&[0.5, 0.5]])).unwrap_err(),
            ModelError::NotSquare { rows: 1, cols: 2 }
        ));
    }

    #[test]
    fn near_stochastic_rows_are_renormalised() {
        let net = validate_influence(mat(&[&[0.5, 0.5000000002], &[0.5, 0.5]])).unwrap();
        assert_eq!(net.renormalized_rows(), &[0]);
        let s: f64 = net.weights().row(0).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logic_examples() {
        let c = validate_logic(mat(&[&[1.0, 0.0], &[0.5, 0.5]])).unwrap();
        assert_eq!(c.unit_multiplicity(), 1);
        let id = validate_logic(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(id.unit_multiplicity(), 3);
        let avg = validate_logic(mat(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        assert_eq!(avg.unit_multiplicity(), 1);
        let neg = validate_logic(mat(&[&[1.0, 0.0], &[-0.5, 0.5]])).unwrap();
        assert_eq!(neg.unit_multiplicity(), 1);
    }

    #[test]
    fn logic_errors() {
        assert!(matches!(
            validate_logic(mat(&[&[1.0, 0.0], &[0.5, 0.3]])).unwrap_err(),
            ModelError::RowAbsSumViolation { row: 1, .. }
        ));
        assert!(matches!(
            validate_logic(mat(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap_err(),
            ModelError::NonpositiveDiagonal { row: 1, .. }
        ));
        assert!(matches!(
            validate_logic(mat(&[&[1.0, 0.0], &[0.6, -0.4]])).unwrap_err(),
            ModelError::NonpositiveDiagonal { row: 1, .. }
        ));
    }

    #[test]
    fn spectrum_check_rejects_jordan_block_and_large_modulus() {
        let jordan = mat(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(
            check_unit_spectrum(&jordan).unwrap_err(),
            ModelError::NonSemiSimpleUnitEigenvalue { algebraic: 2, geometric: 1 }
        );
        let flip = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(
            check_unit_spectrum(&flip).unwrap_err(),
            ModelError::EigenvalueModulusViolation { .. }
        ));
        let grow = mat(&[&[2.0]]);
        assert!(matches!(
            check_unit_spectrum(&grow).unwrap_err(),
            ModelError::EigenvalueModulusViolation { .. }
        ));
    }

    #[test]
    fn profile_pattern_mismatch_reports_cell() {
        let a = validate_logic(DMatrix::identity(2, 2)).unwrap();
        let b = validate_logic(mat(&[&[1.0, 0.0], &[0.5, 0.5]])).unwrap();
        assert_eq!(
            validate_profile(vec![a, b]).unwrap_err(),
            ModelError::PatternMismatch { first: 0, second: 1, row: 1, col: 0 }
        );
        assert_eq!(
            ModelError::PatternMismatch { first: 0, second: 1, row: 1, col: 0 }.to_string(),
            "individuals 1 and 2 have different sparsity at (2, 1)"
        );
    }

    #[test]
    fn single_matrix_profile() {
        let a = validate_logic(mat(&[&[1.0, 0.0], &[0.5, 0.5]])).unwrap();
        let p = validate_profile(vec![a]).unwrap();
        assert_eq!(p.n(), 1);
        assert_eq!(p.dependencies(1), vec![0]);
        assert!(p.dependencies(0).is_empty());
        assert!(p.is_homogeneous());
    }

    #[test]
    fn competition_on_space_example() {
        let pos = validate_logic(mat(&[&[1.0, 0.0], &[0.5, 0.5]])).unwrap();
        let neg = validate_logic(mat(&[&[1.0, 0.0], &[-0.5, 0.5]])).unwrap();
        let profile = validate_profile(vec![pos.clone(), neg, pos]).unwrap();
        let w = detect_competing(&profile, 1);
        assert_eq!(
            w,
            vec![CompetingWitness { q: 0, i: 0, j: 1 }, CompetingWitness { q: 0, i: 1, j: 2 }]
        );
        assert!(detect_competing(&profile, 0).is_empty());
        assert!(has_competition_within(&profile, &[0, 1]));
        assert!(!has_competition_within(&profile, &[1]));
    }

    #[test]
    fn opinion_state_bounds() {
        assert!(OpinionState::new(DVector::from_vec(vec![1.0, -1.0, 0.3]), 0).is_ok());
        assert_eq!(
            OpinionState::new(DVector::from_vec(vec![0.0, 1.5]), 0).unwrap_err(),
            ModelError::StateOutOfRange { index: 1, value: 1.5 }
        );
    }
}
