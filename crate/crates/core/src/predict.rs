//! Structural prediction of per-topic final opinions.
//!
//! Blocks of the condensed logic graph are processed in order. Closed blocks are
//! decided by competition and structural balance alone; open blocks by whether a
//! common limiting value is compatible with every individual's logic rows, given
//! the values already predicted upstream.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics;
use crate::graph::{self, TopicPartition};
use crate::linalg;
use crate::model::{self, InfluenceNetwork, LogicProfile};
use crate::oracle;

/// Tolerance for equal singleton ratios and for the block residual.
pub const CONSISTENCY_TOL: f64 = 1e-9;
/// Below this magnitude a predicted nonzero consensus is flagged as non-generic.
pub const GENERICITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("initial state has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Consensus { alpha: f64 },
    ZeroConsensus,
    Disagreement,
    ConjecturedDisagreement,
    Undetermined,
}

impl Verdict {
    /// Predicted common value, if the verdict is a consensus.
    pub fn alpha(&self) -> Option<f64> {
        match self {
            Verdict::Consensus { alpha } => Some(*alpha),
            Verdict::ZeroConsensus => Some(0.0),
            _ => None,
        }
    }

    pub fn is_disagreement(&self) -> bool {
        matches!(self, Verdict::Disagreement | Verdict::ConjecturedDisagreement)
    }

    pub fn short(&self) -> &'static str {
        match self {
            Verdict::Consensus { .. } => "C",
            Verdict::ZeroConsensus => "Z",
            Verdict::Disagreement => "D",
            Verdict::ConjecturedDisagreement => "CD",
            Verdict::Undetermined => "U",
        }
    }
}

/// Which decision rule produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Closed block, balanced, no competition: modulus consensus.
    ClosedBalanced,
    /// Closed block with a structurally unbalanced logic graph.
    ClosedUnbalanced,
    /// Closed block containing competing interdependencies.
    ClosedCompeting,
    /// Open singleton block: per-individual ratios compared.
    SingletonRatio,
    /// Open singleton block whose dependencies all converge to zero.
    SingletonZeroUpstream,
    /// Open multi-topic block: common solution of the stacked consistency system.
    BlockCommonSolution,
    /// Open multi-topic block whose dependencies all converge to zero.
    BlockZeroUpstream,
    /// Some dependency disagrees; disagreement is conjectured downstream.
    UpstreamDisagreement,
    /// Some dependency is undetermined.
    UpstreamUndetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockFamily {
    Closed,
    OpenSingleton,
    OpenBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicPrediction {
    pub topic: usize,
    pub block: usize,
    pub verdict: Verdict,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPrediction {
    pub block: usize,
    pub topics: Vec<usize>,
    pub family: BlockFamily,
    /// Common value of an open singleton block.
    pub kappa: Option<f64>,
    /// Per-topic common values of an open multi-topic block.
    pub phi: Option<Vec<f64>>,
    /// Infinity-norm residual of the consistency system (multi-topic blocks).
    pub residual: Option<f64>,
    /// Closed-block magnitudes are computed numerically, not structurally.
    pub alpha_from_oracle: bool,
    /// Set when a modulus consensus is predicted but its magnitude is numerically
    /// zero for this initial state.
    pub genericity_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    /// One entry per topic, in topic order.
    pub topics: Vec<TopicPrediction>,
    pub blocks: Vec<BlockPrediction>,
    pub partition: TopicPartition,
}

impl PredictionReport {
    pub fn verdicts(&self) -> Vec<Verdict> {
        self.topics.iter().map(|t| t.verdict).collect()
    }

    pub fn summary(&self) -> String {
        self.topics.iter().map(|t| format!("{}:{}", t.topic + 1, t.verdict.short())).collect::<Vec<_>>().join(" ")
    }
}

type BlockResult = (Vec<(Verdict, Rule)>, BlockPrediction);

fn block_prediction(block: usize, topics: &[usize], family: BlockFamily) -> BlockPrediction {
    BlockPrediction {
        block,
        topics: topics.to_vec(),
        family,
        kappa: None,
        phi: None,
        residual: None,
        alpha_from_oracle: false,
        genericity_warning: false,
    }
}

/// Closed block: competition or an unbalanced logic graph forces zero; otherwise a
/// modulus consensus whose signs follow the balance partition and whose magnitude
/// comes from the block's numerical limit. `y0` is the full topic-major state.
pub fn predict_closed_block(
    net: &InfluenceNetwork,
    profile: &LogicProfile,
    partition: &TopicPartition,
    block: usize,
    y0: &DVector<f64>,
) -> Result<BlockResult, PredictError> {
    if !partition.closed[block] {
        return Err(PredictError::PreconditionViolation(format!("block {} is open", block + 1)));
    }
    let topics = &partition.blocks[block];
    let s = topics.len();
    let mut summary = block_prediction(block, topics, BlockFamily::Closed);
    if model::has_competition_within(profile, topics) {
        return Ok((vec![(Verdict::ZeroConsensus, Rule::ClosedCompeting); s], summary));
    }
    let c_jj = &profile.submatrices(topics)[0];
    let balance = graph::structural_balance(c_jj);
    let Some(sides) = balance.sides(s) else {
        return Ok((vec![(Verdict::ZeroConsensus, Rule::ClosedUnbalanced); s], summary));
    };

    let n = net.n();
    let a = graph::build_multiplex_pattern(net, profile);
    let idx = oracle::topic_indices(topics, n);
    let a_jj = oracle::submatrix(&a, &idx, &idx);
    let y0_block = DVector::from_fn(idx.len(), |k, _| y0[idx[k]]);
    summary.alpha_from_oracle = true;
    let Ok(limit) = oracle::closed_block_limit(&a_jj, &y0_block, block) else {
        return Ok((vec![(Verdict::Undetermined, Rule::ClosedBalanced); s], summary));
    };
    // magnitude on the V+ side, averaged over the gauge-aligned limit
    let aligned: f64 = (0..s).map(|k| sides[k] * (0..n).map(|i| limit[k * n + i]).sum::<f64>()).sum();
    let magnitude = aligned / (s * n) as f64;
    summary.genericity_warning = magnitude.abs() < GENERICITY_TOL;
    let verdicts = sides
        .iter()
        .map(|&side| (Verdict::Consensus { alpha: (side * magnitude).clamp(-1.0, 1.0) }, Rule::ClosedBalanced))
        .collect();
    Ok((verdicts, summary))
}

enum Upstream {
    Disagreement,
    Undetermined,
    AllZero,
    Values,
}

fn classify_upstream(deps: &[usize], verdicts: &[Option<Verdict>]) -> Result<Upstream, PredictError> {
    let mut resolved = Vec::with_capacity(deps.len());
    for &q in deps {
        match verdicts.get(q).copied().flatten() {
            Some(v) => resolved.push(v),
            None => {
                return Err(PredictError::PreconditionViolation(format!(
                    "topic {} is not resolved before its dependants",
                    q + 1
                )))
            }
        }
    }
    Ok(if resolved.iter().any(Verdict::is_disagreement) {
        Upstream::Disagreement
    } else if resolved.iter().any(|v| matches!(v, Verdict::Undetermined)) {
        Upstream::Undetermined
    } else if resolved.iter().all(|v| matches!(v, Verdict::ZeroConsensus)) {
        Upstream::AllZero
    } else {
        Upstream::Values
    })
}

fn upstream_alpha(verdicts: &[Option<Verdict>], q: usize) -> f64 {
    verdicts[q].and_then(|v| v.alpha()).unwrap_or(0.0)
}

/// Open singleton block `{p}`: consensus at `kappa` iff the per-individual ratios
/// `sum_q alpha_q c_pq,i / sum_q |c_pq,i|` coincide. `upstream` is indexed by topic.
pub fn predict_singleton_block(
    p: usize,
    upstream: &[Option<Verdict>],
    profile: &LogicProfile,
) -> Result<(Verdict, Rule, Option<f64>), PredictError> {
    let deps = profile.dependencies(p);
    if deps.is_empty() {
        return Err(PredictError::PreconditionViolation(format!("topic {} has no dependencies", p + 1)));
    }
    match classify_upstream(&deps, upstream)? {
        Upstream::Disagreement => return Ok((Verdict::ConjecturedDisagreement, Rule::UpstreamDisagreement, None)),
        Upstream::Undetermined => return Ok((Verdict::Undetermined, Rule::UpstreamUndetermined, None)),
        Upstream::AllZero => return Ok((Verdict::ZeroConsensus, Rule::SingletonZeroUpstream, Some(0.0))),
        Upstream::Values => {}
    }
    let ratios: Vec<f64> = (0..profile.n())
        .map(|i| {
            let num: f64 = deps.iter().map(|&q| upstream_alpha(upstream, q) * profile.entry(i, p, q)).sum();
            let den: f64 = deps.iter().map(|&q| profile.entry(i, p, q).abs()).sum();
            num / den
        })
        .collect();
    let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi - lo < CONSISTENCY_TOL {
        let kappa = ratios[0].clamp(-1.0, 1.0);
        Ok((Verdict::Consensus { alpha: kappa }, Rule::SingletonRatio, Some(kappa)))
    } else {
        Ok((Verdict::Disagreement, Rule::SingletonRatio, None))
    }
}

/// Solution of the stacked per-individual consistency equations of an open block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystemSolution {
    pub phi: Vec<f64>,
    pub residual: f64,
}

/// Least-squares solve of, for every individual `i` and topic `k` in the block,
/// `phi_k (1 - c_kk,i) - sum_{r in J, r != k} c_kr,i phi_r = sum_{q in ext} c_kq,i alpha_q`.
pub fn solve_block_system(
    topics: &[usize],
    external: &[usize],
    alphas: &[f64],
    profile: &LogicProfile,
) -> BlockSystemSolution {
    let (n, s) = (profile.n(), topics.len());
    let mut lhs = DMatrix::zeros(n * s, s);
    let mut rhs = DVector::zeros(n * s);
    for i in 0..n {
        for (a, &k) in topics.iter().enumerate() {
            let row = i * s + a;
            let mut diag: f64 = external.iter().map(|&q| profile.entry(i, k, q).abs()).sum();
            for (b, &r) in topics.iter().enumerate() {
                if b != a {
                    let c = profile.entry(i, k, r);
                    diag += c.abs();
                    lhs[(row, b)] = -c;
                }
            }
            lhs[(row, a)] = diag;
            rhs[row] = external.iter().zip(alphas).map(|(&q, &alpha)| alpha * profile.entry(i, k, q)).sum();
        }
    }
    let svd = lhs.clone().svd(true, true);
    let phi = svd.solve(&rhs, 1e-14).unwrap_or_else(|_| DVector::from_element(s, f64::NAN));
    let residual = linalg::inf_norm(&(&lhs * &phi - &rhs));
    BlockSystemSolution { phi: phi.iter().copied().collect(), residual }
}

/// Open multi-topic block: consensus iff the stacked consistency system has a
/// common solution with every component in `[-1, 1]`.
pub fn predict_multi_block(
    topics: &[usize],
    external: &[usize],
    upstream: &[Option<Verdict>],
    profile: &LogicProfile,
) -> Result<(Vec<(Verdict, Rule)>, Option<BlockSystemSolution>), PredictError> {
    let s = topics.len();
    if s < 2 {
        return Err(PredictError::PreconditionViolation("block has a single topic".into()));
    }
    if external.is_empty() {
        return Err(PredictError::PreconditionViolation("block is closed".into()));
    }
    match classify_upstream(external, upstream)? {
        Upstream::Disagreement => {
            return Ok((vec![(Verdict::ConjecturedDisagreement, Rule::UpstreamDisagreement); s], None))
        }
        Upstream::Undetermined => return Ok((vec![(Verdict::Undetermined, Rule::UpstreamUndetermined); s], None)),
        Upstream::AllZero => {
            let solution = BlockSystemSolution { phi: vec![0.0; s], residual: 0.0 };
            return Ok((vec![(Verdict::ZeroConsensus, Rule::BlockZeroUpstream); s], Some(solution)));
        }
        Upstream::Values => {}
    }
    let alphas: Vec<f64> = external.iter().map(|&q| upstream_alpha(upstream, q)).collect();
    let solution = solve_block_system(topics, external, &alphas, profile);
    let bound = 1.0 + CONSISTENCY_TOL;
    let consistent = solution.residual < CONSISTENCY_TOL && solution.phi.iter().all(|phi| phi.abs() <= bound);
    let verdicts = if consistent {
        solution
            .phi
            .iter()
            .map(|&phi| (Verdict::Consensus { alpha: phi.clamp(-1.0, 1.0) }, Rule::BlockCommonSolution))
            .collect()
    } else {
        vec![(Verdict::Disagreement, Rule::BlockCommonSolution); s]
    };
    Ok((verdicts, Some(solution)))
}

/// Predicts every topic's outcome. `x0` is individual-major.
pub fn predict_all(
    net: &InfluenceNetwork,
    profile: &LogicProfile,
    x0: &DVector<f64>,
) -> Result<PredictionReport, PredictError> {
    let (n, m) = (net.n(), profile.m());
    if profile.n() != n {
        return Err(PredictError::PreconditionViolation(format!(
            "network has {n} individuals but profile has {}",
            profile.n()
        )));
    }
    if x0.len() != n * m {
        return Err(PredictError::DimensionMismatch { expected: n * m, found: x0.len() });
    }
    let y0 = dynamics::to_topic_major(x0, n, m);
    let partition = graph::condense_logic(profile);
    let mut resolved: Vec<Option<(Verdict, Rule)>> = vec![None; m];
    let mut blocks = Vec::with_capacity(partition.block_count());

    for (b, topics) in partition.blocks.iter().enumerate() {
        let upstream: Vec<Option<Verdict>> = resolved.iter().map(|r| r.map(|(v, _)| v)).collect();
        let (verdicts, summary) = if partition.closed[b] {
            predict_closed_block(net, profile, &partition, b, &y0)?
        } else if topics.len() == 1 {
            let (verdict, rule, kappa) = predict_singleton_block(topics[0], &upstream, profile)?;
            let mut summary = block_prediction(b, topics, BlockFamily::OpenSingleton);
            summary.kappa = kappa;
            (vec![(verdict, rule)], summary)
        } else {
            let external = &partition.external_dependencies[b];
            let (verdicts, solution) = predict_multi_block(topics, external, &upstream, profile)?;
            let mut summary = block_prediction(b, topics, BlockFamily::OpenBlock);
            if let Some(sol) = solution {
                summary.residual = Some(sol.residual);
                summary.phi = Some(sol.phi);
            }
            (verdicts, summary)
        };
        for (&p, vr) in topics.iter().zip(verdicts) {
            resolved[p] = Some(vr);
        }
        blocks.push(summary);
    }

    let topics = resolved
        .into_iter()
        .enumerate()
        .map(|(p, vr)| {
            let (verdict, rule) = vr.expect("every topic belongs to a block");
            TopicPrediction { topic: p, block: partition.block_of[p], verdict, rule }
        })
        .collect();
    Ok(PredictionReport { topics, blocks, partition })
}
