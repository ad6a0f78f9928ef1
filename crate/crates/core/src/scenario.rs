//! Scenario configuration files and seeded random scenario generation.
//!
//! A scenario is a TOML document with four sections:
//!
//! ```toml
//! name = "example"
//!
//! [influence]
//! weights = [[0.5, 0.5], [0.5, 0.5]]      # or: generator = { n = 6, seed = 1 }
//!
//! [logic]
//! matrices = [[[1.0, 0.0], [0.5, 0.5]]]   # one per individual, or a single shared one
//! # or: library = { a = [[...]] } with assignment = ["a", "a"]
//! # or: generator = { m = 3, seed = 2, ... }
//!
//! [initial]
//! values = [1.0, -0.2, 0.3, 0.4]           # individual-major, or: seed = 7
//!
//! [simulation]                             # optional
//! tol = 1e-12
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph;
use crate::linalg;
use crate::model::{self, InfluenceNetwork, LogicProfile, ModelError};
use crate::oracle::Tolerances;

pub const MAX_GENERATION_ATTEMPTS: usize = 100;
const MIN_MAGNITUDE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid `{field}`: {source}")]
    Validation { field: String, source: ModelError },
    #[error(transparent)]
    Generation(#[from] GenerationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error("no valid sample after {attempts} attempts: {reason}")]
    GenerationExhausted { attempts: usize, reason: String },
    #[error("infeasible generator parameters: {0}")]
    Infeasible(String),
}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub influence: InfluenceConfig,
    pub logic: LogicConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    /// Generator parameters and seed a materialised config was produced from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<GeneratedFrom>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<InfluenceGenerator>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfluenceGenerator {
    pub n: usize,
    #[serde(default = "default_extra_edge_prob")]
    pub extra_edge_prob: f64,
    pub seed: u64,
}

fn default_extra_edge_prob() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<BTreeMap<String, Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<LogicGenerator>,
}

/// How the shared sign pattern of the logic matrices is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Each off-diagonal cell is negative with probability `sign_flip_prob`.
    #[default]
    Random,
    /// Topics get random sides; cross-side cells negative, same-side positive.
    Balanced,
    /// Random signs, resampled until some diagonal block is unbalanced.
    Unbalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicGenerator {
    pub m: usize,
    /// Probability of each optional off-diagonal pattern cell.
    #[serde(default = "default_density")]
    pub density: f64,
    /// Explicit 0/1 sparsity pattern; overrides `density` and `irreducible`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<Vec<Vec<u8>>>,
    /// Add a directed topic ring so the pattern is strongly connected.
    #[serde(default)]
    pub irreducible: bool,
    #[serde(default)]
    pub signs: SignMode,
    #[serde(default = "default_sign_flip_prob")]
    pub sign_flip_prob: f64,
    /// Flip the sign of one off-diagonal cell for a random proper subset of
    /// individuals, creating a competing interdependence.
    #[serde(default)]
    pub competition: bool,
    pub seed: u64,
}

fn default_density() -> f64 {
    0.3
}

fn default_sign_flip_prob() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub tol: f64,
    pub consensus_tol: f64,
    pub max_steps: usize,
    pub agreement_tol: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        SimulationConfig {
            tol: t.sim_tol,
            consensus_tol: t.consensus_tol,
            max_steps: t.max_steps,
            agreement_tol: t.agreement,
        }
    }
}

impl SimulationConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            sim_tol: self.tol,
            consensus_tol: self.consensus_tol,
            max_steps: self.max_steps,
            agreement: self.agreement_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedFrom {
    pub spec: GeneratorSpec,
    pub seed: u64,
}

/// A validated, fully materialised model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub net: InfluenceNetwork,
    pub profile: LogicProfile,
    /// Individual-major initial opinions.
    pub x0: DVector<f64>,
    pub tolerances: Tolerances,
    pub output_dir: Option<PathBuf>,
}

fn parse_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse { field: field.to_string(), message: message.into() }
}

fn invalid(field: impl Into<String>) -> impl FnOnce(ModelError) -> ConfigError {
    let field = field.into();
    move |source| ConfigError::Validation { field, source }
}

/// Field path of a `toml` error, extracted from its message where possible.
fn toml_field(err: &toml::de::Error) -> String {
    let msg = err.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "<document>".to_string()
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse { field: toml_field(&e), message: e.to_string() })
}

pub fn parse_generator_spec(text: &str) -> Result<GeneratorSpec, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse { field: toml_field(&e), message: e.to_string() })
}

/// Reads, parses and validates a scenario file.
pub fn load_config(path: &Path) -> Result<(ScenarioConfig, Scenario), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let config = parse_config(&text)?;
    let default_name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let mut scenario = config.resolve()?;
    if config.name.is_none() {
        if let Some(name) = default_name {
            scenario.name = name;
        }
    }
    Ok((config, scenario))
}

fn to_matrix(rows: &Matrix, field: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(parse_err(field, "matrix is empty"));
    }
    linalg::from_rows(rows).ok_or_else(|| parse_err(field, "rows have different lengths"))
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialise")
    }

    /// Builds and validates the model described by this config.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let weights = match (&self.influence.weights, &self.influence.generator) {
            (Some(w), None) => to_matrix(w, "influence.weights")?,
            (None, Some(g)) => generate_influence(g.n, g.extra_edge_prob, &mut ChaCha8Rng::seed_from_u64(g.seed))?,
            (Some(_), Some(_)) => {
                return Err(parse_err("influence", "give either `weights` or `generator`, not both"))
            }
            (None, None) => return Err(parse_err("influence.weights", "missing field (or `influence.generator`)")),
        };
        let net = model::validate_influence(weights).map_err(invalid("influence.weights"))?;
        let n = net.n();

        let raw = self.logic_matrices(n)?;
        let mut logic = Vec::with_capacity(n);
        for (i, c) in raw.into_iter().enumerate() {
            logic.push(model::validate_logic(c).map_err(invalid(format!("logic matrix {}", i + 1)))?);
        }
        let profile = model::validate_profile(logic).map_err(invalid("logic"))?;
        let m = profile.m();

        let x0 = match (&self.initial.values, self.initial.seed) {
            (Some(v), None) => {
                if v.len() != n * m {
                    return Err(invalid("initial.values")(ModelError::StateLength { expected: n * m, found: v.len() }));
                }
                DVector::from_vec(v.clone())
            }
            (None, Some(seed)) => random_initial_state(n * m, seed),
            (Some(_), Some(_)) => return Err(parse_err("initial", "give either `values` or `seed`, not both")),
            (None, None) => return Err(parse_err("initial.values", "missing field (or `initial.seed`)")),
        };
        model::check_opinions(&x0).map_err(invalid("initial.values"))?;

        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".to_string()),
            net,
            profile,
            x0,
            tolerances: self.simulation.tolerances(),
            output_dir: self.output.as_ref().and_then(|o| o.dir.clone()),
        })
    }

    fn logic_matrices(&self, n: usize) -> Result<Vec<DMatrix<f64>>, ConfigError> {
        let l = &self.logic;
        let given = [l.matrices.is_some(), l.library.is_some(), l.generator.is_some()];
        match given.iter().filter(|&&g| g).count() {
            0 => return Err(parse_err("logic.matrices", "missing field (or `logic.library` / `logic.generator`)")),
            1 => {}
            _ => return Err(parse_err("logic", "give exactly one of `matrices`, `library`, `generator`")),
        }
        if let Some(list) = &l.matrices {
            let mats = list
                .iter()
                .enumerate()
                .map(|(i, rows)| to_matrix(rows, &format!("logic.matrices[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            return match mats.len() {
                1 => Ok(vec![mats[0].clone(); n]),
                k if k == n => Ok(mats),
                k => Err(parse_err("logic.matrices", format!("expected 1 or {n} matrices, found {k}"))),
            };
        }
        if let Some(library) = &l.library {
            let assignment =
                l.assignment.as_ref().ok_or_else(|| parse_err("logic.assignment", "missing field"))?;
            if assignment.len() != n {
                return Err(parse_err(
                    "logic.assignment",
                    format!("expected {n} entries, found {}", assignment.len()),
                ));
            }
            return assignment
                .iter()
                .map(|key| {
                    let rows = library
                        .get(key)
                        .ok_or_else(|| parse_err("logic.assignment", format!("unknown library entry `{key}`")))?;
                    to_matrix(rows, &format!("logic.library.{key}"))
                })
                .collect();
        }
        let g = l.generator.as_ref().expect("checked above");
        Ok(generate_logic(n, g)?)
    }
}

pub fn random_initial_state(len: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(len, |_, _| rng.gen_range(-1.0..=1.0))
}

/// Ring plus self-loops plus random extra edges, each with a weight in `[0.1, 1]`,
/// rows normalised. Always strongly connected with a positive diagonal.
pub fn generate_influence(n: usize, extra_edge_prob: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>, GenerationError> {
    if n == 0 {
        return Err(GenerationError::Infeasible("n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&extra_edge_prob) {
        return Err(GenerationError::Infeasible(format!("extra_edge_prob {extra_edge_prob} outside [0, 1]")));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = rng.gen_range(MIN_MAGNITUDE..=1.0);
        if n > 1 {
            w[(i, (i + 1) % n)] = rng.gen_range(MIN_MAGNITUDE..=1.0);
        }
        for j in 0..n {
            if w[(i, j)] == 0.0 && rng.gen_bool(extra_edge_prob) {
                w[(i, j)] = rng.gen_range(MIN_MAGNITUDE..=1.0);
            }
        }
        let sum: f64 = w.row(i).sum();
        w.row_mut(i).unscale_mut(sum);
    }
    Ok(w)
}

fn sample_pattern(g: &LogicGenerator, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<bool>>, GenerationError> {
    let m = g.m;
    if let Some(p) = &g.pattern {
        if p.len() != m || p.iter().any(|r| r.len() != m) {
            return Err(GenerationError::Infeasible(format!("pattern must be {m}x{m}")));
        }
        return Ok((0..m).map(|a| (0..m).map(|b| a == b || p[a][b] != 0).collect()).collect());
    }
    if !(0.0..=1.0).contains(&g.density) {
        return Err(GenerationError::Infeasible(format!("density {} outside [0, 1]", g.density)));
    }
    let mut pat = vec![vec![false; m]; m];
    for (a, row) in pat.iter_mut().enumerate() {
        row[a] = true;
        if g.irreducible && m > 1 {
            row[(a + 1) % m] = true;
        }
        for cell in row.iter_mut() {
            if !*cell && rng.gen_bool(g.density) {
                *cell = true;
            }
        }
    }
    Ok(pat)
}

fn sample_signs(pat: &[Vec<bool>], g: &LogicGenerator, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = pat.len();
    let sides: Vec<f64> = (0..m).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    (0..m)
        .map(|a| {
            (0..m)
                .map(|b| {
                    if !pat[a][b] {
                        0.0
                    } else if a == b {
                        1.0
                    } else if g.signs == SignMode::Balanced {
                        sides[a] * sides[b]
                    } else if rng.gen_bool(g.sign_flip_prob) {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect()
}

fn has_unbalanced_block(signs: &DMatrix<f64>, pat: &[Vec<bool>]) -> bool {
    let m = pat.len();
    let pattern = DMatrix::from_fn(m, m, |a, b| if pat[a][b] { 1.0 } else { 0.0 });
    graph::strongly_connected_components(&model::pattern_adjacency(&pattern)).iter().any(|block| {
        let sub = DMatrix::from_fn(block.len(), block.len(), |a, b| signs[(block[a], block[b])]);
        !graph::structural_balance(&sub).balanced
    })
}

/// Logic matrices for `n` individuals on a shared pattern, signs and magnitudes as
/// requested by `g`; rejection-sampled until every matrix validates.
pub fn generate_logic(n: usize, g: &LogicGenerator) -> Result<Vec<DMatrix<f64>>, GenerationError> {
    let m = g.m;
    if m == 0 || n == 0 {
        return Err(GenerationError::Infeasible("n and m must be positive".into()));
    }
    if !(0.0..=1.0).contains(&g.sign_flip_prob) {
        return Err(GenerationError::Infeasible(format!("sign_flip_prob {} outside [0, 1]", g.sign_flip_prob)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut last_reason = String::new();
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let pat = sample_pattern(g, &mut rng)?;
        let base = linalg::from_rows(&sample_signs(&pat, g, &mut rng)).expect("square");
        if g.signs == SignMode::Unbalanced && !has_unbalanced_block(&base, &pat) {
            last_reason = "sign pattern is balanced".into();
            continue;
        }
        let off_diagonal: Vec<(usize, usize)> =
            (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).filter(|&(a, b)| a != b && pat[a][b]).collect();
        let mut flips = vec![Vec::new(); n];
        if g.competition {
            if n < 2 || off_diagonal.is_empty() {
                return Err(GenerationError::Infeasible(
                    "competition needs two individuals and an off-diagonal dependency".into(),
                ));
            }
            let cell = *off_diagonal.choose(&mut rng).expect("non-empty");
            let mut who: Vec<usize> = (0..n).collect();
            who.shuffle(&mut rng);
            let count = rng.gen_range(1..n);
            for &i in &who[..count] {
                flips[i].push(cell);
            }
        }
        let mats: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                let mut c = DMatrix::from_fn(m, m, |a, b| {
                    if pat[a][b] {
                        base[(a, b)] * rng.gen_range(MIN_MAGNITUDE..=1.0)
                    } else {
                        0.0
                    }
                });
                for &(a, b) in &flips[i] {
                    c[(a, b)] = -c[(a, b)];
                }
                for a in 0..m {
                    let s: f64 = c.row(a).iter().map(|x| x.abs()).sum();
                    c.row_mut(a).unscale_mut(s);
                }
                c
            })
            .collect();
        let validated: Result<Vec<_>, _> = mats.iter().cloned().map(model::validate_logic).collect();
        match validated.and_then(model::validate_profile) {
            Ok(_) => return Ok(mats),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(GenerationError::GenerationExhausted { attempts: MAX_GENERATION_ATTEMPTS, reason: last_reason })
}

/// Parameters for a complete random scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_extra_edge_prob")]
    pub extra_edge_prob: f64,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<Vec<Vec<u8>>>,
    #[serde(default)]
    pub irreducible: bool,
    #[serde(default)]
    pub signs: SignMode,
    #[serde(default = "default_sign_flip_prob")]
    pub sign_flip_prob: f64,
    #[serde(default)]
    pub competition: bool,
}

/// Samples a complete scenario and materialises it as an explicit config. The same
/// `(spec, seed)` always yields the same config.
pub fn generate_scenario(spec: &GeneratorSpec, seed: u64) -> Result<ScenarioConfig, GenerationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = generate_influence(spec.n, spec.extra_edge_prob, &mut rng)?;
    let logic = LogicGenerator {
        m: spec.m,
        density: spec.density,
        pattern: spec.pattern.clone(),
        irreducible: spec.irreducible,
        signs: spec.signs,
        sign_flip_prob: spec.sign_flip_prob,
        competition: spec.competition,
        seed: rng.gen(),
    };
    let mats = generate_logic(spec.n, &logic)?;
    Ok(ScenarioConfig {
        name: Some(format!("generated_{seed}")),
        influence: InfluenceConfig { weights: Some(linalg::to_rows(&w)), generator: None },
        logic: LogicConfig { matrices: Some(mats.iter().map(linalg::to_rows).collect()), ..Default::default() },
        initial: InitialConfig { values: None, seed: Some(rng.gen()) },
        simulation: SimulationConfig::default(),
        output: None,
        provenance: Some(GeneratedFrom { spec: spec.clone(), seed }),
    })
}
