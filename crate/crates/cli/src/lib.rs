//! File-level plumbing behind the `opinion` binary: scenario lookup, the run
//! pipeline, and deterministic, atomically written outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use opinion_core::dynamics::{self, Ordering, SimulationOptions, Trajectory};
use opinion_core::oracle::{self, Tolerances, VerificationReport};
use opinion_core::predict::{self, PredictionReport};
use opinion_core::scenario::{self, Scenario, ScenarioConfig};

pub const EXIT_AGREE: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PREDICTION_FILE: &str = "prediction.json";
pub const VERIFICATION_FILE: &str = "verification.json";

/// Configs shipped with the binary, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("scenario_fig3", include_str!("../scenarios/scenario_fig3.toml")),
    ("scenario_fig4", include_str!("../scenarios/scenario_fig4.toml")),
    ("space_example", include_str!("../scenarios/space_example.toml")),
    ("space_example_negative", include_str!("../scenarios/space_example_negative.toml")),
    ("homogeneous", include_str!("../scenarios/homogeneous.toml")),
    ("regression_seed_1", include_str!("../scenarios/regression_seed_1.toml")),
    ("regression_seed_2", include_str!("../scenarios/regression_seed_2.toml")),
    ("regression_seed_3", include_str!("../scenarios/regression_seed_3.toml")),
    ("regression_seed_4", include_str!("../scenarios/regression_seed_4.toml")),
    ("regression_seed_5", include_str!("../scenarios/regression_seed_5.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub max_steps: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, tol: &mut Tolerances) {
        if let Some(t) = self.tol {
            tol.sim_tol = t;
        }
        if let Some(s) = self.max_steps {
            tol.max_steps = s;
        }
    }
}

/// Loads a config from a path, falling back to a bundled config of that name.
pub fn load(arg: &str, overrides: &Overrides) -> Result<(ScenarioConfig, Scenario)> {
    let path = Path::new(arg);
    let (config, mut scenario) = if path.exists() {
        scenario::load_config(path).with_context(|| format!("loading {arg}"))?
    } else if let Some(text) = bundled(arg) {
        let config = scenario::parse_config(text).with_context(|| format!("bundled config {arg}"))?;
        let mut scenario = config.resolve().with_context(|| format!("bundled config {arg}"))?;
        if config.name.is_none() {
            scenario.name = arg.to_string();
        }
        (config, scenario)
    } else {
        bail!("no such file or bundled config: {arg}");
    };
    overrides.apply(&mut scenario.tolerances);
    Ok((config, scenario))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Trajectory as CSV: `t`, then `x{i}_t{p}` (one-based) in individual-major order.
pub fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let (n, m) = (traj.n, traj.m);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        for p in 0..m {
            header.push(format!("x{}_t{}", i + 1, p + 1));
        }
    }
    w.write_record(&header)?;
    for (t, state) in traj.states.iter().enumerate() {
        let mut record = vec![t.to_string()];
        for i in 0..n {
            for p in 0..m {
                record.push(traj.opinion(state, i, p).to_string());
            }
        }
        w.write_record(&record)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?)
}

pub fn simulate_scenario(s: &Scenario) -> Result<Trajectory> {
    let system = dynamics::build_system(&s.net, &s.profile, Ordering::IndividualMajor);
    let options = SimulationOptions { tol: s.tolerances.sim_tol, max_steps: s.tolerances.max_steps };
    Ok(dynamics::simulate(&system, &s.x0, &options)?)
}

pub fn predict_scenario(s: &Scenario) -> Result<PredictionReport> {
    Ok(predict::predict_all(&s.net, &s.profile, &s.x0)?)
}

pub fn verify_scenario(s: &Scenario) -> Result<VerificationReport> {
    Ok(oracle::cross_validate(&s.net, &s.profile, &s.x0, &s.tolerances)?)
}

/// Outcome of the full pipeline on one scenario.
#[derive(Debug)]
pub struct RunOutcome {
    pub name: String,
    pub report: VerificationReport,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.agreement {
            EXIT_AGREE
        } else {
            EXIT_MISMATCH
        }
    }
}

/// Simulates, predicts and cross-checks one scenario, writing the trajectory,
/// prediction and verification files into `out`.
pub fn run_scenario(s: &Scenario, out: &Path) -> Result<RunOutcome> {
    let traj = simulate_scenario(s)?;
    let report = verify_scenario(s)?;
    let files = vec![out.join(TRAJECTORY_FILE), out.join(PREDICTION_FILE), out.join(VERIFICATION_FILE)];
    write_atomic(&files[0], &trajectory_csv(&traj)?)?;
    write_atomic(&files[1], &to_json(&report.prediction)?)?;
    write_atomic(&files[2], &to_json(&report)?)?;
    Ok(RunOutcome { name: s.name.clone(), report, files })
}

/// One line per topic: verdict, rule and the simulated outcome.
pub fn describe(report: &VerificationReport) -> String {
    let mut out = String::new();
    for t in &report.topics {
        let predicted = match t.predicted.alpha() {
            Some(a) => format!("{} ({a:+.6})", t.predicted.short()),
            None => t.predicted.short().to_string(),
        };
        let simulated = match t.simulated {
            dynamics::TopicOutcome::Consensus { value } => format!("consensus {value:+.6}"),
            dynamics::TopicOutcome::Disagreement { spread } => format!("spread {spread:.3e}"),
        };
        out.push_str(&format!(
            "topic {}: {predicted:<14} rule {:<24} simulated {simulated:<22} oracle dev {:.1e}\n",
            t.topic + 1,
            format!("{:?}", t.rule),
            t.oracle_deviation
        ));
    }
    out.push_str(&format!(
        "agreement: {} (converged at step {}, fixed-point residual {:.1e})\n",
        report.agreement, report.converged_at, report.fixed_point_residual
    ));
    out
}

#[derive(Debug, Serialize)]
pub struct BatchEntry {
    pub config: String,
    pub exit_code: i32,
    pub summary: String,
}

/// Runs every `*.toml` in `dir` in parallel; each scenario writes into
/// `out/<file stem>/`. Entries come back sorted by file name.
pub fn run_batch(dir: &Path, out: &Path, overrides: &Overrides) -> Result<Vec<BatchEntry>> {
    let mut configs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    configs.sort();
    let entries = configs
        .par_iter()
        .map(|path| {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let result = load(&path.to_string_lossy(), overrides).and_then(|(_, s)| run_scenario(&s, &out.join(&stem)));
            match result {
                Ok(outcome) => BatchEntry {
                    config: stem,
                    exit_code: outcome.exit_code(),
                    summary: outcome.report.prediction.summary(),
                },
                Err(e) => BatchEntry { config: stem, exit_code: EXIT_ERROR, summary: format!("{e:#}") },
            }
        })
        .collect();
    Ok(entries)
}

/// Errors dominate mismatches, which dominate agreement.
pub fn combined_exit_code(codes: impl IntoIterator<Item = i32>) -> i32 {
    codes.into_iter().fold(EXIT_AGREE, |acc, c| match (acc, c) {
        (EXIT_ERROR, _) | (_, EXIT_ERROR) => EXIT_ERROR,
        (EXIT_MISMATCH, _) | (_, EXIT_MISMATCH) => EXIT_MISMATCH,
        _ => EXIT_AGREE,
    })
}
