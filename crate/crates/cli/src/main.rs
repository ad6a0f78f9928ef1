use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use opinion_cli::{
    combined_exit_code, describe, load, predict_scenario, run_batch, run_scenario, simulate_scenario, to_json,
    trajectory_csv, verify_scenario, write_atomic, Overrides, EXIT_AGREE, EXIT_ERROR, EXIT_MISMATCH,
    PREDICTION_FILE, TRAJECTORY_FILE, VERIFICATION_FILE,
};
use opinion_core::dynamics;
use opinion_core::graph;
use opinion_core::model;
use opinion_core::scenario::{generate_scenario, parse_generator_spec};

#[derive(Parser)]
#[command(name = "opinion", version, about = "Multi-topic opinion dynamics: simulate, predict, verify")]
struct Cli {
    /// Simulation step tolerance (overrides the config).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Maximum simulation steps (overrides the config).
    #[arg(long, global = true)]
    max_steps: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config against the model assumptions.
    Validate { config: String },
    /// Structural per-topic prediction.
    Predict { config: String },
    /// Simulate to convergence and write the trajectory CSV.
    Simulate { config: String },
    /// Compare prediction, fixed-point limits and simulation.
    Verify { config: String },
    /// Simulate, predict and verify, writing all three output files.
    Run { config: String },
    /// Materialise a random scenario from a generator spec file.
    Generate {
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Run every config in a directory.
    Batch { dir: PathBuf },
}

fn out_dir(cli: &Cli, name: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn execute(cli: &Cli) -> Result<i32> {
    let overrides = Overrides { tol: cli.tol, max_steps: cli.max_steps };
    match &cli.command {
        Command::Validate { config } => {
            let (_, s) = load(config, &overrides)?;
            let partition = graph::condense_logic(&s.profile);
            println!("{}: valid, n = {}, m = {}", s.name, s.net.n(), s.profile.m());
            if !s.net.renormalized_rows().is_empty() {
                let rows: Vec<usize> = s.net.renormalized_rows().iter().map(|r| r + 1).collect();
                println!("renormalised influence rows: {rows:?}");
            }
            for (b, block) in partition.blocks.iter().enumerate() {
                let topics: Vec<usize> = block.iter().map(|t| t + 1).collect();
                let kind = if partition.closed[b] { "closed" } else { "open" };
                println!("block {}: topics {topics:?} ({kind})", b + 1);
            }
            for p in 0..s.profile.m() {
                let witnesses = model::detect_competing(&s.profile, p);
                if let Some(w) = witnesses.first() {
                    println!(
                        "topic {}: competing dependence on topic {} (individuals {} and {})",
                        p + 1,
                        w.q + 1,
                        w.i + 1,
                        w.j + 1
                    );
                }
            }
            Ok(EXIT_AGREE)
        }
        Command::Predict { config } => {
            let (_, s) = load(config, &overrides)?;
            let report = predict_scenario(&s)?;
            for t in &report.topics {
                println!("topic {}: {:?} ({:?})", t.topic + 1, t.verdict, t.rule);
            }
            write_atomic(&out_dir(cli, &s.name).join(PREDICTION_FILE), &to_json(&report)?)?;
            Ok(EXIT_AGREE)
        }
        Command::Simulate { config } => {
            let (_, s) = load(config, &overrides)?;
            let traj = simulate_scenario(&s)?;
            let outcomes = dynamics::detect_per_topic_outcome(&traj, s.tolerances.consensus_tol)?;
            println!("converged at step {}", traj.converged_at.unwrap_or(0));
            for (p, o) in outcomes.iter().enumerate() {
                println!("topic {}: {o:?}", p + 1);
            }
            write_atomic(&out_dir(cli, &s.name).join(TRAJECTORY_FILE), &trajectory_csv(&traj)?)?;
            Ok(EXIT_AGREE)
        }
        Command::Verify { config } => {
            let (_, s) = load(config, &overrides)?;
            let report = verify_scenario(&s)?;
            print!("{}", describe(&report));
            write_atomic(&out_dir(cli, &s.name).join(VERIFICATION_FILE), &to_json(&report)?)?;
            Ok(if report.agreement { EXIT_AGREE } else { EXIT_MISMATCH })
        }
        Command::Run { config } => {
            let (_, s) = load(config, &overrides)?;
            let outcome = run_scenario(&s, &out_dir(cli, &s.name))?;
            print!("{}", describe(&outcome.report));
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            Ok(outcome.exit_code())
        }
        Command::Generate { spec, seed } => {
            let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec = parse_generator_spec(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let config = generate_scenario(&spec, *seed)?;
            config.resolve().context("generated config failed validation")?;
            let text = config.to_toml();
            match &cli.out {
                Some(path) => write_atomic(path, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(EXIT_AGREE)
        }
        Command::Batch { dir } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let entries = run_batch(dir, &out, &overrides)?;
            for e in &entries {
                println!("{:<32} exit {}  {}", e.config, e.exit_code, e.summary);
            }
            write_atomic(&out.join("batch.json"), &to_json(&entries)?)?;
            Ok(combined_exit_code(entries.iter().map(|e| e.exit_code)))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors share the operational exit code; 2 is reserved for mismatches
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_AGREE };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}
