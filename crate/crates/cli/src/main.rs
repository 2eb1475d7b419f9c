//! `qtrack`: oracle, learning, comparison and evaluation runs from a JSON
//! experiment description.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qtrack::evaluation::{rms_error, rms_to_reference, simulate_gain, weight_errors, MetricsRow};
use qtrack::experiment::{run_compare, run_learn, run_oracle, ExperimentConfig, OracleOutput};
use qtrack::io;
use qtrack::learner::policy_improvement;
use qtrack::linalg;
use qtrack::Error;

#[derive(Parser)]
#[command(name = "qtrack", version, about = "Q-learning tracking control on a moving reference horizon")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-based H, gain and structure report.
    Oracle(Common),
    /// Online learning with weight-error traces.
    Learn(Common),
    /// Proposed method, baseline and optimum on the reference suite.
    Compare(Common),
    /// Evaluate previously learned weights on the reference suite.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Weight file from `learn`; defaults to `<out>/weights.csv`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the learner seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Learn from a single batch only.
    #[arg(long)]
    stop_after_first_vi: bool,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Json(serde_json::Error),
    Io(std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Json(e) => write!(f, "config: {e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::ExcitationDeficient { .. }) => 2,
            CliError::Core(Error::DivergedState { .. }) => 3,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Loaded config plus the bytes it was hashed from.
struct Run {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
    files: Vec<String>,
}

impl Run {
    fn load(common: &Common) -> CliResult<Self> {
        let raw = fs::read(&common.config)?;
        let mut cfg: ExperimentConfig = serde_json::from_slice(&raw)?;
        if let Some(seed) = common.seed {
            cfg.learner.seed = seed;
        }
        if common.stop_after_first_vi {
            cfg.learner.stop_after_first_vi = true;
        }
        cfg.validate()?;
        fs::create_dir_all(&common.out)?;
        Ok(Self {
            cfg,
            hash: hex::encode(Sha256::digest(&raw)),
            out: common.out.clone(),
            files: Vec::new(),
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.learner.seed
    }

    fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        self.files.push(name.to_owned());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        std::io::Write::write_all(&mut f, b"\n")?;
        Ok(())
    }

    fn finish(mut self, command: &str) -> CliResult<()> {
        self.files.sort();
        let manifest = Manifest {
            command: command.to_owned(),
            config_sha256: self.hash.clone(),
            seed: self.seed(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            stop_after_first_vi: self.cfg.learner.stop_after_first_vi,
            outputs: self.files.clone(),
            config: self.cfg.clone(),
        };
        self.write_json(&format!("{command}.manifest.json"), &manifest)
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    seed: u64,
    version: String,
    stop_after_first_vi: bool,
    outputs: Vec<String>,
    /// Effective configuration after command-line overrides.
    config: ExperimentConfig,
}

#[derive(Serialize)]
struct StructureJson {
    dim: usize,
    free_entries: usize,
    iterations: usize,
    max_h: f64,
    max_structural: f64,
    relative_structural: f64,
    h_x_r0: Vec<Vec<f64>>,
    h_r0_r0: Vec<Vec<f64>>,
    h_x_r0_vs_minus_q: f64,
    h_r0_r0_vs_q: f64,
    closed_loop_radius: f64,
}

fn write_oracle_files(run: &mut Run, oracle: &OracleOutput) -> CliResult<()> {
    let layout = oracle.solution.layout;
    let names = io::augmented_names(&layout);
    io::write_matrix(run.create("oracle_H.csv")?, &oracle.solution.h, &names)?;
    io::write_weights(run.create("oracle_weights.csv")?, &oracle.pattern, &oracle.weights)?;
    let gain_names = names[..layout.n]
        .iter()
        .cloned()
        .chain(names[layout.r(1)..].iter().cloned())
        .collect::<Vec<_>>();
    io::write_matrix(
        run.create("oracle_gain.csv")?,
        oracle.solution.gain.matrix(),
        &gain_names,
    )?;
    Ok(())
}

fn cmd_oracle(common: &Common) -> CliResult<()> {
    let mut run = Run::load(common)?;
    let oracle = run_oracle(&run.cfg)?;
    write_oracle_files(&mut run, &oracle)?;
    let r = &oracle.report;
    let report = StructureJson {
        dim: r.dim,
        free_entries: r.free_entries,
        iterations: oracle.solution.iterations(),
        max_h: r.max_h,
        max_structural: r.max_structural,
        relative_structural: r.relative_structural(),
        h_x_r0: linalg::to_rows(&r.h_x_r0),
        h_r0_r0: linalg::to_rows(&r.h_r0_r0),
        h_x_r0_vs_minus_q: r.h_x_r0_vs_minus_q,
        h_r0_r0_vs_q: r.h_r0_r0_vs_q,
        closed_loop_radius: r.closed_loop_radius,
    };
    run.write_json("structure.json", &report)?;
    let seed = run.seed();
    io::write_tidy(
        run.create("convergence.csv")?,
        seed,
        &[("max_abs_change".into(), oracle.solution.changes.clone())],
    )?;
    println!(
        "H {}x{}, {} free entries, {} iterations, structural residual {:.3e} (relative)",
        r.dim,
        r.dim,
        r.free_entries,
        oracle.solution.iterations(),
        r.relative_structural()
    );
    run.finish("oracle")
}

fn cmd_learn(common: &Common) -> CliResult<()> {
    let mut run = Run::load(common)?;
    let oracle = run_oracle(&run.cfg)?;
    let learned = run_learn(&run.cfg, Some(&oracle))?;
    let seed = run.seed();
    io::write_weights(run.create("weights.csv")?, &oracle.pattern, &learned.weights)?;
    let layout = oracle.solution.layout;
    let names = io::augmented_names(&layout);
    let gain_names = names[..layout.n]
        .iter()
        .cloned()
        .chain(names[layout.r(1)..].iter().cloned())
        .collect::<Vec<_>>();
    io::write_matrix(run.create("gain.csv")?, learned.gain.matrix(), &gain_names)?;
    io::write_step_log(
        run.create("steps.csv")?,
        seed,
        "proposed",
        &learned.trajectory,
        &learned.references,
    )?;
    io::write_iteration_log(run.create("iterations.csv")?, seed, &learned.rounds)?;
    let trace = |pick: fn((f64, f64)) -> f64| -> Vec<f64> {
        learned
            .rounds
            .iter()
            .flat_map(|r| r.iterations.iter().filter_map(|i| i.errors.map(pick)))
            .collect()
    };
    io::write_tidy(
        run.create("plot_weight_errors.csv")?,
        seed,
        &[("e_I".into(), trace(|e| e.0)), ("e_II".into(), trace(|e| e.1))],
    )?;
    let (e_i, e_ii) = weight_errors(&learned.weights, &oracle.weights)?;
    let iterations: usize = learned.rounds.iter().map(|r| r.iterations.len()).sum();
    println!(
        "learned {} weights from {} steps ({} value-iteration sweeps): e_I {e_i:.3e}, e_II {e_ii:.3e}",
        learned.weights.len(),
        learned.trajectory.len(),
        iterations
    );
    run.finish("learn")
}

fn trajectory_series(
    out: &mut Vec<(String, Vec<f64>)>,
    reference: &str,
    coord: usize,
    runs: &[(&str, &qtrack::plant::Trajectory)],
    refs: &[nalgebra::DVector<f64>],
) {
    out.push((
        format!("{reference}/reference"),
        refs.iter().map(|r| r[coord]).collect(),
    ));
    for (method, traj) in runs {
        out.push((format!("{reference}/{method}"), traj.coordinate(coord)));
    }
}

fn cmd_compare(common: &Common) -> CliResult<()> {
    let mut run = Run::load(common)?;
    let cmp = run_compare(&run.cfg)?;
    let seed = run.seed();
    let coord = run.cfg.tracked_coordinate()?;
    qtrack::evaluation::write_metrics(run.create("metrics.csv")?, &cmp.rows)?;
    let mut series = Vec::new();
    for r in &cmp.runs {
        let mut methods = vec![("optimal", &r.optimal), ("proposed", &r.learned)];
        if let Some(b) = &r.baseline {
            methods.push(("baseline", b));
        }
        trajectory_series(&mut series, &r.name, coord, &methods, &r.references);
    }
    io::write_tidy(run.create("plot_trajectories.csv")?, seed, &series)?;
    io::write_weights(run.create("weights.csv")?, &cmp.oracle.pattern, &cmp.learned.weights)?;
    for row in &cmp.rows {
        println!(
            "{:<10} {:<9} {:<10} rms {:.3e}  rms to reference {:.3e}",
            row.system, row.method, row.reference, row.rms, row.rms_to_reference
        );
    }
    run.finish("compare")
}

fn cmd_eval(common: &Common, weights: Option<&Path>) -> CliResult<()> {
    let mut run = Run::load(common)?;
    let path = weights
        .map(Path::to_path_buf)
        .unwrap_or_else(|| common.out.join("weights.csv"));
    let oracle = run_oracle(&run.cfg)?;
    let w = io::read_weights(File::open(&path)?, &oracle.pattern)?;
    let gain = policy_improvement(&w, &oracle.pattern)?;
    let errors = weight_errors(&w, &oracle.weights)?;
    let plant = run.cfg.plant()?;
    let cost = run.cfg.cost()?;
    let coord = run.cfg.tracked_coordinate()?;
    let x0 = run.cfg.x0()?;
    let mut rows = Vec::new();
    for item in &run.cfg.suite {
        let src = run.cfg.source(&item.signal)?;
        let steps = run.cfg.eval_steps;
        let (optimal, refs) =
            simulate_gain(&plant, &cost, &oracle.solution.gain, &src, steps, &x0)?;
        let (learned, _) = simulate_gain(&plant, &cost, &gain, &src, steps, &x0)?;
        rows.push(MetricsRow {
            system: run.cfg.name.clone(),
            method: "proposed".into(),
            reference: item.name.clone(),
            rms: rms_error(&learned, &optimal, coord)?,
            rms_to_reference: rms_to_reference(&learned, &refs, coord)?,
            e_i: Some(errors.0),
            e_ii: Some(errors.1),
        });
    }
    qtrack::evaluation::write_metrics(run.create("eval_metrics.csv")?, &rows)?;
    println!("e_I {:.3e}, e_II {:.3e} over {} references", errors.0, errors.1, rows.len());
    run.finish("eval")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Oracle(c) => cmd_oracle(c),
        Command::Learn(c) => cmd_learn(c),
        Command::Compare(c) => cmd_compare(c),
        Command::Eval { common, weights } => cmd_eval(common, weights.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
