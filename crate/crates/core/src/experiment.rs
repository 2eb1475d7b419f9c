//! Experiment descriptions and end-to-end runners shared by the CLI and the
//! acceptance tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baseline::{evaluate_baseline, train_baseline, BaselineResult};
use crate::error::{Error, Result};
use crate::evaluation::{rms_error, rms_to_reference, simulate_gain, weight_errors, MetricsRow};
use crate::learner::{run_online, LearnerConfig, OnlineResult};
use crate::linalg;
use crate::oracle::{
    model_value_iteration, structure_report, IterationOptions, StructureReport,
    ValueIterationResult,
};
use crate::plant::{CostParams, PlantModel, Trajectory};
use crate::qstructure::{build_pattern, h_to_weights, SparsityPattern, Weights};
use crate::reference::{ExoSystem, ReferenceSource, Signal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedReference {
    pub name: String,
    pub signal: Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        let d = IterationOptions::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

fn default_training() -> Signal {
    Signal::exo_sine()
}

fn default_eval_steps() -> usize {
    200
}

fn default_true() -> bool {
    true
}

/// One study: plant, cost, learner settings and the evaluation suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub plant: PlantSpec,
    pub cost: CostSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default = "default_training")]
    pub training_reference: Signal,
    #[serde(default)]
    pub suite: Vec<NamedReference>,
    #[serde(default = "default_eval_steps")]
    pub eval_steps: usize,
    /// Initial state of every evaluation run; zero when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub oracle: OracleSpec,
    /// Whether `compare` also trains the augmented-state baseline.
    #[serde(default = "default_true")]
    pub baseline: bool,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    linalg::from_rows(rows).ok_or_else(|| Error::Config(format!("{name} has ragged rows")))
}

impl ExperimentConfig {
    pub fn plant(&self) -> Result<PlantModel> {
        PlantModel::new(matrix("A", &self.plant.a)?, matrix("B", &self.plant.b)?)
    }

    pub fn cost(&self) -> Result<CostParams> {
        CostParams::new(
            matrix("Q", &self.cost.q)?,
            matrix("R", &self.cost.r)?,
            self.cost.gamma,
        )
    }

    pub fn pattern(&self) -> Result<SparsityPattern> {
        let plant = self.plant()?;
        build_pattern(plant.n(), plant.m(), self.learner.horizon, &self.cost()?.q().clone())
    }

    pub fn x0(&self) -> Result<DVector<f64>> {
        let n = self.plant.a.len();
        match &self.x0 {
            None => Ok(DVector::zeros(n)),
            Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(v) => Err(Error::DimensionMismatch {
                what: "x0",
                expected: n,
                found: v.len(),
            }),
        }
    }

    pub fn source(&self, signal: &Signal) -> Result<ReferenceSource> {
        ReferenceSource::new(signal.clone(), self.cost()?.tracked_mask())
    }

    /// First tracked state coordinate, the one reported in the metrics.
    pub fn tracked_coordinate(&self) -> Result<usize> {
        self.cost()?
            .tracked_mask()
            .iter()
            .position(|t| *t)
            .ok_or_else(|| Error::Config("Q tracks no coordinate".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.plant()?;
        self.cost()?;
        self.learner.validate()?;
        self.x0()?;
        Ok(())
    }

    /// Exo-system matching the training reference, for the baseline.
    pub fn training_exo(&self) -> Result<ExoSystem> {
        match &self.training_reference {
            Signal::ExoSine { f, r0 } => Ok(ExoSystem::training_sine()
                .with_state(nalgebra::Vector2::new(r0[0], r0[1]))
                .with_f(f)),
            _ => Err(Error::Config(
                "the baseline needs an exo_sine training reference".into(),
            )),
        }
    }
}

/// Second-order mass-spring-damper, `Q = diag(100, 0)`, `R = 1`, `γ = 0.9`.
pub fn system1() -> ExperimentConfig {
    ExperimentConfig {
        name: "system1".into(),
        plant: PlantSpec {
            a: vec![vec![0.99, 0.9], vec![-0.02, 0.8]],
            b: vec![vec![0.01], vec![0.02]],
        },
        cost: CostSpec {
            q: vec![vec![100.0, 0.0], vec![0.0, 0.0]],
            r: vec![vec![1.0]],
            gamma: 0.9,
        },
        learner: LearnerConfig::default(),
        training_reference: Signal::exo_sine(),
        suite: default_suite(),
        eval_steps: default_eval_steps(),
        x0: None,
        oracle: OracleSpec::default(),
        baseline: true,
    }
}

/// Sixth-order single-track steering model tracking the lateral position.
pub fn system2() -> ExperimentConfig {
    let mut q = vec![vec![0.0; 6]; 6];
    q[3][3] = 100.0;
    ExperimentConfig {
        name: "system2".into(),
        plant: PlantSpec {
            a: vec![
                vec![-0.741, -0.033, 0.0, 0.0, -2.0e-4, -6.4e-3],
                vec![4.146, -0.914, 0.0, 0.0, 4.7e-3, 0.151],
                vec![2.073, 0.043, 1.0, 0.0, 2.4e-3, 0.076],
                vec![23.326, 0.106, 20.0, 1.0, 0.022, 0.693],
                vec![23.499, -2.593, 0.0, 0.0, -0.939, -2.053],
                vec![11.749, -1.297, 0.0, 0.0, 0.031, -0.027],
            ],
            b: vec![
                vec![-3.8e-4],
                vec![0.0091],
                vec![0.0046],
                vec![0.041],
                vec![0.117],
                vec![0.059],
            ],
        },
        cost: CostSpec {
            q,
            r: vec![vec![1.0]],
            gamma: 0.9,
        },
        ..system1()
    }
}

/// Training sine, a slower sine, a step and a ramp.
pub fn default_suite() -> Vec<NamedReference> {
    let slow = 0.1_f64;
    vec![
        NamedReference {
            name: "exo_sine".into(),
            signal: Signal::exo_sine(),
        },
        NamedReference {
            name: "slow_sine".into(),
            signal: Signal::ExoSine {
                f: [[slow.cos(), slow.sin()], [-slow.sin(), slow.cos()]],
                r0: [1.0, 0.0],
            },
        },
        NamedReference {
            name: "step".into(),
            signal: Signal::Step {
                at: 100,
                before: 0.0,
                after: 1.0,
            },
        },
        NamedReference {
            name: "ramp".into(),
            signal: Signal::Ramp {
                start: 50,
                slope: 0.02,
                offset: 0.0,
            },
        },
    ]
}

/// Converged model-based solution and its diagnostics.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub pattern: SparsityPattern,
    pub solution: ValueIterationResult,
    pub weights: Weights,
    pub report: StructureReport,
}

pub fn run_oracle(cfg: &ExperimentConfig) -> Result<OracleOutput> {
    let plant = cfg.plant()?;
    let cost = cfg.cost()?;
    let pattern = cfg.pattern()?;
    let solution = model_value_iteration(
        &plant,
        &cost,
        cfg.learner.horizon,
        IterationOptions {
            tol: cfg.oracle.tol,
            max_iter: cfg.oracle.max_iter,
            keep_iterates: false,
        },
    )?;
    let weights = h_to_weights(&solution.h, &pattern)?;
    let report = structure_report(&plant, &cost, &solution.h, &solution.gain, &pattern)?;
    Ok(OracleOutput {
        pattern,
        solution,
        weights,
        report,
    })
}

/// Learning run, with weight-error traces when the oracle is given.
pub fn run_learn(cfg: &ExperimentConfig, oracle: Option<&OracleOutput>) -> Result<OnlineResult> {
    cfg.validate()?;
    let plant = cfg.plant()?;
    let cost = cfg.cost()?;
    let pattern = cfg.pattern()?;
    let src = cfg.source(&cfg.training_reference)?;
    run_online(
        &plant,
        &cost,
        &src,
        &pattern,
        &cfg.learner,
        oracle.map(|o| &o.weights),
    )
}

/// Evaluation runs of one reference for every method.
#[derive(Debug, Clone)]
pub struct ReferenceRuns {
    pub name: String,
    pub references: Vec<DVector<f64>>,
    pub optimal: Trajectory,
    pub learned: Trajectory,
    pub baseline: Option<Trajectory>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub oracle: OracleOutput,
    pub learned: OnlineResult,
    pub baseline: Option<BaselineResult>,
    pub runs: Vec<ReferenceRuns>,
    pub rows: Vec<MetricsRow>,
}

/// Trains both methods, then evaluates them with frozen weights on every
/// suite reference against the model-based optimum.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    let plant = cfg.plant()?;
    let cost = cfg.cost()?;
    let oracle = run_oracle(cfg)?;
    let learned = run_learn(cfg, Some(&oracle))?;
    let (e_i, e_ii) = weight_errors(&learned.weights, &oracle.weights)?;
    let baseline = if cfg.baseline {
        Some(train_baseline(&plant, &cfg.training_exo()?, &cost, &cfg.learner)?)
    } else {
        None
    };
    let coord = cfg.tracked_coordinate()?;
    let x0 = cfg.x0()?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for item in &cfg.suite {
        let src = cfg.source(&item.signal)?;
        let (optimal, refs) =
            simulate_gain(&plant, &cost, &oracle.solution.gain, &src, cfg.eval_steps, &x0)?;
        let (learned_traj, _) =
            simulate_gain(&plant, &cost, &learned.gain, &src, cfg.eval_steps, &x0)?;
        let mut row = |method: &str, traj: &Trajectory, errors: Option<(f64, f64)>| -> Result<()> {
            rows.push(MetricsRow {
                system: cfg.name.clone(),
                method: method.into(),
                reference: item.name.clone(),
                rms: rms_error(traj, &optimal, coord)?,
                rms_to_reference: rms_to_reference(traj, &refs, coord)?,
                e_i: errors.map(|e| e.0),
                e_ii: errors.map(|e| e.1),
            });
            Ok(())
        };
        row("proposed", &learned_traj, Some((e_i, e_ii)))?;
        let baseline_traj = match &baseline {
            Some(b) => {
                let (traj, _) = evaluate_baseline(
                    &b.gain,
                    &plant,
                    &cost,
                    &src,
                    &cfg.training_exo()?,
                    cfg.eval_steps,
                    &x0,
                )?;
                row("baseline", &traj, None)?;
                Some(traj)
            }
            None => None,
        };
        row("optimal", &optimal, None)?;
        runs.push(ReferenceRuns {
            name: item.name.clone(),
            references: refs,
            optimal,
            learned: learned_traj,
            baseline: baseline_traj,
        });
    }
    Ok(Comparison {
        oracle,
        learned,
        baseline,
        runs,
        rows,
    })
}
