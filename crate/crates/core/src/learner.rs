//! Model-free value iteration on the structured tracking Q-function.
//!
//! Data come from the plant through [`Dynamics`] only. Each policy-evaluation
//! step is a least-squares fit of the temporal-difference relation
//! `w_{i+1}ᵀ φ(z_k) = c_k + γ w_iᵀ φ(z*_{k+1})` over a batch of `M` samples.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::evaluation;
use crate::oracle::{gain_from_h, GainMatrix};
use crate::plant::{guarded_step, one_step_cost, CostParams, Dynamics, Trajectory};
use crate::qstructure::{phi, weights_to_h, Layout, SparsityPattern, Weights};
use crate::reference::{ReferenceSource, ReferenceWindow};

/// Relative singular-value cutoff of the rank test.
pub const RANK_TOL: f64 = 1e-10;

/// Offset separating the exploration key from the reference-noise key.
const EXPLORATION_KEY: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Preview length `N`.
    pub horizon: usize,
    /// Batch size factor, `M = ceil(m_factor · L)`.
    pub m_factor: f64,
    /// Stop threshold on `‖w_{i+1} − w_i‖₂`, scaled by `max(1, ‖w_{i+1}‖₂)`.
    pub e_w: f64,
    /// Exploration covariance `Σ = exploration_var · I`.
    pub exploration_var: f64,
    /// Variance of the reference noise added while learning.
    pub ref_noise_var: f64,
    /// Whether the noisy reference also enters the logged cost.
    pub noise_in_cost: bool,
    pub seed: u64,
    pub max_vi_iters: usize,
    /// Number of batches (and value-iteration runs) in the online loop.
    pub vi_rounds: usize,
    pub stop_after_first_vi: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            m_factor: 1.2,
            e_w: 1e-6,
            exploration_var: 0.1,
            ref_noise_var: 0.1,
            noise_in_cost: true,
            seed: 0,
            max_vi_iters: 1000,
            vi_rounds: 3,
            stop_after_first_vi: false,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.m_factor >= 1.0 && self.m_factor.is_finite()) {
            return Err(Error::Config(format!("m_factor must be >= 1, got {}", self.m_factor)));
        }
        if self.e_w.is_nan() || self.e_w <= 0.0 {
            return Err(Error::Config(format!("e_w must be positive, got {}", self.e_w)));
        }
        for (name, v) in [
            ("exploration_var", self.exploration_var),
            ("ref_noise_var", self.ref_noise_var),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.max_vi_iters == 0 || self.vi_rounds == 0 {
            return Err(Error::Config("max_vi_iters and vi_rounds must be positive".into()));
        }
        Ok(())
    }

    /// `ceil(m_factor · l)`, guarded against `1.2 · 85 = 102.00000000000001`.
    pub fn batch_size(&self, l: usize) -> usize {
        let raw = self.m_factor * l as f64;
        (raw - 1e-9 * raw.max(1.0)).ceil().max(l as f64) as usize
    }

    pub fn rounds(&self) -> usize {
        if self.stop_after_first_vi {
            1
        } else {
            self.vi_rounds
        }
    }
}

/// Stop rule of the value iteration. The change is measured relative to the
/// weight norm once that exceeds one, since large weights put an absolute
/// threshold below the round-off floor of the least-squares solve.
pub fn weights_converged(change: f64, w: &Weights, e_w: f64) -> bool {
    change < e_w * w.norm().max(1.0)
}

/// Seeded generator for exploration noise, independent of the reference noise.
pub fn exploration_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ EXPLORATION_KEY)
}

/// One transition of the tracking problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[x_j; u_j; r_j; ...; r_{j+N}]` with the applied input.
    pub z: DVector<f64>,
    pub cost: f64,
    pub x_next: DVector<f64>,
    /// `r_{j+1}, ..., r_{j+N}, 0`
    pub window_next: ReferenceWindow,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub layout: Layout,
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `u = L [x; r_{k+1}; ...; r_{k+N}] + ξ`, `ξ ~ N(0, var · I)`.
pub fn explore_control(
    gain: &GainMatrix,
    x: &DVector<f64>,
    window: &ReferenceWindow,
    exploration_var: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let mut u = gain.control(x, window)?;
    let std = exploration_var.sqrt();
    for ui in u.iter_mut() {
        let xi: f64 = StandardNormal.sample(rng);
        *ui += std * xi;
    }
    Ok(u)
}

/// Applies one exploratory input at time `k` and records the transition.
#[allow(clippy::too_many_arguments)]
fn record_step<D: Dynamics + ?Sized>(
    plant: &D,
    cost: &CostParams,
    src: &ReferenceSource,
    gain: &GainMatrix,
    cfg: &LearnerConfig,
    x: &DVector<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Sample, DVector<f64>, DVector<f64>)> {
    let layout = *gain.layout();
    let window = src.window_at(k, cfg.horizon);
    let u = explore_control(gain, x, &window, cfg.exploration_var, rng)?;
    let r_cost = if cfg.noise_in_cost {
        window.current().clone()
    } else {
        src.without_noise().value(k)
    };
    let c = one_step_cost(cost, x, &u, &r_cost)?;
    let x_next = guarded_step(plant, x, &u, k)?;
    let z = layout.augmented(x, &u, &window.stacked())?;
    Ok((
        Sample {
            z,
            cost: c,
            x_next: x_next.clone(),
            window_next: window.shift(None),
        },
        u,
        r_cost,
    ))
}

/// Collects one batch of `M = ceil(m_factor · L)` samples from `x = 0`,
/// `k = 0`, with the behaviour gain `gain` and reference noise from `cfg`.
pub fn collect_batch<D: Dynamics + ?Sized>(
    plant: &D,
    cost: &CostParams,
    src: &ReferenceSource,
    gain: &GainMatrix,
    pattern: &SparsityPattern,
    cfg: &LearnerConfig,
) -> Result<Batch> {
    cfg.validate()?;
    let src = noisy_source(src, cfg)?;
    let mut rng = exploration_rng(cfg.seed);
    let mut x = DVector::zeros(plant.state_dim());
    let size = cfg.batch_size(pattern.len());
    let mut samples = Vec::with_capacity(size);
    for k in 0..size {
        let (sample, _, _) = record_step(plant, cost, &src, gain, cfg, &x, k, &mut rng)?;
        x = sample.x_next.clone();
        samples.push(sample);
    }
    Ok(Batch {
        layout: *gain.layout(),
        samples,
    })
}

fn noisy_source(src: &ReferenceSource, cfg: &LearnerConfig) -> Result<ReferenceSource> {
    src.clone().with_noise(cfg.ref_noise_var.sqrt(), cfg.seed)
}

/// Least-squares operator of a fixed regressor matrix.
///
/// Columns are equilibrated before an SVD; the numerical rank is counted with
/// cutoff `RANK_TOL · σ_max` and must be full.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// `D (Φ D)⁺`, so that `w = solve · b`.
    solve: DMatrix<f64>,
    pub rank: usize,
}

impl LeastSquares {
    pub fn new(phi: &DMatrix<f64>) -> Result<Self> {
        let cols = phi.ncols();
        let scale = DVector::from_iterator(
            cols,
            phi.column_iter().map(|c| {
                let norm = c.norm();
                if norm > 0.0 {
                    1.0 / norm
                } else {
                    0.0
                }
            }),
        );
        let scaled = phi * DMatrix::from_diagonal(&scale);
        let svd = scaled.svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| smax > 0.0 && s > RANK_TOL * smax)
            .count();
        if rank < cols {
            return Err(Error::ExcitationDeficient {
                rank,
                required: cols,
            });
        }
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let inv = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / s));
        let pinv = v_t.transpose() * inv * u.transpose();
        Ok(Self {
            solve: DMatrix::from_diagonal(&scale) * pinv,
            rank,
        })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.solve * b
    }
}

/// Regressor of a tracking batch, factored once and reused by every sweep.
#[derive(Debug, Clone)]
pub struct TdRegression<'p> {
    pattern: &'p SparsityPattern,
    layout: Layout,
    ls: LeastSquares,
    costs: DVector<f64>,
    next: Vec<(DVector<f64>, ReferenceWindow)>,
}

impl<'p> TdRegression<'p> {
    pub fn new(batch: &Batch, pattern: &'p SparsityPattern) -> Result<Self> {
        let layout = *pattern
            .layout()
            .ok_or_else(|| Error::InvalidDimensions("pattern without tracking layout".into()))?;
        check_dim("augmented dimension", layout.dim(), batch.layout.dim())?;
        let l = pattern.len();
        if batch.len() < l {
            return Err(Error::ExcitationDeficient {
                rank: batch.len(),
                required: l,
            });
        }
        let mut rows = DMatrix::zeros(batch.len(), l);
        for (i, s) in batch.samples.iter().enumerate() {
            rows.row_mut(i).copy_from(&phi(&s.z, pattern)?.transpose());
        }
        let ls = LeastSquares::new(&rows)?;
        Ok(Self {
            pattern,
            layout,
            ls,
            costs: DVector::from_iterator(batch.len(), batch.samples.iter().map(|s| s.cost)),
            next: batch
                .samples
                .iter()
                .map(|s| (s.x_next.clone(), s.window_next.clone()))
                .collect(),
        })
    }

    pub fn rank(&self) -> usize {
        self.ls.rank
    }

    /// `w_iᵀ φ(z*_{j+1})` for every sample, with `u*` from `gain`.
    pub fn next_values(&self, w: &Weights, gain: &GainMatrix) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.next.len());
        for (j, (x, window)) in self.next.iter().enumerate() {
            out[j] = Self::next_value(w, gain, &self.layout, self.pattern, x, window)?;
        }
        Ok(out)
    }

    /// `wᵀ φ([x; L[x; preview]; window])`
    pub fn next_value(
        w: &Weights,
        gain: &GainMatrix,
        layout: &Layout,
        pattern: &SparsityPattern,
        x: &DVector<f64>,
        window: &ReferenceWindow,
    ) -> Result<f64> {
        let u = gain.control(x, window)?;
        let z = layout.augmented(x, &u, &window.stacked())?;
        Ok(w.dot(&phi(&z, pattern)?))
    }

    /// One policy-evaluation step with an explicit target gain.
    pub fn evaluate(&self, w: &Weights, gain: &GainMatrix, gamma: f64) -> Result<Weights> {
        check_dim("weight vector", self.pattern.len(), w.len())?;
        let targets = &self.costs + self.next_values(w, gain)? * gamma;
        Ok(Weights(self.ls.solve(&targets)))
    }
}

/// Target gain of `w`; the all-zero start maps to `L = 0`.
fn target_gain(w: &Weights, pattern: &SparsityPattern) -> Result<GainMatrix> {
    let layout = *pattern
        .layout()
        .ok_or_else(|| Error::InvalidDimensions("pattern without tracking layout".into()))?;
    if w.iter().all(|v| *v == 0.0) {
        return Ok(GainMatrix::zeros(layout));
    }
    policy_improvement(w, pattern)
}

/// `w_{i+1}` from the least-squares fit of the TD relation over `batch`.
pub fn policy_evaluation(
    batch: &Batch,
    w: &Weights,
    gamma: f64,
    pattern: &SparsityPattern,
) -> Result<Weights> {
    let td = TdRegression::new(batch, pattern)?;
    td.evaluate(w, &target_gain(w, pattern)?, gamma)
}

/// `L = −h_uu⁻¹ [h_ux, h_{u r_1}, ..., h_{u r_N}]` of `H(w)`.
pub fn policy_improvement(w: &Weights, pattern: &SparsityPattern) -> Result<GainMatrix> {
    let layout = *pattern
        .layout()
        .ok_or_else(|| Error::InvalidDimensions("pattern without tracking layout".into()))?;
    let h = weights_to_h(w, pattern)?;
    gain_from_h(h.matrix(), &layout)
}

/// Per-iteration record of a value-iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub change: f64,
    /// `(e_I, e_II)` against the oracle weights, when supplied.
    pub errors: Option<(f64, f64)>,
    /// Whether `h_uu` of the new estimate failed to be positive definite.
    pub kept_previous_gain: bool,
}

#[derive(Debug, Clone)]
pub struct ValueIterationOutcome {
    pub weights: Weights,
    pub gain: GainMatrix,
    pub log: Vec<IterationLog>,
}

/// Alternates evaluation and improvement on a fixed batch until
/// `‖w_{i+1} − w_i‖₂ < e_w · max(1, ‖w_{i+1}‖₂)`.
///
/// `start` seeds `w^(0)` (zero when `None`). A policy improvement that fails
/// positive definiteness keeps the previous gain and is flagged in the log.
pub fn value_iterate(
    batch: &Batch,
    cfg: &LearnerConfig,
    pattern: &SparsityPattern,
    gamma: f64,
    start: Option<(&Weights, &GainMatrix)>,
    oracle: Option<&Weights>,
) -> Result<ValueIterationOutcome> {
    let td = TdRegression::new(batch, pattern)?;
    let (mut w, mut gain) = match start {
        Some((w, g)) => (w.clone(), g.clone()),
        None => {
            let w = Weights::zeros(pattern.len());
            let g = target_gain(&w, pattern)?;
            (w, g)
        }
    };
    let mut log = Vec::new();
    for iteration in 1..=cfg.max_vi_iters {
        let next = td.evaluate(&w, &gain, gamma)?;
        let change = (&next.0 - &w.0).norm();
        let kept_previous_gain = match policy_improvement(&next, pattern) {
            Ok(g) => {
                gain = g;
                false
            }
            Err(Error::NotPositiveDefinite(_)) => true,
            Err(e) => return Err(e),
        };
        w = next;
        let errors = oracle
            .map(|star| evaluation::weight_errors(&w, star))
            .transpose()?;
        log.push(IterationLog {
            iteration,
            change,
            errors,
            kept_previous_gain,
        });
        if weights_converged(change, &w, cfg.e_w) {
            return Ok(ValueIterationOutcome {
                weights: w,
                gain,
                log,
            });
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: cfg.max_vi_iters,
        last_change: log.last().map_or(f64::INFINITY, |l| l.change),
    })
}

/// Summary of one batch of the online loop.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub round: usize,
    /// Time step at which the update happened.
    pub k: usize,
    pub iterations: Vec<IterationLog>,
    /// RMS TD error of the new weights on their own batch.
    pub bellman_residual: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub weights: Weights,
    pub gain: GainMatrix,
    pub batch_size: usize,
    /// States, applied inputs and costs during learning.
    pub trajectory: Trajectory,
    /// Reference used in the cost at each step.
    pub references: Vec<DVector<f64>>,
    pub rounds: Vec<RoundLog>,
    /// Last batch, kept for diagnostics.
    pub last_batch: Batch,
}

/// Algorithm loop: explore with the current gain, and every `M` steps run
/// value iteration on the most recent `M` samples and switch to its gain.
pub fn run_online<D: Dynamics + ?Sized>(
    plant: &D,
    cost: &CostParams,
    src: &ReferenceSource,
    pattern: &SparsityPattern,
    cfg: &LearnerConfig,
    oracle: Option<&Weights>,
) -> Result<OnlineResult> {
    cfg.validate()?;
    let layout = *pattern
        .layout()
        .ok_or_else(|| Error::InvalidDimensions("pattern without tracking layout".into()))?;
    check_dim("plant state", layout.n, plant.state_dim())?;
    check_dim("plant input", layout.m, plant.input_dim())?;
    check_dim("horizon", layout.horizon, cfg.horizon)?;
    let src = noisy_source(src, cfg)?;
    let batch_size = cfg.batch_size(pattern.len());
    let mut rng = exploration_rng(cfg.seed);

    let mut w = Weights::zeros(pattern.len());
    let mut gain = GainMatrix::zeros(layout);
    let mut x = DVector::zeros(layout.n);
    let mut trajectory = Trajectory::new(x.clone());
    let mut references = Vec::new();
    let mut rounds = Vec::new();
    let mut samples = Vec::with_capacity(batch_size);
    let mut last_batch = Batch {
        layout,
        samples: Vec::new(),
    };

    for k in 0..cfg.rounds() * batch_size {
        let (sample, u, r) = record_step(plant, cost, &src, &gain, cfg, &x, k, &mut rng)?;
        x = sample.x_next.clone();
        trajectory.push(u, sample.cost, x.clone());
        references.push(r);
        samples.push(sample);
        if samples.len() == batch_size {
            let batch = Batch {
                layout,
                samples: std::mem::take(&mut samples),
            };
            let start = if rounds.is_empty() {
                None
            } else {
                Some((&w, &gain))
            };
            let out = value_iterate(&batch, cfg, pattern, cost.gamma(), start, oracle)?;
            w = out.weights;
            gain = out.gain;
            let residual = evaluation::bellman_residual(&w, &batch, cost.gamma(), pattern)?;
            rounds.push(RoundLog {
                round: rounds.len() + 1,
                k: k + 1,
                iterations: out.log,
                bellman_residual: residual,
            });
            last_batch = batch;
        }
    }
    Ok(OnlineResult {
        weights: w,
        gain,
        batch_size,
        trajectory,
        references,
        rounds,
        last_batch,
    })
}
