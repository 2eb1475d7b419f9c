//! Comparison controller: Q-learning on the state augmented with a 2-state
//! exo-system that is assumed to generate the reference.
//!
//! `Q(x_aug, u) = ½ [x_aug; u]ᵀ H [x_aug; u]` with a full symmetric `H` and
//! stationary gain `u = K x_aug`.

use nalgebra::{DMatrix, DVector, Vector2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::learner::{
    exploration_rng, weights_converged, IterationLog, LearnerConfig, LeastSquares,
};
use crate::plant::{guarded_step, one_step_cost, CostParams, Dynamics, Trajectory};
use crate::qstructure::{phi, weights_to_h, SparsityPattern, Weights};
use crate::reference::{exo_step, lifting_column, ExoSystem, ReferenceSource};

/// Trained comparison controller.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    /// `m × (n + 2)` gain on `[x; e]`.
    pub gain: DMatrix<f64>,
    pub weights: Weights,
    pub batch_size: usize,
    /// One log per batch.
    pub rounds: Vec<Vec<IterationLog>>,
}

impl BaselineResult {
    /// Feedback part acting on the plant state.
    pub fn state_gain(&self, n: usize) -> DMatrix<f64> {
        self.gain.columns(0, n).into_owned()
    }
}

struct AugSample {
    z: DVector<f64>,
    cost: f64,
    next: DVector<f64>,
}

/// Reference vector produced by exo output `s`.
fn lifted(tracked: &[bool], s: f64) -> DVector<f64> {
    lifting_column(tracked).column(0) * s
}

fn augmented_gain(h: &DMatrix<f64>, n_aug: usize, m: usize) -> Result<DMatrix<f64>> {
    let huu = h.view((n_aug, n_aug), (m, m)).into_owned();
    let chol = ((&huu + huu.transpose()) * 0.5)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("baseline h_uu"))?;
    Ok(-chol.solve(&h.view((n_aug, 0), (m, n_aug)).into_owned()))
}

/// Learns the augmented-state controller on data generated by `exo`.
///
/// Uses the same least-squares value iteration and stop rule as the tracking
/// learner. Reference noise is not applied: it would break the exo-system
/// model the comparison method relies on.
pub fn train_baseline<D: Dynamics + ?Sized>(
    plant: &D,
    exo: &ExoSystem,
    cost: &CostParams,
    cfg: &LearnerConfig,
) -> Result<BaselineResult> {
    cfg.validate()?;
    let (n, m) = (plant.state_dim(), plant.input_dim());
    check_dim("rows of Q", n, cost.q().nrows())?;
    let tracked = cost.tracked_mask();
    let n_aug = n + 2;
    let pattern = SparsityPattern::dense(n_aug + m);
    let batch_size = cfg.batch_size(pattern.len());
    let mut rng = exploration_rng(cfg.seed);
    let std = cfg.exploration_var.sqrt();

    let mut gain = DMatrix::zeros(m, n_aug);
    let mut w = Weights::zeros(pattern.len());
    let mut x = DVector::zeros(n);
    let mut e = *exo;
    let mut rounds = Vec::new();
    let mut samples: Vec<AugSample> = Vec::with_capacity(batch_size);

    for k in 0..cfg.rounds() * batch_size {
        let x_aug = stack(&x, &e.state);
        let mut u = &gain * &x_aug;
        for ui in u.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *ui += std * xi;
        }
        let (s, next_e) = exo_step(&e);
        let c = one_step_cost(cost, &x, &u, &lifted(&tracked, s))?;
        let x_next = guarded_step(plant, &x, &u, k)?;
        let mut z = DVector::zeros(n_aug + m);
        z.rows_mut(0, n_aug).copy_from(&x_aug);
        z.rows_mut(n_aug, m).copy_from(&u);
        samples.push(AugSample {
            z,
            cost: c,
            next: stack(&x_next, &next_e.state),
        });
        x = x_next;
        e = next_e;

        if samples.len() == batch_size {
            let batch = std::mem::take(&mut samples);
            let log;
            (w, gain, log) = iterate(&batch, &pattern, cost.gamma(), cfg, w, gain, n_aug, m)?;
            rounds.push(log);
        }
    }
    Ok(BaselineResult {
        gain,
        weights: w,
        batch_size,
        rounds,
    })
}

fn stack(x: &DVector<f64>, e: &Vector2<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len() + 2);
    out.rows_mut(0, x.len()).copy_from(x);
    out[x.len()] = e[0];
    out[x.len() + 1] = e[1];
    out
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    batch: &[AugSample],
    pattern: &SparsityPattern,
    gamma: f64,
    cfg: &LearnerConfig,
    mut w: Weights,
    mut gain: DMatrix<f64>,
    n_aug: usize,
    m: usize,
) -> Result<(Weights, DMatrix<f64>, Vec<IterationLog>)> {
    let mut rows = DMatrix::zeros(batch.len(), pattern.len());
    for (i, s) in batch.iter().enumerate() {
        rows.row_mut(i).copy_from(&phi(&s.z, pattern)?.transpose());
    }
    let ls = LeastSquares::new(&rows)?;
    let costs = DVector::from_iterator(batch.len(), batch.iter().map(|s| s.cost));
    let mut log = Vec::new();
    for iteration in 1..=cfg.max_vi_iters {
        let mut next_q = DVector::zeros(batch.len());
        for (j, s) in batch.iter().enumerate() {
            let mut z = DVector::zeros(n_aug + m);
            z.rows_mut(0, n_aug).copy_from(&s.next);
            z.rows_mut(n_aug, m).copy_from(&(&gain * &s.next));
            next_q[j] = w.dot(&phi(&z, pattern)?);
        }
        let next = Weights(ls.solve(&(&costs + next_q * gamma)));
        let change = (&next.0 - &w.0).norm();
        let h = weights_to_h(&next, pattern)?;
        let kept_previous_gain = match augmented_gain(h.matrix(), n_aug, m) {
            Ok(g) => {
                gain = g;
                false
            }
            Err(Error::NotPositiveDefinite(_)) => true,
            Err(e) => return Err(e),
        };
        w = next;
        log.push(IterationLog {
            iteration,
            change,
            errors: None,
            kept_previous_gain,
        });
        if weights_converged(change, &w, cfg.e_w) {
            return Ok((w, gain, log));
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: cfg.max_vi_iters,
        last_change: log.last().map_or(f64::INFINITY, |l| l.change),
    })
}

/// Closed loop of the comparison controller on an arbitrary reference.
///
/// The exo state is propagated with `f` and its output component is
/// overwritten with the current reference sample every step, so the
/// controller always sees the true present value.
pub fn evaluate_baseline<D: Dynamics + ?Sized>(
    gain: &DMatrix<f64>,
    plant: &D,
    cost: &CostParams,
    src: &ReferenceSource,
    exo: &ExoSystem,
    steps: usize,
    x0: &DVector<f64>,
) -> Result<(Trajectory, Vec<DVector<f64>>)> {
    let n = plant.state_dim();
    check_dim("initial state", n, x0.len())?;
    check_dim("baseline gain columns", n + 2, gain.ncols())?;
    let src = src.without_noise();
    let coord = src
        .tracked()
        .iter()
        .position(|t| *t)
        .ok_or_else(|| Error::Config("baseline needs a tracked coordinate".into()))?;
    let mut traj = Trajectory::new(x0.clone());
    let mut refs = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut e = Vector2::new(src.value(0)[coord], 0.0);
    for k in 0..steps {
        let r = src.value(k);
        if k > 0 {
            e = exo.f * e;
        }
        e[0] = r[coord];
        let u = gain * stack(&x, &e);
        let c = one_step_cost(cost, &x, &u, &r)?;
        let next = guarded_step(plant, &x, &u, k)?;
        refs.push(r);
        traj.push(u, c, next.clone());
        x = next;
    }
    refs.push(src.value(steps));
    Ok((traj, refs))
}
