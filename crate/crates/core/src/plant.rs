//! Discrete-time LTI plant, quadratic tracking cost and logged trajectories.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Eigenvalue threshold for the PSD/PD gates, relative to the largest
/// eigenvalue magnitude.
pub const TOL_PSD: f64 = 1e-10;
/// Singular-value cutoff for the controllability rank, relative to sigma_max.
pub const TOL_CONTROLLABILITY: f64 = 1e-10;
/// Simulations abort once the state norm exceeds this bound.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// Anything that can advance a state by one step given an input.
///
/// The learner only ever talks to the plant through this trait, so it never
/// sees the system matrices.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// `x_{k+1} = A x_k + B u_k` with `(A, B)` controllable.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidDimensions(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("rows of B", a.nrows(), b.nrows())?;
        if b.ncols() == 0 {
            return Err(Error::InvalidDimensions("B has no columns".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimensions("non-finite plant entry".into()));
        }
        let n = a.nrows();
        let rank = linalg::numerical_rank(&controllability_matrix(&a, &b), TOL_CONTROLLABILITY);
        if rank < n {
            return Err(Error::NotControllable { rank, n });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

impl Dynamics for PlantModel {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn input_dim(&self) -> usize {
        self.m()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        step(self, x, u)
    }
}

/// `[B, AB, ..., A^{n-1} B]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}

/// One plant step, `A x + B u`.
pub fn step(model: &PlantModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("state", model.n(), x.len())?;
    check_dim("input", model.m(), u.len())?;
    Ok(&model.a * x + &model.b * u)
}

/// Steps `plant` and enforces the divergence bound on the successor state.
pub fn guarded_step<D: Dynamics + ?Sized>(
    plant: &D,
    x: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    let next = plant.step(x, u)?;
    let norm = next.norm();
    if !norm.is_finite() || norm > DIVERGENCE_BOUND {
        return Err(Error::DivergedState { step: k, norm });
    }
    Ok(next)
}

/// Weights of the discounted quadratic tracking cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    gamma: f64,
}

impl CostParams {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidCost(format!("gamma = {gamma} not in [0, 1)")));
        }
        check_symmetric_definite(&q, "Q", false)?;
        check_symmetric_definite(&r, "R", true)?;
        Ok(Self { q, r, gamma })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same weights with another discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.q.clone(), self.r.clone(), gamma)
    }

    /// Indices `l` for which row `l` and column `l` of Q vanish.
    pub fn untracked_indices(&self) -> Vec<usize> {
        untracked_indices(&self.q)
    }

    /// Coordinates that carry a reference (the complement of
    /// [`untracked_indices`](Self::untracked_indices)).
    pub fn tracked_mask(&self) -> Vec<bool> {
        tracked_mask(&self.q)
    }
}

pub(crate) fn tracked_mask(q: &DMatrix<f64>) -> Vec<bool> {
    (0..q.nrows())
        .map(|l| q.row(l).iter().any(|v| *v != 0.0) || q.column(l).iter().any(|v| *v != 0.0))
        .collect()
}

pub(crate) fn untracked_indices(q: &DMatrix<f64>) -> Vec<usize> {
    tracked_mask(q)
        .iter()
        .enumerate()
        .filter_map(|(l, t)| (!t).then_some(l))
        .collect()
}

fn check_symmetric_definite(m: &DMatrix<f64>, name: &str, strict: bool) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidCost(format!("{name} must be square and non-empty")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCost(format!("{name} has non-finite entries")));
    }
    let scale = linalg::max_abs(m).max(f64::MIN_POSITIVE);
    if !linalg::is_symmetric(m, 1e-12 * scale) {
        return Err(Error::InvalidCost(format!("{name} is not symmetric")));
    }
    let ev = linalg::symmetric_eigenvalues(m);
    let largest = ev.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = ev[0];
    if strict {
        if min <= TOL_PSD * largest || largest == 0.0 {
            return Err(Error::InvalidCost(format!(
                "{name} is not positive definite (min eigenvalue {min:e})"
            )));
        }
    } else if min < -TOL_PSD * largest {
        return Err(Error::InvalidCost(format!(
            "{name} is not positive semidefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// `c = ½((x - r)ᵀ Q (x - r) + uᵀ R u)`
pub fn one_step_cost(
    cost: &CostParams,
    x: &DVector<f64>,
    u: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<f64> {
    check_dim("state", cost.q.nrows(), x.len())?;
    check_dim("reference", cost.q.nrows(), r.len())?;
    check_dim("input", cost.r.nrows(), u.len())?;
    let e = x - r;
    let c = 0.5 * ((e.transpose() * &cost.q * &e)[0] + (u.transpose() * &cost.r * u)[0]);
    // A PSD form can still round to a hair below zero.
    Ok(c.max(0.0))
}

/// Truncated discounted sum `Σ γ^i c_i` of the logged one-step costs.
pub fn discounted_cost(cost: &CostParams, traj: &Trajectory) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for c in &traj.costs {
        total += weight * c;
        weight *= cost.gamma;
    }
    total
}

/// States, applied inputs and one-step costs of a simulation run.
///
/// Always holds one more state than inputs or costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
}

impl Trajectory {
    pub fn new(x0: DVector<f64>) -> Self {
        Self {
            states: vec![x0],
            inputs: Vec::new(),
            costs: Vec::new(),
        }
    }

    pub fn push(&mut self, u: DVector<f64>, cost: f64, next: DVector<f64>) {
        self.inputs.push(u);
        self.costs.push(cost);
        self.states.push(next);
    }

    /// Number of applied inputs.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds x0")
    }

    /// Values of state coordinate `coord` over time.
    pub fn coordinate(&self, coord: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[coord]).collect()
    }
}
