//! Model-based ground truth for the tracking Q-function.
//!
//! Two independent routes to `H`: the matrix value iteration
//! `H ← G + γ M(L(H))ᵀ H M(L(H))` and a backward dynamic program over
//! explicit quadratic forms on a finite horizon `K ≥ N`. A discounted Riccati
//! iteration covers the regulation sub-problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::plant::{CostParams, PlantModel};
use crate::qstructure::{Layout, SparsityPattern};
use crate::reference::ReferenceWindow;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Feedback/feedforward gain `[L_x, L_1, ..., L_N]` (m × (N+1)n).
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    matrix: DMatrix<f64>,
    layout: Layout,
}

impl GainMatrix {
    pub fn new(matrix: DMatrix<f64>, layout: Layout) -> Result<Self> {
        check_dim("gain rows", layout.m, matrix.nrows())?;
        check_dim("gain columns", layout.gain_cols(), matrix.ncols())?;
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDimensions("non-finite gain entry".into()));
        }
        Ok(Self { matrix, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            matrix: DMatrix::zeros(layout.m, layout.gain_cols()),
            layout,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Feedback block `L_x`.
    pub fn state_part(&self) -> DMatrix<f64> {
        self.matrix.columns(0, self.layout.n).into_owned()
    }

    /// Feedforward block `L_j` acting on `r_{k+j}`, `1 <= j <= N`.
    pub fn reference_part(&self, j: usize) -> DMatrix<f64> {
        self.matrix.columns(j * self.layout.n, self.layout.n).into_owned()
    }

    /// `u = L_x x + Σ_j L_j r_{k+j}`
    pub fn control(&self, x: &DVector<f64>, window: &ReferenceWindow) -> Result<DVector<f64>> {
        check_dim("state", self.layout.n, x.len())?;
        check_dim("window horizon", self.layout.horizon, window.horizon())?;
        let n = self.layout.n;
        let mut u = self.matrix.columns(0, n) * x;
        for (j, r) in window.entries().iter().enumerate().skip(1) {
            u += self.matrix.columns(j * n, n) * r;
        }
        Ok(u)
    }
}

/// `L = −h_uu⁻¹ [h_ux, h_{u r_1}, ..., h_{u r_N}]`; `h_{u r_0}` is skipped.
pub fn gain_from_h(h: &DMatrix<f64>, layout: &Layout) -> Result<GainMatrix> {
    check_dim("rows of H", layout.dim(), h.nrows())?;
    check_dim("columns of H", layout.dim(), h.ncols())?;
    let (n, m) = (layout.n, layout.m);
    let u = layout.u();
    let huu = h.view((u, u), (m, m)).into_owned();
    let huu = (&huu + huu.transpose()) * 0.5;
    let chol = huu
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("h_uu"))?;
    let mut rhs = DMatrix::zeros(m, layout.gain_cols());
    rhs.columns_mut(0, n).copy_from(&h.view((u, 0), (m, n)));
    for j in 1..=layout.horizon {
        rhs.columns_mut(j * n, n)
            .copy_from(&h.view((u, layout.r(j)), (m, n)));
    }
    let gain = -chol.solve(&rhs);
    GainMatrix::new(gain, *layout)
}

/// `G`: the one-step cost as a quadratic form in `z`, nonzero only on the
/// `(x, u, r_0)` corner.
pub fn cost_core(layout: &Layout, cost: &CostParams) -> Result<DMatrix<f64>> {
    check_dim("rows of Q", layout.n, cost.q().nrows())?;
    check_dim("rows of R", layout.m, cost.r().nrows())?;
    let (n, m) = (layout.n, layout.m);
    let r0 = layout.r(0);
    let mut g = DMatrix::zeros(layout.dim(), layout.dim());
    g.view_mut((0, 0), (n, n)).copy_from(cost.q());
    g.view_mut((r0, r0), (n, n)).copy_from(cost.q());
    g.view_mut((0, r0), (n, n)).copy_from(&(-cost.q()));
    g.view_mut((r0, 0), (n, n)).copy_from(&(-cost.q()));
    g.view_mut((n, n), (m, m)).copy_from(cost.r());
    Ok(g)
}

/// `M(L)`: maps `z_k` to `z*_{k+1}` under gain `L`, with the reference
/// window shifted and zero-padded.
pub fn closed_loop_map(plant: &PlantModel, gain: &GainMatrix) -> Result<DMatrix<f64>> {
    let layout = *gain.layout();
    check_dim("plant state", layout.n, plant.n())?;
    check_dim("plant input", layout.m, plant.m())?;
    let (n, m, horizon) = (layout.n, layout.m, layout.horizon);
    let dim = layout.dim();
    let (a, b) = (plant.a(), plant.b());
    let lx = gain.state_part();
    let mut map = DMatrix::zeros(dim, dim);
    map.view_mut((0, 0), (n, n)).copy_from(a);
    map.view_mut((0, n), (n, m)).copy_from(b);
    map.view_mut((n, 0), (m, n)).copy_from(&(&lx * a));
    map.view_mut((n, n), (m, m)).copy_from(&(&lx * b));
    // u*_{k+1} sees r_{k+2}.. through L_1..L_{N-1}; r_{k+N+1} is zero.
    for j in 1..horizon {
        map.view_mut((n, layout.r(j + 1)), (m, n))
            .copy_from(&gain.reference_part(j));
    }
    for j in 0..horizon {
        map.view_mut((layout.r(j), layout.r(j + 1)), (n, n))
            .fill_with_identity();
    }
    Ok(map)
}

/// One step of the matrix value iteration.
pub fn bellman_update(
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    map: &DMatrix<f64>,
    gamma: f64,
) -> DMatrix<f64> {
    let next = g + (map.transpose() * h * map) * gamma;
    // keep the iterate exactly symmetric
    (&next + next.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep every iterate `H^(i)` in the result.
    pub keep_iterates: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub layout: Layout,
    pub h: DMatrix<f64>,
    pub gain: GainMatrix,
    /// `‖H^(i+1) − H^(i)‖_max` per iteration.
    pub changes: Vec<f64>,
    /// `H^(0) = 0, H^(1), ...` when requested.
    pub iterates: Vec<DMatrix<f64>>,
}

impl ValueIterationResult {
    pub fn iterations(&self) -> usize {
        self.changes.len()
    }
}

/// Gain for `H`, or zero when `h_uu` is not yet positive definite (only the
/// all-zero start).
fn gain_or_zero(h: &DMatrix<f64>, layout: &Layout) -> Result<GainMatrix> {
    if linalg::max_abs(h) == 0.0 {
        return Ok(GainMatrix::zeros(*layout));
    }
    gain_from_h(h, layout)
}

/// Iterates `H^(i+1) = G + γ M(L^(i))ᵀ H^(i) M(L^(i))` from `H^(0) = 0`,
/// `L^(0) = 0`, until the max-norm change drops below `opts.tol`.
pub fn model_value_iteration(
    plant: &PlantModel,
    cost: &CostParams,
    horizon: usize,
    opts: IterationOptions,
) -> Result<ValueIterationResult> {
    let layout = Layout::new(plant.n(), plant.m(), horizon)?;
    let g = cost_core(&layout, cost)?;
    let gamma = cost.gamma();
    let mut h = DMatrix::zeros(layout.dim(), layout.dim());
    let mut iterates = Vec::new();
    if opts.keep_iterates {
        iterates.push(h.clone());
    }
    let mut changes = Vec::new();
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let gain = gain_or_zero(&h, &layout)?;
        let map = closed_loop_map(plant, &gain)?;
        let next = bellman_update(&g, &h, &map, gamma);
        last_change = linalg::max_abs(&(&next - &h));
        changes.push(last_change);
        h = next;
        if opts.keep_iterates {
            iterates.push(h.clone());
        }
        if last_change < opts.tol {
            let gain = gain_from_h(&h, &layout)?;
            return Ok(ValueIterationResult {
                layout,
                h,
                gain,
                changes,
                iterates,
            });
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: opts.max_iter,
        last_change,
    })
}

/// The first `count + 1` iterates `H^(0) = 0, ..., H^(count)`, without a
/// stopping test.
pub fn value_iteration_iterates(
    plant: &PlantModel,
    cost: &CostParams,
    horizon: usize,
    count: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let layout = Layout::new(plant.n(), plant.m(), horizon)?;
    let g = cost_core(&layout, cost)?;
    let mut h = DMatrix::zeros(layout.dim(), layout.dim());
    let mut out = vec![h.clone()];
    for _ in 0..count {
        let gain = gain_or_zero(&h, &layout)?;
        h = bellman_update(&g, &h, &closed_loop_map(plant, &gain)?, cost.gamma());
        out.push(h.clone());
    }
    Ok(out)
}

/// `‖H − G − γ M(L(H))ᵀ H M(L(H))‖_max`
pub fn bellman_matrix_residual(
    plant: &PlantModel,
    cost: &CostParams,
    h: &DMatrix<f64>,
    layout: &Layout,
) -> Result<f64> {
    let g = cost_core(layout, cost)?;
    let gain = gain_from_h(h, layout)?;
    let map = closed_loop_map(plant, &gain)?;
    Ok(linalg::max_abs(&(bellman_update(&g, h, &map, cost.gamma()) - h)))
}

/// Hessian of the `K`-step Q-function at stage 0 by backward induction over
/// explicit quadratic forms, restricted to `[x; u; r_0; ...; r_N]`.
///
/// Stage `κ` works on `[x; u; r_κ; ...; r_K]`. The terminal stage is the bare
/// one-step cost; each earlier stage adds `γ V_{κ+1}(A x + B u, r_{κ+1..K})`
/// and the value `V_κ` is the Schur complement that minimizes over `u`.
pub fn finite_horizon_dp(
    plant: &PlantModel,
    cost: &CostParams,
    horizon: usize,
    k_total: usize,
) -> Result<DMatrix<f64>> {
    if k_total < horizon {
        return Err(Error::InvalidDimensions(format!(
            "optimization horizon K = {k_total} must be at least N = {horizon}"
        )));
    }
    let layout = Layout::new(plant.n(), plant.m(), horizon)?;
    let (n, m) = (layout.n, layout.m);
    let (a, b) = (plant.a(), plant.b());
    let (q, r) = (cost.q(), cost.r());
    let gamma = cost.gamma();

    // Value at stage κ+1 over [x; r_{κ+1}; ...; r_K]; empty before the last stage.
    let mut value: Option<DMatrix<f64>> = None;
    let mut stage_q = DMatrix::zeros(0, 0);
    for kappa in (0..=k_total).rev() {
        let refs = k_total - kappa + 1; // r_κ..r_K
        let dim = n + m + refs * n;
        let (ux, r0) = (n, n + m);
        let mut hq = DMatrix::zeros(dim, dim);
        // one-step cost on (x, u, r_κ)
        hq.view_mut((0, 0), (n, n)).copy_from(q);
        hq.view_mut((r0, r0), (n, n)).copy_from(q);
        hq.view_mut((0, r0), (n, n)).copy_from(&(-q));
        hq.view_mut((r0, 0), (n, n)).copy_from(&(-q));
        hq.view_mut((ux, ux), (m, m)).copy_from(r);
        if let Some(p) = &value {
            // successor [A x + B u; r_{κ+1..K}] sits at (x,u) and the tail block
            let tail = (refs - 1) * n;
            let ab = {
                let mut ab = DMatrix::zeros(n, n + m);
                ab.columns_mut(0, n).copy_from(a);
                ab.columns_mut(n, m).copy_from(b);
                ab
            };
            let pxx = p.view((0, 0), (n, n));
            let pxr = p.view((0, n), (n, tail));
            let prr = p.view((n, n), (tail, tail));
            let xu_xu = ab.transpose() * pxx * &ab;
            let xu_r = ab.transpose() * pxr;
            let mut add = DMatrix::zeros(dim, dim);
            add.view_mut((0, 0), (n + m, n + m)).copy_from(&xu_xu);
            let t0 = r0 + n;
            add.view_mut((0, t0), (n + m, tail)).copy_from(&xu_r);
            add.view_mut((t0, 0), (tail, n + m)).copy_from(&xu_r.transpose());
            add.view_mut((t0, t0), (tail, tail)).copy_from(&prr);
            hq += add * gamma;
        }
        let hq = (&hq + hq.transpose()) * 0.5;
        if kappa == 0 {
            stage_q = hq;
            break;
        }
        // eliminate u: keep [x; r_κ; ...]
        let keep: Vec<usize> = (0..n).chain(n + m..dim).collect();
        let huu = hq.view((ux, ux), (m, m)).into_owned();
        let chol = huu
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("stage h_uu"))?;
        let hku = DMatrix::from_fn(keep.len(), m, |i, j| hq[(keep[i], ux + j)]);
        let hkk = DMatrix::from_fn(keep.len(), keep.len(), |i, j| hq[(keep[i], keep[j])]);
        let v = &hkk - &hku * chol.solve(&hku.transpose());
        value = Some((&v + v.transpose()) * 0.5);
    }
    Ok(stage_q.view((0, 0), (layout.dim(), layout.dim())).into_owned())
}

/// Result of the discounted Riccati iteration.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Value Hessian `P` (`V(x) = ½ xᵀ P x`).
    pub p: DMatrix<f64>,
    /// `u = K x`
    pub gain: DMatrix<f64>,
    /// `P^(0) = 0, P^(1), ...`
    pub trace: Vec<DMatrix<f64>>,
}

/// Discounted regulator by value iteration from `P = 0`:
/// `P ← Q + γAᵀPA − γ²AᵀPB (R + γBᵀPB)⁻¹ BᵀPA`, `K = −(R + γBᵀPB)⁻¹ γBᵀPA`.
pub fn riccati_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    check_dim("rows of B", n, b.nrows())?;
    let mut p = DMatrix::zeros(n, n);
    let mut trace = vec![p.clone()];
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        let s = r + b.transpose() * &p * b * gamma;
        let chol = s
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("R + γBᵀPB"))?;
        let bpa = b.transpose() * &p * a;
        let next = q + a.transpose() * &p * a * gamma
            - bpa.transpose() * chol.solve(&bpa) * (gamma * gamma);
        let next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::MaxIterationsExceeded {
                iterations: trace.len(),
                last_change: f64::INFINITY,
            });
        }
        last_change = linalg::max_abs(&(&next - &p));
        p = next;
        trace.push(p.clone());
        if last_change <= tol * linalg::max_abs(&p).max(1.0) {
            let s = r + b.transpose() * &p * b * gamma;
            let chol = s.cholesky().ok_or(Error::NotPositiveDefinite("R + γBᵀPB"))?;
            let gain = -chol.solve(&(b.transpose() * &p * a)) * gamma;
            return Ok(RiccatiSolution { p, gain, trace });
        }
    }
    Err(Error::MaxIterationsExceeded {
        iterations: max_iter,
        last_change,
    })
}

/// Diagnostics of a converged oracle `H` against the structural pattern.
#[derive(Debug, Clone)]
pub struct StructureReport {
    pub dim: usize,
    pub free_entries: usize,
    pub max_h: f64,
    /// Largest magnitude outside the pattern.
    pub max_structural: f64,
    /// `h_{x r_0}` and `h_{r_0 r_0}` as found.
    pub h_x_r0: DMatrix<f64>,
    pub h_r0_r0: DMatrix<f64>,
    /// Distances of those blocks from `−Q` and `+Q`.
    pub h_x_r0_vs_minus_q: f64,
    pub h_r0_r0_vs_q: f64,
    /// Spectral radius of `√γ (A + B L_x)`.
    pub closed_loop_radius: f64,
}

impl StructureReport {
    pub fn relative_structural(&self) -> f64 {
        if self.max_h == 0.0 {
            0.0
        } else {
            self.max_structural / self.max_h
        }
    }
}

pub fn structure_report(
    plant: &PlantModel,
    cost: &CostParams,
    h: &DMatrix<f64>,
    gain: &GainMatrix,
    pattern: &SparsityPattern,
) -> Result<StructureReport> {
    let layout = *pattern
        .layout()
        .ok_or_else(|| Error::InvalidDimensions("pattern without tracking layout".into()))?;
    let n = layout.n;
    let r0 = layout.r(0);
    let h_x_r0 = h.view((0, r0), (n, n)).into_owned();
    let h_r0_r0 = h.view((r0, r0), (n, n)).into_owned();
    Ok(StructureReport {
        dim: layout.dim(),
        free_entries: pattern.len(),
        max_h: linalg::max_abs(h),
        max_structural: crate::qstructure::max_structural_residual(h, pattern),
        h_x_r0_vs_minus_q: linalg::max_abs(&(&h_x_r0 + cost.q())),
        h_r0_r0_vs_q: linalg::max_abs(&(&h_r0_r0 - cost.q())),
        h_x_r0,
        h_r0_r0,
        closed_loop_radius: closed_loop_radius(plant, gain, cost.gamma()),
    })
}

/// Spectral radius of `√γ (A + B L_x)`.
pub fn closed_loop_radius(plant: &PlantModel, gain: &GainMatrix, gamma: f64) -> f64 {
    let acl = plant.a() + plant.b() * gain.state_part();
    linalg::spectral_radius(&(acl * gamma.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(gamma: f64) -> (PlantModel, CostParams) {
        (
            PlantModel::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0))
                .unwrap(),
            CostParams::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), gamma).unwrap(),
        )
    }

    fn system1() -> (PlantModel, CostParams) {
        (
            PlantModel::new(
                DMatrix::from_row_slice(2, 2, &[0.99, 0.9, -0.02, 0.8]),
                DMatrix::from_row_slice(2, 1, &[0.01, 0.02]),
            )
            .unwrap(),
            CostParams::new(
                DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 0.0]),
                DMatrix::identity(1, 1),
                0.9,
            )
            .unwrap(),
        )
    }

    #[test]
    fn cost_core_is_symmetric_psd() {
        let (plant, cost) = system1();
        let layout = Layout::new(plant.n(), plant.m(), 3).unwrap();
        let g = cost_core(&layout, &cost).unwrap();
        assert!(linalg::is_symmetric(&g, 0.0));
        assert!(linalg::min_eigenvalue(&g) > -1e-12);
    }

    #[test]
    fn closed_loop_map_block_structure() {
        let (plant, _) = system1();
        let layout = Layout::new(2, 1, 3).unwrap();
        let gain = GainMatrix::new(
            DMatrix::from_fn(1, layout.gain_cols(), |_, j| j as f64 + 1.0),
            layout,
        )
        .unwrap();
        let map = closed_loop_map(&plant, &gain).unwrap();
        let r0 = layout.r(0);
        assert!(map.columns(r0, 2).iter().all(|v| *v == 0.0));
        assert!(map.columns(layout.r(1), 2).rows(0, 3).iter().all(|v| *v == 0.0));
        assert!(map.rows(layout.r(3), 2).iter().all(|v| *v == 0.0));
        assert_eq!(map[(layout.r(0), layout.r(1))], 1.0);
        // L_1 feeds r_2 into the next input; L_N is never used
        assert_eq!(map[(2, layout.r(2))], 3.0);
        assert_eq!(map[(2, layout.r(3))], 5.0);
    }

    #[test]
    fn gain_of_cost_core_is_zero() {
        let (_, cost) = system1();
        let layout = Layout::new(2, 1, 4).unwrap();
        let g = cost_core(&layout, &cost).unwrap();
        let gain = gain_from_h(&g, &layout).unwrap();
        assert!(gain.matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gain_from_indefinite_huu_fails() {
        let layout = Layout::new(1, 1, 1).unwrap();
        let h = DMatrix::zeros(layout.dim(), layout.dim());
        assert!(matches!(
            gain_from_h(&h, &layout),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn myopic_iteration_stops_at_cost_core() {
        let (plant, cost) = system1();
        let cost = cost.with_gamma(0.0).unwrap();
        let res = model_value_iteration(&plant, &cost, 4, IterationOptions::default()).unwrap();
        let g = cost_core(&res.layout, &cost).unwrap();
        assert_eq!(res.h, g);
        assert_eq!(res.iterations(), 2);
    }

    #[test]
    fn scalar_case_matches_riccati() {
        let (plant, cost) = scalar_problem(0.9);
        let res = model_value_iteration(&plant, &cost, 1, IterationOptions::default()).unwrap();
        let ric = riccati_gain(plant.a(), plant.b(), cost.q(), cost.r(), 0.9, 1e-14, 10_000)
            .unwrap();
        let lx = res.gain.state_part();
        assert!((lx[(0, 0)] - ric.gain[(0, 0)]).abs() < 1e-10);
    }

    #[test]
    fn riccati_trivial_case() {
        let i = DMatrix::identity(2, 2);
        let sol = riccati_gain(&DMatrix::zeros(2, 2), &i, &i, &i, 0.9, 1e-14, 100).unwrap();
        assert!((sol.p - &i).amax() < 1e-14);
        assert!(sol.gain.amax() < 1e-14);
    }

    #[test]
    fn riccati_trace_is_monotone() {
        let (plant, cost) = system1();
        let sol = riccati_gain(plant.a(), plant.b(), cost.q(), cost.r(), 0.9, 1e-13, 10_000)
            .unwrap();
        for w in sol.trace.windows(2) {
            assert!(linalg::min_eigenvalue(&(&w[1] - &w[0])) > -1e-9);
        }
    }

    #[test]
    fn dp_terminal_case_is_cost_core() {
        let (plant, cost) = system1();
        let cost = cost.with_gamma(0.0).unwrap();
        let h = finite_horizon_dp(&plant, &cost, 3, 3).unwrap();
        let layout = Layout::new(2, 1, 3).unwrap();
        assert_eq!(h, cost_core(&layout, &cost).unwrap());
    }

    #[test]
    fn dp_rejects_short_horizon() {
        let (plant, cost) = system1();
        assert!(finite_horizon_dp(&plant, &cost, 5, 4).is_err());
    }

    #[test]
    fn dp_equals_value_iteration_iterate() {
        // The K-step form restricted to the first N+1 references is H^(K+1).
        let (plant, cost) = system1();
        let iterates = value_iteration_iterates(&plant, &cost, 3, 8).unwrap();
        for k in 3..7 {
            let dp = finite_horizon_dp(&plant, &cost, 3, k).unwrap();
            let vi = &iterates[k + 1];
            assert!(
                (&dp - vi).amax() <= 1e-9 * linalg::max_abs(vi),
                "K = {k}: {}",
                (&dp - vi).amax()
            );
        }
    }

    #[test]
    fn fixed_point_has_small_bellman_residual() {
        let (plant, cost) = system1();
        let res = model_value_iteration(&plant, &cost, 4, IterationOptions::default()).unwrap();
        let residual = bellman_matrix_residual(&plant, &cost, &res.h, &res.layout).unwrap();
        assert!(residual < 10.0 * DEFAULT_TOL, "{residual}");
    }

    #[test]
    fn gain_control_uses_preview_only() {
        let layout = Layout::new(1, 1, 2).unwrap();
        let gain = GainMatrix::new(DMatrix::from_row_slice(1, 3, &[1.0, 10.0, 100.0]), layout)
            .unwrap();
        let w = ReferenceWindow::new(vec![
            DVector::from_element(1, 1000.0),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 3.0),
        ])
        .unwrap();
        let u = gain.control(&DVector::from_element(1, 1.0), &w).unwrap();
        assert_eq!(u[0], 1.0 + 20.0 + 300.0);
    }
}
