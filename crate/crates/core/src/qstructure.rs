//! Structure of the reference-dependent Q-function matrix `H`.
//!
//! The augmented vector is laid out as `z = [x; u; r_0; r_1; ...; r_N]`.
//! Only the upper-triangle entries that can be nonzero are free weights;
//! [`SparsityPattern`] fixes their order (row-major over the upper triangle),
//! which is also the column order of every weight log.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

/// Block offsets of `z = [x; u; r_0; ...; r_N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

/// Which block an index of `z` falls into, with the offset inside the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    X(usize),
    U(usize),
    /// `R(j, i)` is coordinate `i` of `r_j`.
    R(usize, usize),
}

impl Layout {
    pub fn new(n: usize, m: usize, horizon: usize) -> Result<Self> {
        if n == 0 || m == 0 || horizon == 0 {
            return Err(Error::InvalidDimensions(format!(
                "n, m and N must be positive (got {n}, {m}, {horizon})"
            )));
        }
        Ok(Self { n, m, horizon })
    }

    /// `(N + 2) n + m`
    pub fn dim(&self) -> usize {
        (self.horizon + 2) * self.n + self.m
    }

    pub fn x(&self) -> usize {
        0
    }

    pub fn u(&self) -> usize {
        self.n
    }

    /// Offset of `r_j`.
    pub fn r(&self, j: usize) -> usize {
        self.n + self.m + j * self.n
    }

    /// Width of the gain `[L_x, L_1, ..., L_N]`.
    pub fn gain_cols(&self) -> usize {
        self.n * (self.horizon + 1)
    }

    pub fn slot(&self, idx: usize) -> Slot {
        if idx < self.n {
            Slot::X(idx)
        } else if idx < self.n + self.m {
            Slot::U(idx - self.n)
        } else {
            let off = idx - self.n - self.m;
            Slot::R(off / self.n, off % self.n)
        }
    }

    /// Assembles `z` from its parts; `refs` holds `r_0..r_N` stacked.
    pub fn augmented(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        refs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("state", self.n, x.len())?;
        check_dim("input", self.m, u.len())?;
        check_dim("stacked reference window", self.n * (self.horizon + 1), refs.len())?;
        let mut z = DVector::zeros(self.dim());
        z.rows_mut(0, self.n).copy_from(x);
        z.rows_mut(self.n, self.m).copy_from(u);
        z.rows_mut(self.r(0), refs.len()).copy_from(refs);
        Ok(z)
    }
}

/// Weight count with only the generic zero blocks removed:
/// `½((N+2)n+m)((N+2)n+m+1) − (n²(2N−1)+mn)`.
pub fn count_weights_full(n: usize, m: usize, horizon: usize) -> usize {
    let d = (horizon + 2) * n + m;
    d * (d + 1) / 2 - (n * n * (2 * horizon - 1) + m * n)
}

/// Size of a plain symmetric parametrization, `½ d (d + 1)`.
pub fn count_weights_symmetric(n: usize, m: usize, horizon: usize) -> usize {
    let d = (horizon + 2) * n + m;
    d * (d + 1) / 2
}

/// Weight count when `q` state coordinates carry no tracking weight:
/// `(n−q)(n−q+1)(N/2+1) + ½n(n+1) + (m+N(n−q))(m+n) + ½(N−2)(N−1)(n−q)²`.
///
/// Evaluated in doubled integers and checked for integrality.
pub fn count_weights_sparse(n: usize, m: usize, horizon: usize, q: usize) -> Result<usize> {
    if q > n {
        return Err(Error::InvalidDimensions(format!("q = {q} exceeds n = {n}")));
    }
    let (ni, mi, hi, pi) = (n as i128, m as i128, horizon as i128, (n - q) as i128);
    let doubled = pi * (pi + 1) * (hi + 2)
        + ni * (ni + 1)
        + 2 * (mi + hi * pi) * (mi + ni)
        + (hi - 2) * (hi - 1) * pi * pi;
    if doubled % 2 != 0 || doubled < 0 {
        return Err(Error::NonIntegralCount { n, m, horizon, q });
    }
    Ok((doubled / 2) as usize)
}

/// Number of free entries enumerated by [`build_pattern`] when `p` of the `n`
/// state coordinates are tracked.
pub fn count_pattern_entries(n: usize, m: usize, horizon: usize, p: usize) -> usize {
    let tri = |k: usize| k * (k + 1) / 2;
    tri(n) + n * m + tri(m)
        + p * p                       // x–r_0, tracked rows only
        + n * p * horizon             // x–r_1..r_N
        + m * p * horizon             // u–r_1..r_N
        + 2 * tri(p)                  // r_0–r_0 and r_1–r_1
        + (horizon - 1) * tri(p)      // r_j–r_j, j >= 2
        + (horizon - 1) * (horizon - 1).saturating_sub(1) / 2 * p * p // r_i–r_j, 2 <= i < j
}

/// Ordered free entries `(i, j)`, `i <= j`, of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    dim: usize,
    layout: Option<Layout>,
    tracked: Vec<bool>,
    entries: Vec<(usize, usize)>,
    mask: Vec<bool>,
}

impl SparsityPattern {
    fn from_entries(
        dim: usize,
        layout: Option<Layout>,
        tracked: Vec<bool>,
        entries: Vec<(usize, usize)>,
    ) -> Self {
        let mut mask = vec![false; dim * dim];
        for &(i, j) in &entries {
            mask[i * dim + j] = true;
            mask[j * dim + i] = true;
        }
        Self {
            dim,
            layout,
            tracked,
            entries,
            mask,
        }
    }

    /// All upper-triangle entries of a `dim x dim` matrix.
    pub fn dense(dim: usize) -> Self {
        let entries = (0..dim)
            .flat_map(|i| (i..dim).map(move |j| (i, j)))
            .collect();
        Self::from_entries(dim, None, Vec::new(), entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of free weights.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    /// Block layout, present for tracking patterns.
    pub fn layout(&self) -> Option<&Layout> {
        self.layout.as_ref()
    }

    pub fn tracked(&self) -> &[bool] {
        &self.tracked
    }

    /// Number of state coordinates whose Q row and column vanish.
    pub fn q(&self) -> usize {
        self.tracked.iter().filter(|t| !**t).count()
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.dim + j]
    }

    /// Column names `H[i,j]` for weight logs.
    pub fn entry_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|(i, j)| format!("H[{i},{j}]"))
            .collect()
    }
}

/// Whether entry `(i, j)` (`i <= j`) of the tracking `H` can be nonzero.
fn tracking_entry_is_free(layout: &Layout, tracked: &[bool], i: usize, j: usize) -> bool {
    use Slot::*;
    match (layout.slot(i), layout.slot(j)) {
        (X(_), X(_)) | (X(_), U(_)) | (U(_), U(_)) => true,
        // h_{x r_0} equals -Q, so untracked rows vanish as well.
        (X(a), R(0, b)) => tracked[a] && tracked[b],
        (X(_), R(_, b)) => tracked[b],
        (U(_), R(t, b)) => t >= 1 && tracked[b],
        (R(s, a), R(t, b)) => {
            tracked[a]
                && tracked[b]
                && match s {
                    0 | 1 => t == s,
                    _ => true,
                }
        }
        // i <= j never puts a later block first.
        _ => false,
    }
}

/// Free entries of `H` for horizon `N` and tracking weight `Q`.
pub fn build_pattern(n: usize, m: usize, horizon: usize, q: &DMatrix<f64>) -> Result<SparsityPattern> {
    let layout = Layout::new(n, m, horizon)?;
    check_dim("rows of Q", n, q.nrows())?;
    check_dim("columns of Q", n, q.ncols())?;
    let tracked = crate::plant::tracked_mask(q);
    let dim = layout.dim();
    let entries = (0..dim)
        .flat_map(|i| (i..dim).map(move |j| (i, j)))
        .filter(|&(i, j)| tracking_entry_is_free(&layout, &tracked, i, j))
        .collect();
    Ok(SparsityPattern::from_entries(dim, Some(layout), tracked, entries))
}

/// Quadratic basis: `z_i z_j` off the diagonal, `½ z_i²` on it.
pub fn phi(z: &DVector<f64>, pattern: &SparsityPattern) -> Result<DVector<f64>> {
    check_dim("augmented vector", pattern.dim, z.len())?;
    Ok(DVector::from_iterator(
        pattern.len(),
        pattern.entries.iter().map(|&(i, j)| {
            if i == j {
                0.5 * z[i] * z[i]
            } else {
                z[i] * z[j]
            }
        }),
    ))
}

/// Weight vector over the free entries of one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(pub DVector<f64>);

impl Weights {
    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

impl std::ops::Deref for Weights {
    type Target = DVector<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Symmetric `H` whose support lies inside a pattern.
#[derive(Debug, Clone)]
pub struct StructuredH<'p> {
    matrix: DMatrix<f64>,
    pattern: &'p SparsityPattern,
}

impl<'p> StructuredH<'p> {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn pattern(&self) -> &'p SparsityPattern {
        self.pattern
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// Scatters `w` into a symmetric matrix.
pub fn weights_to_h<'p>(w: &Weights, pattern: &'p SparsityPattern) -> Result<StructuredH<'p>> {
    check_dim("weight vector", pattern.len(), w.len())?;
    let mut h = DMatrix::zeros(pattern.dim, pattern.dim);
    for (&(i, j), &value) in pattern.entries.iter().zip(w.0.iter()) {
        h[(i, j)] = value;
        h[(j, i)] = value;
    }
    Ok(StructuredH { matrix: h, pattern })
}

/// Relative tolerance for entries that must vanish outside the pattern.
pub const TOL_STRUCT: f64 = 1e-8;

/// Gathers the free entries of `h`, rejecting matrices with support outside
/// the pattern beyond `TOL_STRUCT · max|H|`.
pub fn h_to_weights(h: &DMatrix<f64>, pattern: &SparsityPattern) -> Result<Weights> {
    check_dim("rows of H", pattern.dim, h.nrows())?;
    check_dim("columns of H", pattern.dim, h.ncols())?;
    let tol = TOL_STRUCT * linalg::max_abs(h);
    for i in 0..pattern.dim {
        for j in 0..pattern.dim {
            if !pattern.is_free(i, j) && h[(i, j)].abs() > tol {
                return Err(Error::StructureViolation {
                    row: i,
                    col: j,
                    value: h[(i, j)],
                });
            }
        }
    }
    Ok(Weights(DVector::from_iterator(
        pattern.len(),
        pattern.entries.iter().map(|&(i, j)| 0.5 * (h[(i, j)] + h[(j, i)])),
    )))
}

/// Largest magnitude among entries outside the pattern.
pub fn max_structural_residual(h: &DMatrix<f64>, pattern: &SparsityPattern) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..pattern.dim {
        for j in 0..pattern.dim {
            if !pattern.is_free(i, j) {
                worst = worst.max(h[(i, j)].abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(values))
    }

    #[test]
    fn full_counts() {
        assert_eq!(count_weights_full(2, 1, 10), 247);
        assert_eq!(count_weights_full(6, 1, 10), 2011);
        assert_eq!(count_weights_full(1, 1, 1), 8);
        assert_eq!(count_weights_symmetric(2, 1, 10), 325);
        assert_eq!(count_weights_symmetric(6, 1, 10), 2701);
    }

    #[test]
    fn sparse_counts() {
        assert_eq!(count_weights_sparse(2, 1, 10, 1).unwrap(), 84);
        assert_eq!(count_weights_sparse(6, 1, 10, 5).unwrap(), 146);
        assert_eq!(count_weights_sparse(2, 1, 10, 2).unwrap(), 6);
        assert!(count_weights_sparse(2, 1, 10, 3).is_err());
    }

    #[test]
    fn system_patterns_match_sparse_counts() {
        let p1 = build_pattern(2, 1, 10, &diag(&[100.0, 0.0])).unwrap();
        assert_eq!(p1.len(), 84);
        assert_eq!(p1.dim(), 25);
        assert_eq!(p1.q(), 1);
        let p2 = build_pattern(6, 1, 10, &diag(&[0.0, 0.0, 0.0, 100.0, 0.0, 0.0])).unwrap();
        assert_eq!(p2.len(), 146);
        assert_eq!(p2.dim(), 73);
    }

    #[test]
    fn zero_q_leaves_only_state_input_blocks() {
        let p = build_pattern(2, 1, 10, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(p.len(), count_weights_sparse(2, 1, 10, 2).unwrap());
        assert_eq!(p.len(), 6);
        assert!(p.entries().iter().all(|&(i, j)| i < 3 && j < 3));
    }

    #[test]
    fn structural_zeros_do_not_depend_on_q() {
        // n = m = 1, N = 2: z = [x, u, r0, r1, r2]
        let p = build_pattern(1, 1, 2, &diag(&[1.0])).unwrap();
        let layout = p.layout().unwrap();
        let (u, r0, r1, r2) = (layout.u(), layout.r(0), layout.r(1), layout.r(2));
        for (i, j) in [(u, r0), (r0, r1), (r0, r2), (r1, r2)] {
            assert!(!p.is_free(i, j), "({i},{j}) should be a structural zero");
        }
        assert!(p.is_free(u, r1) && p.is_free(r2, r2) && p.is_free(0, r0));
        assert_eq!(p.len(), count_weights_full(1, 1, 2));
    }

    #[test]
    fn dense_pattern_tracks_eq14_when_nothing_is_untracked() {
        for (n, m, h) in [(1, 1, 1), (2, 1, 10), (3, 2, 4), (2, 2, 5)] {
            let p = build_pattern(n, m, h, &DMatrix::identity(n, n)).unwrap();
            assert_eq!(p.len(), count_weights_full(n, m, h), "({n},{m},{h})");
            assert_eq!(p.len(), count_pattern_entries(n, m, h, n));
        }
    }

    #[test]
    fn pattern_count_formula() {
        for n in 1..=4 {
            for m in 1..=2 {
                for h in 1..=6 {
                    for p in 0..=n {
                        let mut q = DMatrix::zeros(n, n);
                        for l in 0..p {
                            q[(l, l)] = 1.0;
                        }
                        let pat = build_pattern(n, m, h, &q).unwrap();
                        assert_eq!(pat.len(), count_pattern_entries(n, m, h, p));
                        // the closed form counts h_uu as m² and agrees for single inputs
                        if p <= 1 && m == 1 {
                            assert_eq!(pat.len(), count_weights_sparse(n, m, h, n - p).unwrap());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn entries_are_row_major_upper_triangle() {
        let p = build_pattern(2, 1, 3, &diag(&[1.0, 0.0])).unwrap();
        assert!(p.entries().windows(2).all(|w| w[0] < w[1]));
        assert!(p.entries().iter().all(|(i, j)| i <= j));
        assert_eq!(p.entry_names()[0], "H[0,0]");
    }

    #[test]
    fn phi_examples() {
        let p = build_pattern(1, 1, 1, &diag(&[1.0])).unwrap();
        let zero = phi(&DVector::zeros(4), &p).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let z = DVector::from_column_slice(&[3.0, -1.0, 2.0, 0.5]);
        let f = phi(&z, &p).unwrap();
        let idx = p.entries().iter().position(|&e| e == (0, 0)).unwrap();
        assert_eq!(f[idx], 4.5);
        assert!(phi(&DVector::zeros(3), &p).is_err());
    }

    #[test]
    fn zero_weights_give_zero_matrix() {
        let p = build_pattern(2, 1, 3, &diag(&[1.0, 0.0])).unwrap();
        let h = weights_to_h(&Weights::zeros(p.len()), &p).unwrap();
        assert!(h.matrix().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn h_to_weights_rejects_structural_violation() {
        let p = build_pattern(1, 1, 2, &diag(&[1.0])).unwrap();
        let mut h = DMatrix::identity(p.dim(), p.dim());
        let (u, r0) = (p.layout().unwrap().u(), p.layout().unwrap().r(0));
        h[(u, r0)] = 0.5;
        h[(r0, u)] = 0.5;
        assert!(matches!(
            h_to_weights(&h, &p),
            Err(Error::StructureViolation { .. })
        ));
        // residue below tol_struct is accepted
        h[(u, r0)] = 1e-10;
        h[(r0, u)] = 1e-10;
        assert!(h_to_weights(&h, &p).is_ok());
    }

    fn random_case() -> impl Strategy<Value = (SparsityPattern, Vec<f64>, Vec<f64>)> {
        (1usize..4, 1usize..3, 1usize..5, 0usize..4)
            .prop_flat_map(|(n, m, h, p)| {
                let p = p.min(n);
                let mut q = DMatrix::zeros(n, n);
                for l in 0..p {
                    q[(l, l)] = 1.0 + l as f64;
                }
                let pat = build_pattern(n, m, h, &q).unwrap();
                let (len, dim) = (pat.len(), pat.dim());
                (
                    Just(pat),
                    prop::collection::vec(-10.0..10.0f64, len),
                    prop::collection::vec(-3.0..3.0f64, dim),
                )
            })
    }

    proptest! {
        #[test]
        fn quadratic_form_identity((pat, w, z) in random_case()) {
            let w = Weights(DVector::from_vec(w));
            let z = DVector::from_vec(z);
            let h = weights_to_h(&w, &pat).unwrap();
            let lhs = w.dot(&phi(&z, &pat).unwrap());
            let rhs = 0.5 * (z.transpose() * h.matrix() * &z)[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn weights_roundtrip_exactly((pat, w, _z) in random_case()) {
            let w = Weights(DVector::from_vec(w));
            let h = weights_to_h(&w, &pat).unwrap();
            prop_assert!(linalg::is_symmetric(h.matrix(), 0.0));
            prop_assert_eq!(h_to_weights(h.matrix(), &pat).unwrap(), w);
        }
    }
}
