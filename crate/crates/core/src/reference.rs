//! Reference signals, zero-padded moving-horizon windows and the exo-system
//! generator used to train the comparison controller.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// The reference samples `r_k, ..., r_{k+N}` visible at time `k`.
///
/// Anything past the last entry is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWindow {
    entries: Vec<DVector<f64>>,
}

impl ReferenceWindow {
    pub fn new(entries: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidDimensions("empty reference window".into()));
        };
        if entries.len() < 2 {
            return Err(Error::InvalidDimensions("reference horizon must be at least 1".into()));
        }
        let n = first.len();
        for e in &entries {
            check_dim("reference entry", n, e.len())?;
        }
        Ok(Self { entries })
    }

    pub fn zeros(n: usize, horizon: usize) -> Self {
        Self {
            entries: vec![DVector::zeros(n); horizon + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn state_dim(&self) -> usize {
        self.entries[0].len()
    }

    pub fn entries(&self) -> &[DVector<f64>] {
        &self.entries
    }

    /// Entry `i` relative to the window start; zero beyond the horizon.
    pub fn get(&self, i: usize) -> DVector<f64> {
        self.entries
            .get(i)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(self.state_dim()))
    }

    /// Current reference `r_k`.
    pub fn current(&self) -> &DVector<f64> {
        &self.entries[0]
    }

    /// Drops `r_k` and appends `next` (zero when `None`).
    pub fn shift(&self, next: Option<&DVector<f64>>) -> Self {
        let n = self.state_dim();
        let mut entries = Vec::with_capacity(self.entries.len());
        entries.extend(self.entries[1..].iter().cloned());
        entries.push(next.cloned().unwrap_or_else(|| DVector::zeros(n)));
        Self { entries }
    }

    /// `[r_{k+1}; ...; r_{k+N}]`, the part of the window the gain acts on.
    pub fn preview(&self) -> DVector<f64> {
        let n = self.state_dim();
        let mut out = DVector::zeros(n * self.horizon());
        for (j, e) in self.entries[1..].iter().enumerate() {
            out.rows_mut(j * n, n).copy_from(e);
        }
        out
    }

    /// `[r_k; ...; r_{k+N}]`
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.state_dim();
        let mut out = DVector::zeros(n * self.entries.len());
        for (j, e) in self.entries.iter().enumerate() {
            out.rows_mut(j * n, n).copy_from(e);
        }
        out
    }
}

/// Free function form of [`ReferenceWindow::shift`].
pub fn shift(w: &ReferenceWindow, next: Option<&DVector<f64>>) -> ReferenceWindow {
    w.shift(next)
}

/// Two-dimensional linear exo-system `r_{k+1} = F r_k`, output `C r_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExoSystem {
    pub f: Matrix2<f64>,
    pub c: RowVector2<f64>,
    pub state: Vector2<f64>,
}

impl ExoSystem {
    /// The lightly damped rotation used to generate the training sine.
    pub fn training_sine() -> Self {
        Self {
            f: default_exo_matrix(),
            c: RowVector2::new(1.0, 0.0),
            state: Vector2::new(1.0, 0.0),
        }
    }

    pub fn with_state(mut self, state: Vector2<f64>) -> Self {
        self.state = state;
        self
    }

    /// Replaces the transition matrix, given row-major.
    pub fn with_f(mut self, f: &[[f64; 2]; 2]) -> Self {
        self.f = Matrix2::new(f[0][0], f[0][1], f[1][0], f[1][1]);
        self
    }

    pub fn output(&self) -> f64 {
        (self.c * self.state)[0]
    }
}

pub fn default_exo_matrix() -> Matrix2<f64> {
    Matrix2::new(0.9801, 0.1987, -0.1987, 0.9801)
}

/// Returns the current output and the advanced exo-system.
pub fn exo_step(e: &ExoSystem) -> (f64, ExoSystem) {
    let out = e.output();
    let next = ExoSystem {
        state: e.f * e.state,
        ..*e
    };
    (out, next)
}

/// Scalar reference generators, lifted onto the tracked state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    /// Output of a 2-state linear exo-system. `f` defaults to the training
    /// rotation, `r0` to `[1, 0]`.
    ExoSine {
        #[serde(default = "default_exo_rows")]
        f: [[f64; 2]; 2],
        #[serde(default = "default_exo_r0")]
        r0: [f64; 2],
    },
    Step {
        at: usize,
        #[serde(default)]
        before: f64,
        after: f64,
    },
    /// `offset + slope * max(0, k - start)`
    Ramp {
        #[serde(default)]
        start: usize,
        slope: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Linear-frequency sweep `A sin(2π(f0 k + (f1 - f0) k² / (2 T)))`,
    /// frequencies in cycles per step.
    Chirp {
        amplitude: f64,
        f0: f64,
        f1: f64,
        duration: usize,
    },
    /// Linear interpolation through `(k, value)` knots, held flat outside.
    Piecewise { knots: Vec<(usize, f64)> },
    /// Explicit full-state rows, zero after the last one.
    Tabulated { rows: Vec<Vec<f64>> },
}

fn default_exo_rows() -> [[f64; 2]; 2] {
    let f = default_exo_matrix();
    [[f[(0, 0)], f[(0, 1)]], [f[(1, 0)], f[(1, 1)]]]
}

fn default_exo_r0() -> [f64; 2] {
    [1.0, 0.0]
}

impl Signal {
    pub fn exo_sine() -> Self {
        Signal::ExoSine {
            f: default_exo_rows(),
            r0: default_exo_r0(),
        }
    }

    /// Scalar value at `k`; `None` for full-state tabulated signals.
    fn scalar(&self, k: usize) -> Option<f64> {
        let kf = k as f64;
        match self {
            Signal::ExoSine { f, r0 } => {
                let f = Matrix2::new(f[0][0], f[0][1], f[1][0], f[1][1]);
                let r = f.pow(k as u32) * Vector2::new(r0[0], r0[1]);
                Some(r[0])
            }
            Signal::Step { at, before, after } => Some(if k < *at { *before } else { *after }),
            Signal::Ramp {
                start,
                slope,
                offset,
            } => Some(offset + slope * k.saturating_sub(*start) as f64),
            Signal::Chirp {
                amplitude,
                f0,
                f1,
                duration,
            } => {
                let t = (*duration).max(1) as f64;
                let phase = f0 * kf + (f1 - f0) * kf * kf / (2.0 * t);
                Some(amplitude * (2.0 * std::f64::consts::PI * phase).sin())
            }
            Signal::Piecewise { knots } => Some(piecewise(knots, kf)),
            Signal::Tabulated { .. } => None,
        }
    }
}

fn piecewise(knots: &[(usize, f64)], k: f64) -> f64 {
    match knots {
        [] => 0.0,
        [(_, v)] => *v,
        _ => {
            if k <= knots[0].0 as f64 {
                return knots[0].1;
            }
            for pair in knots.windows(2) {
                let (k0, v0) = (pair[0].0 as f64, pair[0].1);
                let (k1, v1) = (pair[1].0 as f64, pair[1].1);
                if k <= k1 {
                    if k1 == k0 {
                        return v1;
                    }
                    return v0 + (v1 - v0) * (k - k0) / (k1 - k0);
                }
            }
            knots[knots.len() - 1].1
        }
    }
}

/// A reference generator bound to a state dimension.
///
/// Scalar signals are written into every tracked coordinate; the others stay
/// zero. Optional Gaussian noise is a deterministic function of
/// `(seed, time index)`, so overlapping windows agree on shared samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSource {
    signal: Signal,
    tracked: Vec<bool>,
    noise_std: f64,
    seed: u64,
}

impl ReferenceSource {
    pub fn new(signal: Signal, tracked: Vec<bool>) -> Result<Self> {
        if tracked.is_empty() {
            return Err(Error::InvalidDimensions("reference of dimension 0".into()));
        }
        if let Signal::Tabulated { rows } = &signal {
            for row in rows {
                check_dim("tabulated reference row", tracked.len(), row.len())?;
            }
        }
        Ok(Self {
            signal,
            tracked,
            noise_std: 0.0,
            seed: 0,
        })
    }

    /// Same source with additive N(0, std²) noise on tracked coordinates.
    pub fn with_noise(mut self, noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!("invalid reference noise std {noise_std}")));
        }
        self.noise_std = noise_std;
        self.seed = seed;
        Ok(self)
    }

    pub fn without_noise(&self) -> Self {
        Self {
            noise_std: 0.0,
            ..self.clone()
        }
    }

    pub fn signal(&self) -> &Signal {
        &self.signal
    }

    pub fn state_dim(&self) -> usize {
        self.tracked.len()
    }

    pub fn tracked(&self) -> &[bool] {
        &self.tracked
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Reads a tabulated source from CSV with header `r1..rn`.
    pub fn from_csv(path: impl AsRef<Path>, tracked: Vec<bool>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let n = tracked.len();
        let expected: Vec<String> = (1..=n).map(|i| format!("r{i}")).collect();
        if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
            return Err(Error::Config(format!(
                "reference CSV header must be {}, got {:?}",
                expected.join(","),
                headers
            )));
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad reference value {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(Signal::Tabulated { rows }, tracked)
    }

    /// Noise-free reference at time `k`, `None` outside the signal's support.
    pub fn clean_value(&self, k: usize) -> Option<DVector<f64>> {
        let n = self.state_dim();
        match &self.signal {
            Signal::Tabulated { rows } => rows.get(k).map(|row| {
                DVector::from_iterator(
                    n,
                    row.iter()
                        .zip(&self.tracked)
                        .map(|(v, t)| if *t { *v } else { 0.0 }),
                )
            }),
            s => {
                let v = s.scalar(k)?;
                Some(DVector::from_iterator(
                    n,
                    self.tracked.iter().map(|t| if *t { v } else { 0.0 }),
                ))
            }
        }
    }

    /// Reference at time `k` as seen through this source, including noise.
    pub fn value(&self, k: usize) -> DVector<f64> {
        let Some(mut r) = self.clean_value(k) else {
            return DVector::zeros(self.state_dim());
        };
        if self.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(k as u64);
            for (i, tracked) in self.tracked.iter().enumerate() {
                if *tracked {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    r[i] += self.noise_std * xi;
                }
            }
        }
        r
    }

    /// `r_k .. r_{k+N}`, zero wherever the source is undefined.
    pub fn window_at(&self, k: usize, horizon: usize) -> ReferenceWindow {
        let horizon = horizon.max(1);
        ReferenceWindow {
            entries: (k..=k + horizon).map(|i| self.value(i)).collect(),
        }
    }
}

/// Free function form of [`ReferenceSource::window_at`].
pub fn window_at(src: &ReferenceSource, k: usize, horizon: usize) -> ReferenceWindow {
    src.window_at(k, horizon)
}

/// Stacks a tracked-coordinate indicator as an `n x 1` lifting column.
pub(crate) fn lifting_column(tracked: &[bool]) -> DMatrix<f64> {
    DMatrix::from_iterator(
        tracked.len(),
        1,
        tracked.iter().map(|t| if *t { 1.0 } else { 0.0 }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tracked1() -> Vec<bool> {
        vec![true, false]
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn tabulated_window_is_zero_padded() {
        let rows = (0..5).map(|k| vec![k as f64 + 1.0, 0.0]).collect();
        let src = ReferenceSource::new(Signal::Tabulated { rows }, tracked1()).unwrap();
        let w = src.window_at(3, 10);
        assert_eq!(w.entries().len(), 11);
        assert_eq!(w.get(0), v(&[4.0, 0.0]));
        assert_eq!(w.get(1), v(&[5.0, 0.0]));
        for i in 2..=10 {
            assert_eq!(w.get(i), v(&[0.0, 0.0]));
        }
        assert_eq!(w.get(42), v(&[0.0, 0.0]));
    }

    #[test]
    fn exo_sine_window_matches_rotation() {
        let src = ReferenceSource::new(Signal::exo_sine(), tracked1()).unwrap();
        let w = src.window_at(0, 10);
        assert_eq!(w.get(0)[0], 1.0);
        assert!((w.get(1)[0] - 0.9801).abs() < 1e-15);
        assert_eq!(w.get(1)[1], 0.0);
    }

    #[test]
    fn step_window_crosses_the_jump() {
        let src = ReferenceSource::new(
            Signal::Step {
                at: 20,
                before: 0.5,
                after: 2.0,
            },
            tracked1(),
        )
        .unwrap();
        let w = src.window_at(15, 10);
        for i in 0..5 {
            assert_eq!(w.get(i)[0], 0.5);
        }
        for i in 5..=10 {
            assert_eq!(w.get(i)[0], 2.0);
        }
    }

    #[test]
    fn shift_examples() {
        let (a, b, c, d) = (v(&[1.0]), v(&[2.0]), v(&[3.0]), v(&[4.0]));
        let w = ReferenceWindow::new(vec![a, b.clone(), c.clone()]).unwrap();
        assert_eq!(shift(&w, Some(&d)).entries(), &[b.clone(), c.clone(), d]);
        assert_eq!(w.shift(None).entries(), &[b, c, v(&[0.0])]);
        let mut z = w.clone();
        for _ in 0..=w.horizon() {
            z = z.shift(None);
        }
        assert_eq!(z, ReferenceWindow::zeros(1, 2));
    }

    #[test]
    fn window_requires_horizon() {
        assert!(ReferenceWindow::new(vec![v(&[1.0])]).is_err());
        assert!(ReferenceWindow::new(vec![v(&[1.0]), v(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn exo_step_examples() {
        let e = ExoSystem::training_sine();
        let (out, next) = exo_step(&e);
        assert_eq!(out, 1.0);
        assert!((next.state - Vector2::new(0.9801, -0.1987)).amax() < 1e-15);

        let zero = e.with_state(Vector2::zeros());
        let (out, next) = exo_step(&zero);
        assert_eq!(out, 0.0);
        assert_eq!(next.state, Vector2::zeros());
    }

    #[test]
    fn exo_sine_stays_bounded() {
        let f = default_exo_matrix();
        let eig = f.complex_eigenvalues();
        let radius = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((radius - 1.0).abs() < 1e-4);
        let mut e = ExoSystem::training_sine();
        for _ in 0..100 {
            e = exo_step(&e).1;
            let norm = e.state.norm();
            assert!((0.99..1.01).contains(&norm), "norm {norm}");
        }
    }

    #[test]
    fn scalar_signals() {
        let ramp = Signal::Ramp {
            start: 5,
            slope: 0.5,
            offset: 1.0,
        };
        assert_eq!(ramp.scalar(3), Some(1.0));
        assert_eq!(ramp.scalar(9), Some(3.0));
        let pw = Signal::Piecewise {
            knots: vec![(0, 0.0), (10, 1.0), (20, 1.0), (30, -1.0)],
        };
        assert_eq!(pw.scalar(5), Some(0.5));
        assert_eq!(pw.scalar(15), Some(1.0));
        assert_eq!(pw.scalar(25), Some(0.0));
        assert_eq!(pw.scalar(99), Some(-1.0));
        let chirp = Signal::Chirp {
            amplitude: 2.0,
            f0: 0.25,
            f1: 0.25,
            duration: 100,
        };
        assert!((chirp.scalar(1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn untracked_coordinates_stay_zero() {
        let src = ReferenceSource::new(Signal::exo_sine(), tracked1())
            .unwrap()
            .with_noise(0.3, 9)
            .unwrap();
        for k in 0..50 {
            assert_eq!(src.value(k)[1], 0.0);
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let src = ReferenceSource::new(Signal::exo_sine(), tracked1()).unwrap();
        let a = src.clone().with_noise(0.3, 1).unwrap();
        let b = src.clone().with_noise(0.3, 1).unwrap();
        let c = src.with_noise(0.3, 2).unwrap();
        assert_eq!(a.window_at(7, 10), b.window_at(7, 10));
        assert_ne!(a.window_at(7, 10), c.window_at(7, 10));
    }

    #[test]
    fn noisy_window_mean_recovers_clean_window() {
        let std = 0.3;
        let base = ReferenceSource::new(
            Signal::Ramp {
                start: 0,
                slope: 0.1,
                offset: 0.0,
            },
            tracked1(),
        )
        .unwrap();
        let clean = base.window_at(4, 5);
        let seeds = 1000;
        let mut mean = DVector::zeros(clean.stacked().len());
        for seed in 0..seeds {
            mean += base.clone().with_noise(std, seed).unwrap().window_at(4, 5).stacked();
        }
        mean /= seeds as f64;
        let bound = 3.0 * std / (seeds as f64).sqrt();
        let diff = mean - clean.stacked();
        assert!(diff.amax() < bound, "max deviation {} vs {bound}", diff.amax());
    }

    #[test]
    fn csv_source_roundtrip() {
        let dir = std::env::temp_dir().join(format!("qtrack-ref-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ref.csv");
        std::fs::write(&path, "r1,r2\n1.0,9.0\n2.0,9.0\n").unwrap();
        let src = ReferenceSource::from_csv(&path, tracked1()).unwrap();
        assert_eq!(src.clean_value(1), Some(v(&[2.0, 0.0])));
        assert_eq!(src.clean_value(2), None);
        std::fs::write(&path, "a,b\n1.0,2.0\n").unwrap();
        assert!(ReferenceSource::from_csv(&path, tracked1()).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    fn any_signal() -> impl Strategy<Value = Signal> {
        prop_oneof![
            Just(Signal::exo_sine()),
            (0usize..40, -2.0..2.0f64, -2.0..2.0f64)
                .prop_map(|(at, before, after)| Signal::Step { at, before, after }),
            (0usize..40, -1.0..1.0f64, -1.0..1.0f64)
                .prop_map(|(start, slope, offset)| Signal::Ramp { start, slope, offset }),
            (0.5..2.0f64, 0.0..0.1f64, 0.0..0.1f64, 10usize..100).prop_map(
                |(amplitude, f0, f1, duration)| Signal::Chirp { amplitude, f0, f1, duration }
            ),
            prop::collection::vec(-1.0..1.0f64, 0..30).prop_map(|vals| Signal::Tabulated {
                rows: vals.into_iter().map(|v| vec![v, 0.0]).collect()
            }),
        ]
    }

    proptest! {
        #[test]
        fn shift_then_append_equals_next_window(sig in any_signal(), k in 0usize..50, horizon in 1usize..12) {
            let src = ReferenceSource::new(sig, tracked1()).unwrap();
            let next = src.value(k + horizon + 1);
            prop_assert_eq!(src.window_at(k, horizon).shift(Some(&next)), src.window_at(k + 1, horizon));
        }

        #[test]
        fn padding_is_exactly_zero(vals in prop::collection::vec(-5.0..5.0f64, 0..20), k in 0usize..30, horizon in 1usize..12) {
            let len = vals.len();
            let src = ReferenceSource::new(
                Signal::Tabulated { rows: vals.into_iter().map(|v| vec![v, 3.0]).collect() },
                tracked1(),
            ).unwrap().with_noise(0.5, 3).unwrap();
            let w = src.window_at(k, horizon);
            for i in 0..=horizon {
                if k + i >= len {
                    prop_assert!(w.get(i).iter().all(|v| *v == 0.0));
                }
            }
        }
    }
}
