//! Tracking and weight-error metrics, and closed-loop simulation.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::learner::{policy_improvement, Batch, TdRegression};
use crate::oracle::GainMatrix;
use crate::plant::{guarded_step, one_step_cost, CostParams, Dynamics, Trajectory};
use crate::qstructure::{SparsityPattern, Weights};
use crate::reference::{ReferenceSource, ReferenceWindow};

fn rms(diff: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = diff.fold((0.0, 0usize), |(s, c), d| (s + d * d, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// RMS difference of state coordinate `coord` between two runs.
pub fn rms_error(a: &Trajectory, b: &Trajectory, coord: usize) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::LengthMismatch {
            left: a.states.len(),
            right: b.states.len(),
        });
    }
    Ok(rms(a.states.iter().zip(&b.states).map(|(x, y)| x[coord] - y[coord])))
}

/// RMS of `x_k[coord] − r_k[coord]` over the states that have a reference.
pub fn rms_to_reference(traj: &Trajectory, refs: &[DVector<f64>], coord: usize) -> Result<f64> {
    if refs.len() > traj.states.len() {
        return Err(Error::LengthMismatch {
            left: traj.states.len(),
            right: refs.len(),
        });
    }
    Ok(rms(traj.states.iter().zip(refs).map(|(x, r)| x[coord] - r[coord])))
}

/// Mean and max absolute weight error, normalized by `max_j |w*_j|`.
pub fn weight_errors(w: &Weights, w_star: &Weights) -> Result<(f64, f64)> {
    if w.len() != w_star.len() {
        return Err(Error::LengthMismatch {
            left: w.len(),
            right: w_star.len(),
        });
    }
    let scale = w_star.amax();
    if scale == 0.0 {
        return Err(Error::ZeroOracle);
    }
    if w.is_empty() {
        return Ok((0.0, 0.0));
    }
    let abs: Vec<f64> = w.iter().zip(w_star.iter()).map(|(a, b)| (a - b).abs() / scale).collect();
    let mean = abs.iter().sum::<f64>() / abs.len() as f64;
    let max = abs.iter().fold(0.0_f64, |m, v| m.max(*v));
    Ok((mean, max))
}

/// RMS temporal-difference error of `w` over `batch`, with the target input
/// from the greedy gain of `w` (zero gain when `w = 0`).
pub fn bellman_residual(
    w: &Weights,
    batch: &Batch,
    gamma: f64,
    pattern: &SparsityPattern,
) -> Result<f64> {
    let layout = *pattern
        .layout()
        .ok_or_else(|| Error::InvalidDimensions("pattern without tracking layout".into()))?;
    let gain = if w.iter().all(|v| *v == 0.0) {
        GainMatrix::zeros(layout)
    } else {
        policy_improvement(w, pattern)?
    };
    let mut sq = 0.0;
    for s in &batch.samples {
        let next = TdRegression::next_value(w, &gain, &layout, pattern, &s.x_next, &s.window_next)?;
        let now = w.dot(&crate::qstructure::phi(&s.z, pattern)?);
        let eps = s.cost + gamma * next - now;
        sq += eps * eps;
    }
    Ok(if batch.is_empty() {
        0.0
    } else {
        (sq / batch.len() as f64).sqrt()
    })
}

/// Closed-loop run of length `steps` from `x0` on the clean reference,
/// with `policy(k, x, window)` choosing each input.
pub fn simulate<D, F>(
    plant: &D,
    cost: &CostParams,
    src: &ReferenceSource,
    horizon: usize,
    steps: usize,
    x0: &DVector<f64>,
    mut policy: F,
) -> Result<(Trajectory, Vec<DVector<f64>>)>
where
    D: Dynamics + ?Sized,
    F: FnMut(usize, &DVector<f64>, &ReferenceWindow) -> Result<DVector<f64>>,
{
    check_dim("initial state", plant.state_dim(), x0.len())?;
    let src = src.without_noise();
    let mut traj = Trajectory::new(x0.clone());
    let mut refs = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for k in 0..steps {
        let window = src.window_at(k, horizon);
        let u = policy(k, &x, &window)?;
        let c = one_step_cost(cost, &x, &u, window.current())?;
        let next = guarded_step(plant, &x, &u, k)?;
        refs.push(window.current().clone());
        traj.push(u, c, next.clone());
        x = next;
    }
    refs.push(src.value(steps));
    Ok((traj, refs))
}

/// Closed loop under a tracking gain, exploration off.
pub fn simulate_gain<D: Dynamics + ?Sized>(
    plant: &D,
    cost: &CostParams,
    gain: &GainMatrix,
    src: &ReferenceSource,
    steps: usize,
    x0: &DVector<f64>,
) -> Result<(Trajectory, Vec<DVector<f64>>)> {
    let horizon = gain.layout().horizon;
    simulate(plant, cost, src, horizon, steps, x0, |_, x, w| gain.control(x, w))
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub system: String,
    pub method: String,
    pub reference: String,
    /// RMS against the model-based optimal trajectory.
    pub rms: f64,
    /// RMS against the reference itself.
    pub rms_to_reference: f64,
    pub e_i: Option<f64>,
    pub e_ii: Option<f64>,
}

pub const METRICS_HEADER: [&str; 7] = [
    "system",
    "method",
    "reference",
    "rms",
    "rms_to_reference",
    "e_I",
    "e_II",
];

/// Writes the header and one record per row; an empty slice yields a
/// header-only file.
pub fn write_metrics<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    wtr.write_record(METRICS_HEADER)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(values: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(DVector::from_element(1, values[0]));
        for v in &values[1..] {
            t.push(DVector::zeros(1), 0.0, DVector::from_element(1, *v));
        }
        t
    }

    #[test]
    fn rms_examples() {
        let a = traj(&[1.0, 2.0, 3.0]);
        assert_eq!(rms_error(&a, &a, 0).unwrap(), 0.0);
        let b = traj(&[1.5, 2.5, 3.5]);
        assert!((rms_error(&a, &b, 0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            rms_error(&a, &traj(&[1.0]), 0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn weight_error_examples() {
        let w_star = Weights(DVector::from_vec(vec![4.0, -2.0, 1.0]));
        assert_eq!(weight_errors(&w_star, &w_star).unwrap(), (0.0, 0.0));
        let (e1, e2) = weight_errors(&Weights::zeros(3), &w_star).unwrap();
        assert_eq!(e2, 1.0);
        assert!((e1 - 7.0 / 12.0).abs() < 1e-15);
        assert!(matches!(
            weight_errors(&Weights::zeros(3), &Weights::zeros(3)),
            Err(Error::ZeroOracle)
        ));
    }

    #[test]
    fn empty_metrics_is_header_only() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "system,method,reference,rms,rms_to_reference,e_I,e_II\n"
        );
    }

    proptest! {
        #[test]
        fn rms_is_a_metric(
            a in prop::collection::vec(-10.0..10.0f64, 4),
            b in prop::collection::vec(-10.0..10.0f64, 4),
            c in prop::collection::vec(-10.0..10.0f64, 4),
        ) {
            let (ta, tb, tc) = (traj(&a), traj(&b), traj(&c));
            let ab = rms_error(&ta, &tb, 0).unwrap();
            prop_assert!((ab - rms_error(&tb, &ta, 0).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= rms_error(&ta, &tc, 0).unwrap() + rms_error(&tc, &tb, 0).unwrap() + 1e-12);
        }

        #[test]
        fn weight_errors_are_ordered_and_scale_free(
            w in prop::collection::vec(-5.0..5.0f64, 6),
            s in prop::collection::vec(-5.0..5.0f64, 6),
            c in 0.1..10.0f64,
        ) {
            prop_assume!(s.iter().any(|v| v.abs() > 1e-3));
            let (w, s) = (DVector::from_vec(w), DVector::from_vec(s));
            let (e1, e2) = weight_errors(&Weights(w.clone()), &Weights(s.clone())).unwrap();
            prop_assert!(e1 <= e2 + 1e-15);
            let (f1, f2) = weight_errors(&Weights(w * c), &Weights(s * c)).unwrap();
            prop_assert!((e1 - f1).abs() < 1e-12 && (e2 - f2).abs() < 1e-12);
        }
    }
}
