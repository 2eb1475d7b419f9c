//! CSV readers and writers for matrices, weights, logs and plot data.
//!
//! Logs start with a `# seed=<seed>` comment line. Floats are written in
//! shortest round-trip form, so identical runs give identical bytes.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::learner::RoundLog;
use crate::plant::Trajectory;
use crate::qstructure::{Layout, SparsityPattern, Weights};

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn seed_line<W: Write>(out: &mut W, seed: u64) -> Result<()> {
    writeln!(out, "# seed={seed}")?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Coordinate names of `z`: `x1.., u1.., r0_1.., rN_n`.
pub fn augmented_names(layout: &Layout) -> Vec<String> {
    let mut names: Vec<String> = (1..=layout.n).map(|i| format!("x{i}")).collect();
    names.extend((1..=layout.m).map(|i| format!("u{i}")));
    for j in 0..=layout.horizon {
        names.extend((1..=layout.n).map(|i| format!("r{j}_{i}")));
    }
    names
}

/// Dense matrix with a header row.
pub fn write_matrix<W: Write>(out: W, m: &DMatrix<f64>, header: &[String]) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what: "matrix header",
            expected: m.ncols(),
            found: header.len(),
        });
    }
    let mut wtr = writer(out);
    wtr.write_record(header)?;
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| fmt(*v)))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Single-row weight file with `H[i,j]` column names.
pub fn write_weights<W: Write>(out: W, pattern: &SparsityPattern, w: &Weights) -> Result<()> {
    let mut wtr = writer(out);
    wtr.write_record(pattern.entry_names())?;
    wtr.write_record(w.iter().map(|v| fmt(*v)))?;
    wtr.flush()?;
    Ok(())
}

/// Reads a file written by [`write_weights`], checking the entry names.
pub fn read_weights<R: Read>(input: R, pattern: &SparsityPattern) -> Result<Weights> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != pattern.entry_names() {
        return Err(Error::Config(
            "weight file does not match the configured structure".into(),
        ));
    }
    let record = rdr
        .records()
        .next()
        .ok_or_else(|| Error::Config("weight file has no data row".into()))??;
    let values = record
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad weight {s:?}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != pattern.len() {
        return Err(Error::DimensionMismatch {
            what: "weight row",
            expected: pattern.len(),
            found: values.len(),
        });
    }
    Ok(Weights(DVector::from_vec(values)))
}

/// Per-step log: `method, k, x.., u.., r.., c`.
pub fn write_step_log<W: Write>(
    mut out: W,
    seed: u64,
    method: &str,
    traj: &Trajectory,
    refs: &[DVector<f64>],
) -> Result<()> {
    seed_line(&mut out, seed)?;
    let n = traj.states[0].len();
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let mut header = vec!["method".to_owned(), "k".to_owned()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend((1..=n).map(|i| format!("r{i}")));
    header.push("c".into());
    let mut wtr = writer(out);
    wtr.write_record(&header)?;
    for k in 0..traj.len() {
        let mut rec = vec![method.to_owned(), k.to_string()];
        rec.extend(traj.states[k].iter().map(|v| fmt(*v)));
        rec.extend(traj.inputs[k].iter().map(|v| fmt(*v)));
        match refs.get(k) {
            Some(r) => rec.extend(r.iter().map(|v| fmt(*v))),
            None => rec.extend(std::iter::repeat_n(String::new(), n)),
        }
        rec.push(fmt(traj.costs[k]));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-iteration log: `round, k, i, change, e_I, e_II, kept_previous_gain`.
pub fn write_iteration_log<W: Write>(mut out: W, seed: u64, rounds: &[RoundLog]) -> Result<()> {
    seed_line(&mut out, seed)?;
    let mut wtr = writer(out);
    wtr.write_record([
        "round",
        "k",
        "i",
        "change",
        "e_I",
        "e_II",
        "kept_previous_gain",
        "bellman_residual",
    ])?;
    for r in rounds {
        for it in &r.iterations {
            let (e1, e2) = it
                .errors
                .map_or((String::new(), String::new()), |(a, b)| (fmt(a), fmt(b)));
            wtr.write_record([
                r.round.to_string(),
                r.k.to_string(),
                it.iteration.to_string(),
                fmt(it.change),
                e1,
                e2,
                it.kept_previous_gain.to_string(),
                fmt(r.bellman_residual),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Long-format plot data: `series, k, value`.
pub fn write_tidy<W: Write>(mut out: W, seed: u64, series: &[(String, Vec<f64>)]) -> Result<()> {
    seed_line(&mut out, seed)?;
    let mut wtr = writer(out);
    wtr.write_record(["series", "k", "value"])?;
    for (name, values) in series {
        for (k, v) in values.iter().enumerate() {
            wtr.write_record([name.clone(), k.to_string(), fmt(*v)])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
