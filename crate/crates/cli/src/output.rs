//! CSV and JSON writers. Floats carry 17 significant digits so every value
//! round-trips exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gaitlab_core::{GaitTrace, StepRecord};
use serde::Serialize;

use crate::error::CliError;

pub const TRACE_HEADER: [&str; 19] = [
    "t", "step", "x", "z", "th1", "th2", "th3", "th4", "xdot", "zdot", "th1dot", "th2dot", "th3dot", "th4dot",
    "u2", "u3", "fx", "fz", "zbar",
];

pub const DESCRIPTOR_HEADER: [&str; 9] = [
    "model",
    "step",
    "period",
    "theta1_minus",
    "step_length",
    "speed",
    "min_clearance",
    "min_fz",
    "settled",
];

pub const SWEEP_HEADER: [&str; 6] = ["model", "kappa", "beta", "value", "status", "failure_step"];

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

pub fn write_trace(path: &Path, trace: &GaitTrace) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for s in &trace.samples {
        let mut row = Vec::with_capacity(TRACE_HEADER.len());
        row.push(num(s.time));
        row.push(s.step.to_string());
        row.extend(s.state.q.iter().chain(s.state.qdot.iter()).map(|v| num(*v)));
        row.extend([s.torque[1], s.torque[2], s.forces.fx, s.forces.fz, s.swing_height].map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_descriptors<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a StepRecord)>,
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(DESCRIPTOR_HEADER)?;
    for (model, r) in rows {
        w.write_record([
            model.to_string(),
            r.index.to_string(),
            num(r.period),
            num(r.theta1_minus),
            num(r.step_length),
            num(r.speed),
            num(r.min_clearance),
            r.min_fz.map(num).unwrap_or_default(),
            r.settled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a sweep table; `value` is `None` when the point failed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: &'static str,
    pub kappa: Option<f64>,
    pub beta: f64,
    pub value: Option<f64>,
    pub status: String,
    pub failure_step: Option<usize>,
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.model.to_string(),
            r.kappa.map(num).unwrap_or_default(),
            num(r.beta),
            r.value.map(num).unwrap_or_default(),
            r.status.clone(),
            r.failure_step.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
