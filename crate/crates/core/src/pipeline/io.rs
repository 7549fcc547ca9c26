//! Trajectory CSV, diagnostics report CSV and model JSON.
//!
//! Trajectory files carry the header
//! `t,px,py,pz,r11,r12,r13,r21,r22,r23,r31,r32,r33` with rotation entries in
//! row-major order. Numbers are written with 17 significant digits so that a
//! write/read cycle is lossless.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::canonical::{ForcingTerm, RbfBasis};
use crate::dmp::{DmpGains, DmpModel, StepDiagnostics};
use crate::so3::{RotationMatrix, Vec3};
use crate::trajectory::{PoseSample, PoseTrajectory};

pub const TRAJECTORY_HEADER: [&str; 13] = [
    "t", "px", "py", "pz", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33",
];
pub const REPORT_HEADER: [&str; 4] = ["t", "violation", "fcon_norm", "opt_iters"];

/// `{:.16e}`: one leading digit plus 16 decimals.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_to_pipeline(path: &Path, e: csv::Error) -> PipelineError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => PipelineError::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_trajectory<W: Write>(traj: &PoseTrajectory, out: W) -> Result<(), csv::Error> {
    let mut w = csv_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for s in traj.samples() {
        let rows = s.r.to_rows();
        let mut record = Vec::with_capacity(13);
        record.push(format_f64(s.t));
        record.extend(s.p.iter().map(|v| format_f64(*v)));
        record.extend(rows.iter().flatten().map(|v| format_f64(*v)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(traj: &PoseTrajectory, path: &Path) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_trajectory(traj, BufWriter::new(file)).map_err(|e| csv_to_pipeline(path, e))
}

/// Parses a trajectory CSV. Errors name the 1-based line of the offending row.
pub fn read_trajectory<R: Read>(input: R) -> Result<PoseTrajectory, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers().map_err(|e| PipelineError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(PipelineError::Parse {
            line: 1,
            message: format!("expected header '{}'", TRAJECTORY_HEADER.join(",")),
        });
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let fallback_line = i as u64 + 2;
        let record = record.map_err(|e| PipelineError::Parse {
            line: e.position().map_or(fallback_line, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(fallback_line, |p| p.line());
        let parse_err = |message: String| PipelineError::Parse { line, message };
        if record.len() != TRAJECTORY_HEADER.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                TRAJECTORY_HEADER.len(),
                record.len()
            )));
        }
        let mut v = [0.0; 13];
        for (k, field) in record.iter().enumerate() {
            v[k] = field
                .parse::<f64>()
                .map_err(|_| parse_err(format!("field '{}' is not a number: '{field}'", TRAJECTORY_HEADER[k])))?;
        }
        let r = RotationMatrix::from_rows([[v[4], v[5], v[6]], [v[7], v[8], v[9]], [v[10], v[11], v[12]]])
            .map_err(|e| parse_err(e.to_string()))?;
        samples.push(PoseSample {
            t: v[0],
            p: Vec3::new(v[1], v[2], v[3]),
            r,
        });
    }
    Ok(PoseTrajectory::new(samples)?)
}

pub fn load_trajectory(path: &Path) -> Result<PoseTrajectory, PipelineError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_trajectory(file)
}

/// Writes `t,violation,fcon_norm,opt_iters`, one row per diagnostics entry.
pub fn write_report<W: Write>(times: &[f64], diagnostics: &[StepDiagnostics], out: W) -> Result<(), csv::Error> {
    let mut w = csv_writer(out);
    w.write_record(REPORT_HEADER)?;
    for (t, d) in times.iter().zip(diagnostics) {
        w.write_record([
            format_f64(*t),
            format_f64(d.violation),
            format_f64(d.fcon_norm),
            d.opt_iters.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_report(times: &[f64], diagnostics: &[StepDiagnostics], path: &Path) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_report(times, diagnostics, BufWriter::new(file)).map_err(|e| csv_to_pipeline(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoseJson {
    p: [f64; 3],
    r: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StartJson {
    p: [f64; 3],
    p_dot: [f64; 3],
    r: [[f64; 3]; 3],
    w: [f64; 3],
}

/// On-disk layout of a [`DmpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelJson {
    tau: f64,
    alpha_x: f64,
    beta_x: f64,
    alpha_s: f64,
    n_basis: usize,
    dt: f64,
    duration: f64,
    position: [ForcingTerm; 3],
    orientation: [ForcingTerm; 3],
    start: StartJson,
    goal: PoseJson,
}

impl From<&DmpModel> for ModelJson {
    fn from(m: &DmpModel) -> Self {
        Self {
            tau: m.gains.tau,
            alpha_x: m.gains.alpha_x,
            beta_x: m.gains.beta_x,
            alpha_s: m.gains.alpha_s,
            n_basis: m.n_basis(),
            dt: m.dt,
            duration: m.duration,
            position: m.position.clone(),
            orientation: m.orientation.clone(),
            start: StartJson {
                p: m.p0.into(),
                p_dot: m.p_dot0.into(),
                r: m.r0.to_rows(),
                w: m.w0.into(),
            },
            goal: PoseJson {
                p: m.p_goal.into(),
                r: m.r_goal.to_rows(),
            },
        }
    }
}

impl TryFrom<ModelJson> for DmpModel {
    type Error = PipelineError;

    fn try_from(j: ModelJson) -> Result<Self, PipelineError> {
        let invalid = |m: String| PipelineError::InvalidModel(m);
        for f in j.position.iter().chain(&j.orientation) {
            // re-run the layout checks serde skipped
            RbfBasis::new(f.basis.centers.clone(), f.basis.widths.clone()).map_err(|e| invalid(e.to_string()))?;
            if f.weights.len() != j.n_basis || f.basis.len() != j.n_basis {
                return Err(invalid(format!(
                    "forcing term size differs from n_basis = {}",
                    j.n_basis
                )));
            }
        }
        let model = DmpModel {
            gains: DmpGains {
                tau: j.tau,
                alpha_x: j.alpha_x,
                beta_x: j.beta_x,
                alpha_s: j.alpha_s,
            },
            dt: j.dt,
            duration: j.duration,
            position: j.position,
            orientation: j.orientation,
            p0: j.start.p.into(),
            p_dot0: j.start.p_dot.into(),
            r0: RotationMatrix::from_rows(j.start.r).map_err(|e| invalid(format!("start rotation: {e}")))?,
            w0: j.start.w.into(),
            p_goal: j.goal.p.into(),
            r_goal: RotationMatrix::from_rows(j.goal.r).map_err(|e| invalid(format!("goal rotation: {e}")))?,
        };
        model.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(model)
    }
}

pub fn model_to_json(model: &DmpModel) -> String {
    serde_json::to_string_pretty(&ModelJson::from(model)).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<DmpModel, PipelineError> {
    let j: ModelJson = serde_json::from_str(text).map_err(|e| PipelineError::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    DmpModel::try_from(j)
}

pub fn save_model(model: &DmpModel, path: &Path) -> Result<(), PipelineError> {
    let mut text = model_to_json(model);
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<DmpModel, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    model_from_json(&text)
}
