//! Step-log CSV: a version comment line, a header row, then one row per
//! control step. Values are written in Rust's shortest round-trip float
//! form, so a log re-read from disk is bit-exact.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::control::{Axis, StepLog};
use crate::{Error, Result};

pub const SCHEMA_LINE: &str = "# quadtune-steplog v1";

const STATE_COLUMNS: [&str; 12] = [
    "x",
    "y",
    "z",
    "roll",
    "pitch",
    "yaw",
    "vx",
    "vy",
    "vz",
    "roll_rate",
    "pitch_rate",
    "yaw_rate",
];

/// Per-axis columns that exist in both modes.
const AXIS_CONTROL_COLUMNS: [&str; 13] = [
    "ref", "meas", "ep", "ei", "ed", "kp_s", "ki_s", "kd_s", "kp_d", "ki_d", "kd_d", "u_raw", "u",
];

/// Per-axis tuner telemetry; zero in baseline mode.
const AXIS_TUNER_COLUMNS: [&str; 8] = [
    "mu", "sigma", "s_m", "reward", "td", "loss_a", "loss_c", "updated",
];

/// Full column list in file order.
pub fn header() -> Vec<String> {
    let mut h: Vec<String> = vec!["step".into(), "t".into()];
    h.extend(STATE_COLUMNS.iter().map(|s| s.to_string()));
    h.extend(["mass", "x_ref", "y_ref"].map(String::from));
    for axis in Axis::ALL {
        for c in AXIS_CONTROL_COLUMNS.iter().chain(AXIS_TUNER_COLUMNS.iter()) {
            h.push(format!("{}_{c}", axis.name()));
        }
    }
    h.extend(
        [
            "u1",
            "u2",
            "u3",
            "u4",
            "omega_sq1",
            "omega_sq2",
            "omega_sq3",
            "omega_sq4",
        ]
        .map(String::from),
    );
    h.extend(["gust_roll", "gust_pitch", "gust_yaw", "tuner_ready"].map(String::from));
    h
}

/// True for columns that carry tuner telemetry rather than the control path.
pub fn is_tuner_column(name: &str) -> bool {
    name == "tuner_ready"
        || Axis::ALL.iter().any(|a| {
            name.strip_prefix(a.name())
                .and_then(|r| r.strip_prefix('_'))
                .is_some_and(|c| AXIS_TUNER_COLUMNS.contains(&c))
        })
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Row values in [`header`] order.
pub fn row_values(r: &StepLog) -> Vec<f64> {
    let mut v = Vec::with_capacity(128);
    v.push(r.step as f64);
    v.push(r.t);
    v.extend(r.state.to_array());
    v.extend([r.mass, r.x_ref, r.y_ref]);
    for a in &r.axes {
        v.extend([
            a.setpoint,
            a.measurement,
            a.errors.e_p,
            a.errors.e_i,
            a.errors.e_d,
        ]);
        v.extend(a.static_gains.to_array());
        v.extend(a.dynamic_gains.to_array());
        v.extend([a.u_raw, a.u]);
        v.extend([
            a.mu,
            a.sigma,
            a.s_m,
            a.reward,
            a.td_error,
            a.loss_actor,
            a.loss_critic,
            flag(a.updated),
        ]);
    }
    v.extend([r.inputs.thrust, r.inputs.roll, r.inputs.pitch, r.inputs.yaw]);
    v.extend(r.omega_sq);
    v.extend(r.gust);
    v.push(flag(r.tuner_ready));
    v
}

fn write_filtered<W: Write>(
    mut out: W,
    rows: &[StepLog],
    keep: &dyn Fn(&str) -> bool,
) -> Result<()> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let head = header();
    let mask: Vec<bool> = head.iter().map(|c| keep(c)).collect();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(head.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| c))?;
    let mut fields: Vec<String> = Vec::with_capacity(head.len());
    for r in rows {
        fields.clear();
        for (val, &m) in row_values(r).iter().zip(&mask) {
            if m {
                fields.push(format!("{val}"));
            }
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(out: W, rows: &[StepLog]) -> Result<()> {
    write_filtered(out, rows, &|_| true)
}

/// CSV restricted to the control-path columns (everything a baseline run
/// can produce).
pub fn write_control_csv<W: Write>(out: W, rows: &[StepLog]) -> Result<()> {
    write_filtered(out, rows, &|c| !is_tuner_column(c))
}

pub fn write_csv_file(path: &Path, rows: &[StepLog]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(f, rows)
}

/// A step log read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LogTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// RMSE of `<axis>_ref − <axis>_meas` over `window`, degrees for attitude.
    pub fn rmse(&self, axis: Axis, window: std::ops::Range<usize>) -> Result<f64> {
        let r = self.column(&format!("{}_ref", axis.name()))?;
        let m = self.column(&format!("{}_meas", axis.name()))?;
        let window = window.start.min(self.len())..window.end.min(self.len());
        if window.is_empty() {
            return Err(Error::EmptyWindow);
        }
        let n = window.len() as f64;
        let ms = window.map(|k| (r[k] - m[k]).powi(2)).sum::<f64>() / n;
        Ok(if axis.is_attitude() {
            ms.sqrt().to_degrees()
        } else {
            ms.sqrt()
        })
    }
}

/// Reads a step log and checks it against the current schema.
pub fn read_csv<R: BufRead>(mut input: R) -> Result<LogTable> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        return Err(Error::Schema {
            column: format!("schema line `{}`", first.trim_end()),
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let columns: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let expected = header();
    for (i, want) in expected.iter().enumerate() {
        match columns.get(i) {
            Some(got) if got == want => {}
            _ => {
                return Err(Error::Schema {
                    column: want.clone(),
                })
            }
        }
    }
    if columns.len() != expected.len() {
        return Err(Error::Schema {
            column: columns[expected.len()].clone(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(columns.len());
        for (i, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Schema {
                column: columns.get(i).cloned().unwrap_or_default(),
            })?;
            row.push(v);
        }
        if row.len() != columns.len() {
            return Err(Error::Schema {
                column: columns.get(row.len()).cloned().unwrap_or_default(),
            });
        }
        rows.push(row);
    }
    Ok(LogTable { columns, rows })
}

pub fn read_csv_file(path: &Path) -> Result<LogTable> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_csv(f)
}
