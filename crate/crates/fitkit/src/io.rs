//! CSV input for measured traces.
//!
//! - S21: columns `freq_hz, re_s21, im_s21`; comment metadata `applied_dbm`,
//!   `attenuation_db`, `attenuation_uncertainty_db`, `direction`.
//! - PSD: `freq_hz, psd`.
//! - Relaxation: `t_s, delta_f_hz`.
//! - Temperature ramp: `temperature_k, g0_sq_n_hz2[, sigma_hz2]`.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use kerromech::io::{read_table, Table};
use kerromech::SweepDirection;

use crate::calibration::RampPoint;
use crate::circle::{PowerSpec, S21Trace};
use crate::sideband::PsdTrace;
use crate::{FitError, Result};

fn column(t: &Table, name: &str) -> Result<Vec<f64>> {
    t.numbers(name)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| FitError::Input(format!("row {}: empty `{name}`", i + 1))))
        .collect()
}

fn meta_f64(t: &Table, key: &str, default: Option<f64>) -> Result<f64> {
    match t.meta(key) {
        Some(v) => v.parse().map_err(|_| FitError::Input(format!("metadata `{key}` = `{v}` is not a number"))),
        None => default.ok_or_else(|| FitError::Input(format!("missing metadata `{key}`"))),
    }
}

pub fn read_s21<R: BufRead>(input: R) -> Result<S21Trace> {
    let t = read_table(input)?;
    let f = column(&t, "freq_hz")?;
    let re = column(&t, "re_s21")?;
    let im = column(&t, "im_s21")?;
    let direction = match t.meta("direction") {
        Some(d) => d.parse()?,
        None => SweepDirection::None,
    };
    Ok(S21Trace {
        frequency: f,
        s21: re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect(),
        power: PowerSpec {
            applied_dbm: meta_f64(&t, "applied_dbm", None)?,
            attenuation_db: meta_f64(&t, "attenuation_db", Some(0.0))?,
            attenuation_uncertainty_db: meta_f64(&t, "attenuation_uncertainty_db", Some(0.0))?,
        },
        direction,
    })
}

pub fn write_s21<W: Write>(mut out: W, comments: &[String], trace: &S21Trace) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "# applied_dbm = {:?}", trace.power.applied_dbm)?;
    writeln!(out, "# attenuation_db = {:?}", trace.power.attenuation_db)?;
    writeln!(out, "# attenuation_uncertainty_db = {:?}", trace.power.attenuation_uncertainty_db)?;
    writeln!(out, "# direction = {}", trace.direction.as_str())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["freq_hz", "re_s21", "im_s21"])?;
    for (f, z) in trace.frequency.iter().zip(&trace.s21) {
        w.write_record([format!("{f:?}"), format!("{:?}", z.re), format!("{:?}", z.im)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_psd<R: BufRead>(input: R) -> Result<PsdTrace> {
    let t = read_table(input)?;
    let averages = t.meta("averages").and_then(|v| v.parse().ok());
    Ok(PsdTrace { frequency: column(&t, "freq_hz")?, psd: column(&t, "psd")?, averages })
}

pub fn read_relaxation<R: BufRead>(input: R) -> Result<Vec<(f64, f64)>> {
    let t = read_table(input)?;
    Ok(column(&t, "t_s")?.into_iter().zip(column(&t, "delta_f_hz")?).collect())
}

/// Ramp values are read in Hz^2 and returned in (rad/s)^2.
pub fn read_ramp<R: BufRead>(input: R) -> Result<Vec<RampPoint>> {
    let t = read_table(input)?;
    let tau2 = std::f64::consts::TAU.powi(2);
    let temps = column(&t, "temperature_k")?;
    let vals = column(&t, "g0_sq_n_hz2")?;
    let sig = if t.column("sigma_hz2").is_some() { t.numbers("sigma_hz2")? } else { vec![None; temps.len()] };
    Ok(temps
        .into_iter()
        .zip(vals)
        .zip(sig)
        .map(|((temperature, v), s)| RampPoint { temperature, g0_sq_n: v * tau2, sigma: s.map(|s| s * tau2) })
        .collect())
}

/// Residual table: named columns of equal length.
pub fn write_columns<W: Write>(mut out: W, comments: &[String], columns: &[(&str, &[f64])]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns.iter().map(|c| c.0))?;
    let n = columns.iter().map(|c| c.1.len()).min().unwrap_or(0);
    for i in 0..n {
        w.write_record(columns.iter().map(|c| format!("{:?}", c.1[i])))?;
    }
    w.flush()?;
    Ok(())
}
