//! CSV output. Every file starts with `#` comment lines carrying provenance,
//! followed by a header row. Frequencies are written in Hz.

use std::io::{BufRead, Write};

use crate::backaction::CoolingTrace;
use crate::config::fmt_float;
use crate::error::Result;
use crate::spectrum::SpectrumResult;
use crate::steadystate::SweepResult;
use crate::units::angular_to_hz;

fn hz(w: f64) -> String {
    fmt_float(angular_to_hz(w).unwrap_or(f64::NAN))
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map(f).unwrap_or_default()
}

fn write_comments<W: Write>(out: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

fn finish<W: Write>(mut out: W, comments: &[String], header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    write_comments(&mut out, comments)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `detuning_hz, n_c, branch, jumped`.
pub fn write_sweep<W: Write>(out: W, comments: &[String], sweep: &SweepResult) -> Result<()> {
    let rows = sweep
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                hz(s.detuning),
                fmt_float(s.n_c),
                s.label.as_str().to_string(),
                u8::from(sweep.jumped(i)).to_string(),
            ]
        })
        .collect();
    finish(out, comments, &["detuning_hz", "n_c", "branch", "jumped"], rows)
}

/// Columns `omega_hz[, omega_lab_hz], s_nn`.
pub fn write_spectrum<W: Write>(out: W, comments: &[String], spec: &SpectrumResult) -> Result<()> {
    let mut header = vec!["omega_hz"];
    if spec.omega_lab.is_some() {
        header.push("omega_lab_hz");
    }
    header.push("s_nn");
    let rows = spec
        .omega
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let mut r = vec![hz(w)];
            if let Some(lab) = &spec.omega_lab {
                r.push(hz(lab[i]));
            }
            r.push(fmt_float(spec.s_nn[i]));
            r
        })
        .collect();
    finish(out, comments, &header, rows)
}

/// Columns `detuning_hz, branch, n_c, n_m, gamma_eff_hz, delta_omega_m_hz, valid`.
/// Invalid points leave the numeric fields empty.
pub fn write_trace<W: Write>(out: W, comments: &[String], trace: &CoolingTrace) -> Result<()> {
    let rows = trace
        .points
        .iter()
        .map(|p| {
            vec![
                hz(p.detuning),
                p.label.as_str().to_string(),
                opt(p.n_c, fmt_float),
                opt(p.n_m, fmt_float),
                opt(p.gamma_eff, hz),
                opt(p.delta_omega_m, hz),
                u8::from(p.valid).to_string(),
            ]
        })
        .collect();
    finish(
        out,
        comments,
        &["detuning_hz", "branch", "n_c", "n_m", "gamma_eff_hz", "delta_omega_m_hz", "valid"],
        rows,
    )
}

/// A parsed CSV file: leading comment lines (without `# `), header and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column; empty cells become `None`.
    pub fn numbers(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = self
            .column(name)
            .ok_or_else(|| crate::Error::InvalidInput(format!("missing column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(row, r)| {
                let cell = r.get(i).map(|s| s.trim()).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse::<f64>().map(Some).map_err(|_| {
                    crate::Error::InvalidInput(format!("row {}: `{cell}` in column `{name}` is not a number", row + 1))
                })
            })
            .collect()
    }

    /// Value of a `key = value` or `key: value` comment line.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let (k, v) = c.split_once('=').or_else(|| c.split_once(':'))?;
            (k.trim() == key).then(|| v.trim().trim_matches('"'))
        })
    }
}

pub fn read_table<R: BufRead>(input: R) -> Result<Table> {
    let mut comments = Vec::new();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        if body.is_empty() {
            if let Some(rest) = line.strip_prefix('#') {
                comments.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
        }
        body.push_str(&line);
        body.push('\n');
    }
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(body.as_bytes());
    let header = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let rows = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Table { comments, header, rows })
}
