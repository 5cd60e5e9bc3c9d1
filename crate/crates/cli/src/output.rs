//! Output directory handling and provenance headers.

use std::path::{Path, PathBuf};

use kerromech::config::fmt_float;

use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "resolved_config.toml";

pub struct Sink {
    dir: PathBuf,
    header: Vec<String>,
    written: Vec<PathBuf>,
}

impl Sink {
    /// Creates `dir` and writes the resolved config next to the outputs.
    pub fn new(dir: &Path, command: &str, resolved: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut header = vec![
            format!("kerromech {}", env!("CARGO_PKG_VERSION")),
            format!("command: {command}"),
            "--- resolved config ---".to_string(),
        ];
        header.extend(resolved.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
        header.push("--- end config ---".to_string());
        let mut sink = Sink { dir: dir.to_path_buf(), header, written: Vec::new() };
        sink.save(CONFIG_FILE, resolved.as_bytes().to_vec())?;
        Ok(sink)
    }

    /// Header lines followed by file-specific `key = value` lines.
    pub fn comments(&self, extra: &[(&str, String)]) -> Vec<String> {
        let mut c = self.header.clone();
        c.extend(extra.iter().map(|(k, v)| format!("{k} = {v}")));
        c
    }

    pub fn save(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// Render into a buffer with `f`, then save.
    pub fn emit<E>(
        &mut self,
        name: &str,
        extra: &[(&str, String)],
        f: impl FnOnce(&mut Vec<u8>, &[String]) -> std::result::Result<(), E>,
    ) -> Result<()>
    where
        CliError: From<E>,
    {
        let mut buf = Vec::new();
        f(&mut buf, &self.comments(extra))?;
        self.save(name, buf)
    }

    /// Generic table with string cells.
    pub fn table(&mut self, name: &str, extra: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = Vec::new();
        for c in self.comments(extra) {
            buf.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| CliError::Model(kerromech::Error::Csv(e));
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(&self.dir.join(name), e))?;
        drop(w);
        self.save(name, buf)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn num(x: f64) -> String {
    fmt_float(x)
}

pub fn opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn hz(w: f64) -> f64 {
    w / std::f64::consts::TAU
}

/// Compact label for file names: `0.54`, `8000`, `1e20`.
pub fn tag(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e6 || x.abs() < 1e-3) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}
