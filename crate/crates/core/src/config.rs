//! Text config for [`SystemParams`].
//!
//! TOML with frequencies in Hz:
//!
//! ```toml
//! [cavity]
//! freq_hz = 8.1e9
//! kappa_c_hz = 2.8e6
//! kappa_i_hz = 0.0     # optional, default 0
//! kerr_hz = 14e3
//!
//! [mech]
//! freq_hz = 287.3e3
//! gamma_hz = 0.4
//! g0_hz = 99.0
//!
//! [bath]
//! temp_mk = 267.0      # or n_th = ...
//! model = "boltzmann"  # optional, or "bose"
//! ```

use std::fmt::Write as _;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::params::{CavityParams, MechParams, SystemParams};
use crate::units::{angular_to_hz, bose_occupation, hz_to_angular, thermal_occupation};

/// Parse a config document into a TOML table, mapping syntax errors to a line.
pub fn parse_table(src: &str) -> Result<Table> {
    src.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| line_of_offset(src, s.start)).unwrap_or(0);
        Error::Config { line, key: String::new(), message: e.message().trim().to_string() }
    })
}

pub fn parse_system_params(src: &str) -> Result<SystemParams> {
    let table = parse_table(src)?;
    system_params_from_table(&table, src)
}

/// Extract [`SystemParams`] from an already parsed table; `src` is only used
/// to locate keys for error messages.
pub fn system_params_from_table(table: &Table, src: &str) -> Result<SystemParams> {
    let rd = Reader { table, src };
    let cavity = CavityParams {
        omega_c: hz_to_angular(rd.positive_or_zero("cavity", "freq_hz")?)?,
        kappa_c: hz_to_angular(rd.number("cavity", "kappa_c_hz")?)?,
        kappa_i: hz_to_angular(rd.optional_number("cavity", "kappa_i_hz")?.unwrap_or(0.0))?,
        kerr: hz_to_angular(rd.number("cavity", "kerr_hz")?)?,
    };
    let omega_m = hz_to_angular(rd.number("mech", "freq_hz")?)?;
    let n_th_direct = rd.optional_number("bath", "n_th")?;
    let temp_mk = rd.optional_number("bath", "temp_mk")?;
    let model = match rd.get("bath", "model") {
        None => "boltzmann".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(rd.error("bath", "model", "expected a string")),
    };
    let n_th = match (n_th_direct, temp_mk) {
        (Some(n), None) => n,
        (None, Some(t)) => {
            let t = t * 1e-3;
            let occ = match model.as_str() {
                "boltzmann" => thermal_occupation(t, omega_m),
                "bose" => bose_occupation(t, omega_m),
                _ => return Err(rd.error("bath", "model", "expected \"boltzmann\" or \"bose\"")),
            };
            occ.map_err(|e| rd.error("bath", "temp_mk", &e.to_string()))?
        }
        (Some(_), Some(_)) => {
            return Err(rd.error("bath", "temp_mk", "give either bath.n_th or bath.temp_mk, not both"))
        }
        (None, None) => return Err(rd.error("bath", "n_th", "missing bath.n_th or bath.temp_mk")),
    };
    let mech = MechParams {
        omega_m,
        gamma_m: hz_to_angular(rd.number("mech", "gamma_hz")?)?,
        g0: hz_to_angular(rd.number("mech", "g0_hz")?)?,
        n_th,
    };
    Ok(SystemParams { cavity, mech })
}

/// Render parameters as a config document (Hz, bath given as `n_th`).
pub fn system_params_to_toml(p: &SystemParams) -> String {
    let hz = |w: f64| angular_to_hz(w).unwrap_or(f64::NAN);
    let mut s = String::new();
    let _ = writeln!(s, "[cavity]");
    let _ = writeln!(s, "freq_hz = {}", fmt_float(hz(p.cavity.omega_c)));
    let _ = writeln!(s, "kappa_c_hz = {}", fmt_float(hz(p.cavity.kappa_c)));
    let _ = writeln!(s, "kappa_i_hz = {}", fmt_float(hz(p.cavity.kappa_i)));
    let _ = writeln!(s, "kerr_hz = {}", fmt_float(hz(p.cavity.kerr)));
    let _ = writeln!(s, "\n[mech]");
    let _ = writeln!(s, "freq_hz = {}", fmt_float(hz(p.mech.omega_m)));
    let _ = writeln!(s, "gamma_hz = {}", fmt_float(hz(p.mech.gamma_m)));
    let _ = writeln!(s, "g0_hz = {}", fmt_float(hz(p.mech.g0)));
    let _ = writeln!(s, "\n[bath]");
    let _ = writeln!(s, "n_th = {}", fmt_float(p.mech.n_th));
    s
}

/// Shortest round-trip representation that TOML reads back as a float.
pub fn fmt_float(x: f64) -> String {
    // Debug keeps a fractional part or exponent ("1.0", "1e20"), which TOML needs.
    format!("{x:?}")
}

/// 1-based line holding `key` inside `[section]` (or a dotted `section.key`),
/// 0 when not found.
pub fn key_line(src: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut section_line = 0;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == section {
                section_line = i + 1;
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim();
        let full = if current.is_empty() { lhs.to_string() } else { format!("{current}.{lhs}") };
        if full == format!("{section}.{key}") {
            return i + 1;
        }
    }
    section_line
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

struct Reader<'a> {
    table: &'a Table,
    src: &'a str,
}

impl Reader<'_> {
    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.table.get(section).and_then(Value::as_table).and_then(|t| t.get(key))
    }

    fn error(&self, section: &str, key: &str, message: &str) -> Error {
        Error::Config {
            line: key_line(self.src, section, key),
            key: format!("{section}.{key}"),
            message: message.to_string(),
        }
    }

    fn optional_number(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.error(section, key, "expected a number")),
        }
    }

    fn number(&self, section: &str, key: &str) -> Result<f64> {
        self.optional_number(section, key)?
            .ok_or_else(|| self.error(section, key, "missing required key"))
    }

    fn positive_or_zero(&self, section: &str, key: &str) -> Result<f64> {
        let x = self.number(section, key)?;
        if x < 0.0 {
            return Err(self.error(section, key, "must be >= 0"));
        }
        Ok(x)
    }
}
