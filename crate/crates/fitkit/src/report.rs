//! Tabular fit reports: one row per parameter with value, standard error and unit.

use std::io::Write;

use crate::calibration::G0Calibration;
use crate::circle::CircleFitParams;
use crate::cooling::CoolingFit;
use crate::relaxation::JointRelaxationFit;
use crate::sideband::SidebandFit;
use crate::Result;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    /// `NaN` when not available.
    pub stderr: f64,
    pub unit: &'static str,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub kind: String,
    pub params: Vec<ParamEstimate>,
    pub notes: Vec<String>,
}

impl FitReport {
    pub fn new(kind: &str) -> Self {
        FitReport { kind: kind.to_string(), ..Default::default() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64, stderr: f64, unit: &'static str) {
        self.params.push(ParamEstimate { name: name.into(), value, stderr, unit });
    }

    pub fn get(&self, name: &str) -> Option<&ParamEstimate> {
        self.params.iter().find(|p| p.name == name)
    }

    /// `# ` comment lines, then `parameter,value,stderr,unit`.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments.iter().chain(std::iter::once(&format!("fit = {}", self.kind))).chain(&self.notes) {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["parameter", "value", "stderr", "unit"])?;
        for p in &self.params {
            let err = if p.stderr.is_nan() { String::new() } else { format!("{:?}", p.stderr) };
            w.write_record([p.name.as_str(), &format!("{:?}", p.value), &err, p.unit])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl From<&CircleFitParams> for FitReport {
    fn from(fit: &CircleFitParams) -> Self {
        let kerr = fit.covariance.nrows() == 8;
        let mut r = FitReport::new(if kerr { "kerr-circle" } else { "circle" });
        let err = fit.stderr();
        let res = &fit.resonator;
        r.push("a", res.a, err[0], "1");
        r.push("alpha", res.alpha, err[1], "rad");
        r.push("tau_delay", res.tau, err[2], "s");
        r.push("q_l", res.q_l, err[3], "1");
        r.push("q_c", res.q_c, err[4], "1");
        r.push("phi0", res.phi0, err[5], "rad");
        r.push("f_c", res.omega_c / TAU, err[6] / TAU, "Hz");
        if kerr {
            r.push("kerr", res.kerr / TAU, err[7] / TAU, "Hz/photon");
        }
        r.push("q_i", res.q_i(), f64::NAN, "1");
        r.push("residual_norm", fit.residual_norm, f64::NAN, "1");
        if !res.is_passive() {
            r.notes.push("warning: Q_l exceeds |Q_c| / cos(phi0); internal loss is negative".into());
        }
        if fit.ambiguous_points > 0 {
            r.notes.push(format!("{} points on a spinodal", fit.ambiguous_points));
        }
        r
    }
}

impl From<&SidebandFit> for FitReport {
    fn from(fit: &SidebandFit) -> Self {
        let mut r = FitReport::new("sideband");
        let e = fit.stderr();
        r.push("offset", fit.peak.offset, e[0], "psd");
        r.push("amplitude", fit.peak.amplitude, e[1], "psd");
        r.push("f_m", fit.peak.center, e[2], "Hz");
        r.push("gamma_m", fit.peak.width, e[3], "Hz");
        r.push("area", fit.area, fit.area_stderr, "psd*Hz");
        r.push("snr", fit.snr, f64::NAN, "1");
        r
    }
}

impl From<&G0Calibration> for FitReport {
    fn from(c: &G0Calibration) -> Self {
        let mut r = FitReport::new("g0-ramp");
        r.push("g0", c.g0 / TAU, c.g0_stderr / TAU, "Hz");
        r.push("slope", c.slope / (TAU * TAU), c.slope_stderr / (TAU * TAU), "Hz^2/K");
        r.push("points_used", c.used.len() as f64, f64::NAN, "1");
        r.push("points_excluded", c.excluded.len() as f64, f64::NAN, "1");
        for p in &c.excluded {
            r.notes.push(format!("excluded (not thermalised): T = {} K", p.temperature));
        }
        r
    }
}

impl From<&JointRelaxationFit> for FitReport {
    fn from(f: &JointRelaxationFit) -> Self {
        let mut r = FitReport::new("relaxation");
        match (f.tau, f.tau_stderr) {
            (Some(t), Some(e)) => r.push("tau", t, e, "s"),
            _ => {
                r.push("tau", f64::NAN, f64::NAN, "s");
                r.notes.push("tau unidentifiable: amplitudes consistent with zero".into());
            }
        }
        for (k, a) in f.traces.iter().enumerate() {
            r.push(format!("delta_f0[{k}]"), a.delta_f0, a.delta_f0_stderr, "Hz");
            r.push(format!("offset[{k}]"), a.offset, a.offset_stderr, "Hz");
        }
        r.push("residual_norm", f.residual_norm, f64::NAN, "Hz");
        r
    }
}

impl From<&CoolingFit> for FitReport {
    fn from(f: &CoolingFit) -> Self {
        let mut r = FitReport::new("cooling-trace");
        r.push("n_in", f.n_in, f.stderr[0], "1/s");
        r.push("kerr", f.params.cavity.kerr / TAU, f.stderr[1] / TAU, "Hz/photon");
        r.push("n_th", f.params.mech.n_th, f.stderr[2], "1");
        if let Ok(ratio) = f.ratio() {
            r.push("ratio", ratio, f64::NAN, "1");
        }
        r.push("residual_norm", f.residual_norm, f64::NAN, "1");
        r
    }
}
