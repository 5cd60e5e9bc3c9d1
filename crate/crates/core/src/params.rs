//! Parameter records and validation.

use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Cavity constants, all angular (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub omega_c: f64,
    /// External coupling rate.
    pub kappa_c: f64,
    /// Intrinsic loss rate.
    pub kappa_i: f64,
    /// Kerr constant K, rad/s per photon. Positive K pulls the resonance down.
    pub kerr: f64,
}

impl CavityParams {
    /// Total linewidth `kappa_c + kappa_i`.
    pub fn kappa(&self) -> f64 {
        self.kappa_c + self.kappa_i
    }

    /// `kappa^3 / (3 sqrt(3) K)`: the drive term `kappa_c * n_in` at the
    /// bifurcation threshold.
    pub fn critical_drive_term(&self) -> Result<f64> {
        if !(self.kerr > 0.0) {
            return Err(Error::NoBifurcation(self.kerr));
        }
        let k = self.kappa();
        Ok(k * k * k / (3.0 * 3f64.sqrt() * self.kerr))
    }
}

/// Mechanical constants, angular (rad/s) except the dimensionless bath occupation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechParams {
    pub omega_m: f64,
    pub gamma_m: f64,
    /// Single-photon optomechanical coupling.
    pub g0: f64,
    pub n_th: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub cavity: CavityParams,
    pub mech: MechParams,
}

impl SystemParams {
    /// Device parameters quoted for the measured sample, with `kappa_c = kappa`
    /// (the coupling split is not known) and bath occupation at 267 mK.
    pub fn reference_device() -> Self {
        let tau = 2.0 * PI;
        let omega_m = tau * 287.3e3;
        SystemParams {
            cavity: CavityParams {
                omega_c: tau * 8.1e9,
                kappa_c: tau * 2.8e6,
                kappa_i: 0.0,
                kerr: tau * 14e3,
            },
            mech: MechParams {
                omega_m,
                gamma_m: tau * 0.4,
                g0: tau * 99.0,
                n_th: crate::units::thermal_occupation(0.267, omega_m)
                    .expect("positive mechanical frequency"),
            },
        }
    }
}

/// Non-fatal parameter diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// `gamma_m > omega_m / 10`: the mechanical mode is not high-Q and the
    /// rate picture of backaction becomes questionable.
    LowMechanicalQ { gamma_m: f64, omega_m: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::LowMechanicalQ { gamma_m, omega_m } => write!(
                f,
                "gamma_m = {gamma_m} exceeds omega_m/10 = {}; weak-damping assumptions degrade",
                omega_m / 10.0
            ),
        }
    }
}

/// Parameters that passed [`validate`]. Dereferences to [`SystemParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams {
    params: SystemParams,
    warnings: Vec<Warning>,
}

impl ValidatedParams {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn into_inner(self) -> SystemParams {
        self.params
    }

    /// Copy with a different Kerr constant, re-validated.
    pub fn with_kerr(&self, kerr: f64) -> Result<ValidatedParams> {
        let mut p = self.params;
        p.cavity.kerr = kerr;
        validate(&p)
    }

    /// Copy with a different single-photon coupling, re-validated.
    pub fn with_g0(&self, g0: f64) -> Result<ValidatedParams> {
        let mut p = self.params;
        p.mech.g0 = g0;
        validate(&p)
    }
}

impl Deref for ValidatedParams {
    type Target = SystemParams;

    fn deref(&self) -> &SystemParams {
        &self.params
    }
}

/// Check every invariant, reporting all violations at once.
pub fn validate(params: &SystemParams) -> Result<ValidatedParams> {
    let mut bad = Vec::new();
    let mut check = |field: &'static str, value: f64, ok: bool, message: &str| {
        if !value.is_finite() {
            bad.push(Violation { field, value, message: format!("{field} must be finite") });
        } else if !ok {
            bad.push(Violation { field, value, message: message.to_string() });
        }
    };
    let c = &params.cavity;
    let m = &params.mech;
    check("omega_c", c.omega_c, c.omega_c > 0.0, "omega_c must be > 0");
    check("kappa_c", c.kappa_c, c.kappa_c > 0.0, "kappa_c must be > 0");
    check("kappa_i", c.kappa_i, c.kappa_i >= 0.0, "kappa_i must be >= 0");
    check("kerr", c.kerr, true, "");
    check("omega_m", m.omega_m, m.omega_m > 0.0, "omega_m must be > 0");
    check("gamma_m", m.gamma_m, m.gamma_m > 0.0, "gamma_m must be > 0");
    check("g0", m.g0, true, "");
    check("n_th", m.n_th, m.n_th >= 0.0, "n_th must be >= 0");
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    let mut warnings = Vec::new();
    if m.gamma_m > m.omega_m / 10.0 {
        warnings.push(Warning::LowMechanicalQ { gamma_m: m.gamma_m, omega_m: m.omega_m });
    }
    Ok(ValidatedParams { params: *params, warnings })
}

/// How hard the cavity is driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveStrength {
    /// Input photon flux `n_in` (photons/s) at the coupling port.
    Flux(f64),
    /// `n_in / n_bi`, relative to the bifurcation threshold. The coupling rate
    /// cancels from the steady-state cubic in this form.
    Ratio(f64),
}

impl DriveStrength {
    /// `kappa_c * n_in`, the right-hand side of the steady-state cubic
    /// (square of the classical drive amplitude), in (rad/s)^2.
    pub fn drive_term(&self, cavity: &CavityParams) -> Result<f64> {
        match *self {
            DriveStrength::Flux(n_in) => {
                check_nonneg("n_in", n_in)?;
                Ok(cavity.kappa_c * n_in)
            }
            DriveStrength::Ratio(r) => {
                check_nonneg("n_in/n_bi", r)?;
                Ok(r * cavity.critical_drive_term()?)
            }
        }
    }

    /// Photon flux at the coupling port.
    pub fn n_in(&self, cavity: &CavityParams) -> Result<f64> {
        Ok(self.drive_term(cavity)? / cavity.kappa_c)
    }

    /// Drive amplitude `alpha_d = sqrt(kappa_c n_in)`, rad/s.
    pub fn amplitude(&self, cavity: &CavityParams) -> Result<f64> {
        Ok(self.drive_term(cavity)?.sqrt())
    }

    /// Drive relative to the bifurcation threshold.
    pub fn ratio(&self, cavity: &CavityParams) -> Result<f64> {
        Ok(self.drive_term(cavity)? / cavity.critical_drive_term()?)
    }
}

fn check_nonneg(what: &'static str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite { what, value: x });
    }
    if x < 0.0 {
        return Err(Error::InvalidInput(format!("{what} must be >= 0 (got {x})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    /// Detuning increases along the sweep.
    Up,
    /// Detuning decreases along the sweep.
    Down,
    /// No sweep history; the grid order is taken as given.
    None,
}

impl SweepDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepDirection::Up => "up",
            SweepDirection::Down => "down",
            SweepDirection::None => "none",
        }
    }
}

impl std::str::FromStr for SweepDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(SweepDirection::Up),
            "down" => Ok(SweepDirection::Down),
            "none" => Ok(SweepDirection::None),
            other => Err(Error::InvalidInput(format!("unknown sweep direction `{other}`"))),
        }
    }
}

/// Drive tone: detuning `Delta = omega_d - omega_c` (rad/s), strength and sweep history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub detuning: f64,
    pub strength: DriveStrength,
    pub direction: SweepDirection,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_device_is_valid() {
        let v = validate(&SystemParams::reference_device()).unwrap();
        assert!(v.warnings().is_empty());
    }

    #[test]
    fn zero_kappa_c_rejected() {
        let mut p = SystemParams::reference_device();
        p.cavity.kappa_c = 0.0;
        let err = validate(&p).unwrap_err();
        assert!(err.to_string().contains("kappa_c must be > 0"), "{err}");
    }

    #[test]
    fn all_violations_reported() {
        let mut p = SystemParams::reference_device();
        p.cavity.kappa_c = -1.0;
        p.mech.omega_m = 0.0;
        p.mech.n_th = f64::NAN;
        match validate(&p) {
            Err(Error::Validation(v)) => {
                let fields: Vec<_> = v.iter().map(|x| x.field).collect();
                assert_eq!(fields, vec!["kappa_c", "omega_m", "n_th"]);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn broad_mechanical_mode_warns() {
        let mut p = SystemParams::reference_device();
        p.mech.gamma_m = p.mech.omega_m;
        let v = validate(&p).unwrap();
        assert_eq!(v.warnings().len(), 1);
    }

    #[test]
    fn validation_is_idempotent() {
        let v = validate(&SystemParams::reference_device()).unwrap();
        let again = validate(&v).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn ratio_drive_needs_positive_kerr() {
        let mut c = SystemParams::reference_device().cavity;
        c.kerr = 0.0;
        assert!(matches!(DriveStrength::Ratio(1.0).drive_term(&c), Err(Error::NoBifurcation(_))));
        assert!(DriveStrength::Flux(1e9).drive_term(&c).is_ok());
    }

    #[test]
    fn ratio_and_flux_agree() {
        let c = SystemParams::reference_device().cavity;
        let n_in = DriveStrength::Ratio(1.9).n_in(&c).unwrap();
        let r = DriveStrength::Flux(n_in).ratio(&c).unwrap();
        assert!((r - 1.9).abs() < 1e-12);
    }
}
