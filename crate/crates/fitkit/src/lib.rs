//! Parameter extraction for Kerr cavity optomechanics: notch circle fits
//! (linear and Kerr-extended), mechanical sideband fits, the temperature-ramp
//! coupling calibration, frequency-shift relaxation fits and cooling-trace
//! fits with extrapolation to other drive powers.
//!
//! All fits are deterministic; synthetic generators take an explicit seed.

pub mod calibration;
pub mod circle;
pub mod cooling;
pub mod io;
pub mod lsq;
pub mod relaxation;
pub mod report;
pub mod sideband;

pub use calibration::{calibrate_g0, effective_temperature, G0Calibration, RampPoint};
pub use circle::{circle_fit_kerr, circle_fit_linear, CircleFitParams, PowerSpec, Resonator, S21Trace};
pub use cooling::{fit_cooling_trace, CoolingFit};
pub use relaxation::{relaxation_fit, relaxation_fit_joint, JointRelaxationFit, RelaxationFit};
pub use report::{FitReport, ParamEstimate};
pub use sideband::{mech_sideband_fit, PsdTrace, SidebandFit};

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("{0}")]
    Input(String),

    #[error("{stage} did not converge: {reason}")]
    NoConvergence { stage: &'static str, reason: String },

    #[error("degenerate circle: {0}")]
    DegenerateCircle(String),

    #[error("bistable trace without a sweep direction")]
    MissingDirection,

    #[error("peak SNR {snr:.2} below 3")]
    LowSnr { snr: f64 },

    #[error("multiple peaks detected ({count})")]
    MultiplePeaks { count: usize },

    #[error("insufficient thermalized points: {usable} at or above {t_min} K, need 4")]
    InsufficientPoints { usable: usize, t_min: f64 },

    #[error("negative calibration slope {slope:e}")]
    NegativeSlope { slope: f64 },

    #[error("decay time at its bound ({tau:e} s)")]
    TauAtBound { tau: f64 },

    #[error(transparent)]
    Model(#[from] kerromech::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FitError {
    pub fn kind(&self) -> kerromech::error::ErrorKind {
        use kerromech::error::ErrorKind;
        match self {
            FitError::Input(_)
            | FitError::MissingDirection
            | FitError::LowSnr { .. }
            | FitError::MultiplePeaks { .. }
            | FitError::InsufficientPoints { .. } => ErrorKind::Validation,
            FitError::NoConvergence { .. }
            | FitError::DegenerateCircle(_)
            | FitError::NegativeSlope { .. }
            | FitError::TauAtBound { .. } => ErrorKind::Convergence,
            FitError::Model(e) => e.kind(),
            FitError::Io(_) | FitError::Csv(_) => ErrorKind::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, FitError>;
