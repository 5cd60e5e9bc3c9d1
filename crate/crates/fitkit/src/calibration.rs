//! Single-photon coupling from a cryostat temperature ramp.
//!
//! With a thermalised mode `<n_m> = k_B T / (hbar omega_m)`, so the measured
//! `g0^2 <n_m>` is linear in `T` through the origin with slope
//! `g0^2 k_B / (hbar omega_m)`.

use kerromech::units::{HBAR, K_B};

use crate::{FitError, Result};

/// Default lower temperature for thermalised points, K.
pub const DEFAULT_T_MIN: f64 = 0.250;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampPoint {
    /// Base temperature, K.
    pub temperature: f64,
    /// Measured `g0^2 <n_m>`, (rad/s)^2.
    pub g0_sq_n: f64,
    /// One-sigma uncertainty of `g0_sq_n`; `None` for equal weights.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct G0Calibration {
    /// rad/s.
    pub g0: f64,
    pub g0_stderr: f64,
    /// `d(g0^2 <n_m>)/dT`, (rad/s)^2 / K.
    pub slope: f64,
    pub slope_stderr: f64,
    pub omega_m: f64,
    /// Points at or above the threshold, sorted by temperature.
    pub used: Vec<RampPoint>,
    /// Points below the threshold (not thermalised), sorted by temperature.
    pub excluded: Vec<RampPoint>,
}

fn sort(points: &mut [RampPoint]) {
    points.sort_by(|a, b| a.temperature.total_cmp(&b.temperature).then(a.g0_sq_n.total_cmp(&b.g0_sq_n)));
}

/// Weighted fit of `g0^2 <n_m> = s T` over points with `T >= t_min`.
pub fn calibrate_g0(points: &[RampPoint], omega_m: f64, t_min: f64) -> Result<G0Calibration> {
    if !(omega_m > 0.0) || !omega_m.is_finite() {
        return Err(FitError::Input(format!("omega_m must be > 0 (got {omega_m})")));
    }
    if points.iter().any(|p| {
        !p.temperature.is_finite() || !p.g0_sq_n.is_finite() || p.sigma.is_some_and(|s| !(s > 0.0 && s.is_finite()))
    }) {
        return Err(FitError::Input("ramp points must be finite with positive uncertainties".into()));
    }
    let (mut used, mut excluded): (Vec<_>, Vec<_>) = points.iter().partition(|p| p.temperature >= t_min);
    sort(&mut used);
    sort(&mut excluded);
    if used.len() < 4 {
        return Err(FitError::InsufficientPoints { usable: used.len(), t_min });
    }
    let w = |p: &RampPoint| p.sigma.map_or(1.0, |s| 1.0 / (s * s));
    let sxx: f64 = used.iter().map(|p| w(p) * p.temperature * p.temperature).sum();
    let sxy: f64 = used.iter().map(|p| w(p) * p.temperature * p.g0_sq_n).sum();
    let slope = sxy / sxx;
    if !(slope > 0.0) {
        return Err(FitError::NegativeSlope { slope });
    }
    let chi2: f64 = used.iter().map(|p| w(p) * (p.g0_sq_n - slope * p.temperature).powi(2)).sum();
    let dof = (used.len() - 1) as f64;
    // with known sigmas the scale is fixed, otherwise estimated from scatter
    let var = if used.iter().all(|p| p.sigma.is_some()) { 1.0 / sxx } else { chi2 / dof / sxx };
    let slope_stderr = var.sqrt();
    let g0 = (slope * HBAR * omega_m / K_B).sqrt();
    Ok(G0Calibration {
        g0,
        g0_stderr: 0.5 * g0 * slope_stderr / slope,
        slope,
        slope_stderr,
        omega_m,
        used,
        excluded,
    })
}

/// Bath temperature that gives the measured `g0^2 <n_m>` for a calibrated
/// `g0`, through the same linear occupation.
pub fn effective_temperature(g0: f64, g0_sq_n: f64, omega_m: f64) -> Result<f64> {
    if !(g0 > 0.0 && omega_m > 0.0 && g0_sq_n >= 0.0) {
        return Err(FitError::Input("effective temperature needs g0 > 0, omega_m > 0, g0^2 n >= 0".into()));
    }
    Ok(g0_sq_n / (g0 * g0) * HBAR * omega_m / K_B)
}

/// Synthetic ramp: `g0^2 k_B T / (hbar omega_m)` with relative Gaussian
/// scatter `rel_noise`; points below `t_sat` read as if at `t_sat`.
pub fn synthetic_ramp(
    g0: f64,
    omega_m: f64,
    temperatures: &[f64],
    rel_noise: f64,
    t_sat: f64,
    seed: u64,
) -> Vec<RampPoint> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    temperatures
        .iter()
        .map(|&t| {
            let truth = g0 * g0 * K_B * t.max(t_sat) / (HBAR * omega_m);
            let value = truth * (1.0 + rel_noise * normal.sample(&mut rng));
            RampPoint { temperature: t, g0_sq_n: value, sigma: None }
        })
        .collect()
}
