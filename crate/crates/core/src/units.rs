//! Unit conversions and thermal occupation.

use std::f64::consts::TAU;

use crate::error::{ensure_finite, Error, Result};

/// Reduced Planck constant (J s), CODATA 2018 exact.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K), exact.
pub const K_B: f64 = 1.380_649e-23;

/// Ordinary frequency (Hz) to angular frequency (rad/s).
pub fn hz_to_angular(f: f64) -> Result<f64> {
    Ok(ensure_finite("frequency", f)? * TAU)
}

/// Angular frequency (rad/s) to ordinary frequency (Hz).
pub fn angular_to_hz(omega: f64) -> Result<f64> {
    Ok(ensure_finite("angular frequency", omega)? / TAU)
}

/// High-temperature (Boltzmann) phonon occupation `k_B T / (hbar omega_m)`.
///
/// Linear in temperature; this is the relation used for the temperature-ramp
/// calibration. See [`bose_occupation`] for the full Bose factor.
pub fn thermal_occupation(temp_k: f64, omega_m: f64) -> Result<f64> {
    check_thermal_args(temp_k, omega_m)?;
    Ok(K_B * temp_k / (HBAR * omega_m))
}

/// Full Bose-Einstein occupation `1 / (exp(hbar omega_m / k_B T) - 1)`.
pub fn bose_occupation(temp_k: f64, omega_m: f64) -> Result<f64> {
    check_thermal_args(temp_k, omega_m)?;
    if temp_k == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (HBAR * omega_m / (K_B * temp_k)).exp_m1())
}

/// Inverse of [`thermal_occupation`].
pub fn occupation_temperature(n_th: f64, omega_m: f64) -> Result<f64> {
    check_thermal_args(n_th, omega_m)?;
    Ok(n_th * HBAR * omega_m / K_B)
}

fn check_thermal_args(x: f64, omega_m: f64) -> Result<()> {
    ensure_finite("temperature", x)?;
    ensure_finite("omega_m", omega_m)?;
    if omega_m <= 0.0 {
        return Err(Error::InvalidInput(format!("omega_m must be > 0 (got {omega_m})")));
    }
    if x < 0.0 {
        return Err(Error::InvalidInput(format!("temperature must be >= 0 (got {x})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_frequency() {
        assert_eq!(hz_to_angular(0.0).unwrap(), 0.0);
    }

    #[test]
    fn mechanical_frequency_to_angular() {
        let w = hz_to_angular(287.3e3).unwrap();
        assert_eq!(w, TAU * 287_300.0);
        assert!((w - 1.805_159e6).abs() < 1.0);
    }

    #[test]
    fn cavity_frequency_round_trip() {
        let f = 8.1e9;
        let back = angular_to_hz(hz_to_angular(f).unwrap()).unwrap();
        assert!((back - f).abs() <= f64::EPSILON * f);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(hz_to_angular(f64::NAN).is_err());
        assert!(hz_to_angular(f64::INFINITY).is_err());
    }

    #[test]
    fn thermal_anchor_values() {
        let wm = TAU * 287.3e3;
        assert_eq!(thermal_occupation(0.0, wm).unwrap(), 0.0);
        let n150 = thermal_occupation(0.150, wm).unwrap();
        assert!((n150 / 1.09e4 - 1.0).abs() < 0.01, "{n150}");
        let n267 = thermal_occupation(0.267, wm).unwrap();
        assert!((n267 / 1.94e4 - 1.0).abs() < 0.01, "{n267}");
    }

    #[test]
    fn bose_matches_boltzmann_at_high_temperature() {
        let wm = TAU * 287.3e3;
        let hi = thermal_occupation(0.267, wm).unwrap();
        let full = bose_occupation(0.267, wm).unwrap();
        // 1/(e^x - 1) = 1/x - 1/2 + O(x)
        assert!((hi - full - 0.5).abs() < 1e-3);
        assert_eq!(bose_occupation(0.0, wm).unwrap(), 0.0);
    }

    #[test]
    fn thermal_rejects_bad_frequency() {
        assert!(thermal_occupation(0.1, 0.0).is_err());
        assert!(thermal_occupation(0.1, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn hz_round_trip_within_one_ulp(f in 1e-3f64..1e12) {
            let back = angular_to_hz(hz_to_angular(f).unwrap()).unwrap();
            let ulp = f64::EPSILON * f;
            prop_assert!((back - f).abs() <= ulp);
        }

        #[test]
        fn thermal_linear_in_temperature(t in 0.0f64..10.0, fm in 1e3f64..1e9) {
            let wm = hz_to_angular(fm).unwrap();
            prop_assert_eq!(
                thermal_occupation(2.0 * t, wm).unwrap(),
                2.0 * thermal_occupation(t, wm).unwrap()
            );
        }
    }
}
