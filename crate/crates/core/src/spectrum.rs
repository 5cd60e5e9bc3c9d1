//! Photon-number fluctuation spectrum of the linearised Kerr cavity.
//!
//! Fluctuations `d = a - alpha` obey `d/dt (d, d†) = M (d, d†) + noise` with
//! `M = [[i dt - kappa/2, i lambda], [-i lambda*, -i dt - kappa/2]]`,
//! `dt = Delta + 2 K n_c` and `lambda = K alpha^2`. The spectrum uses the
//! two-sided `e^{+i omega t}` convention, so `S_nn(+omega_m)` sets the
//! anti-Stokes rate.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::params::{CavityParams, MechParams};
use crate::steadystate::{BranchLabel, SteadyStateBranch};

type C = Complex64;

/// Fluctuation model around one steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedCavity {
    pub branch: SteadyStateBranch,
    pub kappa: f64,
    pub kerr: f64,
    pub omega_c: f64,
    pub delta_tilde: f64,
    pub lam: C,
    pub n_c: f64,
    /// Thermal occupation of the input fields; 0 means vacuum noise.
    pub bath_occupation: f64,
}

pub fn linearize(branch: &SteadyStateBranch, cavity: &CavityParams) -> LinearizedCavity {
    LinearizedCavity {
        branch: *branch,
        kappa: cavity.kappa(),
        kerr: cavity.kerr,
        omega_c: cavity.omega_c,
        delta_tilde: branch.detuning + 2.0 * cavity.kerr * branch.n_c,
        lam: cavity.kerr * branch.alpha * branch.alpha,
        n_c: branch.n_c,
        bath_occupation: 0.0,
    }
}

impl LinearizedCavity {
    pub fn with_bath_occupation(mut self, n_b: f64) -> Result<Self> {
        ensure_finite("bath occupation", n_b)?;
        if n_b < 0.0 {
            return Err(Error::InvalidInput(format!("bath occupation must be >= 0 (got {n_b})")));
        }
        self.bath_occupation = n_b;
        Ok(self)
    }

    pub fn drift_matrix(&self) -> Matrix2<C> {
        let i = C::i();
        let k2 = C::from(0.5 * self.kappa);
        Matrix2::new(
            i * self.delta_tilde - k2,
            i * self.lam,
            -i * self.lam.conj(),
            -i * self.delta_tilde - k2,
        )
    }

    /// Eigenvalues of the drift matrix, `-kappa/2 ± sqrt(|lambda|^2 - dt^2)`.
    pub fn eigenvalues(&self) -> [C; 2] {
        let root = C::from(self.lam.norm_sqr() - self.delta_tilde * self.delta_tilde).sqrt();
        let c = C::from(-0.5 * self.kappa);
        [c + root, c - root]
    }

    /// `D(omega) = (kappa/2 - i omega)^2 + dt^2 - |lambda|^2`.
    pub fn determinant(&self, omega: f64) -> C {
        let a = C::new(0.5 * self.kappa, -omega);
        a * a + self.delta_tilde * self.delta_tilde - self.lam.norm_sqr()
    }

    /// `chi(omega) = (-i omega - M)^{-1}`.
    pub fn susceptibility(&self, omega: f64) -> Result<Matrix2<C>> {
        let m = Matrix2::from_diagonal_element(C::new(0.0, -omega)) - self.drift_matrix();
        m.try_inverse()
            .ok_or_else(|| Error::Singular(format!("susceptibility at omega = {omega}")))
    }

    fn require_stable(&self) -> Result<()> {
        if self.branch.stable {
            Ok(())
        } else {
            Err(Error::UnstableBranch { n_c: self.n_c })
        }
    }

    /// Response of `n` to a force on the mechanics, `-i u chi w` with
    /// `u = (alpha*, alpha)` and `w = (alpha, -alpha*)`. Its real part sets the
    /// spring shift and its imaginary part the optical damping.
    pub fn number_response(&self, omega: f64) -> Result<C> {
        self.require_stable()?;
        ensure_finite("omega", omega)?;
        let alpha = self.branch.alpha;
        let chi = self.susceptibility(omega)?;
        let u = Vector2::new(alpha.conj(), alpha);
        let w = Vector2::new(alpha, -alpha.conj());
        Ok(-C::i() * (u.transpose() * chi * w)[(0, 0)])
    }
}

/// Closed-form two-sided `S_nn(omega)` with vacuum input noise:
/// `kappa n_c [kappa^2/4 + (omega - Delta_bar)^2] / |D(omega)|^2`.
/// With a thermal input bath the matrix route is used instead.
pub fn s_nn(lin: &LinearizedCavity, omega: f64) -> Result<f64> {
    if lin.bath_occupation > 0.0 {
        return s_nn_matrix(lin, omega);
    }
    lin.require_stable()?;
    ensure_finite("omega", omega)?;
    let k = lin.kappa;
    let db = omega - lin.branch.delta_bar;
    Ok(k * lin.n_c * (0.25 * k * k + db * db) / lin.determinant(omega).norm_sqr())
}

/// `S_nn` by explicit inversion of the susceptibility, summing the input
/// correlators of both ports.
pub fn s_nn_matrix(lin: &LinearizedCavity, omega: f64) -> Result<f64> {
    lin.require_stable()?;
    ensure_finite("omega", omega)?;
    let chi = lin.susceptibility(omega)?;
    let alpha = lin.branch.alpha;
    let a = alpha.conj() * chi[(0, 0)] + alpha * chi[(1, 0)];
    let b = alpha.conj() * chi[(0, 1)] + alpha * chi[(1, 1)];
    let n_b = lin.bath_occupation;
    Ok(lin.kappa * ((n_b + 1.0) * a.norm_sqr() + n_b * b.norm_sqr()))
}

/// Stokes and anti-Stokes scattering rates, rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringRates {
    pub gamma_s: f64,
    pub gamma_as: f64,
}

impl ScatteringRates {
    /// `gamma_as - gamma_s`: positive for net cooling.
    pub fn optical_damping(&self) -> f64 {
        self.gamma_as - self.gamma_s
    }
}

pub fn scattering_rates(lin: &LinearizedCavity, mech: &MechParams) -> Result<ScatteringRates> {
    let g2 = mech.g0 * mech.g0;
    Ok(ScatteringRates {
        gamma_s: g2 * s_nn(lin, -mech.omega_m)?,
        gamma_as: g2 * s_nn(lin, mech.omega_m)?,
    })
}

/// `S_nn` over a frequency grid plus the scattering rates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub label: BranchLabel,
    pub detuning: f64,
    pub n_c: f64,
    /// Offsets from the drive frequency, rad/s.
    pub omega: Vec<f64>,
    /// Absolute frequencies `omega_d + omega`, when requested.
    pub omega_lab: Option<Vec<f64>>,
    pub s_nn: Vec<f64>,
    pub rates: ScatteringRates,
}

pub fn spectrum_trace(
    lin: &LinearizedCavity,
    mech: &MechParams,
    grid: &[f64],
    lab_frame: bool,
) -> Result<SpectrumResult> {
    let s_nn = grid.par_iter().map(|&w| s_nn(lin, w)).collect::<Result<Vec<_>>>()?;
    let omega_d = lin.omega_c + lin.branch.detuning;
    Ok(SpectrumResult {
        label: lin.branch.label,
        detuning: lin.branch.detuning,
        n_c: lin.n_c,
        omega: grid.to_vec(),
        omega_lab: lab_frame.then(|| grid.iter().map(|w| omega_d + w).collect()),
        s_nn,
        rates: scattering_rates(lin, mech)?,
    })
}

/// Largest mismatch between samples mirrored about the maximum, relative to
/// the peak value. Assumes a uniform grid; 0 for a symmetric trace.
pub fn peak_asymmetry(values: &[f64]) -> f64 {
    let Some((peak, &top)) = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return 0.0;
    };
    let reach = peak.min(values.len() - 1 - peak);
    (1..=reach)
        .map(|k| (values[peak + k] - values[peak - k]).abs() / top)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::DriveStrength;
    use crate::steadystate::{linspace, KerrCubic};
    use proptest::prelude::*;

    fn cavity(kerr: f64) -> CavityParams {
        CavityParams { omega_c: 100.0, kappa_c: 0.8, kappa_i: 0.2, kerr }
    }

    fn stable_lin(kerr: f64, detuning: f64, flux: f64) -> Vec<LinearizedCavity> {
        let c = cavity(kerr);
        KerrCubic::from_cavity(&c, DriveStrength::Flux(flux))
            .unwrap()
            .branches(detuning)
            .unwrap()
            .iter()
            .map(|b| linearize(b, &c))
            .collect()
    }

    #[test]
    fn linear_cavity_has_no_parametric_term() {
        let lin = &stable_lin(0.0, -0.4, 3.0)[0];
        assert_eq!(lin.delta_tilde, -0.4);
        assert_eq!(lin.lam, C::from(0.0));
    }

    #[test]
    fn linear_cavity_anti_stokes_peak() {
        let omega_m = 3.7;
        let lin = &stable_lin(0.0, -omega_m, 5.0)[0];
        let s = s_nn(lin, omega_m).unwrap();
        assert!((s / (4.0 * lin.n_c / lin.kappa) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn middle_root_is_unstable_and_rejected() {
        let c = cavity(0.1);
        let cubic = KerrCubic::from_cavity(&c, DriveStrength::Ratio(2.0)).unwrap();
        let w = cubic.window();
        let b = cubic.branches(0.5 * (w.delta_lo + w.delta_hi)).unwrap();
        assert_eq!(b.len(), 3);
        let mid = linearize(&b[1], &c);
        assert!(mid.eigenvalues().iter().any(|e| e.re > 0.0));
        let m = mid.drift_matrix();
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let e = mid.eigenvalues();
        assert!((e[0] + e[1] - tr).norm() < 1e-12 && (e[0] * e[1] - det).norm() < 1e-12);
        assert!(matches!(s_nn(&mid, 0.0), Err(Error::UnstableBranch { .. })));
        for outer in [&b[0], &b[2]] {
            assert!(linearize(outer, &c).eigenvalues().iter().all(|e| e.re < 0.0));
        }
    }

    #[test]
    fn centred_detuning_gives_equal_rates() {
        let lin = &stable_lin(0.0, 0.0, 2.0)[0];
        let mech = MechParams { omega_m: 0.3, gamma_m: 1e-4, g0: 1e-3, n_th: 10.0 };
        let r = scattering_rates(lin, &mech).unwrap();
        assert!((r.gamma_s - r.gamma_as).abs() <= 1e-15 * r.gamma_s);
        let red = &stable_lin(0.0, -0.5, 2.0)[0];
        assert!(scattering_rates(red, &mech).unwrap().optical_damping() > 0.0);
    }

    #[test]
    fn linear_trace_symmetric_about_cavity() {
        let lin = &stable_lin(0.0, -0.7, 2.0)[0];
        let mech = MechParams { omega_m: 0.3, gamma_m: 1e-4, g0: 1e-3, n_th: 10.0 };
        let grid = linspace(0.7 - 5.0, 0.7 + 5.0, 201);
        let t = spectrum_trace(lin, &mech, &grid, true).unwrap();
        assert!(peak_asymmetry(&t.s_nn) < 1e-12);
        let lab = t.omega_lab.unwrap();
        assert!((lab[0] - (100.0 - 0.7 + grid[0])).abs() < 1e-12);
    }

    #[test]
    fn kerr_makes_spectrum_asymmetric() {
        let lin = &stable_lin(0.2, -1.0, 1.0)[0];
        let peak = -lin.branch.delta_bar;
        let grid = linspace(peak - 4.0, peak + 4.0, 801);
        let s: Vec<f64> = grid.iter().map(|&w| s_nn(lin, w).unwrap()).collect();
        assert!(peak_asymmetry(&s) > 1e-3);
    }

    #[test]
    fn thermal_input_raises_spectrum() {
        let lin = stable_lin(0.1, -1.0, 1.0)[0];
        let hot = lin.with_bath_occupation(0.3).unwrap();
        for w in [-2.0, 0.0, 1.5] {
            assert!(s_nn(&hot, w).unwrap() > s_nn(&lin, w).unwrap());
        }
    }

    #[test]
    fn optical_damping_from_number_response() {
        let lin = &stable_lin(0.15, -1.2, 1.5)[0];
        let wm = 0.4;
        let r = lin.number_response(wm).unwrap();
        let diff = s_nn(lin, wm).unwrap() - s_nn(lin, -wm).unwrap();
        assert!((-2.0 * r.im - diff).abs() < 1e-12 * diff.abs().max(1e-300));
        // linear cavity: red detuning softens the spring
        let lin0 = &stable_lin(0.0, -1.2, 1.5)[0];
        assert!(lin0.number_response(wm).unwrap().re < 0.0);
    }

    proptest! {
        #[test]
        fn linear_limit_is_lorentzian(delta in -20.0f64..20.0, flux in 1e-3f64..1e3, w in -20.0f64..20.0) {
            let lin = &stable_lin(0.0, delta, flux)[0];
            let k = lin.kappa;
            let want = k * lin.n_c / (0.25 * k * k + (w + delta).powi(2));
            prop_assert!((s_nn(lin, w).unwrap() / want - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn closed_form_matches_matrix_route(
            kerr in -0.5f64..0.5, delta in -5.0f64..5.0, flux in 1e-3f64..20.0, w in -10.0f64..10.0,
        ) {
            for lin in stable_lin(kerr, delta, flux).iter().filter(|l| l.branch.stable) {
                let a = s_nn(lin, w).unwrap();
                let b = s_nn_matrix(lin, w).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-10 * a.abs(), "{} vs {}", a, b);
            }
        }
    }
}
