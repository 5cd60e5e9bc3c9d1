//! Optomechanical backaction on the mechanical mode, per detuning and branch.
//!
//! Two routes:
//! * quantum noise: rates `g0^2 S_nn(±omega_m)` from the cavity spectrum and a
//!   detailed-balance occupation;
//! * eigenvalue: the full linearised cavity + mechanics drift matrix, with the
//!   occupation from its steady-state covariance.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{DriveStrength, SweepDirection, SystemParams, ValidatedParams};
use crate::spectrum::{linearize, s_nn, LinearizedCavity};
use crate::steadystate::{BistableWindow, BranchLabel, KerrCubic, SteadyStateBranch};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    QuantumNoise,
    Eigenvalue,
    /// Quantum noise while `g0 sqrt(n_c) <= kappa / 100`, eigenvalue beyond.
    Auto,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::QuantumNoise => "quantum-noise",
            Method::Eigenvalue => "eigenvalue",
            Method::Auto => "auto",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantum-noise" => Ok(Method::QuantumNoise),
            "eigenvalue" => Ok(Method::Eigenvalue),
            "auto" => Ok(Method::Auto),
            other => Err(Error::InvalidInput(format!("unknown backaction method `{other}`"))),
        }
    }
}

/// Why a trace point carries no prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Invalid {
    /// The requested branch does not exist at this detuning.
    NoBranch,
    UnstableBranch,
    /// `gamma_eff <= 0`.
    ParametricInstability { gamma_eff: f64 },
    /// An eigenvalue of the coupled drift matrix has positive real part.
    ModeInstability { mode: &'static str, re: f64 },
}

/// Mechanical observables at one detuning. Numeric fields are `None` exactly
/// when `valid` is false.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackactionPoint {
    pub detuning: f64,
    pub label: BranchLabel,
    pub n_c: Option<f64>,
    pub n_m: Option<f64>,
    pub gamma_eff: Option<f64>,
    pub delta_omega_m: Option<f64>,
    pub gamma_opt: Option<f64>,
    pub valid: bool,
    /// Method actually used (never `Auto`).
    pub method: Method,
    pub invalid: Option<Invalid>,
}

impl BackactionPoint {
    fn invalid(detuning: f64, label: BranchLabel, method: Method, why: Invalid) -> Self {
        BackactionPoint {
            detuning,
            label,
            n_c: None,
            n_m: None,
            gamma_eff: None,
            delta_omega_m: None,
            gamma_opt: None,
            valid: false,
            method,
            invalid: Some(why),
        }
    }
}

struct Values {
    n_m: f64,
    gamma_eff: f64,
    delta_omega_m: f64,
    gamma_opt: f64,
}

fn point(branch: &SteadyStateBranch, method: Method, v: Values) -> BackactionPoint {
    BackactionPoint {
        detuning: branch.detuning,
        label: branch.label,
        n_c: Some(branch.n_c),
        n_m: Some(v.n_m),
        gamma_eff: Some(v.gamma_eff),
        delta_omega_m: Some(v.delta_omega_m),
        gamma_opt: Some(v.gamma_opt),
        valid: true,
        method,
        invalid: None,
    }
}

/// Scattering-rate picture: `gamma_opt = g0^2 (S(omega_m) - S(-omega_m))`,
/// `n_m = (Gamma_m n_th + g0^2 S(-omega_m)) / gamma_eff`, spring shift from
/// the real part of the number response.
pub fn backaction_quantum_noise(branch: &SteadyStateBranch, params: &SystemParams) -> Result<BackactionPoint> {
    let lin = linearize(branch, &params.cavity);
    let m = &params.mech;
    let g2 = m.g0 * m.g0;
    let s_plus = s_nn(&lin, m.omega_m)?;
    let s_minus = s_nn(&lin, -m.omega_m)?;
    let gamma_opt = g2 * (s_plus - s_minus);
    let gamma_eff = m.gamma_m + gamma_opt;
    if gamma_eff <= 0.0 {
        return Err(Error::ParametricInstability { gamma_eff });
    }
    let n_m = (m.gamma_m * m.n_th + g2 * s_minus) / gamma_eff;
    let delta_omega_m = g2 * lin.number_response(m.omega_m)?.re;
    Ok(point(branch, Method::QuantumNoise, Values { n_m, gamma_eff, delta_omega_m, gamma_opt }))
}

/// Drift matrix over `(d, d†, c, c†)` for cavity fluctuations `d` and the
/// mechanical mode `c`, with `G = g0 alpha`.
pub fn coupled_drift_matrix(lin: &LinearizedCavity, params: &SystemParams) -> Matrix4<C> {
    let i = C::i();
    let m = &params.mech;
    let g = lin.branch.alpha * m.g0;
    let cav = lin.drift_matrix();
    let half_gamma = C::from(0.5 * m.gamma_m);
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<2, 2>(0, 0).copy_from(&cav);
    a[(0, 2)] = -i * g;
    a[(0, 3)] = -i * g;
    a[(1, 2)] = i * g.conj();
    a[(1, 3)] = i * g.conj();
    a[(2, 0)] = -i * g.conj();
    a[(2, 1)] = -i * g;
    a[(2, 2)] = -i * m.omega_m - half_gamma;
    a[(3, 0)] = i * g.conj();
    a[(3, 1)] = i * g;
    a[(3, 3)] = i * m.omega_m - half_gamma;
    a
}

/// Eigenvector for eigenvalue `mu` by inverse iteration.
fn eigenvector(a: &Matrix4<C>, mu: C) -> Vector4<C> {
    let scale = a.norm().max(1.0);
    let shifted = a - Matrix4::from_diagonal_element(mu + C::new(1e-10 * scale, 1e-10 * scale));
    let lu = shifted.lu();
    let mut x = Vector4::from_element(C::from(0.5));
    for _ in 0..4 {
        match lu.solve(&x) {
            Some(y) if y.iter().all(|z| z.is_finite()) && y.norm() > 0.0 => x = y.unscale(y.norm()),
            _ => break,
        }
    }
    x
}

/// Eigenvalues of the coupled drift matrix, each with its weight on the
/// mechanical subspace.
fn modes(a: &Matrix4<C>) -> Result<Vec<(C, f64)>> {
    let eig = a
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Singular("drift matrix eigenvalues did not converge".into()))?;
    Ok(eig
        .iter()
        .map(|&mu| {
            let v = eigenvector(a, mu);
            let mech = v[2].norm_sqr() + v[3].norm_sqr();
            (mu, mech / v.norm_squared())
        })
        .collect())
}

/// Steady covariance `C_ij = <v_i v_j>` from `A C + C A^T + N = 0`.
fn covariance(a: &Matrix4<C>, params: &SystemParams, kappa: f64) -> Result<Matrix4<C>> {
    let m = &params.mech;
    let mut noise = Matrix4::<C>::zeros();
    noise[(0, 1)] = C::from(kappa);
    noise[(2, 3)] = C::from(m.gamma_m * (m.n_th + 1.0));
    noise[(3, 2)] = C::from(m.gamma_m * m.n_th);
    let id = DMatrix::<C>::identity(4, 4);
    let ad = DMatrix::from_iterator(4, 4, a.iter().copied());
    let big = id.kronecker(&ad) + ad.kronecker(&id);
    let rhs = DVector::from_iterator(16, noise.iter().map(|z| -z));
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("covariance equation".into()))?;
    Ok(Matrix4::from_iterator(sol.iter().copied()))
}

/// Full linearised dynamics: mechanical eigenvalue gives `omega_eff` and
/// `gamma_eff`, the covariance gives `n_m = <c† c>`.
pub fn backaction_eigenvalue(branch: &SteadyStateBranch, params: &SystemParams) -> Result<BackactionPoint> {
    let lin = linearize(branch, &params.cavity);
    if !branch.stable {
        return Err(Error::UnstableBranch { n_c: branch.n_c });
    }
    let m = &params.mech;
    if m.g0 == 0.0 {
        let v = Values { n_m: m.n_th, gamma_eff: m.gamma_m, delta_omega_m: 0.0, gamma_opt: 0.0 };
        return Ok(point(branch, Method::Eigenvalue, v));
    }
    let a = coupled_drift_matrix(&lin, params);
    let mut modes = modes(&a)?;
    modes.sort_by(|x, y| y.1.total_cmp(&x.1));
    if let Some(&(mu, w)) = modes.iter().find(|(mu, _)| mu.re > 0.0) {
        let mode = if w >= 0.5 { "mechanical" } else { "cavity" };
        return Err(Error::ModeInstability { mode, re: mu.re });
    }
    // the two most mechanical eigenvalues are a conjugate-mirrored pair
    let mech = modes[..2]
        .iter()
        .map(|m| m.0)
        .min_by(|x, y| x.im.total_cmp(&y.im))
        .expect("four eigenvalues");
    let gamma_eff = -2.0 * mech.re;
    let omega_eff = mech.im.abs();
    let cov = covariance(&a, params, lin.kappa)?;
    let n_m = cov[(3, 2)].re;
    Ok(point(
        branch,
        Method::Eigenvalue,
        Values { n_m, gamma_eff, delta_omega_m: omega_eff - m.omega_m, gamma_opt: gamma_eff - m.gamma_m },
    ))
}

/// `g0 sqrt(n_c) <= kappa / 100`.
pub fn weak_coupling(branch: &SteadyStateBranch, params: &SystemParams) -> bool {
    params.mech.g0.abs() * branch.n_c.sqrt() <= params.cavity.kappa() / 100.0
}

pub fn backaction(branch: &SteadyStateBranch, params: &SystemParams, method: Method) -> Result<BackactionPoint> {
    match method {
        Method::QuantumNoise => backaction_quantum_noise(branch, params),
        Method::Eigenvalue => backaction_eigenvalue(branch, params),
        Method::Auto if weak_coupling(branch, params) => backaction_quantum_noise(branch, params),
        Method::Auto => backaction_eigenvalue(branch, params),
    }
}

/// Which steady state a trace evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchPolicy {
    /// The branch occupied along the adiabatic sweep.
    Occupied,
    /// A fixed branch wherever it exists and is stable.
    Fixed(BranchLabel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingTrace {
    pub points: Vec<BackactionPoint>,
    pub direction: SweepDirection,
    pub ratio: f64,
    pub method: Method,
    pub window: BistableWindow,
}

impl CoolingTrace {
    pub fn valid_points(&self) -> impl Iterator<Item = &BackactionPoint> {
        self.points.iter().filter(|p| p.valid)
    }

    /// Smallest predicted occupation over valid points.
    pub fn min_n_m(&self) -> Option<f64> {
        self.valid_points().filter_map(|p| p.n_m).min_by(f64::total_cmp)
    }
}

fn evaluate(branch: &SteadyStateBranch, params: &SystemParams, method: Method) -> BackactionPoint {
    let used = match method {
        Method::Auto if weak_coupling(branch, params) => Method::QuantumNoise,
        Method::Auto => Method::Eigenvalue,
        m => m,
    };
    let bad = |why| BackactionPoint::invalid(branch.detuning, branch.label, used, why);
    if !branch.stable {
        return bad(Invalid::UnstableBranch);
    }
    match backaction(branch, params, used) {
        Ok(p) => p,
        Err(Error::ParametricInstability { gamma_eff }) => bad(Invalid::ParametricInstability { gamma_eff }),
        Err(Error::ModeInstability { mode, re }) => bad(Invalid::ModeInstability { mode, re }),
        Err(Error::UnstableBranch { .. }) => bad(Invalid::UnstableBranch),
        Err(e) => {
            log::warn!("backaction failed at detuning {}: {e}", branch.detuning);
            bad(Invalid::UnstableBranch)
        }
    }
}

/// Backaction along a detuning sweep at drive `strength`. The branch per
/// point follows the hysteresis sweep (or a fixed label); points without a
/// stable branch or without a mechanical steady state are marked invalid.
pub fn cooling_trace(
    params: &ValidatedParams,
    strength: DriveStrength,
    grid: &[f64],
    direction: SweepDirection,
    policy: BranchPolicy,
    method: Method,
) -> Result<CoolingTrace> {
    let cubic = KerrCubic::from_cavity(&params.cavity, strength)?;
    let ratio = if params.cavity.kerr > 0.0 { strength.ratio(&params.cavity)? } else { 0.0 };
    let sweep = cubic.sweep(grid, direction)?;
    let sys: &SystemParams = params;
    let points = match policy {
        BranchPolicy::Occupied => {
            sweep.states.par_iter().map(|b| evaluate(b, sys, method)).collect()
        }
        BranchPolicy::Fixed(label) => grid
            .par_iter()
            .map(|&delta| {
                let branches = cubic.branches(delta)?;
                Ok(match branches.iter().find(|b| b.label == label) {
                    Some(b) => evaluate(b, sys, method),
                    None => BackactionPoint::invalid(
                        delta,
                        label,
                        if method == Method::Auto { Method::QuantumNoise } else { method },
                        Invalid::NoBranch,
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(CoolingTrace { points, direction, ratio, method, window: sweep.window })
}

/// Kerr constant dressed by the static mechanical response,
/// `K + 2 g0^2 omega_m / (omega_m^2 + Gamma_m^2 / 4)`.
pub fn effective_kerr(params: &SystemParams) -> f64 {
    let m = &params.mech;
    params.cavity.kerr + 2.0 * m.g0 * m.g0 * m.omega_m / (m.omega_m * m.omega_m + 0.25 * m.gamma_m * m.gamma_m)
}
