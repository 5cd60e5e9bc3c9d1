//! Fit of a measured phonon-occupation trace and prediction at other drive
//! powers. The fitted quantities are the input flux, the Kerr constant and
//! the bath occupation; linewidths, mechanical frequency and `g0` are held at
//! their calibrated values.

use kerromech::backaction::{cooling_trace, BranchPolicy, CoolingTrace, Method};
use kerromech::{validate, DriveStrength, SweepDirection, SystemParams, ValidatedParams};

use crate::lsq::{self, Model};
use crate::{FitError, Result};

/// Residual assigned to a point the model cannot evaluate.
const INVALID_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingFit {
    pub params: SystemParams,
    /// Input photon flux at the coupling port, photons/s.
    pub n_in: f64,
    /// Standard errors of `(n_in, kerr, n_th)`.
    pub stderr: [f64; 3],
    pub residual_norm: f64,
    pub method: Method,
}

impl CoolingFit {
    pub fn validated(&self) -> Result<ValidatedParams> {
        Ok(validate(&self.params)?)
    }

    /// Drive relative to the fitted bifurcation threshold.
    pub fn ratio(&self) -> Result<f64> {
        Ok(DriveStrength::Flux(self.n_in).ratio(&self.params.cavity)?)
    }

    /// Trace at `power_factor` times the fitted input flux.
    pub fn predict(&self, power_factor: f64, grid: &[f64], direction: SweepDirection) -> Result<CoolingTrace> {
        let p = self.validated()?;
        Ok(cooling_trace(
            &p,
            DriveStrength::Flux(self.n_in * power_factor),
            grid,
            direction,
            BranchPolicy::Occupied,
            self.method,
        )?)
    }
}

struct TraceModel<'a> {
    base: SystemParams,
    detuning: &'a [f64],
    n_m: &'a [f64],
    direction: SweepDirection,
    method: Method,
    k_ref: f64,
}

impl TraceModel<'_> {
    fn unpack(&self, p: &[f64]) -> (SystemParams, f64) {
        let mut s = self.base;
        s.cavity.kerr = p[1] * self.k_ref;
        s.mech.n_th = p[2].exp();
        (s, p[0].exp())
    }
}

impl Model for TraceModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let (sys, n_in) = self.unpack(p);
        let v = validate(&sys).ok()?;
        let trace =
            cooling_trace(&v, DriveStrength::Flux(n_in), self.detuning, self.direction, BranchPolicy::Occupied, self.method)
                .ok()?;
        Some(
            trace
                .points
                .iter()
                .zip(self.n_m)
                .map(|(pt, &y)| pt.n_m.map_or(INVALID_PENALTY, |m| m / y - 1.0))
                .collect(),
        )
    }

    fn step(&self, p: &[f64], j: usize) -> f64 {
        1e-6 * p[j].abs().max(1e-3)
    }
}

/// Fit `(n_in, K, n_th)` to an occupation trace `n_m(detuning)` measured
/// along a sweep in `direction`. `guess` supplies every other parameter and
/// the starting Kerr constant and bath occupation; `n_in_guess` starts the flux.
pub fn fit_cooling_trace(
    guess: &ValidatedParams,
    n_in_guess: f64,
    detuning: &[f64],
    n_m: &[f64],
    direction: SweepDirection,
    method: Method,
) -> Result<CoolingFit> {
    if detuning.len() != n_m.len() || detuning.len() < 4 {
        return Err(FitError::Input(format!(
            "cooling trace needs >= 4 matching samples (got {} / {})",
            detuning.len(),
            n_m.len()
        )));
    }
    if n_m.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(FitError::Input("occupations must be finite and positive".into()));
    }
    if !(n_in_guess > 0.0) {
        return Err(FitError::Input(format!("flux guess must be > 0 (got {n_in_guess})")));
    }
    let base = *guess.params();
    let k_ref = if base.cavity.kerr != 0.0 { base.cavity.kerr.abs() } else { base.cavity.kappa() * 1e-3 };
    let model = TraceModel { base, detuning, n_m, direction, method, k_ref };
    let start = [n_in_guess.ln(), base.cavity.kerr / k_ref, base.mech.n_th.max(1e-3).ln()];
    let sol = lsq::minimize(&model, &start, "cooling-trace fit")?;
    let (params, n_in) = model.unpack(&sol.params);
    let e = sol.stderr();
    Ok(CoolingFit {
        params,
        n_in,
        stderr: [n_in * e[0], k_ref * e[1], params.mech.n_th * e[2]],
        residual_norm: sol.residual_norm(),
        method,
    })
}

/// Largest relative occupation mismatch over points that are valid and on
/// the same branch in both traces, and the number of such points.
pub fn trace_deviation(a: &CoolingTrace, b: &CoolingTrace) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut count = 0;
    for (p, q) in a.points.iter().zip(&b.points) {
        if let (Some(x), Some(y)) = (p.n_m, q.n_m) {
            if p.label == q.label {
                worst = worst.max((x - y).abs() / y.abs());
                count += 1;
            }
        }
    }
    (worst, count)
}

/// Synthetic occupations with relative Gaussian scatter; invalid points are
/// dropped.
pub fn synthetic_occupations(trace: &CoolingTrace, rel_noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    trace
        .points
        .iter()
        .filter_map(|p| p.n_m.map(|m| (p.detuning, m * (1.0 + rel_noise * normal.sample(&mut rng)))))
        .unzip()
}
