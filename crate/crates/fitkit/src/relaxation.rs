//! Exponential relaxation `df(t) = offset + df0 exp(-t / tau)`, per trace or
//! with a decay time shared across traces.

use crate::lsq::{self, Model};
use crate::{FitError, Result};

/// One series of `(t [s], df [Hz])` samples.
pub type Series = [(f64, f64)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitude {
    pub delta_f0: f64,
    pub delta_f0_stderr: f64,
    pub offset: f64,
    pub offset_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationFit {
    pub delta_f0: f64,
    pub delta_f0_stderr: f64,
    /// `None` when the amplitude is consistent with zero.
    pub tau: Option<f64>,
    pub tau_stderr: Option<f64>,
    pub offset: f64,
    pub offset_stderr: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointRelaxationFit {
    pub tau: Option<f64>,
    pub tau_stderr: Option<f64>,
    pub traces: Vec<Amplitude>,
    pub residual_norm: f64,
}

impl JointRelaxationFit {
    pub fn identifiable(&self) -> bool {
        self.tau.is_some()
    }
}

struct Joint<'a> {
    series: &'a [Vec<(f64, f64)>],
    y_ref: Vec<f64>,
}

impl Model for Joint<'_> {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let tau = p[0].exp();
        let mut r = Vec::new();
        for (k, s) in self.series.iter().enumerate() {
            let (amp, off) = (p[1 + 2 * k] * self.y_ref[k], p[2 + 2 * k] * self.y_ref[k]);
            r.extend(s.iter().map(|&(t, y)| (off + amp * (-t / tau).exp() - y) / self.y_ref[k]));
        }
        Some(r)
    }

    fn jacobian(&self, p: &[f64]) -> Option<nalgebra::DMatrix<f64>> {
        let tau = p[0].exp();
        let rows: usize = self.series.iter().map(Vec::len).sum();
        let mut j = nalgebra::DMatrix::zeros(rows, p.len());
        let mut row = 0;
        for (k, s) in self.series.iter().enumerate() {
            let amp = p[1 + 2 * k];
            for &(t, _) in s {
                let e = (-t / tau).exp();
                // d/d(ln tau) of amp e^{-t/tau} = amp e (t / tau)
                j[(row, 0)] = amp * e * t / tau;
                j[(row, 1 + 2 * k)] = e;
                j[(row, 2 + 2 * k)] = 1.0;
                row += 1;
            }
        }
        Some(j)
    }
}

fn validate(series: &[Vec<(f64, f64)>]) -> Result<()> {
    if series.is_empty() {
        return Err(FitError::Input("no relaxation series".into()));
    }
    for s in series {
        if s.len() < 10 {
            return Err(FitError::Input(format!("relaxation series needs >= 10 samples (got {})", s.len())));
        }
        if s.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
            return Err(FitError::Input("relaxation samples must be finite".into()));
        }
        if !s.windows(2).all(|w| w[1].0 > w[0].0) {
            return Err(FitError::Input("relaxation times must be strictly increasing".into()));
        }
    }
    Ok(())
}

fn initial(s: &[(f64, f64)]) -> (f64, f64, f64) {
    let tail = (s.len() / 10).max(2);
    let off = s[s.len() - tail..].iter().map(|p| p.1).sum::<f64>() / tail as f64;
    let (t0, y0) = s[0];
    let first = y0 - off;
    let cross = s.iter().find(|&&(_, y)| (y - off).abs() < first.abs() / std::f64::consts::E);
    let span = s[s.len() - 1].0 - t0;
    let tau = cross.map_or(span / 3.0, |&(t, _)| (t - t0).max(span / s.len() as f64));
    (first * (t0 / tau).exp(), off, tau)
}

fn constant(s: &[(f64, f64)]) -> bool {
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    hi - lo <= 1e-14 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)
}

/// Joint fit with one decay time and free amplitude and offset per series.
pub fn relaxation_fit_joint(series: &[Vec<(f64, f64)>]) -> Result<JointRelaxationFit> {
    validate(series)?;
    if series.iter().all(|s| constant(s)) {
        let traces = series
            .iter()
            .map(|s| Amplitude {
                delta_f0: 0.0,
                delta_f0_stderr: 0.0,
                offset: s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64,
                offset_stderr: 0.0,
            })
            .collect();
        return Ok(JointRelaxationFit { tau: None, tau_stderr: None, traces, residual_norm: 0.0 });
    }
    let inits: Vec<(f64, f64, f64)> = series.iter().map(|s| initial(s)).collect();
    let mut taus: Vec<f64> = inits.iter().map(|i| i.2).collect();
    taus.sort_by(f64::total_cmp);
    let tau0 = taus[taus.len() / 2];
    let y_ref: Vec<f64> = series
        .iter()
        .map(|s| s.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE))
        .collect();
    let mut start = vec![tau0.ln()];
    for (k, &(a, o, _)) in inits.iter().enumerate() {
        start.push(a / y_ref[k]);
        start.push(o / y_ref[k]);
    }
    let model = Joint { series, y_ref: y_ref.clone() };
    let sol = lsq::minimize(&model, &start, "relaxation fit")?;
    let err = sol.stderr();
    let traces: Vec<Amplitude> = (0..series.len())
        .map(|k| Amplitude {
            delta_f0: sol.params[1 + 2 * k] * y_ref[k],
            delta_f0_stderr: err[1 + 2 * k] * y_ref[k],
            offset: sol.params[2 + 2 * k] * y_ref[k],
            offset_stderr: err[2 + 2 * k] * y_ref[k],
        })
        .collect();
    let residual_norm = sol
        .residuals
        .iter()
        .zip(series.iter().enumerate().flat_map(|(k, s)| std::iter::repeat_n(y_ref[k], s.len())))
        .map(|(r, y)| (r * y).powi(2))
        .sum::<f64>()
        .sqrt();
    // no amplitude distinguishable from zero: the decay time is not determined
    if traces.iter().all(|a| a.delta_f0.abs() <= 2.0 * a.delta_f0_stderr) {
        return Ok(JointRelaxationFit { tau: None, tau_stderr: None, traces, residual_norm });
    }
    let tau = sol.params[0].exp();
    let span = series.iter().map(|s| s[s.len() - 1].0 - s[0].0).fold(0.0, f64::max);
    let dt = series
        .iter()
        .flat_map(|s| s.windows(2).map(|w| w[1].0 - w[0].0))
        .fold(f64::INFINITY, f64::min);
    if tau < 0.1 * dt || tau > 10.0 * span {
        return Err(FitError::TauAtBound { tau });
    }
    if span < 2.0 * tau {
        return Err(FitError::Input(format!(
            "series spans {:.2} decay times; need >= 2",
            span / tau
        )));
    }
    Ok(JointRelaxationFit { tau: Some(tau), tau_stderr: Some(tau * err[0]), traces, residual_norm })
}

pub fn relaxation_fit(series: &Series) -> Result<RelaxationFit> {
    let j = relaxation_fit_joint(&[series.to_vec()])?;
    let a = j.traces[0];
    Ok(RelaxationFit {
        delta_f0: a.delta_f0,
        delta_f0_stderr: a.delta_f0_stderr,
        tau: j.tau,
        tau_stderr: j.tau_stderr,
        offset: a.offset,
        offset_stderr: a.offset_stderr,
        residual_norm: j.residual_norm,
    })
}

/// Synthetic decays on a common time grid with additive Gaussian noise.
pub fn synthetic_relaxation(
    tau: f64,
    amplitudes: &[f64],
    offset: f64,
    times: &[f64],
    noise: f64,
    seed: u64,
) -> Vec<Vec<(f64, f64)>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    amplitudes
        .iter()
        .map(|&a| {
            times
                .iter()
                .map(|&t| (t, offset + a * (-t / tau).exp() + noise * normal.sample(&mut rng)))
                .collect()
        })
        .collect()
}
