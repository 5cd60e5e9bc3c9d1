//! Reference solution for the driven Kerr cavity without mechanics: the
//! Lindblad steady state in a truncated Fock basis and its photon-number
//! spectrum from the quantum regression theorem.
//!
//! Units are whatever the caller picks (usually `kappa = 1`). The model is
//! `H = -Delta n - (K/2) n (n - 1) + eps (a + a†)` with collapse operator
//! `sqrt(kappa) a`.

pub mod band;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use band::{Band, BandLu};
use kerromech::error::ErrorKind;
use kerromech::params::CavityParams;
use kerromech::spectrum::{linearize, s_nn};
use kerromech::steadystate::KerrCubic;

type C = Complex64;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("{0}")]
    InvalidInput(String),

    #[error("Fock cutoff exhausted: top-level population {population:e} at cutoff {cutoff} (limit {limit})")]
    CutoffExhausted { cutoff: usize, limit: usize, population: f64 },

    #[error("linear solve failed at omega = {omega}: relative residual {residual:e}")]
    Solve { omega: f64, residual: f64 },

    #[error("steady state residual {residual:e} exceeds {bound:e}")]
    Residual { residual: f64, bound: f64 },

    #[error("refusing drive at {ratio:.3} of threshold in a potentially bistable region; override to proceed")]
    Bistable { ratio: f64 },

    #[error(transparent)]
    Model(#[from] kerromech::Error),
}

impl OracleError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            OracleError::InvalidInput(_) | OracleError::Bistable { .. } => ErrorKind::Validation,
            OracleError::CutoffExhausted { .. } | OracleError::Solve { .. } | OracleError::Residual { .. } => {
                ErrorKind::Convergence
            }
            OracleError::Model(e) => e.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Driven Kerr cavity truncated to Fock levels `0..=cutoff`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockProblem {
    pub kappa: f64,
    pub kerr: f64,
    pub detuning: f64,
    /// Classical drive amplitude `sqrt(kappa_c n_in)`.
    pub drive: f64,
    pub cutoff: usize,
    /// Hard limit for automatic growth of the cutoff.
    pub max_cutoff: usize,
}

/// Population allowed in the top five levels before the cutoff grows.
pub const TAIL_TOLERANCE: f64 = 1e-8;

impl FockProblem {
    /// Initial cutoff from the largest classical photon number.
    pub fn new(kappa: f64, kerr: f64, detuning: f64, drive: f64) -> Result<Self> {
        for (what, v) in [("kappa", kappa), ("kerr", kerr), ("detuning", detuning), ("drive", drive)] {
            if !v.is_finite() {
                return Err(OracleError::InvalidInput(format!("{what} must be finite (got {v})")));
            }
        }
        if kappa <= 0.0 {
            return Err(OracleError::InvalidInput(format!("kappa must be > 0 (got {kappa})")));
        }
        let n = KerrCubic::new(kappa, kerr, drive * drive)?
            .branches(detuning)?
            .last()
            .map(|b| b.n_c)
            .unwrap_or(0.0);
        let cutoff = (n + 6.0 * n.sqrt() + 15.0).ceil() as usize;
        Ok(FockProblem { kappa, kerr, detuning, drive, cutoff, max_cutoff: 400 })
    }

    /// Drive chosen so the classical photon number is `n_c`.
    pub fn for_photon_number(kappa: f64, kerr: f64, detuning: f64, n_c: f64) -> Result<Self> {
        if !(n_c >= 0.0) {
            return Err(OracleError::InvalidInput(format!("n_c must be >= 0 (got {n_c})")));
        }
        let shift = detuning + kerr * n_c;
        let p = n_c * (shift * shift + 0.25 * kappa * kappa);
        FockProblem::new(kappa, kerr, detuning, p.sqrt())
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }

    pub fn cubic(&self) -> Result<KerrCubic> {
        Ok(KerrCubic::new(self.kappa, self.kerr, self.drive * self.drive)?)
    }

    /// Drive relative to the classical bifurcation threshold.
    pub fn threshold_ratio(&self) -> Result<f64> {
        Ok(self.cubic()?.threshold_ratio())
    }

    /// Tridiagonal Hamiltonian: diagonal and the (symmetric) first off-diagonal.
    pub fn hamiltonian(&self) -> (Vec<f64>, Vec<f64>) {
        let diag = (0..self.dim())
            .map(|m| {
                let m = m as f64;
                -self.detuning * m - 0.5 * self.kerr * m * (m - 1.0)
            })
            .collect();
        let off = (0..self.cutoff).map(|m| self.drive * ((m + 1) as f64).sqrt()).collect();
        (diag, off)
    }

    /// Liouvillian on `vec(rho)` with `rho[m, n]` at index `n * dim + m`.
    pub fn liouvillian(&self) -> Band {
        let d = self.dim();
        let (h, g) = self.hamiltonian();
        let mut l = Band::zeros(d * d, d, d + 1);
        let i = C::i();
        let idx = |m: usize, n: usize| n * d + m;
        for n in 0..d {
            for m in 0..d {
                let row = idx(m, n);
                // -i [H, rho] + kappa (a rho a† - {n, rho}/2)
                let diag = -i * (h[m] - h[n]) - 0.5 * self.kappa * (m + n) as f64;
                l.add(row, row, diag);
                if m > 0 {
                    l.add(row, idx(m - 1, n), -i * g[m - 1]);
                }
                if m + 1 < d {
                    l.add(row, idx(m + 1, n), -i * g[m]);
                }
                if n > 0 {
                    l.add(row, idx(m, n - 1), i * g[n - 1]);
                }
                if n + 1 < d {
                    l.add(row, idx(m, n + 1), i * g[n]);
                }
                if m + 1 < d && n + 1 < d {
                    let jump = self.kappa * (((m + 1) * (n + 1)) as f64).sqrt();
                    l.add(row, idx(m + 1, n + 1), C::from(jump));
                }
            }
        }
        l
    }
}

/// Refuse drives that may sit in the bistable regime, where the quantum
/// steady state mixes both branches: at or above 0.8 of threshold on the
/// bistable side of the cusp detuning, or wherever the classical cubic has
/// three roots.
pub fn guard(problem: &FockProblem, allow: bool) -> Result<()> {
    if allow || problem.kerr == 0.0 {
        return Ok(());
    }
    let ratio = problem.threshold_ratio()?;
    let beyond_cusp = problem.kerr.signum() * problem.detuning < -(3f64.sqrt()) / 2.0 * problem.kappa;
    let three = problem.cubic()?.branches(problem.detuning)?.len() > 1;
    if (ratio >= 0.8 && beyond_cusp) || three {
        return Err(OracleError::Bistable { ratio });
    }
    Ok(())
}

/// Normalised steady state.
#[derive(Debug, Clone)]
pub struct SteadyDensity {
    pub problem: FockProblem,
    /// `rho[m, n]` at `n * dim + m`.
    pub rho: Vec<C>,
    pub mean: f64,
    pub variance: f64,
    /// `|L rho|_inf / (|L|_inf |rho|_inf)`.
    pub residual: f64,
}

impl SteadyDensity {
    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn get(&self, m: usize, n: usize) -> C {
        self.rho[n * self.dim() + m]
    }

    pub fn trace(&self) -> C {
        (0..self.dim()).map(|m| self.get(m, m)).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|m| self.get(m, m).re).collect()
    }

    /// Population of the five highest levels.
    pub fn tail_population(&self) -> f64 {
        let p = self.populations();
        p[p.len().saturating_sub(5)..].iter().sum()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for n in 0..d {
            for m in 0..n {
                worst = worst.max((self.get(m, n) - self.get(n, m).conj()).norm());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (self.get(i, j) + self.get(j, i).conj()));
        SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn solve_steady(problem: &FockProblem) -> Result<SteadyDensity> {
    let d = problem.dim();
    let l = problem.liouvillian();
    let norm = l.norm_inf();
    let mut shifted = l.clone();
    let sigma = 1e-8 * problem.kappa;
    shifted.add_diagonal(C::from(-sigma));
    let lu = shifted
        .lu()
        .ok_or(OracleError::Solve { omega: 0.0, residual: f64::INFINITY })?;
    let mut x = vec![C::new(0.0, 0.0); d * d];
    for m in 0..d {
        x[m * d + m] = C::from(1.0 / d as f64);
    }
    for _ in 0..4 {
        x = lu.solve(&x);
        let tr: C = (0..d).map(|m| x[m * d + m]).sum();
        for v in x.iter_mut() {
            *v /= tr;
        }
    }
    // hermitise
    for n in 0..d {
        for m in 0..n {
            let a = 0.5 * (x[n * d + m] + x[m * d + n].conj());
            x[n * d + m] = a;
            x[m * d + n] = a.conj();
        }
        x[n * d + n] = C::from(x[n * d + n].re);
    }
    let lr = l.mul_vec(&x);
    let rho_norm = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let residual = lr.iter().map(|v| v.norm()).fold(0.0, f64::max) / (norm * rho_norm);
    if residual > 1e-10 {
        return Err(OracleError::Residual { residual, bound: 1e-10 });
    }
    let pops: Vec<f64> = (0..d).map(|m| x[m * d + m].re).collect();
    let mean: f64 = pops.iter().enumerate().map(|(m, p)| m as f64 * p).sum();
    let second: f64 = pops.iter().enumerate().map(|(m, p)| (m * m) as f64 * p).sum();
    Ok(SteadyDensity { problem: *problem, rho: x, mean, variance: second - mean * mean, residual })
}

/// Steady state, growing the cutoff until the top five levels hold less
/// than [`TAIL_TOLERANCE`].
pub fn steady_density(problem: &FockProblem) -> Result<SteadyDensity> {
    let mut p = *problem;
    loop {
        let rho = solve_steady(&p)?;
        let tail = rho.tail_population();
        if tail < TAIL_TOLERANCE {
            return Ok(rho);
        }
        if p.cutoff >= p.max_cutoff {
            return Err(OracleError::CutoffExhausted { cutoff: p.cutoff, limit: p.max_cutoff, population: tail });
        }
        let next = (p.cutoff + (p.cutoff / 4).max(10)).min(p.max_cutoff);
        log::debug!("tail population {tail:e} at cutoff {}; growing to {next}", p.cutoff);
        p.cutoff = next;
    }
}

struct Regression {
    l: Band,
    b: Vec<C>,
    weights: Vec<f64>,
    dim: usize,
}

impl Regression {
    fn new(rho: &SteadyDensity) -> Self {
        let d = rho.dim();
        let l = rho.problem.liouvillian();
        let weights: Vec<f64> = (0..d).map(|m| m as f64 - rho.mean).collect();
        // B = (n - <n>) rho
        let mut b = vec![C::new(0.0, 0.0); d * d];
        for n in 0..d {
            for m in 0..d {
                b[n * d + m] = -weights[m] * rho.get(m, n);
            }
        }
        Regression { l, b, weights, dim: d }
    }

    fn at(&self, omega: f64) -> Result<f64> {
        let d = self.dim;
        // (i w + L) is singular at w = 0 on the trace direction
        let w = if omega == 0.0 { 1e-9 } else { omega };
        let mut a = self.l.clone();
        a.add_diagonal(C::new(0.0, w));
        let lu: BandLu = a.clone().lu().ok_or(OracleError::Solve { omega, residual: f64::INFINITY })?;
        let x = lu.solve(&self.b);
        let r = a.mul_vec(&x);
        let num = r.iter().zip(&self.b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        let den = self.b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let residual = num / den;
        if !(residual <= 1e-8) {
            return Err(OracleError::Solve { omega, residual });
        }
        let tr: C = (0..d).map(|m| self.weights[m] * x[m * d + m]).sum();
        Ok(2.0 * tr.re)
    }
}

/// `S_nn(omega)` from `(i omega + L) X = -(n - <n>) rho`,
/// `S = 2 Re Tr[(n - <n>) X]`.
pub fn oracle_s_nn(rho: &SteadyDensity, omegas: &[f64]) -> Result<Vec<f64>> {
    let reg = Regression::new(rho);
    omegas.par_iter().map(|&w| reg.at(w)).collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// `(1 / 2 pi) * integral of S_nn` over the real line, by the substitution
/// `omega = c + s tan(theta)` and Gauss-Legendre quadrature in `theta`.
pub fn integrated_variance(rho: &SteadyDensity, nodes: usize) -> Result<f64> {
    let p = &rho.problem;
    let centre = -(p.detuning + p.kerr * rho.mean);
    let s = p.kappa;
    let (x, w) = gauss_legendre(nodes);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let omegas: Vec<f64> = x.iter().map(|&t| centre + s * (half_pi * t).tan()).collect();
    let vals = oracle_s_nn(rho, &omegas)?;
    let total: f64 = x
        .iter()
        .zip(&w)
        .zip(&vals)
        .map(|((&t, &wt), &v)| {
            let c = (half_pi * t).cos();
            wt * half_pi * v * s / (c * c)
        })
        .sum();
    Ok(total / (2.0 * std::f64::consts::PI))
}

/// Oracle against the linearised closed form on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub omega: Vec<f64>,
    pub oracle: Vec<f64>,
    pub linear: Vec<f64>,
    pub classical_n: f64,
    pub quantum_n: f64,
    /// `max |linear - oracle| / max(oracle)` over the grid.
    pub max_deviation: f64,
    pub mean_deviation: f64,
}

/// Linearised spectrum of the (single) classical steady state, with the
/// coupling port carrying all loss.
pub fn linear_s_nn(problem: &FockProblem, omegas: &[f64]) -> Result<(f64, Vec<f64>)> {
    let cavity = CavityParams { omega_c: 0.0, kappa_c: problem.kappa, kappa_i: 0.0, kerr: problem.kerr };
    let branches = problem.cubic()?.branches(problem.detuning)?;
    let branch = branches
        .iter()
        .find(|b| b.stable)
        .ok_or_else(|| OracleError::InvalidInput("no stable classical steady state".into()))?;
    let lin = linearize(branch, &cavity);
    let vals = omegas.iter().map(|&w| s_nn(&lin, w)).collect::<kerromech::Result<Vec<_>>>()?;
    Ok((branch.n_c, vals))
}

pub fn compare(rho: &SteadyDensity, omegas: &[f64]) -> Result<Comparison> {
    let oracle = oracle_s_nn(rho, omegas)?;
    let (classical_n, linear) = linear_s_nn(&rho.problem, omegas)?;
    let peak = oracle.iter().copied().fold(0.0, f64::max);
    let devs: Vec<f64> = oracle.iter().zip(&linear).map(|(o, l)| (l - o).abs() / peak).collect();
    Ok(Comparison {
        omega: omegas.to_vec(),
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        mean_deviation: devs.iter().sum::<f64>() / devs.len().max(1) as f64,
        oracle,
        linear,
        classical_n,
        quantum_n: rho.mean,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub cutoffs: [usize; 3],
    pub means: [f64; 3],
    pub probes: Vec<f64>,
    pub spectra: [Vec<f64>; 3],
    /// Largest relative change of `<n>` between consecutive cutoffs.
    pub mean_change: f64,
    /// Largest change of `S_nn` at the probes relative to the largest probe value.
    pub spectrum_change: f64,
    pub converged: bool,
}

impl std::fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "cutoffs = {:?}", self.cutoffs)?;
        writeln!(f, "mean_n = {:?}", self.means)?;
        writeln!(f, "max_relative_change_mean_n = {:e}", self.mean_change)?;
        writeln!(f, "max_relative_change_s_nn = {:e}", self.spectrum_change)?;
        write!(f, "converged = {}", self.converged)
    }
}

/// Re-solve at cutoffs `N, N + 10, N + 20` and compare `<n>` and `S_nn` at
/// five probe frequencies. Converged when both change by less than 0.1%.
pub fn convergence_sweep(problem: &FockProblem) -> Result<ConvergenceReport> {
    let cutoffs = [problem.cutoff, problem.cutoff + 10, problem.cutoff + 20];
    let k = problem.kappa;
    let centre = -problem.detuning;
    let probes: Vec<f64> = [-2.0, -1.0, 0.0, 1.0, 2.0].iter().map(|x| centre + x * k).collect();
    let mut means = [0.0; 3];
    let mut spectra: [Vec<f64>; 3] = Default::default();
    for (i, &n) in cutoffs.iter().enumerate() {
        let rho = solve_steady(&problem.with_cutoff(n))?;
        means[i] = rho.mean;
        spectra[i] = oracle_s_nn(&rho, &probes)?;
    }
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    let mean_change = rel(means[0], means[1]).max(rel(means[1], means[2]));
    let scale = spectra.iter().flatten().copied().fold(0.0, f64::max);
    let spectrum_change = if scale == 0.0 {
        0.0
    } else {
        (0..probes.len())
            .map(|j| (spectra[0][j] - spectra[1][j]).abs().max((spectra[1][j] - spectra[2][j]).abs()) / scale)
            .fold(0.0, f64::max)
    };
    Ok(ConvergenceReport {
        cutoffs,
        means,
        probes,
        spectra,
        mean_change,
        spectrum_change,
        converged: mean_change <= 1e-3 && spectrum_change <= 1e-3,
    })
}
