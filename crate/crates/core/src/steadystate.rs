//! Classical steady states of the driven Kerr cavity.
//!
//! The intracavity photon number solves
//! `n [(Delta + K n)^2 + kappa^2/4] = P` with drive term `P = kappa_c n_in`.
//! Above the threshold flux the cubic has three real roots over a window of
//! detunings; the outer two are stable.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cubic;
use crate::error::{ensure_finite, Error, Result};
use crate::params::{
    CavityParams, DriveParams, DriveStrength, MechParams, SweepDirection, ValidatedParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchLabel {
    Low,
    Middle,
    High,
}

impl BranchLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            BranchLabel::Low => "low",
            BranchLabel::Middle => "middle",
            BranchLabel::High => "high",
        }
    }
}

impl std::fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BranchLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(BranchLabel::Low),
            "middle" => Ok(BranchLabel::Middle),
            "high" => Ok(BranchLabel::High),
            other => Err(Error::InvalidInput(format!("unknown branch `{other}`"))),
        }
    }
}

/// One classical solution at a given detuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateBranch {
    pub detuning: f64,
    pub n_c: f64,
    /// Intracavity amplitude, phase fixed by a real positive input amplitude.
    pub alpha: Complex64,
    pub label: BranchLabel,
    pub stable: bool,
    /// 1 for a simple root, 2 at a spinodal, 3 at the cusp.
    pub multiplicity: u8,
    /// `Delta + 2 K n_c`.
    pub delta_tilde: f64,
    /// `Delta + K n_c`.
    pub delta_bar: f64,
    /// `K alpha^2`, the parametric coupling of the fluctuations.
    pub lambda: Complex64,
    /// `K^2 n_c^2`.
    pub lambda_sq: f64,
    /// `D(0) = kappa^2/4 + delta_tilde^2 - lambda_sq`; positive on stable roots.
    pub stability_margin: f64,
}

/// Edges of the detuning range with three steady states.
///
/// `delta_lo` and `delta_hi` are NaN unless `exists`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistableWindow {
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub exists: bool,
    /// Drive sits on the threshold within rounding; the window is a point.
    pub degenerate: bool,
}

impl BistableWindow {
    fn none(degenerate: bool) -> Self {
        BistableWindow { delta_lo: f64::NAN, delta_hi: f64::NAN, exists: false, degenerate }
    }

    pub fn width(&self) -> f64 {
        if self.exists {
            self.delta_hi - self.delta_lo
        } else {
            0.0
        }
    }

    /// Strictly inside the window.
    pub fn contains(&self, detuning: f64) -> bool {
        self.exists && detuning > self.delta_lo && detuning < self.delta_hi
    }
}

/// Low-level form of the steady-state cubic: linewidth, Kerr constant and
/// drive term only. Also used by the resonator fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KerrCubic {
    pub kappa: f64,
    pub kerr: f64,
    /// `kappa_c n_in`, (rad/s)^2.
    pub drive_term: f64,
}

impl KerrCubic {
    pub fn new(kappa: f64, kerr: f64, drive_term: f64) -> Result<Self> {
        ensure_finite("kappa", kappa)?;
        ensure_finite("kerr", kerr)?;
        ensure_finite("drive term", drive_term)?;
        if kappa <= 0.0 {
            return Err(Error::InvalidInput(format!("kappa must be > 0 (got {kappa})")));
        }
        if drive_term < 0.0 {
            return Err(Error::InvalidInput(format!("drive term must be >= 0 (got {drive_term})")));
        }
        Ok(KerrCubic { kappa, kerr, drive_term })
    }

    pub fn from_cavity(cavity: &CavityParams, strength: DriveStrength) -> Result<Self> {
        KerrCubic::new(cavity.kappa(), cavity.kerr, strength.drive_term(cavity)?)
    }

    fn reduced_drive(&self) -> f64 {
        self.kerr.abs() * self.drive_term / self.kappa.powi(3)
    }

    /// Drive relative to threshold; 0 for a linear cavity.
    pub fn threshold_ratio(&self) -> f64 {
        self.reduced_drive() / cubic::P_CRIT
    }

    /// `f(n) - P`, evaluated in reduced units where possible.
    pub fn residual(&self, detuning: f64, n: f64) -> f64 {
        if self.kerr == 0.0 {
            return n * (detuning * detuning + 0.25 * self.kappa * self.kappa) - self.drive_term;
        }
        let scale = self.kappa.powi(3) / self.kerr.abs();
        let d = self.kerr.signum() * detuning / self.kappa;
        cubic::residual(d, self.reduced_drive(), self.kerr.abs() * n / self.kappa) * scale
    }

    pub fn window(&self) -> BistableWindow {
        if self.kerr == 0.0 {
            return BistableWindow::none(false);
        }
        let p = self.reduced_drive();
        if (p / cubic::P_CRIT - 1.0).abs() <= 1e-12 {
            return BistableWindow::none(true);
        }
        if p < cubic::P_CRIT {
            return BistableWindow::none(false);
        }
        let (d_merge_low, d_merge_high) = cubic::spinodals(p);
        let (lo, hi) = if self.kerr > 0.0 {
            (d_merge_high * self.kappa, d_merge_low * self.kappa)
        } else {
            (-d_merge_low * self.kappa, -d_merge_high * self.kappa)
        };
        BistableWindow { delta_lo: lo, delta_hi: hi, exists: true, degenerate: false }
    }

    /// All steady states at `detuning`, ascending in `n_c`.
    pub fn branches(&self, detuning: f64) -> Result<Vec<SteadyStateBranch>> {
        self.branches_in(detuning, &self.window())
    }

    /// Photon numbers and multiplicities of all steady states, ascending,
    /// without labels or stability analysis.
    pub fn roots(&self, detuning: f64) -> Result<Vec<(f64, u8)>> {
        ensure_finite("detuning", detuning)?;
        if self.kerr == 0.0 {
            let n = self.drive_term / (detuning * detuning + 0.25 * self.kappa * self.kappa);
            return Ok(vec![(n, 1)]);
        }
        let d = self.kerr.signum() * detuning / self.kappa;
        let to_n = self.kappa / self.kerr.abs();
        Ok(cubic::solve(d, self.reduced_drive())
            .into_iter()
            .map(|r| (r.x * to_n, r.multiplicity))
            .collect())
    }

    fn branches_in(&self, detuning: f64, window: &BistableWindow) -> Result<Vec<SteadyStateBranch>> {
        let roots = self.roots(detuning)?;
        let labels = self.labels(detuning, &roots, window);
        roots
            .iter()
            .zip(labels)
            .map(|(&(n, multiplicity), label)| {
                self.check_residual(detuning, n)?;
                Ok(self.branch(detuning, n, multiplicity, label))
            })
            .collect()
    }

    fn labels(&self, detuning: f64, roots: &[(f64, u8)], window: &BistableWindow) -> Vec<BranchLabel> {
        use BranchLabel::*;
        match roots {
            [_, _, _] => vec![Low, Middle, High],
            [(_, 2), _] => vec![Middle, High],
            [_, (_, 2)] => vec![Low, Middle],
            [(_, 3)] => vec![Middle],
            [_] => {
                // a lone root continues the branch that survives on its side
                let past_low_merge = window.exists
                    && if self.kerr > 0.0 { detuning > window.delta_hi } else { detuning < window.delta_lo };
                vec![if past_low_merge { High } else { Low }]
            }
            _ => vec![Low; roots.len()],
        }
    }

    fn check_residual(&self, detuning: f64, n: f64) -> Result<()> {
        let residual = self.residual(detuning, n);
        let k2 = self.kappa * self.kappa;
        let db = detuning + self.kerr * n;
        // f64 cannot resolve the cubic better than its conditioning allows
        let floor = 16.0
            * f64::EPSILON
            * (n * (db * db + 0.25 * k2 + 2.0 * (self.kerr * n * db).abs()) + self.drive_term);
        let bound = (1e-10 * (n * k2).max(1.0)).max(floor);
        if residual.abs() > bound || !residual.is_finite() {
            return Err(Error::RootPolish { n_c: n, residual: residual.abs(), bound });
        }
        Ok(())
    }

    fn branch(&self, detuning: f64, n: f64, multiplicity: u8, label: BranchLabel) -> SteadyStateBranch {
        let kappa = self.kappa;
        let delta_bar = detuning + self.kerr * n;
        let delta_tilde = detuning + 2.0 * self.kerr * n;
        // alpha [i delta_bar - kappa/2] = -i sqrt(P), magnitude pinned to sqrt(n)
        let phase = (-Complex64::i() / Complex64::new(-0.5 * kappa, delta_bar)).arg();
        let alpha = Complex64::from_polar(n.sqrt(), phase);
        let lambda_sq = (self.kerr * n).powi(2);
        let stability_margin = 0.25 * kappa * kappa + delta_tilde * delta_tilde - lambda_sq;
        SteadyStateBranch {
            detuning,
            n_c: n,
            alpha,
            label,
            stable: stability_margin > 0.0 && multiplicity == 1,
            multiplicity,
            delta_tilde,
            delta_bar,
            lambda: self.kerr * alpha * alpha,
            lambda_sq,
            stability_margin,
        }
    }

    /// Adiabatic branch following over `grid`.
    pub fn sweep(&self, grid: &[f64], direction: SweepDirection) -> Result<SweepResult> {
        check_grid(grid, direction)?;
        let window = self.window();
        let ascending = match direction {
            SweepDirection::Up => true,
            SweepDirection::Down => false,
            SweepDirection::None => grid.len() < 2 || grid[1] >= grid[0],
        };
        // with K < 0 the cubic is mirrored in detuning
        let start_low = ascending == (self.kerr >= 0.0);

        let mut states: Vec<SteadyStateBranch> = Vec::with_capacity(grid.len());
        let mut jumps = Vec::new();
        for (i, &delta) in grid.iter().enumerate() {
            let all = self.branches_in(delta, &window)?;
            let stable: Vec<&SteadyStateBranch> = all.iter().filter(|b| b.stable).collect();
            let pool: Vec<&SteadyStateBranch> = if stable.is_empty() { all.iter().collect() } else { stable };
            let chosen = match states.last() {
                None => {
                    if pool.len() == 1 || start_low {
                        *pool[0]
                    } else {
                        **pool.last().expect("non-empty root set")
                    }
                }
                Some(prev) => {
                    let next = **pool
                        .iter()
                        .min_by(|a, b| (a.n_c - prev.n_c).abs().total_cmp(&(b.n_c - prev.n_c).abs()))
                        .expect("non-empty root set");
                    if next.label != prev.label {
                        jumps.push(i);
                    }
                    next
                }
            };
            states.push(chosen);
        }
        Ok(SweepResult { direction, window, states, jumps })
    }
}

fn check_grid(grid: &[f64], direction: SweepDirection) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for &x in grid {
        ensure_finite("detuning", x)?;
    }
    for (i, w) in grid.windows(2).enumerate() {
        let ok = match direction {
            SweepDirection::Up => w[1] > w[0],
            SweepDirection::Down => w[1] < w[0],
            SweepDirection::None => true,
        };
        if !ok {
            return Err(Error::NonMonotoneGrid(direction.as_str(), i + 1));
        }
    }
    Ok(())
}

/// Branch occupancy along a detuning sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub direction: SweepDirection,
    pub window: BistableWindow,
    /// Occupied steady state per grid point, in grid order.
    pub states: Vec<SteadyStateBranch>,
    /// Grid indices at which the occupied branch changed.
    pub jumps: Vec<usize>,
}

impl SweepResult {
    pub fn detuning(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.detuning).collect()
    }

    pub fn n_c(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.n_c).collect()
    }

    pub fn labels(&self) -> Vec<BranchLabel> {
        self.states.iter().map(|s| s.label).collect()
    }

    pub fn jumped(&self, i: usize) -> bool {
        self.jumps.contains(&i)
    }
}

/// Static mechanical displacement and the detuning shift it would cause.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticDisplacement {
    /// `-g0 n_c / omega_m`, in zero-point units.
    pub beta: f64,
    /// `2 g0^2 n_c / omega_m`, rad/s; neglected by the solver.
    pub detuning_shift: f64,
    /// Shift exceeds `kappa / 1000`.
    pub exceeds_guard: bool,
}

pub fn static_displacement(cavity: &CavityParams, mech: &MechParams, n_c: f64) -> StaticDisplacement {
    let detuning_shift = 2.0 * mech.g0 * mech.g0 * n_c / mech.omega_m;
    StaticDisplacement {
        beta: -mech.g0 * n_c / mech.omega_m,
        detuning_shift,
        exceeds_guard: detuning_shift.abs() > cavity.kappa() / 1000.0,
    }
}

/// All steady states for one drive tone, ascending in `n_c`.
pub fn solve_steady_states(
    params: &ValidatedParams,
    drive: &DriveParams,
) -> Result<Vec<SteadyStateBranch>> {
    let branches = KerrCubic::from_cavity(&params.cavity, drive.strength)?.branches(drive.detuning)?;
    for b in &branches {
        let s = static_displacement(&params.cavity, &params.mech, b.n_c);
        if s.exceeds_guard {
            log::warn!(
                "static displacement shifts the detuning by {:.3e} rad/s (> kappa/1000) at n_c = {:.3e}; shift neglected",
                s.detuning_shift,
                b.n_c
            );
        }
    }
    Ok(branches)
}

/// Threshold input flux `n_bi = (kappa / kappa_c) kappa^2 / (3 sqrt 3 K)`.
pub fn critical_input(cavity: &CavityParams) -> Result<f64> {
    Ok(cavity.critical_drive_term()? / cavity.kappa_c)
}

/// Detuning window with three steady states at input flux `n_in`.
pub fn bistable_window(cavity: &CavityParams, n_in: f64) -> Result<BistableWindow> {
    Ok(KerrCubic::from_cavity(cavity, DriveStrength::Flux(n_in))?.window())
}

/// Adiabatic sweep: each point keeps the stable root nearest the previous
/// `n_c`; a jump is recorded where the occupied branch changes. Inside the
/// window the first point starts on the branch a sweep from outside would
/// occupy.
pub fn hysteresis_sweep(
    params: &ValidatedParams,
    strength: DriveStrength,
    grid: &[f64],
    direction: SweepDirection,
) -> Result<SweepResult> {
    KerrCubic::from_cavity(&params.cavity, strength)?.sweep(grid, direction)
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { stop } else { start + step * i as f64 }).collect()
        }
    }
}
