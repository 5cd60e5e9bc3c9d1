//! Model subcommands: steady states, spectra, scattering rates and cooling traces.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use kerromech::backaction::{cooling_trace, BranchPolicy, Invalid};
use kerromech::io::{write_spectrum, write_sweep, write_trace};
use kerromech::spectrum::{linearize, scattering_rates, spectrum_trace};
use kerromech::steadystate::{critical_input, linspace, KerrCubic, SteadyStateBranch};
use kerromech::{DriveStrength, SweepDirection, ValidatedParams};

use crate::config::{CoolingConfig, RatesConfig, SpectrumConfig, SteadyConfig};
use crate::error::{CliError, Result};
use crate::output::{hz, num, opt, tag, Sink};

fn check_points(points: usize) -> Result<()> {
    if points < 2 {
        return Err(CliError::Usage(format!("grid needs at least 2 points (got {points})")));
    }
    Ok(())
}

/// Ascending detuning grid in rad/s, ordered for the sweep direction.
fn sweep_grid(lo_hz: f64, hi_hz: f64, points: usize, direction: SweepDirection) -> Result<Vec<f64>> {
    check_points(points)?;
    if !(lo_hz < hi_hz) {
        return Err(CliError::Usage(format!("detuning range [{lo_hz}, {hi_hz}] Hz is empty")));
    }
    let mut g = linspace(lo_hz * TAU, hi_hz * TAU, points);
    if direction == SweepDirection::Down {
        g.reverse();
    }
    Ok(g)
}

fn kappa_hz(params: &ValidatedParams) -> f64 {
    hz(params.cavity.kappa())
}

pub fn resolve_steady(cfg: &mut SteadyConfig, params: &ValidatedParams) -> Result<()> {
    match (&cfg.ratios, &cfg.n_in) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give steady.ratios or steady.n_in, not both".into()));
        }
        (None, None) => cfg.ratios = Some(vec![0.5, 1.5]),
        _ => {}
    }
    let k = kappa_hz(params);
    cfg.detuning_min_hz.get_or_insert(-3.0 * k);
    cfg.detuning_max_hz.get_or_insert(k);
    Ok(())
}

pub fn steady(sink: &mut Sink, cfg: &SteadyConfig, params: &ValidatedParams) -> Result<()> {
    let cavity = &params.cavity;
    let drives: Vec<DriveStrength> = match (&cfg.ratios, &cfg.n_in) {
        (Some(r), _) => r.iter().map(|&r| DriveStrength::Ratio(r)).collect(),
        (_, Some(n)) => n.iter().map(|&n| DriveStrength::Flux(n)).collect(),
        _ => unreachable!("resolved"),
    };
    let (lo, hi) = (cfg.detuning_min_hz.unwrap_or_default(), cfg.detuning_max_hz.unwrap_or_default());
    let grid = sweep_grid(lo, hi, cfg.points, SweepDirection::Up)?;
    let mut rows = Vec::new();
    let mut windows = Vec::new();
    for drive in &drives {
        let cubic = KerrCubic::from_cavity(cavity, *drive)?;
        let n_in = drive.n_in(cavity)?;
        let ratio = drive.ratio(cavity).ok();
        let roots: Vec<Vec<SteadyStateBranch>> =
            grid.par_iter().map(|&d| cubic.branches(d)).collect::<kerromech::Result<_>>()?;
        for (d, bs) in grid.iter().zip(&roots) {
            for b in bs {
                rows.push(vec![
                    opt(ratio),
                    num(n_in),
                    num(hz(*d)),
                    b.label.as_str().to_string(),
                    num(b.n_c),
                    u8::from(b.stable).to_string(),
                    b.multiplicity.to_string(),
                    bs.len().to_string(),
                ]);
            }
        }
        let w = cubic.window();
        windows.push(vec![
            opt(ratio),
            num(n_in),
            u8::from(w.exists).to_string(),
            opt(w.exists.then(|| hz(w.delta_lo))),
            opt(w.exists.then(|| hz(w.delta_hi))),
            num(hz(w.width())),
        ]);
        if cfg.sweeps {
            let label = match drive {
                DriveStrength::Ratio(r) => format!("r{}", tag(*r)),
                DriveStrength::Flux(n) => format!("nin{}", tag(*n)),
            };
            for dir in [SweepDirection::Up, SweepDirection::Down] {
                let g = sweep_grid(lo, hi, cfg.points, dir)?;
                let sweep = cubic.sweep(&g, dir)?;
                let extra = [("ratio", opt(ratio)), ("n_in", num(n_in)), ("direction", dir.as_str().to_string())];
                sink.emit(&format!("steady_sweep_{label}_{}.csv", dir.as_str()), &extra, |buf, c| {
                    write_sweep(buf, c, &sweep)
                })?;
            }
        }
    }
    sink.table(
        "steady_branches.csv",
        &[],
        &["ratio", "n_in", "detuning_hz", "branch", "n_c", "stable", "multiplicity", "roots"],
        &rows,
    )?;
    sink.table(
        "steady_windows.csv",
        &[],
        &["ratio", "n_in", "bistable", "delta_lo_hz", "delta_hi_hz", "width_hz"],
        &windows,
    )
}

fn reference_flux(params: &ValidatedParams, kerr_hz: &[f64], reference: Option<f64>, ratio: f64) -> Result<f64> {
    let k_ref = reference.unwrap_or_else(|| kerr_hz.iter().copied().fold(0.0, f64::max));
    let p = params.with_kerr(k_ref * TAU)?;
    Ok(ratio * critical_input(&p.cavity)?)
}

pub fn resolve_spectrum(cfg: &mut SpectrumConfig, params: &ValidatedParams) -> Result<()> {
    if cfg.detuning_hz.is_some() && cfg.detuning_over_omega_m.is_some() {
        return Err(CliError::Usage("give spectrum.detuning_hz or spectrum.detuning_over_omega_m, not both".into()));
    }
    if cfg.detuning_hz.is_none() {
        cfg.detuning_over_omega_m.get_or_insert(-11.0);
    }
    if cfg.reference_kerr_hz.is_none() {
        cfg.reference_kerr_hz = Some(cfg.kerr_hz.iter().copied().fold(0.0, f64::max));
    }
    let delta = spectrum_detuning(cfg, params);
    cfg.omega_max_hz.get_or_insert(hz(delta.abs() + 3.0 * params.cavity.kappa()));
    Ok(())
}

fn spectrum_detuning(cfg: &SpectrumConfig, params: &ValidatedParams) -> f64 {
    match (cfg.detuning_hz, cfg.detuning_over_omega_m) {
        (Some(d), _) => d * TAU,
        (None, Some(x)) => x * params.mech.omega_m,
        (None, None) => 0.0,
    }
}

pub fn spectrum(sink: &mut Sink, cfg: &SpectrumConfig, params: &ValidatedParams) -> Result<()> {
    check_points(cfg.points)?;
    let n_in = reference_flux(params, &cfg.kerr_hz, cfg.reference_kerr_hz, cfg.ratio)?;
    let delta = spectrum_detuning(cfg, params);
    let w_max = cfg.omega_max_hz.unwrap_or_default() * TAU;
    let grid = linspace(-w_max, w_max, cfg.points);
    let mut summary = Vec::new();
    for &k in &cfg.kerr_hz {
        let p = params.with_kerr(k * TAU)?;
        let branches = KerrCubic::from_cavity(&p.cavity, DriveStrength::Flux(n_in))?.branches(delta)?;
        for b in branches.iter().filter(|b| b.stable) {
            let spec = spectrum_trace(&linearize(b, &p.cavity), &p.mech, &grid, cfg.lab_frame)?;
            let r = spec.rates;
            let extra = [
                ("kerr_hz", num(k)),
                ("branch", b.label.as_str().to_string()),
                ("n_in", num(n_in)),
                ("detuning_hz", num(hz(delta))),
                ("n_c", num(b.n_c)),
                ("gamma_s_hz", num(hz(r.gamma_s))),
                ("gamma_as_hz", num(hz(r.gamma_as))),
            ];
            sink.emit(&format!("spectrum_k{}_{}.csv", tag(k), b.label.as_str()), &extra, |buf, c| {
                write_spectrum(buf, c, &spec)
            })?;
            summary.push(vec![
                num(k),
                b.label.as_str().to_string(),
                num(b.n_c),
                num(hz(r.gamma_s)),
                num(hz(r.gamma_as)),
                num(hz(r.optical_damping())),
            ]);
        }
        if branches.iter().any(|b| !b.stable) {
            log::info!("K = {k} Hz: unstable root at this detuning skipped");
        }
    }
    sink.table(
        "spectrum_rates.csv",
        &[("n_in", num(n_in)), ("detuning_hz", num(hz(delta)))],
        &["kerr_hz", "branch", "n_c", "gamma_s_hz", "gamma_as_hz", "optical_damping_hz"],
        &summary,
    )
}

pub fn resolve_rates(cfg: &mut RatesConfig, params: &ValidatedParams) -> Result<()> {
    if cfg.reference_kerr_hz.is_none() {
        cfg.reference_kerr_hz = Some(cfg.kerr_hz.iter().copied().fold(0.0, f64::max));
    }
    let k = kappa_hz(params);
    cfg.detuning_min_hz.get_or_insert(-3.0 * k);
    cfg.detuning_max_hz.get_or_insert(k);
    Ok(())
}

pub fn rates(sink: &mut Sink, cfg: &RatesConfig, params: &ValidatedParams) -> Result<()> {
    let n_in = reference_flux(params, &cfg.kerr_hz, cfg.reference_kerr_hz, cfg.ratio)?;
    let grid = sweep_grid(
        cfg.detuning_min_hz.unwrap_or_default(),
        cfg.detuning_max_hz.unwrap_or_default(),
        cfg.points,
        SweepDirection::Up,
    )?;
    for &k in &cfg.kerr_hz {
        let p = params.with_kerr(k * TAU)?;
        let cubic = KerrCubic::from_cavity(&p.cavity, DriveStrength::Flux(n_in))?;
        let per_point: Vec<Vec<Vec<String>>> = grid
            .par_iter()
            .map(|&d| {
                let mut out = Vec::new();
                for b in cubic.branches(d)?.iter().filter(|b| b.stable) {
                    let r = scattering_rates(&linearize(b, &p.cavity), &p.mech)?;
                    out.push(vec![
                        num(hz(d)),
                        b.label.as_str().to_string(),
                        num(b.n_c),
                        num(hz(r.gamma_s)),
                        num(hz(r.gamma_as)),
                        num(hz(r.optical_damping())),
                    ]);
                }
                Ok(out)
            })
            .collect::<kerromech::Result<_>>()?;
        let rows: Vec<Vec<String>> = per_point.into_iter().flatten().collect();
        let w = cubic.window();
        sink.table(
            &format!("rates_k{}.csv", tag(k)),
            &[
                ("kerr_hz", num(k)),
                ("n_in", num(n_in)),
                ("window_lo_hz", opt(w.exists.then(|| hz(w.delta_lo)))),
                ("window_hi_hz", opt(w.exists.then(|| hz(w.delta_hi)))),
            ],
            &["detuning_hz", "branch", "n_c", "gamma_s_hz", "gamma_as_hz", "optical_damping_hz"],
            &rows,
        )?;
    }
    Ok(())
}

pub fn resolve_cooling(cfg: &mut CoolingConfig, params: &ValidatedParams) -> Result<()> {
    let k = kappa_hz(params);
    cfg.detuning_min_hz.get_or_insert(-3.0 * k);
    cfg.detuning_max_hz.get_or_insert(0.5 * k);
    branch_policy(&cfg.branch)?;
    if !(cfg.noise_rel >= 0.0 && cfg.noise_rel.is_finite()) {
        return Err(CliError::Usage(format!("cooling.noise_rel must be >= 0 (got {})", cfg.noise_rel)));
    }
    Ok(())
}

fn branch_policy(s: &str) -> Result<BranchPolicy> {
    match s {
        "occupied" => Ok(BranchPolicy::Occupied),
        other => Ok(BranchPolicy::Fixed(other.parse().map_err(|_| {
            CliError::Usage(format!("cooling.branch must be occupied, low or high (got `{other}`)"))
        })?)),
    }
}

pub fn cooling(sink: &mut Sink, cfg: &CoolingConfig, params: &ValidatedParams, seed: u64) -> Result<()> {
    let policy = branch_policy(&cfg.branch)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut index = 0u64;
    for &r in &cfg.ratios {
        for &dir in &cfg.directions {
            let grid = sweep_grid(
                cfg.detuning_min_hz.unwrap_or_default(),
                cfg.detuning_max_hz.unwrap_or_default(),
                cfg.points,
                dir,
            )?;
            let mut trace = cooling_trace(params, DriveStrength::Ratio(r), &grid, dir, policy, cfg.method)?;
            if cfg.strict {
                for p in &trace.points {
                    match p.invalid {
                        Some(Invalid::ParametricInstability { gamma_eff }) => {
                            return Err(kerromech::Error::ParametricInstability { gamma_eff }.into())
                        }
                        Some(Invalid::ModeInstability { mode, re }) => {
                            return Err(kerromech::Error::ModeInstability { mode, re }.into())
                        }
                        _ => {}
                    }
                }
            }
            if cfg.noise_rel > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
                for p in &mut trace.points {
                    if let Some(m) = p.n_m.as_mut() {
                        *m *= 1.0 + cfg.noise_rel * normal.sample(&mut rng);
                    }
                }
            }
            index += 1;
            let w = trace.window;
            let extra = [
                ("trace_ratio", num(r)),
                ("trace_direction", dir.as_str().to_string()),
                ("n_in", num(DriveStrength::Ratio(r).n_in(&params.cavity)?)),
                ("method", cfg.method.as_str().to_string()),
                ("branch_policy", cfg.branch.clone()),
                ("window_lo_hz", opt(w.exists.then(|| hz(w.delta_lo)))),
                ("window_hi_hz", opt(w.exists.then(|| hz(w.delta_hi)))),
            ];
            sink.emit(&format!("cooling_r{}_{}.csv", tag(r), dir.as_str()), &extra, |buf, c| {
                write_trace(buf, c, &trace)
            })?;
        }
    }
    Ok(())
}
