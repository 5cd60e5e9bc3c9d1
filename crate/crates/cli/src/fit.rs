//! Fit and calibration subcommands.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use kerromech::io::{read_table, write_trace};
use kerromech::steadystate::critical_input;
use kerromech::{SweepDirection, ValidatedParams};
use kerromech_fit::circle::kerr_attenuation_bracket;
use kerromech_fit::io::{read_psd, read_ramp, read_relaxation, read_s21};
use kerromech_fit::{
    calibrate_g0, circle_fit_kerr, circle_fit_linear, effective_temperature, fit_cooling_trace, mech_sideband_fit,
    relaxation_fit_joint, FitError, FitReport,
};

use crate::config::{CalibrateConfig, FitConfig};
use crate::error::{CliError, Result};
use crate::output::{num, tag, Sink};

pub const KINDS: [&str; 6] = ["circle", "kerr-circle", "sideband", "g0-ramp", "relaxation", "pipeline"];

fn open(path: &str) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(Path::new(path), e))
}

fn write_report(sink: &mut Sink, name: &str, report: &FitReport, extra: &[(&str, String)]) -> Result<()> {
    sink.emit(name, extra, |buf, c| report.write_csv(buf, c).map_err(CliError::fit("write report")))
}

pub fn resolve_fit(cfg: &FitConfig) -> Result<()> {
    let kind = cfg.kind.as_deref().ok_or_else(|| CliError::Usage(format!("fit.kind missing; one of {}", KINDS.join(", "))))?;
    if !KINDS.contains(&kind) {
        return Err(CliError::Usage(format!("unknown fit kind `{kind}`; one of {}", KINDS.join(", "))));
    }
    if cfg.inputs.is_empty() {
        return Err(CliError::Usage("fit needs at least one input file".into()));
    }
    Ok(())
}

pub fn fit(sink: &mut Sink, cfg: &FitConfig, params: &ValidatedParams) -> Result<()> {
    let kind = cfg.kind.as_deref().unwrap_or_default();
    match kind {
        "circle" => {
            for (i, path) in cfg.inputs.iter().enumerate() {
                let stage = format!("circle fit of {path}");
                let trace = read_s21(open(path)?).map_err(CliError::fit(stage.clone()))?;
                let fit = circle_fit_linear(&trace).map_err(CliError::fit(stage))?;
                write_report(sink, &format!("fit_circle_{i}.csv"), &FitReport::from(&fit), &[("input", path.clone())])?;
            }
        }
        "kerr-circle" => {
            let traces = cfg
                .inputs
                .iter()
                .map(|p| read_s21(open(p)?).map_err(CliError::fit(format!("reading {p}"))))
                .collect::<Result<Vec<_>>>()?;
            let stage = "kerr circle fit";
            let mut report;
            if cfg.attenuation_bracket {
                let (nominal, more, less) = kerr_attenuation_bracket(&traces).map_err(CliError::fit(stage))?;
                report = FitReport::from(&nominal);
                for (name, f) in [("kerr_more_attenuation", &more), ("kerr_less_attenuation", &less)] {
                    let e = f.stderr();
                    report.push(name, f.resonator.kerr / TAU, e.get(7).copied().unwrap_or(f64::NAN) / TAU, "Hz/photon");
                }
            } else {
                report = FitReport::from(&circle_fit_kerr(&traces).map_err(CliError::fit(stage))?);
            }
            write_report(sink, "fit_kerr_circle.csv", &report, &[("inputs", cfg.inputs.join(" "))])?;
        }
        "sideband" => {
            for (i, path) in cfg.inputs.iter().enumerate() {
                let stage = format!("sideband fit of {path}");
                let psd = read_psd(open(path)?).map_err(CliError::fit(stage.clone()))?;
                let fit = mech_sideband_fit(&psd).map_err(CliError::fit(stage))?;
                write_report(sink, &format!("fit_sideband_{i}.csv"), &FitReport::from(&fit), &[("input", path.clone())])?;
            }
        }
        "g0-ramp" => {
            let cal = ramp(&cfg.inputs, params.mech.omega_m, cfg.t_min_mk)?;
            write_report(sink, "fit_g0_ramp.csv", &FitReport::from(&cal), &[("inputs", cfg.inputs.join(" "))])?;
        }
        "relaxation" => {
            let series = cfg
                .inputs
                .iter()
                .map(|p| read_relaxation(open(p)?).map_err(CliError::fit(format!("reading {p}"))))
                .collect::<Result<Vec<_>>>()?;
            let fit = relaxation_fit_joint(&series).map_err(CliError::fit("joint relaxation fit"))?;
            write_report(sink, "fit_relaxation.csv", &FitReport::from(&fit), &[("inputs", cfg.inputs.join(" "))])?;
        }
        "pipeline" => pipeline(sink, cfg, params)?,
        other => return Err(CliError::Usage(format!("unknown fit kind `{other}`"))),
    }
    Ok(())
}

fn ramp(inputs: &[String], omega_m: f64, t_min_mk: f64) -> Result<kerromech_fit::G0Calibration> {
    let mut points = Vec::new();
    for p in inputs {
        points.extend(read_ramp(open(p)?).map_err(CliError::fit(format!("reading {p}")))?);
    }
    calibrate_g0(&points, omega_m, t_min_mk * 1e-3).map_err(CliError::fit("g0 ramp fit"))
}

/// Fit a measured occupation trace, then predict traces at other drives.
fn pipeline(sink: &mut Sink, cfg: &FitConfig, params: &ValidatedParams) -> Result<()> {
    let [path] = cfg.inputs.as_slice() else {
        return Err(CliError::Usage(format!("pipeline takes one trace file (got {})", cfg.inputs.len())));
    };
    let table = read_table(open(path)?).map_err(|e| CliError::fit(format!("reading {path}"))(FitError::Model(e)))?;
    let meta_f64 = |key: &str| table.meta(key).and_then(|v| v.parse::<f64>().ok());
    let fit_ratio = cfg
        .fit_ratio
        .or_else(|| meta_f64("trace_ratio"))
        .ok_or_else(|| CliError::Usage(format!("{path}: no trace_ratio metadata; set fit.fit_ratio")))?;
    let direction = match cfg.direction {
        Some(d) => d,
        None => match table.meta("trace_direction") {
            Some(d) => d.parse()?,
            None => SweepDirection::Up,
        },
    };
    let det = table.numbers("detuning_hz")?;
    let n_m = table.numbers("n_m")?;
    let (detuning, occupation): (Vec<f64>, Vec<f64>) = det
        .iter()
        .zip(&n_m)
        .filter_map(|(d, m)| Some((d.as_ref()? * TAU, *m.as_ref()?)))
        .unzip();
    let flux_guess = match cfg.flux_guess {
        Some(f) => f,
        None => fit_ratio * critical_input(&params.cavity)?,
    };
    let stage = format!("cooling-trace fit of {path}");
    let fit = fit_cooling_trace(params, flux_guess, &detuning, &occupation, direction, cfg.method)
        .map_err(CliError::fit(stage))?;
    let mut report = FitReport::from(&fit);
    report.push("nominal_ratio", fit_ratio, f64::NAN, "1");
    write_report(
        sink,
        "fit_pipeline.csv",
        &report,
        &[("input", path.clone()), ("trace_direction", direction.as_str().to_string())],
    )?;

    let mut grid = detuning.clone();
    grid.sort_by(f64::total_cmp);
    for &r in &cfg.predict_ratios {
        let factor = r / fit_ratio;
        for &dir in &cfg.predict_directions {
            let mut g = grid.clone();
            if dir == SweepDirection::Down {
                g.reverse();
            }
            let trace = fit.predict(factor, &g, dir).map_err(CliError::fit(format!("prediction at r = {r}")))?;
            let extra = [
                ("trace_ratio", num(r)),
                ("trace_direction", dir.as_str().to_string()),
                ("power_factor", num(factor)),
                ("fitted_n_in", num(fit.n_in)),
            ];
            sink.emit(&format!("pipeline_r{}_{}.csv", tag(r), dir.as_str()), &extra, |buf, c| {
                write_trace(buf, c, &trace)
            })?;
        }
    }
    Ok(())
}

pub fn resolve_calibrate(cfg: &CalibrateConfig) -> Result<()> {
    if cfg.input.is_none() {
        return Err(CliError::Usage("calibrate needs an input ramp file".into()));
    }
    Ok(())
}

pub fn calibrate(sink: &mut Sink, cfg: &CalibrateConfig, params: &ValidatedParams) -> Result<()> {
    let input = cfg.input.clone().unwrap_or_default();
    let omega_m = params.mech.omega_m;
    let cal = ramp(std::slice::from_ref(&input), omega_m, cfg.t_min_mk)?;
    write_report(sink, "calibrate_g0.csv", &FitReport::from(&cal), &[("input", input)])?;
    if !cfg.measured_g0_sq_n_hz2.is_empty() {
        let rows = cfg
            .measured_g0_sq_n_hz2
            .iter()
            .map(|&v| {
                let t = effective_temperature(cal.g0, v * TAU * TAU, omega_m).map_err(CliError::fit("effective temperature"))?;
                Ok(vec![num(v), num(t * 1e3)])
            })
            .collect::<Result<Vec<_>>>()?;
        sink.table("calibrate_t_eff.csv", &[("g0_hz", num(cal.g0 / TAU))], &["g0_sq_n_hz2", "t_eff_mk"], &rows)?;
    }
    Ok(())
}
