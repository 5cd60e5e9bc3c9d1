//! Linearised spectrum against the Lindblad reference.

use kerromech::steadystate::linspace;
use kerromech_oracle::{compare, convergence_sweep, guard, steady_density, FockProblem};

use crate::config::OracleConfig;
use crate::error::{CliError, Result};
use crate::output::{num, Sink};

fn problem(cfg: &OracleConfig) -> Result<FockProblem> {
    let mut p = match (cfg.n_c, cfg.drive) {
        (Some(n), None) => FockProblem::for_photon_number(cfg.kappa, cfg.kerr, cfg.detuning, n)?,
        (None, Some(d)) => FockProblem::new(cfg.kappa, cfg.kerr, cfg.detuning, d)?,
        _ => return Err(CliError::Usage("give exactly one of oracle.n_c and oracle.drive".into())),
    };
    if let Some(c) = cfg.cutoff {
        p = p.with_cutoff(c);
    }
    p.max_cutoff = cfg.max_cutoff.max(p.cutoff);
    Ok(p)
}

pub fn resolve_oracle(cfg: &mut OracleConfig) -> Result<()> {
    if cfg.n_c.is_none() && cfg.drive.is_none() {
        cfg.n_c = Some(2.0);
    }
    if cfg.points < 2 {
        return Err(CliError::Usage(format!("oracle.points must be >= 2 (got {})", cfg.points)));
    }
    let p = problem(cfg)?;
    cfg.cutoff = Some(p.cutoff);
    Ok(())
}

pub fn oracle(sink: &mut Sink, cfg: &OracleConfig) -> Result<()> {
    let p = problem(cfg)?;
    guard(&p, cfg.allow_bistable)?;
    let rho = steady_density(&p)?;
    let w = cfg.omega_max * cfg.kappa;
    let grid = linspace(-w, w, cfg.points);
    let cmp = compare(&rho, &grid)?;
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|i| {
            let dev = (cmp.linear[i] - cmp.oracle[i]).abs();
            vec![num(grid[i]), num(cmp.oracle[i]), num(cmp.linear[i]), num(dev)]
        })
        .collect();
    let extra = [
        ("cutoff_used", rho.problem.cutoff.to_string()),
        ("threshold_ratio", num(p.threshold_ratio()?)),
        ("classical_n", num(cmp.classical_n)),
        ("quantum_n", num(cmp.quantum_n)),
        ("max_relative_deviation", num(cmp.max_deviation)),
        ("mean_relative_deviation", num(cmp.mean_deviation)),
    ];
    sink.table("oracle_comparison.csv", &extra, &["omega", "s_nn_oracle", "s_nn_linear", "abs_deviation"], &rows)?;
    if cfg.convergence {
        let report = convergence_sweep(&rho.problem)?;
        let rows: Vec<Vec<String>> =
            (0..3).map(|i| vec![report.cutoffs[i].to_string(), num(report.means[i])]).collect();
        let extra = [
            ("max_relative_change_mean_n", num(report.mean_change)),
            ("max_relative_change_s_nn", num(report.spectrum_change)),
            ("converged", report.converged.to_string()),
        ];
        sink.table("oracle_convergence.csv", &extra, &["cutoff", "mean_n"], &rows)?;
    }
    Ok(())
}

