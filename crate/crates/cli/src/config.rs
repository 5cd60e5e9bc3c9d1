//! Run configuration: the device sections understood by `kerromech::config`
//! plus one block per subcommand. Every block deserializes with defaults, so
//! an empty file is a valid config.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Table;

use kerromech::backaction::Method;
use kerromech::config::{parse_table, system_params_from_table, system_params_to_toml};
use kerromech::{validate, SweepDirection, SystemParams, ValidatedParams};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Output directory. Not part of the emitted config.
    #[serde(skip_serializing)]
    pub out: Option<String>,
    /// Worker threads. Not part of the emitted config.
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    pub seed: u64,
    pub format: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { out: None, jobs: None, seed: 0, format: "csv".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyConfig {
    /// Drives relative to the bifurcation threshold.
    pub ratios: Option<Vec<f64>>,
    /// Drives as input photon flux, photons/s.
    pub n_in: Option<Vec<f64>>,
    pub detuning_min_hz: Option<f64>,
    pub detuning_max_hz: Option<f64>,
    pub points: usize,
    /// Also write up and down hysteresis sweeps per drive.
    pub sweeps: bool,
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            ratios: None,
            n_in: None,
            detuning_min_hz: None,
            detuning_max_hz: None,
            points: 401,
            sweeps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub kerr_hz: Vec<f64>,
    /// Drive relative to the threshold of `reference_kerr_hz`; the same input
    /// flux is applied at every Kerr constant.
    pub ratio: f64,
    pub reference_kerr_hz: Option<f64>,
    pub detuning_hz: Option<f64>,
    pub detuning_over_omega_m: Option<f64>,
    pub omega_max_hz: Option<f64>,
    pub points: usize,
    pub lab_frame: bool,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            kerr_hz: vec![0.0, 8e3, 16e3],
            ratio: 1.5,
            reference_kerr_hz: None,
            detuning_hz: None,
            detuning_over_omega_m: None,
            omega_max_hz: None,
            points: 801,
            lab_frame: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub kerr_hz: Vec<f64>,
    pub ratio: f64,
    pub reference_kerr_hz: Option<f64>,
    pub detuning_min_hz: Option<f64>,
    pub detuning_max_hz: Option<f64>,
    pub points: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            kerr_hz: vec![0.0, 8e3, 16e3],
            ratio: 1.5,
            reference_kerr_hz: None,
            detuning_min_hz: None,
            detuning_max_hz: None,
            points: 501,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoolingConfig {
    pub ratios: Vec<f64>,
    pub directions: Vec<SweepDirection>,
    pub detuning_min_hz: Option<f64>,
    pub detuning_max_hz: Option<f64>,
    pub points: usize,
    pub method: Method,
    /// `occupied`, `low` or `high`.
    pub branch: String,
    /// Relative Gaussian scatter added to `n_m`, seeded by `run.seed`.
    pub noise_rel: f64,
    /// Fail on the first unstable mechanical point instead of marking it invalid.
    pub strict: bool,
}

impl Default for CoolingConfig {
    fn default() -> Self {
        CoolingConfig {
            ratios: vec![0.54, 1.9, 3.0],
            directions: vec![SweepDirection::Up, SweepDirection::Down],
            detuning_min_hz: None,
            detuning_max_hz: None,
            points: 301,
            method: Method::Auto,
            branch: "occupied".into(),
            noise_rel: 0.0,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// circle, kerr-circle, sideband, g0-ramp, relaxation or pipeline.
    pub kind: Option<String>,
    pub inputs: Vec<String>,
    pub t_min_mk: f64,
    pub attenuation_bracket: bool,
    pub method: Method,
    /// Sweep direction of the pipeline input; read from the file when absent.
    pub direction: Option<SweepDirection>,
    /// Drive ratio of the pipeline input; read from the file when absent.
    pub fit_ratio: Option<f64>,
    /// Starting input flux; derived from `fit_ratio` when absent.
    pub flux_guess: Option<f64>,
    pub predict_ratios: Vec<f64>,
    pub predict_directions: Vec<SweepDirection>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kind: None,
            inputs: Vec::new(),
            t_min_mk: 250.0,
            attenuation_bracket: true,
            method: Method::Auto,
            direction: None,
            fit_ratio: None,
            flux_guess: None,
            predict_ratios: vec![3.0],
            predict_directions: vec![SweepDirection::Up, SweepDirection::Down],
        }
    }
}

/// Dimensionless by default (`kappa = 1`); any consistent rate unit works.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kappa: f64,
    pub kerr: f64,
    pub detuning: f64,
    /// Classical photon number; the drive is chosen to match.
    pub n_c: Option<f64>,
    /// Classical drive amplitude `sqrt(kappa_c n_in)`.
    pub drive: Option<f64>,
    /// Spectrum range `|omega| <= omega_max * kappa`.
    pub omega_max: f64,
    pub points: usize,
    pub cutoff: Option<usize>,
    pub max_cutoff: usize,
    pub allow_bistable: bool,
    pub convergence: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kappa: 1.0,
            kerr: 0.3,
            detuning: -0.5,
            n_c: None,
            drive: None,
            omega_max: 3.0,
            points: 61,
            cutoff: None,
            max_cutoff: 400,
            allow_bistable: false,
            convergence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub input: Option<String>,
    pub t_min_mk: f64,
    /// Measured `g0^2 <n_m>` values (Hz^2) to convert into effective temperatures.
    pub measured_g0_sq_n_hz2: Vec<f64>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig { input: None, t_min_mk: 250.0, measured_g0_sq_n_hz2: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    cavity: Option<Table>,
    mech: Option<Table>,
    bath: Option<Table>,
    pub run: RunSection,
    pub steady: SteadyConfig,
    pub spectrum: SpectrumConfig,
    pub rates: RatesConfig,
    pub cooling: CoolingConfig,
    pub fit: FitConfig,
    pub oracle: OracleConfig,
    pub calibrate: CalibrateConfig,
}

/// A parsed config plus the raw table, kept to tell explicit keys from defaults.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub config: RunConfig,
    raw: Table,
    src: String,
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_str(&src).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn from_str(src: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(src).map_err(|e| CliError::Config(e.to_string().trim().to_string()))?;
        let raw = parse_table(src)?;
        Ok(Loaded { config, raw, src: src.to_string() })
    }

    /// Whether `[section] key` was set explicitly.
    pub fn has(&self, section: &str, key: &str) -> bool {
        self.raw.get(section).and_then(|v| v.as_table()).is_some_and(|t| t.contains_key(key))
    }

    /// Device parameters from the file, or the reference device when the
    /// file has no device sections.
    pub fn system_params(&self) -> Result<ValidatedParams> {
        let c = &self.config;
        let p = if c.cavity.is_none() && c.mech.is_none() && c.bath.is_none() {
            SystemParams::reference_device()
        } else {
            system_params_from_table(&self.raw, &self.src)?
        };
        let v = validate(&canonical(p)?)?;
        for w in v.warnings() {
            log::warn!("{w}");
        }
        Ok(v)
    }
}

/// Fixed point of the Hz round trip, so a run from the emitted config sees
/// bit-identical parameters.
fn canonical(mut p: SystemParams) -> Result<SystemParams> {
    for _ in 0..8 {
        let q = kerromech::config::parse_system_params(&system_params_to_toml(&p))?;
        if q == p {
            return Ok(p);
        }
        p = q;
    }
    log::warn!("device parameters do not settle under the Hz round trip; replay may differ in the last digit");
    Ok(p)
}

/// Apply a command-line value unless the config sets the same key, in which
/// case the config wins and a differing flag is reported.
pub fn overlay<T: PartialEq + std::fmt::Debug>(
    loaded: &Loaded,
    section: &str,
    key: &str,
    flag: Option<T>,
    slot: &mut T,
) {
    let Some(v) = flag else { return };
    if loaded.has(section, key) {
        if v != *slot {
            log::warn!("--{} {v:?} ignored: config sets {section}.{key} = {slot:?}", key.replace('_', "-"));
        }
    } else {
        *slot = v;
    }
}

/// Emitted config: device sections, `[run]` and the block of the command.
pub fn render<T: Serialize>(params: &SystemParams, run: &RunSection, section: &str, block: &T) -> Result<String> {
    let mut t = Table::new();
    t.insert("run".into(), toml::Value::try_from(run).map_err(|e| CliError::Config(e.to_string()))?);
    t.insert(section.into(), toml::Value::try_from(block).map_err(|e| CliError::Config(e.to_string()))?);
    let tail = toml::to_string(&t).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!("{}\n{tail}", system_params_to_toml(params)))
}
