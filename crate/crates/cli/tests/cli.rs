use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kerromech::io::{read_table, Table};
use kerromech::SweepDirection;
use kerromech_fit::calibration::synthetic_ramp;
use kerromech_fit::circle::{synthetic_s21, PowerSpec, Resonator};
use kerromech_fit::io::write_s21;
use kerromech_fit::relaxation::synthetic_relaxation;

fn kerromech(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kerromech"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kerromech(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn table(path: impl AsRef<Path>) -> Table {
    let path = path.as_ref();
    read_table(fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())).as_slice()).unwrap()
}

fn column(t: &Table, name: &str) -> Vec<f64> {
    t.numbers(name).unwrap().into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()
}

fn text_column<'a>(t: &'a Table, name: &str) -> Vec<&'a str> {
    let i = t.column(name).unwrap();
    t.rows.iter().map(|r| r[i].as_str()).collect()
}

fn report_value(t: &Table, name: &str) -> f64 {
    let row = t.rows.iter().find(|r| r[0] == name).unwrap_or_else(|| panic!("no `{name}` in report"));
    row[1].parse().unwrap()
}

/// Sorted (file name, bytes) of every file in `dir`.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const FIG1_DEVICE: &str = r#"
[cavity]
freq_hz = 8.1e9
kappa_c_hz = 3.0e6
kerr_hz = 16e3

[mech]
freq_hz = 300e3
gamma_hz = 0.4
g0_hz = 1.7e3

[bath]
n_th = 0.0
"#;

#[test]
fn monostable_drive_has_one_root_per_point() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["steady", "--ratio", "0.5", "--points", "81", "--out", "o"]);
    let t = table(d.path().join("o/steady_branches.csv"));
    assert_eq!(t.rows.len(), 81);
    assert!(column(&t, "roots").iter().all(|&r| r == 1.0));
    assert!(column(&t, "stable").iter().all(|&s| s == 1.0));
}

#[test]
fn three_root_region_matches_window() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["steady", "--ratio", "1.5", "--points", "801", "--out", "o"]);
    let w = table(d.path().join("o/steady_windows.csv"));
    let lo = column(&w, "delta_lo_hz")[0];
    let hi = column(&w, "delta_hi_hz")[0];
    assert!(lo < hi);
    let t = table(d.path().join("o/steady_branches.csv"));
    let det = column(&t, "detuning_hz");
    let roots = column(&t, "roots");
    let mut inside = 0;
    for (x, r) in det.iter().zip(&roots) {
        let strictly_inside = *x > lo && *x < hi;
        if *r == 3.0 {
            assert!(*x >= lo && *x <= hi, "three roots at {x} outside [{lo}, {hi}]");
        }
        if strictly_inside {
            assert_eq!(*r, 3.0, "{x} inside the window");
            inside += 1;
        }
    }
    assert!(inside > 10);
    let up = table(d.path().join("o/steady_sweep_r1.5_up.csv"));
    let down = table(d.path().join("o/steady_sweep_r1.5_down.csv"));
    assert_eq!(column(&up, "jumped").iter().filter(|&&j| j == 1.0).count(), 1);
    assert_eq!(column(&down, "jumped").iter().filter(|&&j| j == 1.0).count(), 1);
}

#[test]
fn caption_device_splits_photon_number_at_largest_kerr() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "fig1.toml", &format!("{FIG1_DEVICE}\n[spectrum]\nratio = 1.5\ndetuning_over_omega_m = -11.0\npoints = 201\n"));
    ok(d.path(), &["spectrum", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    let t = table(d.path().join("o/spectrum_rates.csv"));
    let k = column(&t, "kerr_hz");
    let labels = text_column(&t, "branch");
    let n = column(&t, "n_c");
    let at = |kerr: f64| -> Vec<(String, f64)> {
        (0..k.len()).filter(|&i| k[i] == kerr).map(|i| (labels[i].to_string(), n[i])).collect()
    };
    assert_eq!(at(0.0).len(), 1);
    assert_eq!(at(8000.0).len(), 1);
    let k2 = at(16000.0);
    assert_eq!(k2.len(), 2, "{k2:?}");
    assert!(k2[1].1 > 2.0 * k2[0].1, "{k2:?}");
    for name in ["spectrum_k0_low.csv", "spectrum_k16000_low.csv", "spectrum_k16000_high.csv"] {
        assert!(d.path().join("o").join(name).exists(), "{name}");
    }
}

#[test]
fn header_embeds_version_command_and_config() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["cooling-trace", "--ratio", "0.54", "--direction", "up", "--points", "21", "--out", "o"]);
    let text = fs::read_to_string(d.path().join("o/cooling_r0.54_up.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(concat!("# kerromech ", env!("CARGO_PKG_VERSION"))));
    assert_eq!(lines.next(), Some("# command: cooling-trace"));
    for needle in ["# [cavity]", "# [mech]", "# [bath]", "# [run]", "# [cooling]", "# ratios = [0.54]", "# points = 21"] {
        assert!(text.contains(needle), "missing `{needle}`");
    }
    let t = table(d.path().join("o/cooling_r0.54_up.csv"));
    assert_eq!(t.meta("trace_ratio"), Some("0.54"));
    assert_eq!(t.header, ["detuning_hz", "branch", "n_c", "n_m", "gamma_eff_hz", "delta_omega_m_hz", "valid"]);
}

#[test]
fn output_is_independent_of_worker_count_and_replays_from_emitted_config() {
    let d = tempfile::tempdir().unwrap();
    let base = ["cooling-trace", "--ratio", "3.0", "--points", "61", "--noise-rel", "0.05", "--seed", "7"];
    let mut one = base.to_vec();
    one.extend(["--jobs", "1", "--out", "j1"]);
    let mut four = base.to_vec();
    four.extend(["--jobs", "4", "--out", "j4"]);
    ok(d.path(), &one);
    ok(d.path(), &four);
    let a = snapshot(&d.path().join("j1"));
    assert_eq!(a, snapshot(&d.path().join("j4")));

    ok(d.path(), &["cooling-trace", "--config", "j1/resolved_config.toml", "--out", "replay"]);
    assert_eq!(a, snapshot(&d.path().join("replay")));

    let mut other = base.to_vec();
    other[base.len() - 1] = "8";
    other.extend(["--out", "s8"]);
    ok(d.path(), &other);
    let b = snapshot(&d.path().join("s8"));
    assert_ne!(a, b, "seed must change the scatter");
}

#[test]
fn config_wins_over_conflicting_flag() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "c.toml", "[steady]\npoints = 11\nratios = [0.5]\nsweeps = false\n");
    let out = ok(d.path(), &["steady", "--config", cfg.to_str().unwrap(), "--points", "21", "--out", "o"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ignored"), "{stderr}");
    assert_eq!(table(d.path().join("o/steady_branches.csv")).rows.len(), 11);
    assert!(!d.path().join("o/steady_sweep_r0.5_up.csv").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let bad_key = write(p, "bad.toml", "[steady]\nbogus = 1\n");
    assert_eq!(code(&kerromech(p, &["steady", "--config", bad_key.to_str().unwrap()])), 2);
    assert_eq!(code(&kerromech(p, &["steady", "--format", "json"])), 2);
    assert_eq!(code(&kerromech(p, &["fit", "--out", "o"])), 2);
    assert_eq!(code(&kerromech(p, &["steady", "--ratio", "-1", "--out", "o"])), 2);
    assert_eq!(code(&kerromech(p, &["frobnicate"])), 2);
    assert_eq!(code(&kerromech(p, &["steady", "--config", "missing.toml"])), 1);
    assert_eq!(code(&kerromech(p, &["fit", "--kind", "circle", "--input", "missing.csv", "--out", "o"])), 1);

    let tight = write(p, "tight.toml", "[oracle]\ncutoff = 4\nmax_cutoff = 4\n");
    let out = kerromech(p, &["oracle", "--config", tight.to_str().unwrap(), "--out", "o"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    let heat = write(
        p,
        "heat.toml",
        r#"
[cavity]
freq_hz = 8.1e9
kappa_c_hz = 2.8e6
kerr_hz = 14e3
[mech]
freq_hz = 287.3e3
gamma_hz = 0.4
g0_hz = 2000.0
[bath]
temp_mk = 267.0
[cooling]
ratios = [0.5]
directions = ["up"]
detuning_min_hz = -1.0e6
detuning_max_hz = 2.0e6
points = 61
"#,
    );
    let lenient = kerromech(p, &["cooling-trace", "--config", heat.to_str().unwrap(), "--out", "h"]);
    assert_eq!(code(&lenient), 0);
    let t = table(p.join("h/cooling_r0.5_up.csv"));
    assert!(column(&t, "valid").contains(&0.0));
    let strict = kerromech(p, &["cooling-trace", "--config", heat.to_str().unwrap(), "--strict", "--out", "h2"]);
    assert_eq!(code(&strict), 4, "{}", String::from_utf8_lossy(&strict.stderr));
}

#[test]
fn oracle_guard_refuses_bistable_drive_unless_overridden() {
    let d = tempfile::tempdir().unwrap();
    // 0.9 of threshold beyond the cusp detuning (kappa = 1, K = 0.3).
    let drive = (0.9f64 * 1.0 / (3.0 * 3f64.sqrt() * 0.3)).sqrt();
    let cfg = write(d.path(), "b.toml", &format!("[oracle]\ndetuning = -1.2\ndrive = {drive:?}\npoints = 11\n"));
    let refused = kerromech(d.path(), &["oracle", "--config", cfg.to_str().unwrap(), "--out", "o"]);
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("override"));
    ok(d.path(), &["oracle", "--config", cfg.to_str().unwrap(), "--allow-bistable", "--out", "o2"]);
    let t = table(d.path().join("o2/oracle_comparison.csv"));
    assert_eq!(t.rows.len(), 11);
}

#[test]
fn oracle_reports_both_spectra_and_deviation() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["oracle", "--out", "o"]);
    let t = table(d.path().join("o/oracle_comparison.csv"));
    assert_eq!(t.header, ["omega", "s_nn_oracle", "s_nn_linear", "abs_deviation"]);
    assert_eq!(t.rows.len(), 61);
    let max: f64 = t.meta("max_relative_deviation").unwrap().parse().unwrap();
    let oracle = column(&t, "s_nn_oracle");
    let dev = column(&t, "abs_deviation");
    let peak = oracle.iter().copied().fold(0.0, f64::max);
    let worst = dev.iter().copied().fold(0.0, f64::max) / peak;
    assert!((worst - max).abs() <= 1e-12 * max.max(1.0), "{worst} vs {max}");
    let n_c: f64 = t.meta("classical_n").unwrap().parse().unwrap();
    assert!((n_c - 2.0).abs() < 1e-9);
    let resolved = fs::read_to_string(d.path().join("o/resolved_config.toml")).unwrap();
    assert!(resolved.contains("cutoff = "), "{resolved}");
}

#[test]
fn pipeline_extrapolates_low_power_fit_to_threefold_threshold() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["cooling-trace", "--ratio", "0.54", "--ratio", "3.0", "--points", "61", "--out", "truth"]);
    let truth_in = table(p.join("truth/cooling_r0.54_up.csv"));
    let n_in: f64 = truth_in.meta("n_in").unwrap().parse().unwrap();
    let n_th = kerromech::units::thermal_occupation(0.267, TAU * 287.3e3).unwrap();
    let guess = format!(
        r#"
[cavity]
freq_hz = 8.1e9
kappa_c_hz = 2.8e6
kerr_hz = {:?}
[mech]
freq_hz = 287.3e3
gamma_hz = 0.4
g0_hz = 99.0
[bath]
n_th = {:?}
[fit]
flux_guess = {:?}
"#,
        14e3 * 1.3,
        n_th * 0.8,
        n_in * 0.7
    );
    let cfg = write(p, "guess.toml", &guess);
    ok(
        p,
        &[
            "fit",
            "--config",
            cfg.to_str().unwrap(),
            "--kind",
            "pipeline",
            "--input",
            "truth/cooling_r0.54_up.csv",
            "--predict-ratio",
            "3.0",
            "--out",
            "fit",
        ],
    );
    let report = table(p.join("fit/fit_pipeline.csv"));
    assert!((report_value(&report, "kerr") / 14e3 - 1.0).abs() < 1e-3);
    assert!((report_value(&report, "ratio") / 0.54 - 1.0).abs() < 1e-3);
    for dir in ["up", "down"] {
        let pred = table(p.join(format!("fit/pipeline_r3_{dir}.csv")));
        let truth = table(p.join(format!("truth/cooling_r3_{dir}.csv")));
        let (a, b) = (column(&pred, "n_m"), column(&truth, "n_m"));
        let (la, lb) = (text_column(&pred, "branch"), text_column(&truth, "branch"));
        assert_eq!(a.len(), b.len());
        let mut compared = 0;
        for i in 0..a.len() {
            if a[i].is_finite() && b[i].is_finite() && la[i] == lb[i] {
                assert!((a[i] / b[i] - 1.0).abs() < 0.01, "{dir} point {i}: {} vs {}", a[i], b[i]);
                compared += 1;
            }
        }
        assert!(compared > 40, "{dir}: {compared}");
    }
}

#[test]
fn calibrate_recovers_coupling_from_ramp() {
    let d = tempfile::tempdir().unwrap();
    let w = TAU * 287.3e3;
    let temps: Vec<f64> = (0..12).map(|i| 0.1 + 0.05 * i as f64).collect();
    let ramp = synthetic_ramp(TAU * 99.0, w, &temps, 0.003, 0.2, 11);
    let mut body = String::from("temperature_k,g0_sq_n_hz2\n");
    for r in &ramp {
        body.push_str(&format!("{:?},{:?}\n", r.temperature, r.g0_sq_n / (TAU * TAU)));
    }
    write(d.path(), "ramp.csv", &body);
    let cfg = write(d.path(), "c.toml", "[calibrate]\nmeasured_g0_sq_n_hz2 = [1.0e8]\n");
    ok(d.path(), &["calibrate", "--config", cfg.to_str().unwrap(), "--input", "ramp.csv", "--out", "o"]);
    let t = table(d.path().join("o/calibrate_g0.csv"));
    assert!((report_value(&t, "g0") / 99.0 - 1.0).abs() < 0.01);
    assert!(report_value(&t, "points_excluded") >= 2.0);
    let teff = table(d.path().join("o/calibrate_t_eff.csv"));
    assert_eq!(teff.rows.len(), 1);
}

#[test]
fn fit_dispatches_relaxation_and_circle() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let times: Vec<f64> = (0..60).map(|i| 0.1 * i as f64).collect();
    let series = synthetic_relaxation(0.96, &[120.0, 60.0], 2.0, &times, 0.3, 5);
    let mut inputs = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let mut body = String::from("t_s,delta_f_hz\n");
        for (t, f) in s {
            body.push_str(&format!("{t:?},{f:?}\n"));
        }
        inputs.push(write(p, &format!("relax{k}.csv"), &body));
    }
    ok(
        p,
        &["fit", "--kind", "relaxation", "--input", inputs[0].to_str().unwrap(), "--input", inputs[1].to_str().unwrap(), "--out", "r"],
    );
    let t = table(p.join("r/fit_relaxation.csv"));
    assert!((report_value(&t, "tau") / 0.96 - 1.0).abs() < 0.02);

    let res = Resonator {
        a: 0.8,
        alpha: 1.0,
        tau: 50e-9,
        q_l: 8.1e9 / 2.8e6,
        q_c: 4000.0,
        phi0: 0.2,
        omega_c: TAU * 8.1e9,
        kerr: 0.0,
    };
    let k = res.kappa() / TAU;
    let f: Vec<f64> = (0..201).map(|i| 8.1e9 + k * 12.0 * (i as f64 / 200.0 - 0.5)).collect();
    let power = PowerSpec { applied_dbm: -20.0, attenuation_db: 60.0, attenuation_uncertainty_db: 2.0 };
    let s21 = synthetic_s21(&res, &f, power, SweepDirection::Up, 1e-4, 3).unwrap();
    let mut buf = Vec::new();
    write_s21(&mut buf, &[], &s21).unwrap();
    fs::write(p.join("s21.csv"), buf).unwrap();
    ok(p, &["fit", "--kind", "circle", "--input", "s21.csv", "--out", "c"]);
    let t = table(p.join("c/fit_circle_0.csv"));
    assert!((report_value(&t, "q_l") / res.q_l - 1.0).abs() < 0.01);
}
