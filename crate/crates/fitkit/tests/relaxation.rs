use kerromech_fit::relaxation::synthetic_relaxation;
use kerromech_fit::{relaxation_fit, relaxation_fit_joint, FitError};

fn times(n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|i| span * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn shared_decay_time_within_two_percent() {
    let t = times(80, 6.0);
    for seed in 0..20 {
        let series = synthetic_relaxation(0.96, &[120.0, 60.0, 25.0], -3.0, &t, 0.3, seed);
        let fit = relaxation_fit_joint(&series).unwrap();
        let tau = fit.tau.unwrap();
        assert!((tau / 0.96 - 1.0).abs() < 0.02, "seed {seed}: {tau}");
        for (a, truth) in fit.traces.iter().zip([120.0, 60.0, 25.0]) {
            assert!((a.delta_f0 - truth).abs() < 5.0 * a.delta_f0_stderr + 1e-9);
        }
    }
}

#[test]
fn noiseless_decay_is_exact() {
    let t = times(40, 5.0);
    let series = synthetic_relaxation(0.96, &[80.0], 4.0, &t, 0.0, 0);
    let fit = relaxation_fit(&series[0]).unwrap();
    assert!((fit.tau.unwrap() / 0.96 - 1.0).abs() < 1e-9);
    assert!((fit.delta_f0 / 80.0 - 1.0).abs() < 1e-9);
    assert!((fit.offset - 4.0).abs() < 1e-9);
}

#[test]
fn constant_series_has_no_decay_time() {
    let series: Vec<(f64, f64)> = times(30, 5.0).into_iter().map(|t| (t, 12.5)).collect();
    let fit = relaxation_fit(&series).unwrap();
    assert!(fit.tau.is_none());
    assert_eq!(fit.delta_f0, 0.0);
    assert_eq!(fit.offset, 12.5);
}

#[test]
fn noise_only_series_has_no_decay_time() {
    let t = times(60, 5.0);
    let series = synthetic_relaxation(0.96, &[0.0, 0.0], 1.0, &t, 1.0, 5);
    let fit = relaxation_fit_joint(&series).unwrap();
    assert!(!fit.identifiable());
    for a in &fit.traces {
        assert!(a.delta_f0.abs() <= 2.0 * a.delta_f0_stderr);
    }
}

#[test]
fn single_and_joint_estimates_agree() {
    let t = times(80, 6.0);
    let amps = [120.0, 60.0, 25.0];
    let mut outside = 0;
    for seed in 0..30 {
        let series = synthetic_relaxation(0.96, &amps, 0.0, &t, 2.0, 100 + seed);
        let joint = relaxation_fit_joint(&series).unwrap();
        let (tj, ej) = (joint.tau.unwrap(), joint.tau_stderr.unwrap());
        for s in &series {
            let single = relaxation_fit(s).unwrap();
            let (ts, es) = (single.tau.unwrap(), single.tau_stderr.unwrap());
            if (ts - tj).abs() > 2.0 * (es * es + ej * ej).sqrt() {
                outside += 1;
            }
        }
    }
    // about 5% of 90 comparisons may fall outside two combined sigma
    assert!(outside <= 10, "{outside} of 90 outside");
}

#[test]
fn preconditions_enforced() {
    let short: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
    assert!(matches!(relaxation_fit(&short), Err(FitError::Input(_))));
    // the series covers only half a decay time
    let t = times(40, 0.5);
    let series = synthetic_relaxation(0.96, &[50.0], 0.0, &t, 0.0, 0);
    assert!(relaxation_fit(&series[0]).is_err());
    let mut back = synthetic_relaxation(0.96, &[50.0], 0.0, &times(20, 5.0), 0.0, 0).remove(0);
    back.swap(3, 4);
    assert!(matches!(relaxation_fit(&back), Err(FitError::Input(_))));
}
