//! Notch-type resonator transmission: the circle fit and its Kerr extension.
//!
//! `S21(w) = a e^{i alpha} e^{-i tau w} (1 - (Q_l/|Q_c|) e^{i phi0} / (1 + 2i Q_l (w - w_c)/w))`

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use kerromech::steadystate::KerrCubic;
use kerromech::units::HBAR;
use kerromech::SweepDirection;

use crate::lsq::{self, Model, Solution};
use crate::{FitError, Result};

type C = Complex64;

/// Input power and the attenuation in front of the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSpec {
    /// Power at the source, dBm.
    pub applied_dbm: f64,
    /// Line attenuation, dB (positive).
    pub attenuation_db: f64,
    /// Uncertainty of the attenuation, dB.
    pub attenuation_uncertainty_db: f64,
}

impl PowerSpec {
    /// Power at the device, W.
    pub fn at_device(&self) -> f64 {
        1e-3 * 10f64.powf((self.applied_dbm - self.attenuation_db) / 10.0)
    }

    pub fn with_attenuation(mut self, attenuation_db: f64) -> Self {
        self.attenuation_db = attenuation_db;
        self
    }

    /// Source power that delivers `watts` at the device.
    pub fn for_device_power(watts: f64, attenuation_db: f64, uncertainty_db: f64) -> Self {
        PowerSpec {
            applied_dbm: 10.0 * (watts / 1e-3).log10() + attenuation_db,
            attenuation_db,
            attenuation_uncertainty_db: uncertainty_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct S21Trace {
    /// Probe frequencies, Hz, strictly monotone.
    pub frequency: Vec<f64>,
    pub s21: Vec<C>,
    pub power: PowerSpec,
    pub direction: SweepDirection,
}

impl S21Trace {
    pub fn validate(&self) -> Result<()> {
        if self.frequency.len() != self.s21.len() {
            return Err(FitError::Input(format!(
                "{} frequencies but {} S21 samples",
                self.frequency.len(),
                self.s21.len()
            )));
        }
        if self.frequency.iter().any(|f| !f.is_finite() || *f <= 0.0)
            || self.s21.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(FitError::Input("non-finite or non-positive samples in S21 trace".into()));
        }
        let up = self.frequency.windows(2).all(|w| w[1] > w[0]);
        let down = self.frequency.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(FitError::Input("frequency grid is not strictly monotone".into()));
        }
        Ok(())
    }

    fn omegas(&self) -> Vec<f64> {
        self.frequency.iter().map(|f| std::f64::consts::TAU * f).collect()
    }
}

/// Resonator parameters in SI units (angular frequencies, seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonator {
    pub a: f64,
    pub alpha: f64,
    pub tau: f64,
    pub q_l: f64,
    pub q_c: f64,
    pub phi0: f64,
    pub omega_c: f64,
    /// Kerr constant (rad/s per photon); zero for the linear model.
    pub kerr: f64,
}

impl Resonator {
    pub fn kappa(&self) -> f64 {
        self.omega_c / self.q_l
    }

    /// `Re(1/Q_c) = cos(phi0)/|Q_c| <= 1/Q_l`; otherwise the internal
    /// quality factor is negative.
    pub fn is_passive(&self) -> bool {
        self.q_l <= self.q_c / self.phi0.cos().max(f64::MIN_POSITIVE)
    }

    /// Internal quality factor from `1/Q_i = 1/Q_l - cos(phi0)/|Q_c|`.
    pub fn q_i(&self) -> f64 {
        1.0 / (1.0 / self.q_l - self.phi0.cos() / self.q_c)
    }

    /// Transmission at `omega` with resonance pulled to `omega_c - K n`.
    pub fn s21(&self, omega: f64, n_c: f64) -> C {
        let wc = self.omega_c - self.kerr * n_c;
        let env = C::from_polar(self.a, self.alpha - self.tau * omega);
        let den = C::new(1.0, 2.0 * self.q_l * (omega - wc) / omega);
        env * (C::ONE - C::from_polar(self.q_l / self.q_c, self.phi0) / den)
    }

    /// Right-hand side of the photon-number cubic, `(w_c / 2|Q_c|) P_g / (hbar w)`.
    pub fn drive_term(&self, power_w: f64, omega: f64) -> f64 {
        self.omega_c / (2.0 * self.q_c) * power_w / (HBAR * omega)
    }

    /// Intracavity photon numbers of all steady states at probe `omega`.
    pub fn photon_numbers(&self, power_w: f64, omega: f64) -> Result<Vec<(f64, u8)>> {
        let cubic = KerrCubic::new(self.kappa(), self.kerr, self.drive_term(power_w, omega))?;
        Ok(cubic.roots(omega - self.omega_c)?)
    }

    /// Device power at which the drive reaches `ratio` of the bifurcation threshold.
    pub fn power_for_ratio(&self, ratio: f64) -> f64 {
        let k = self.kappa();
        let drive = ratio * k.powi(3) / (3.0 * 3f64.sqrt() * self.kerr.abs());
        drive * HBAR * 2.0 * self.q_c
    }
}

/// Photon number on the branch occupied by a sweep in `direction`: inside
/// the bistable region an up-sweep stays low for `K > 0` and high for
/// `K < 0`, and a down-sweep the opposite.
pub fn occupied_photon_number(
    res: &Resonator,
    power_w: f64,
    omega: f64,
    direction: SweepDirection,
) -> Result<Occupied> {
    let roots = res.photon_numbers(power_w, omega)?;
    if roots.len() == 1 {
        return Ok(Occupied { n_c: roots[0].0, ambiguous: roots[0].1 > 1 });
    }
    let low = match direction {
        SweepDirection::Up => res.kerr >= 0.0,
        SweepDirection::Down => res.kerr < 0.0,
        SweepDirection::None => return Err(FitError::MissingDirection),
    };
    let pick = if low { roots[0] } else { roots[roots.len() - 1] };
    Ok(Occupied { n_c: pick.0, ambiguous: pick.1 > 1 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupied {
    pub n_c: f64,
    /// The selected root is a double root (the point sits on a spinodal).
    pub ambiguous: bool,
}

/// Noiseless forward model for a trace on `frequency` (Hz).
pub fn forward_s21(res: &Resonator, frequency: &[f64], power_w: f64, direction: SweepDirection) -> Result<Vec<C>> {
    frequency
        .iter()
        .map(|&f| {
            let w = std::f64::consts::TAU * f;
            let n = if res.kerr == 0.0 { 0.0 } else { occupied_photon_number(res, power_w, w, direction)?.n_c };
            Ok(res.s21(w, n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircleFitParams {
    pub resonator: Resonator,
    /// Order: a, alpha, tau, Q_l, |Q_c|, phi0, omega_c[, kerr].
    pub covariance: DMatrix<f64>,
    pub residual_norm: f64,
    /// Points that sit on a spinodal (double root) at the optimum.
    pub ambiguous_points: usize,
}

impl CircleFitParams {
    pub const NAMES: [&'static str; 8] = ["a", "alpha", "tau", "q_l", "q_c", "phi0", "omega_c", "kerr"];
    pub const UNITS: [&'static str; 8] = ["1", "rad", "s", "1", "1", "rad", "rad/s", "rad/s"];

    pub fn values(&self) -> Vec<f64> {
        let r = &self.resonator;
        let mut v = vec![r.a, r.alpha, r.tau, r.q_l, r.q_c, r.phi0, r.omega_c];
        if self.covariance.nrows() == 8 {
            v.push(r.kerr);
        }
        v
    }

    pub fn stderr(&self) -> Vec<f64> {
        (0..self.covariance.nrows()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }
}

/// Internal scaling: delays and resonance offsets are measured against the
/// grid centre and half-span, quality factors against a reference value.
#[derive(Debug, Clone, Copy)]
struct Scale {
    w_ref: f64,
    half_span: f64,
    q_ref: f64,
    k_ref: f64,
}

impl Scale {
    fn pack(&self, r: &Resonator) -> Vec<f64> {
        vec![
            r.a,
            r.alpha - r.tau * self.w_ref,
            r.tau * self.half_span,
            r.q_l / self.q_ref,
            r.q_c / self.q_ref,
            r.phi0,
            (r.omega_c - self.w_ref) / self.half_span,
            r.kerr / self.k_ref,
        ]
    }

    fn unpack(&self, p: &[f64]) -> Resonator {
        let tau = p[2] / self.half_span;
        Resonator {
            a: p[0],
            alpha: wrap(p[1] + tau * self.w_ref),
            tau,
            q_l: p[3] * self.q_ref,
            q_c: p[4] * self.q_ref,
            phi0: p[5],
            omega_c: self.w_ref + p[6] * self.half_span,
            kerr: p.get(7).map_or(0.0, |k| k * self.k_ref),
        }
    }

    /// Chain-rule factors from SI parameters to packed ones, for the
    /// covariance. Order as in [`CircleFitParams`].
    fn jacobian_to_si(&self, n: usize) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(n, n);
        t[(0, 0)] = 1.0;
        // alpha = p1 + p2 w_ref / half_span
        t[(1, 1)] = 1.0;
        t[(1, 2)] = self.w_ref / self.half_span;
        t[(2, 2)] = 1.0 / self.half_span;
        t[(3, 3)] = self.q_ref;
        t[(4, 4)] = self.q_ref;
        t[(5, 5)] = 1.0;
        t[(6, 6)] = self.half_span;
        if n > 7 {
            t[(7, 7)] = self.k_ref;
        }
        t
    }
}

fn wrap(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let y = x.rem_euclid(tau);
    if y > std::f64::consts::PI {
        y - tau
    } else {
        y
    }
}

struct LinearModel<'a> {
    omega: &'a [f64],
    data: &'a [C],
    scale: Scale,
}

impl LinearModel<'_> {
    /// `S` and its derivatives with respect to the packed parameters.
    fn eval(&self, p: &[f64], w: f64) -> (C, [C; 7]) {
        let i = C::i();
        let s = &self.scale;
        let u = (w - s.w_ref) / s.half_span;
        let (a, alpha, tau, ql, qc, phi, xc) = (p[0], p[1], p[2], p[3] * s.q_ref, p[4] * s.q_ref, p[5], p[6]);
        let wc = s.w_ref + xc * s.half_span;
        let env = C::from_polar(a, alpha - tau * u);
        let den = C::new(1.0, 2.0 * ql * (w - wc) / w);
        let z = C::from_polar(ql / qc, phi) / den;
        let val = env * (C::ONE - z);
        let dz_dql = z / ql - z * C::new(0.0, 2.0 * (w - wc) / w) / den;
        let dz_dwc = z * C::new(0.0, 2.0 * ql / w) / den;
        let grads = [
            val / a,
            i * val,
            -i * u * val,
            -env * dz_dql * s.q_ref,
            env * z / qc * s.q_ref,
            -env * i * z,
            -env * dz_dwc * s.half_span,
        ];
        (val, grads)
    }
}

impl Model for LinearModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let m = self.omega.len();
        let mut r = vec![0.0; 2 * m];
        for (k, (&w, &d)) in self.omega.iter().zip(self.data).enumerate() {
            let (v, _) = self.eval(p, w);
            r[k] = v.re - d.re;
            r[m + k] = v.im - d.im;
        }
        Some(r)
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let m = self.omega.len();
        let mut j = DMatrix::zeros(2 * m, 7);
        for (k, &w) in self.omega.iter().enumerate() {
            let (_, g) = self.eval(p, w);
            for c in 0..7 {
                j[(k, c)] = g[c].re;
                j[(m + k, c)] = g[c].im;
            }
        }
        Some(j)
    }

    fn step(&self, p: &[f64], j: usize) -> f64 {
        match j {
            // phases are absolute; the resonance offset must stay well above
            // the spacing of f64 near w_ref
            1 => 1e-6,
            6 => 1e-5,
            _ => 1e-6 * p[j].abs().max(1e-2),
        }
    }
}

/// Least-squares circle `(centre, radius, rms geometric residual)`.
pub fn algebraic_circle(z: &[C]) -> Result<(C, f64, f64)> {
    let n = z.len() as f64;
    let mean: C = z.iter().sum::<C>() / n;
    let spread = z.iter().map(|v| (v - mean).norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    // (x^2 + y^2) + D x + E y + F = 0 on centred, scaled points
    let rows: Vec<C> = z.iter().map(|v| (v - mean) / spread).collect();
    let a = DMatrix::from_fn(rows.len(), 3, |i, j| match j {
        0 => rows[i].re,
        1 => rows[i].im,
        _ => 1.0,
    });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|v| -v.norm_sqr()));
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| FitError::DegenerateCircle(format!("algebraic fit failed: {e}")))?;
    let centre = C::new(-0.5 * sol[0], -0.5 * sol[1]);
    let r2 = centre.norm_sqr() - sol[2];
    if !(r2 > 0.0) {
        return Err(FitError::DegenerateCircle("points do not lie on a circle".into()));
    }
    let radius = r2.sqrt();
    let rms = (rows.iter().map(|v| ((v - centre).norm() - radius).powi(2)).sum::<f64>() / n).sqrt();
    Ok((mean + centre * spread, radius * spread, rms * spread))
}

fn unwrap(phases: &mut [f64]) {
    for k in 1..phases.len() {
        let d = phases[k] - phases[k - 1];
        phases[k] -= std::f64::consts::TAU * (d / std::f64::consts::TAU).round();
    }
}

/// Delay from the phase slope over the outer tenth of the grid on each side.
fn coarse_delay(omega: &[f64], data: &[C]) -> f64 {
    let m = omega.len();
    let edge = (m / 10).max(3);
    let mut ph: Vec<f64> = data.iter().map(|z| z.arg()).collect();
    unwrap(&mut ph);
    let idx: Vec<usize> = (0..edge).chain(m - edge..m).collect();
    let n = idx.len() as f64;
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + omega[i], b + ph[i]));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy) = idx.iter().fold((0.0, 0.0), |(a, b), &i| {
        let dx = omega[i] - mx;
        (a + dx * dx, b + dx * (ph[i] - my))
    });
    -sxy / sxx
}

fn remove_delay(omega: &[f64], data: &[C], tau: f64, w_ref: f64) -> Vec<C> {
    omega.iter().zip(data).map(|(&w, &z)| z * C::from_polar(1.0, tau * (w - w_ref))).collect()
}

/// Refine the delay by minimising the circle-fit residual.
fn refine_delay(omega: &[f64], data: &[C], tau0: f64, w_ref: f64, half_span: f64) -> f64 {
    let cost = |tau: f64| {
        algebraic_circle(&remove_delay(omega, data, tau, w_ref))
            .map(|(_, r, rms)| rms / r)
            .unwrap_or(f64::INFINITY)
    };
    let width = 1.0 / half_span;
    let steps = 40;
    let mut best = (tau0, cost(tau0));
    for k in 0..=steps {
        let t = tau0 - width + 2.0 * width * k as f64 / steps as f64;
        let c = cost(t);
        if c < best.1 {
            best = (t, c);
        }
    }
    // golden section around the best grid point
    let h = 2.0 * width / steps as f64;
    let (mut lo, mut hi) = (best.0 - h, best.0 + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..60 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = cost(x2);
        }
    }
    0.5 * (lo + hi)
}

struct PhaseModel<'a> {
    omega: &'a [f64],
    theta: &'a [f64],
    w_ref: f64,
    half_span: f64,
    q_ref: f64,
}

impl Model for PhaseModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let (t0, ql, wc) = (p[0], p[1] * self.q_ref, self.w_ref + p[2] * self.half_span);
        Some(
            self.omega
                .iter()
                .zip(self.theta)
                .map(|(&w, &th)| t0 - 2.0 * (2.0 * ql * (w - wc) / w).atan() - th)
                .collect(),
        )
    }

    fn step(&self, p: &[f64], j: usize) -> f64 {
        1e-7 * p[j].abs().max(1e-3)
    }
}

/// Initial parameters: delay removal, algebraic circle, phase fit.
fn initial_guess(omega: &[f64], data: &[C]) -> Result<(Resonator, f64)> {
    let m = omega.len();
    let (wmin, wmax) = omega.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    let w_ref = 0.5 * (wmin + wmax);
    let half_span = 0.5 * (wmax - wmin);
    let edge = (m / 20).max(2);
    let tau0 = coarse_delay(omega, data);
    {
        // depth of the dip against the noise from second differences, which
        // cancel the smooth arc
        let z = remove_delay(omega, data, tau0, w_ref);
        let far: C = z[..edge].iter().chain(&z[m - edge..]).sum::<C>() / (2 * edge) as f64;
        let depth = z.iter().map(|v| (v - far).norm()).fold(0.0, f64::max);
        let curv: f64 = z.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).norm_sqr()).sum::<f64>() / (m - 2) as f64;
        let noise = (curv / 12.0).sqrt();
        if depth < 10.0 * noise {
            return Err(FitError::DegenerateCircle(format!(
                "resonance depth {depth:e} below noise floor {:e}",
                10.0 * noise
            )));
        }
    }
    let tau = refine_delay(omega, data, tau0, w_ref, half_span);
    let z = remove_delay(omega, data, tau, w_ref);
    let (centre, radius, rms) = algebraic_circle(&z)?;
    if radius < 3.0 * rms {
        return Err(FitError::DegenerateCircle(format!("radius {radius:e} below noise floor {:e}", 3.0 * rms)));
    }

    // off-resonant point from the grid edges, resonance farthest from it
    let far: C = z[..edge].iter().chain(&z[m - edge..]).sum::<C>() / (2 * edge) as f64;
    let dist: Vec<f64> = z.iter().map(|v| (v - far).norm()).collect();
    let (k_res, &dmax) = dist.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let wc0 = omega[k_res];
    let inside: Vec<f64> =
        omega.iter().zip(&dist).filter(|(_, d)| **d >= dmax / 2f64.sqrt()).map(|(w, _)| *w).collect();
    let fwhm = (inside.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - inside.iter().copied().fold(f64::INFINITY, f64::min))
    .max(2.0 * half_span / m as f64);
    let ql0 = wc0 / fwhm;

    let mut theta: Vec<f64> = z.iter().map(|v| (v - centre).arg()).collect();
    unwrap(&mut theta);
    let phase = PhaseModel { omega, theta: &theta, w_ref, half_span, q_ref: ql0 };
    let sol = lsq::minimize(&phase, &[theta[k_res], 1.0, (wc0 - w_ref) / half_span], "phase fit")?;
    let (theta0, ql, wc) = (sol.params[0], sol.params[1] * ql0, w_ref + sol.params[2] * half_span);
    if !(ql > 0.0) {
        return Err(FitError::NoConvergence { stage: "phase fit", reason: format!("Q_l = {ql}") });
    }

    let off = centre + C::from_polar(radius, theta0 + std::f64::consts::PI);
    let c_norm = centre / off;
    let r_norm = radius / off.norm();
    let res = Resonator {
        a: off.norm(),
        alpha: wrap(off.arg() + tau * w_ref),
        tau,
        q_l: ql,
        q_c: ql / (2.0 * r_norm),
        phi0: (C::ONE - c_norm).arg(),
        omega_c: wc,
        kerr: 0.0,
    };
    Ok((res, rms))
}

fn check_grid(omega: &[f64]) -> Result<()> {
    if omega.len() < 50 {
        return Err(FitError::Input(format!("circle fit needs >= 50 points (got {})", omega.len())));
    }
    Ok(())
}

fn span_in_linewidths(omega: &[f64], res: &Resonator) -> f64 {
    let (wmin, wmax) = omega.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    (wmax - wmin) / res.kappa()
}

fn to_si(sol: &Solution, scale: &Scale, n: usize) -> DMatrix<f64> {
    let t = scale.jacobian_to_si(n);
    let c = &t * &sol.covariance * t.transpose();
    (&c + c.transpose()) * 0.5
}

/// Linear circle fit of one trace.
pub fn circle_fit_linear(trace: &S21Trace) -> Result<CircleFitParams> {
    trace.validate()?;
    let omega = trace.omegas();
    check_grid(&omega)?;
    let (guess, _) = initial_guess(&omega, &trace.s21)?;
    let span = span_in_linewidths(&omega, &guess);
    if span < 5.0 {
        return Err(FitError::Input(format!("trace spans {span:.2} linewidths; need >= 5")));
    }
    let (wmin, wmax) = omega.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    let scale = Scale { w_ref: 0.5 * (wmin + wmax), half_span: 0.5 * (wmax - wmin), q_ref: guess.q_l, k_ref: 1.0 };
    let model = LinearModel { omega: &omega, data: &trace.s21, scale };
    let start = &scale.pack(&guess)[..7];
    let sol = lsq::minimize(&model, start, "circle fit")?;
    let mut res = scale.unpack(&sol.params);
    if res.a < 0.0 {
        res.a = -res.a;
        res.alpha = wrap(res.alpha + std::f64::consts::PI);
    }
    if !(res.q_l > 0.0 && res.q_c > 0.0) {
        return Err(FitError::NoConvergence {
            stage: "circle fit",
            reason: format!("non-physical quality factors Q_l = {}, Q_c = {}", res.q_l, res.q_c),
        });
    }
    res.phi0 = wrap(res.phi0);
    Ok(CircleFitParams {
        resonator: res,
        covariance: to_si(&sol, &scale, 7),
        residual_norm: sol.residual_norm(),
        ambiguous_points: 0,
    })
}

/// Jacobian check hook for the analytic circle-fit derivatives.
pub fn linear_jacobian_mismatch(trace: &S21Trace, res: &Resonator) -> Option<f64> {
    let omega = trace.omegas();
    let (wmin, wmax) = omega.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    let scale = Scale { w_ref: 0.5 * (wmin + wmax), half_span: 0.5 * (wmax - wmin), q_ref: res.q_l, k_ref: 1.0 };
    let model = LinearModel { omega: &omega, data: &trace.s21, scale };
    lsq::jacobian_mismatch(&model, &scale.pack(res)[..7])
}

struct KerrModel<'a> {
    traces: Vec<(Vec<f64>, &'a [C], f64, SweepDirection)>,
    scale: Scale,
}

impl KerrModel<'_> {
    fn predict(&self, res: &Resonator) -> Result<(Vec<Vec<C>>, usize)> {
        let mut ambiguous = 0;
        let mut out = Vec::with_capacity(self.traces.len());
        for (omega, _, power, dir) in &self.traces {
            let mut v = Vec::with_capacity(omega.len());
            for &w in omega {
                let occ = occupied_photon_number(res, *power, w, *dir)?;
                ambiguous += usize::from(occ.ambiguous);
                v.push(res.s21(w, occ.n_c));
            }
            out.push(v);
        }
        Ok((out, ambiguous))
    }
}

impl Model for KerrModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let res = self.scale.unpack(p);
        if !(res.q_l > 0.0 && res.q_c > 0.0) {
            return None;
        }
        let (pred, _) = self.predict(&res).ok()?;
        let mut r = Vec::new();
        for ((_, data, _, _), v) in self.traces.iter().zip(&pred) {
            r.extend(v.iter().zip(data.iter()).map(|(a, b)| a.re - b.re));
            r.extend(v.iter().zip(data.iter()).map(|(a, b)| a.im - b.im));
        }
        Some(r)
    }

    fn step(&self, p: &[f64], j: usize) -> f64 {
        match j {
            1 => 1e-6,
            6 => 1e-5,
            _ => 1e-7 * p[j].abs().max(1e-4),
        }
    }
}

/// Joint fit of traces at several powers with a shared Kerr constant. Each
/// point uses the branch selected by the trace's sweep direction.
pub fn circle_fit_kerr(traces: &[S21Trace]) -> Result<CircleFitParams> {
    if traces.len() < 3 {
        return Err(FitError::Input(format!("Kerr circle fit needs >= 3 powers (got {})", traces.len())));
    }
    for t in traces {
        t.validate()?;
    }
    // start from the weakest trace, where the Kerr shift is smallest
    let weakest = traces
        .iter()
        .min_by(|a, b| a.power.at_device().total_cmp(&b.power.at_device()))
        .expect("non-empty");
    let lin = circle_fit_linear(weakest)?;
    let mut guess = lin.resonator;

    let all: Vec<f64> = traces.iter().flat_map(|t| t.omegas()).collect();
    let (wmin, wmax) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &w| (a.min(w), b.max(w)));
    let p_max = traces.iter().map(|t| t.power.at_device()).fold(0.0, f64::max);
    // Kerr scale: the constant that puts the strongest drive at threshold
    let k_ref = Resonator { kerr: 1.0, ..guess }.power_for_ratio(1.0) / p_max;
    let scale = Scale { w_ref: 0.5 * (wmin + wmax), half_span: 0.5 * (wmax - wmin), q_ref: guess.q_l, k_ref };
    let model = KerrModel {
        traces: traces.iter().map(|t| (t.omegas(), t.s21.as_slice(), t.power.at_device(), t.direction)).collect(),
        scale,
    };

    // coarse scan over the Kerr constant with the linear parameters fixed
    let mut best = (0.0, f64::INFINITY);
    let mut candidates = vec![0.0];
    for k in 0..=40 {
        let x = 10f64.powf(-2.0 + 3.0 * k as f64 / 40.0);
        candidates.push(x);
        candidates.push(-x);
    }
    for &x in &candidates {
        guess.kerr = x * k_ref;
        let mut p = scale.pack(&guess);
        p[7] = x;
        let cost = match model.residuals(&p) {
            Some(r) => r.iter().map(|v| v * v).sum::<f64>(),
            None => continue,
        };
        if cost < best.1 {
            best = (x, cost);
        }
    }
    guess.kerr = best.0 * k_ref;
    log::debug!("Kerr scan start: K = {:e} rad/s", guess.kerr);

    let sol = lsq::minimize(&model, &scale.pack(&guess), "Kerr circle fit")?;
    let mut res = scale.unpack(&sol.params);
    if res.a < 0.0 {
        res.a = -res.a;
        res.alpha = wrap(res.alpha + std::f64::consts::PI);
    }
    res.phi0 = wrap(res.phi0);
    let (_, ambiguous) = model.predict(&res)?;
    if ambiguous > 0 {
        log::warn!("{ambiguous} points sit on a spinodal at the Kerr fit optimum");
    }
    Ok(CircleFitParams {
        resonator: res,
        covariance: to_si(&sol, &scale, 8),
        residual_norm: sol.residual_norm(),
        ambiguous_points: ambiguous,
    })
}

/// Kerr constant refitted with every trace's attenuation moved by `+-` its
/// uncertainty. Returns `(nominal, more attenuation, less attenuation)`.
pub fn kerr_attenuation_bracket(traces: &[S21Trace]) -> Result<(CircleFitParams, CircleFitParams, CircleFitParams)> {
    let shifted = |sign: f64| -> Vec<S21Trace> {
        traces
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.power = t.power.with_attenuation(t.power.attenuation_db + sign * t.power.attenuation_uncertainty_db);
                t
            })
            .collect()
    };
    Ok((circle_fit_kerr(traces)?, circle_fit_kerr(&shifted(1.0))?, circle_fit_kerr(&shifted(-1.0))?))
}

/// Forward model plus complex Gaussian noise of standard deviation `sigma`
/// per quadrature.
pub fn synthetic_s21(
    res: &Resonator,
    frequency: &[f64],
    power: PowerSpec,
    direction: SweepDirection,
    sigma: f64,
    seed: u64,
) -> Result<S21Trace> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let clean = forward_s21(res, frequency, power.at_device(), direction)?;
    let s21 = clean
        .into_iter()
        .map(|z| z + C::new(sigma * normal.sample(&mut rng), sigma * normal.sample(&mut rng)))
        .collect();
    Ok(S21Trace { frequency: frequency.to_vec(), s21, power, direction })
}
