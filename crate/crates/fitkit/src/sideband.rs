//! Mechanical sideband: offset plus a peak-normalised Lorentzian.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::lsq::{self, Model};
use crate::{FitError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PsdTrace {
    /// Frequencies, Hz, strictly increasing.
    pub frequency: Vec<f64>,
    pub psd: Vec<f64>,
    /// Number of averaged spectra, if known.
    pub averages: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorentzian {
    pub offset: f64,
    /// Peak height above the offset.
    pub amplitude: f64,
    /// Centre, Hz.
    pub center: f64,
    /// Full width at half maximum, Hz.
    pub width: f64,
}

impl Lorentzian {
    pub fn eval(&self, f: f64) -> f64 {
        let g = 0.5 * self.width;
        let d = f - self.center;
        self.offset + self.amplitude * g * g / (d * d + g * g)
    }

    /// Integral of the peak over frequency (offset excluded), `A pi Gamma / 2`.
    pub fn area(&self) -> f64 {
        self.amplitude * std::f64::consts::PI * 0.5 * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SidebandFit {
    pub peak: Lorentzian,
    /// Integrated area, proportional to `g0^2 <n_m>` (PSD units times Hz).
    pub area: f64,
    pub area_stderr: f64,
    /// Centre and width as angular frequencies.
    pub omega_m: f64,
    pub gamma_m: f64,
    /// Order: offset, amplitude, center (Hz), width (Hz).
    pub covariance: DMatrix<f64>,
    pub snr: f64,
}

impl SidebandFit {
    pub fn stderr(&self) -> Vec<f64> {
        (0..4).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }
}

struct PeakModel<'a> {
    f: &'a [f64],
    y: &'a [f64],
    f_ref: f64,
    step: f64,
    y_ref: f64,
}

impl PeakModel<'_> {
    fn unpack(&self, p: &[f64]) -> Lorentzian {
        Lorentzian {
            offset: p[0] * self.y_ref,
            amplitude: p[1] * self.y_ref,
            center: self.f_ref + p[2] * self.step,
            width: p[3] * self.step,
        }
    }
}

impl Model for PeakModel<'_> {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let l = self.unpack(p);
        Some(self.f.iter().zip(self.y).map(|(&f, &y)| (l.eval(f) - y) / self.y_ref).collect())
    }

    fn jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let l = self.unpack(p);
        let g = 0.5 * l.width;
        let mut j = DMatrix::zeros(self.f.len(), 4);
        for (i, &f) in self.f.iter().enumerate() {
            let d = f - l.center;
            let q = d * d + g * g;
            j[(i, 0)] = 1.0;
            j[(i, 1)] = g * g / q;
            j[(i, 2)] = l.amplitude * g * g * 2.0 * d / (q * q) * self.step / self.y_ref;
            j[(i, 3)] = l.amplitude * g * d * d / (q * q) * self.step / self.y_ref;
        }
        Some(j)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Separated maxima of the smoothed trace standing out of the baseline.
fn count_peaks(y: &[f64], baseline: f64, noise: f64) -> usize {
    let n = y.len();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let top = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = baseline + (0.3 * (top - baseline)).max(3.0 * noise);
    let mut maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| smooth[i] > threshold && smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1])
        .collect();
    // merge neighbours whose separating dip is shallow
    let mut k = 0;
    while k + 1 < maxima.len() {
        let (a, b) = (maxima[k], maxima[k + 1]);
        let dip = smooth[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
        let lower = smooth[a].min(smooth[b]);
        let shallow = lower - dip < (0.2 * (lower - baseline)).max(3.0 * noise);
        if shallow {
            if smooth[a] >= smooth[b] {
                maxima.remove(k + 1);
            } else {
                maxima.remove(k);
            }
        } else {
            k += 1;
        }
    }
    maxima.len()
}

/// Least-squares fit of `offset + A (Gamma/2)^2 / ((f - f_m)^2 + (Gamma/2)^2)`.
pub fn mech_sideband_fit(trace: &PsdTrace) -> Result<SidebandFit> {
    let (f, y) = (&trace.frequency, &trace.psd);
    if f.len() != y.len() || f.len() < 20 {
        return Err(FitError::Input(format!("PSD trace needs >= 20 matching samples (got {} / {})", f.len(), y.len())));
    }
    if f.iter().chain(y).any(|v| !v.is_finite()) || y.iter().any(|&v| v < 0.0) {
        return Err(FitError::Input("PSD must be finite and non-negative".into()));
    }
    if !f.windows(2).all(|w| w[1] > w[0]) {
        return Err(FitError::Input("PSD frequency grid must be strictly increasing".into()));
    }
    let baseline = median(y);
    let mad: Vec<f64> = y.iter().map(|v| (v - baseline).abs()).collect();
    let noise = 1.4826 * median(&mad);
    let (k_max, &peak) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let snr = if noise > 0.0 { (peak - baseline) / noise } else { f64::INFINITY };
    if !(snr >= 3.0) {
        return Err(FitError::LowSnr { snr });
    }
    let count = count_peaks(y, baseline, noise);
    if count > 1 {
        return Err(FitError::MultiplePeaks { count });
    }

    let half = baseline + 0.5 * (peak - baseline);
    let above: Vec<f64> = f.iter().zip(y).filter(|(_, v)| **v >= half).map(|(f, _)| *f).collect();
    let step = (f[f.len() - 1] - f[0]) / (f.len() - 1) as f64;
    let fwhm = (above.last().unwrap() - above[0]).max(2.0 * step);
    let y_ref = peak.abs().max(f64::MIN_POSITIVE);
    let model = PeakModel { f, y, f_ref: f[k_max], step, y_ref };
    let start = [baseline / y_ref, (peak - baseline) / y_ref, 0.0, fwhm / step];
    let sol = lsq::minimize(&model, &start, "sideband fit")?;
    let mut l = model.unpack(&sol.params);
    l.width = l.width.abs();

    let mut t = DMatrix::zeros(4, 4);
    t[(0, 0)] = y_ref;
    t[(1, 1)] = y_ref;
    t[(2, 2)] = step;
    t[(3, 3)] = step;
    let cov = &t * &sol.covariance * &t;
    // area = A pi Gamma / 2
    let ga = [0.0, std::f64::consts::PI * 0.5 * l.width, 0.0, std::f64::consts::PI * 0.5 * l.amplitude];
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += ga[i] * cov[(i, j)] * ga[j];
        }
    }
    let tau = std::f64::consts::TAU;
    Ok(SidebandFit {
        area: l.area(),
        area_stderr: var.max(0.0).sqrt(),
        omega_m: tau * l.center,
        gamma_m: tau * l.width,
        peak: l,
        covariance: cov,
        snr,
    })
}

/// Averaged-periodogram noise: each sample is the model times a
/// Gamma(`averages`, 1/`averages`) variate.
pub fn synthetic_psd(peak: &Lorentzian, frequency: &[f64], averages: usize, seed: u64) -> PsdTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Gamma::new(averages as f64, 1.0 / averages as f64).expect("positive shape");
    PsdTrace {
        frequency: frequency.to_vec(),
        psd: frequency.iter().map(|&f| peak.eval(f) * dist.sample(&mut rng)).collect(),
        averages: Some(averages),
    }
}
