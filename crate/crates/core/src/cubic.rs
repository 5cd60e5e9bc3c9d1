//! The steady-state cubic in reduced units.
//!
//! With `x = |K| n / kappa`, `d = sgn(K) Delta / kappa` and
//! `p = |K| P / kappa^3` the photon-number balance becomes
//! `g(x) = x^3 + 2 d x^2 + (d^2 + 1/4) x - p = 0`.

use std::f64::consts::PI;

/// Reduced drive at the cusp, `1 / (3 sqrt 3)`.
pub(crate) const P_CRIT: f64 = 0.19245008972987526;

/// Relative distance below which two polished roots are merged into one
/// root of multiplicity 2.
const MERGE_REL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Root {
    pub x: f64,
    pub multiplicity: u8,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Compensated Horner evaluation of `g(x)`, with the linear coefficient
/// carried as a double-double.
pub(crate) fn residual(d: f64, p: f64, x: f64) -> f64 {
    let (a1_hi, a1_lo) = {
        let (sq, sq_err) = two_prod(d, d);
        let (s, e) = two_sum(sq, 0.25);
        (s, e + sq_err)
    };
    let mut s = 1.0f64;
    let mut comp = 0.0f64;
    for (c, c_lo) in [(2.0 * d, 0.0), (a1_hi, a1_lo), (-p, 0.0)] {
        let (pr, pe) = two_prod(s, x);
        let (sum, se) = two_sum(pr, c);
        s = sum;
        comp = comp.mul_add(x, pe + se + c_lo);
    }
    s + comp
}

/// `g'(x)`, proportional to the stability margin `D(0)`.
pub(crate) fn slope(d: f64, x: f64) -> f64 {
    3.0 * x * x + 4.0 * d * x + d * d + 0.25
}

fn polish(d: f64, p: f64, mut x: f64) -> f64 {
    let mut g = residual(d, p, x).abs();
    for _ in 0..60 {
        if g == 0.0 {
            break;
        }
        let dg = slope(d, x);
        if dg == 0.0 || !dg.is_finite() {
            break;
        }
        let cand = x - residual(d, p, x) / dg;
        let gc = residual(d, p, cand).abs();
        if !(gc < g) {
            break;
        }
        x = cand;
        g = gc;
    }
    x
}

/// All real roots of `g`, ascending, with near-coincident roots merged.
/// For `p > 0` every real root is positive; `p = 0` gives the single root 0.
pub(crate) fn solve(d: f64, p: f64) -> Vec<Root> {
    if p == 0.0 {
        return vec![Root { x: 0.0, multiplicity: 1 }];
    }
    let a = 0.25 - d * d / 3.0;
    let b = -2.0 * d * d * d / 27.0 - d / 6.0 - p;
    let shift = -2.0 * d / 3.0;
    let disc = -(4.0 * a * a * a + 27.0 * b * b);

    if a.abs() <= 1e-9 && b.abs() <= 1e-12 {
        // the cusp: any perturbation within rounding splits the triple root by
        // its cube root, so report the unperturbed value
        return vec![Root { x: shift, multiplicity: 3 }];
    }

    let scale = 4.0 * (a * a * a).abs() + 27.0 * b * b;
    if a < 0.0 && disc <= 0.0 && disc >= -1e-13 * scale {
        // on a spinodal within rounding: simple root 3b/a, double root -3b/(2a)
        let single = polish(d, p, (3.0 * b / a + shift).max(0.0));
        let double = polish(d, p, (-1.5 * b / a + shift).max(0.0));
        let mut out = vec![Root { x: single, multiplicity: 1 }, Root { x: double, multiplicity: 2 }];
        out.sort_by(|a, b| a.x.total_cmp(&b.x));
        return out;
    }

    let mut xs: Vec<f64> = if disc > 0.0 {
        // three real roots; a < 0 here
        let m = 2.0 * (-a / 3.0).sqrt();
        let arg = ((3.0 * b / (2.0 * a)) * (-3.0 / a).sqrt()).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3).map(|k| m * (theta - 2.0 * PI * k as f64 / 3.0).cos() + shift).collect()
    } else {
        let q = (b * b / 4.0 + a * a * a / 27.0).max(0.0).sqrt();
        let u = (-b / 2.0 - b.signum() * q).cbrt();
        let t = if u == 0.0 { 0.0 } else { u - a / (3.0 * u) };
        vec![t + shift]
    };

    for x in xs.iter_mut() {
        *x = polish(d, p, x.max(0.0));
    }
    xs.sort_by(|a, b| a.total_cmp(b));

    let mut out: Vec<Root> = Vec::with_capacity(3);
    for x in xs {
        match out.last_mut() {
            Some(last) if (x - last.x).abs() <= MERGE_REL * x.abs().max(last.x.abs()) => {
                let m = last.multiplicity as f64;
                last.x = (last.x * m + x) / (m + 1.0);
                last.multiplicity += 1;
            }
            _ => out.push(Root { x, multiplicity: 1 }),
        }
    }
    out
}

/// Point on the spinodal curve `g = g' = 0`, parametrised by `u = d + x`.
/// Returns `(d, x, p)`.
pub(crate) fn spinodal_point(u: f64) -> (f64, f64, f64) {
    let x = (u * u + 0.25).sqrt();
    let gap = if u > 0.0 { 0.25 / (x + u) } else { x - u };
    (u - 2.0 * x, x, 2.0 * x * x * gap)
}

/// Parameter where the spinodal curve has its minimum drive (the cusp).
pub(crate) const U_CUSP: f64 = 0.28867513459481287;

/// Spinodal detunings `(d_small_x, d_large_x)` for `p > P_CRIT`. At the first
/// the two smaller roots merge, at the second the two larger ones.
pub(crate) fn spinodals(p: f64) -> (f64, f64) {
    let drive = |u: f64| spinodal_point(u).2;
    let bisect = |mut lo: f64, mut hi: f64, decreasing: bool| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let above = drive(mid) > p;
            if above == decreasing {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    // p(u) >= 4|u|^3 for u <= 0 and p(u) >= u^2/(4u + 1) for u >= 0
    let u_small = bisect(-(p / 4.0).cbrt() - 1.0, U_CUSP, true);
    let u_large = bisect(U_CUSP, 4.0 * p + 2.0, false);
    (spinodal_point(u_small).0, spinodal_point(u_large).0)
}
