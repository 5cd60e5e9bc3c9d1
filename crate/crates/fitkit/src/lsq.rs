//! Levenberg-Marquardt driver with covariance estimates.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};

use crate::{FitError, Result};

/// A residual vector over a parameter vector.
pub trait Model: Sync {
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>>;

    /// Analytic Jacobian `d r_i / d p_j`; central differences when `None`.
    fn jacobian(&self, _p: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Step used by the central-difference fallback.
    fn step(&self, p: &[f64], j: usize) -> f64 {
        1e-6 * p[j].abs().max(1e-8)
    }
}

/// Central-difference Jacobian of `model` at `p`.
pub fn numeric_jacobian<M: Model + ?Sized>(model: &M, p: &[f64]) -> Option<DMatrix<f64>> {
    let r0 = model.residuals(p)?;
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = model.step(p, j);
        q[j] = p[j] + h;
        let up = model.residuals(&q)?;
        q[j] = p[j] - h;
        let down = model.residuals(&q)?;
        q[j] = p[j];
        if up.len() != r0.len() || down.len() != r0.len() {
            return None;
        }
        for i in 0..r0.len() {
            jac[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

fn jacobian_of<M: Model + ?Sized>(model: &M, p: &[f64]) -> Option<DMatrix<f64>> {
    model.jacobian(p).or_else(|| numeric_jacobian(model, p))
}

struct Adapter<'a, M: ?Sized> {
    model: &'a M,
    p: DVector<f64>,
}

impl<M: Model + ?Sized> LeastSquaresProblem<f64, Dyn, Dyn> for Adapter<'_, M> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.p.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.model.residuals(self.p.as_slice())?;
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(r))
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let j = jacobian_of(self.model, self.p.as_slice())?;
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub params: Vec<f64>,
    /// `s^2 (J^T J)^+` with `s^2 = |r|^2 / (m - n)`.
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub evaluations: usize,
}

impl Solution {
    pub fn stderr(&self) -> Vec<f64> {
        (0..self.params.len()).map(|i| self.covariance[(i, i)].max(0.0).sqrt()).collect()
    }

    pub fn residual_norm(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// Residual sum of squares per degree of freedom.
    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.residuals.len().saturating_sub(self.params.len()).max(1);
        self.residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64
    }
}

/// Minimise `|r(p)|^2` from `start`.
pub fn minimize<M: Model + ?Sized>(model: &M, start: &[f64], stage: &'static str) -> Result<Solution> {
    let lm = LevenbergMarquardt::new().with_patience(400).with_tol(1e-14);
    let (done, report) = lm.minimize(Adapter { model, p: DVector::from_column_slice(start) });
    if !report.termination.was_successful() {
        return Err(FitError::NoConvergence { stage, reason: format!("{:?}", report.termination) });
    }
    let params: Vec<f64> = done.p.iter().copied().collect();
    let residuals = model
        .residuals(&params)
        .ok_or(FitError::NoConvergence { stage, reason: "residuals undefined at optimum".into() })?;
    let jac = jacobian_of(model, &params)
        .ok_or(FitError::NoConvergence { stage, reason: "Jacobian undefined at optimum".into() })?;
    let dof = residuals.len().saturating_sub(params.len()).max(1);
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64;
    let covariance = pseudo_inverse_normal(&jac) * s2;
    Ok(Solution { params, covariance, residuals, evaluations: report.number_of_evaluations })
}

/// `(J^T J)^+` through the SVD of `J`, dropping singular values below
/// `1e-12` of the largest.
pub fn pseudo_inverse_normal(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let n = jac.ncols();
    let svd = jac.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(n, n);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= 1e-12 * smax || s == 0.0 {
            continue;
        }
        let row = v_t.row(k);
        out += row.transpose() * row / (s * s);
    }
    out
}

/// Symmetric with eigenvalues `>= -1e-10 trace`.
pub fn is_psd(cov: &DMatrix<f64>) -> bool {
    let n = cov.nrows();
    if n != cov.ncols() {
        return false;
    }
    let scale = cov.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return false;
            }
        }
    }
    let trace = cov.trace();
    let eig = nalgebra::SymmetricEigen::new(cov.clone()).eigenvalues;
    eig.iter().all(|&e| e >= -1e-10 * trace.abs())
}

/// Largest relative mismatch between the analytic and central-difference
/// Jacobians, scaled per column.
pub fn jacobian_mismatch<M: Model + ?Sized>(model: &M, p: &[f64]) -> Option<f64> {
    let a = model.jacobian(p)?;
    let n = numeric_jacobian(model, p)?;
    let mut worst = 0.0f64;
    for j in 0..p.len() {
        let scale = n.column(j).amax().max(a.column(j).amax()).max(f64::MIN_POSITIVE);
        let e = (a.column(j) - n.column(j)).amax() / scale;
        worst = worst.max(e);
    }
    Some(worst)
}
