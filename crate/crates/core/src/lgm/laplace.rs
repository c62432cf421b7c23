//! Gaussian approximation at the conditional mode and the Laplace marginal.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, DenseCholesky, DenseMatrix, SymSparse, Symbolic};

use super::model::LatentModel;

const NONE: u32 = u32::MAX;
pub const MAX_NEWTON_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 40;

/// Correction terms from conditioning a Gaussian `N(·, H⁻¹)` on `A x = 0`.
#[derive(Debug, Clone)]
pub struct ConstraintCorrection {
    /// Columns of `H⁻¹Aᵀ`.
    pub w: Vec<Vec<f64>>,
    /// `A H⁻¹ Aᵀ`.
    pub s: DenseMatrix<f64>,
    s_chol: Option<DenseCholesky<f64>>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl ConstraintCorrection {
    fn none() -> Self {
        Self {
            w: Vec::new(),
            s: DenseMatrix::zeros(0, 0),
            s_chol: None,
            rows: Vec::new(),
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.w.len()
    }

    /// `log |A H⁻¹ Aᵀ|` (zero without constraints).
    pub fn log_det(&self) -> f64 {
        self.s_chol.as_ref().map_or(0.0, DenseCholesky::log_det)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let Some(chol) = &self.s_chol else {
            return x.to_vec();
        };
        let ax: Vec<f64> = self.rows.iter().map(|c| c.iter().map(|&(j, a)| a * x[j]).sum()).collect();
        let lambda = chol.solve(&ax);
        let mut out = x.to_vec();
        for (wk, lk) in self.w.iter().zip(&lambda) {
            for (o, wi) in out.iter_mut().zip(wk) {
                *o -= wi * lk;
            }
        }
        out
    }

    /// Conditions `x` on the constraints: `x − W S⁻¹ A x`.
    pub fn krige(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }

    /// `(W S⁻¹ Wᵀ)_{ij}`, the covariance removed by conditioning.
    pub fn covariance_reduction(&self, i: usize, j: usize) -> f64 {
        let Some(chol) = &self.s_chol else {
            return 0.0;
        };
        let wi: Vec<f64> = self.w.iter().map(|w| w[i]).collect();
        let wj: Vec<f64> = self.w.iter().map(|w| w[j]).collect();
        let v = chol.solve(&wj);
        wi.iter().zip(&v).map(|(a, b)| a * b).sum()
    }

    /// Diagonal of `W S⁻¹ Wᵀ`.
    pub fn variance_reduction(&self) -> Vec<f64> {
        let Some(chol) = &self.s_chol else {
            return Vec::new();
        };
        let n = self.w.first().map_or(0, Vec::len);
        let sinv = chol.inverse();
        let k = self.w.len();
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        acc += self.w[a][i] * sinv[(a, b)] * self.w[b][i];
                    }
                }
                acc
            })
            .collect()
    }

    /// `(W S⁻¹ Wᵀ) b` for a sparse `b`.
    pub fn reduction_times(&self, b: &[(usize, f64)]) -> f64 {
        let Some(chol) = &self.s_chol else {
            return 0.0;
        };
        let wb: Vec<f64> = self.w.iter().map(|w| b.iter().map(|&(j, v)| w[j] * v).sum()).collect();
        let v = chol.solve(&wb);
        wb.iter().zip(&v).map(|(a, b)| a * b).sum()
    }
}

/// Conditions `x` on `A x = 0` under the precision factored in `factor`.
///
/// Returns the corrected vector and the terms used by the constrained
/// Laplace density.
pub fn constrain(
    x: &[f64],
    factor: &Cholesky<f64>,
    constraints: &[Vec<(usize, f64)>],
) -> Result<(Vec<f64>, ConstraintCorrection)> {
    let corr = constraint_correction(factor, constraints)?;
    Ok((corr.krige(x), corr))
}

fn constraint_correction(factor: &Cholesky<f64>, constraints: &[Vec<(usize, f64)>]) -> Result<ConstraintCorrection> {
    if constraints.is_empty() {
        return Ok(ConstraintCorrection::none());
    }
    let n = factor.dim();
    let k = constraints.len();
    let w: Vec<Vec<f64>> = constraints
        .iter()
        .map(|c| {
            let mut e = vec![0.0; n];
            for &(j, a) in c {
                e[j] += a;
            }
            factor.solve(&e)
        })
        .collect();
    let mut s = DenseMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            s[(a, b)] = constraints[a].iter().map(|&(j, v)| v * w[b][j]).sum();
        }
    }
    for a in 0..k {
        for b in 0..a {
            let m = 0.5 * (s[(a, b)] + s[(b, a)]);
            s[(a, b)] = m;
            s[(b, a)] = m;
        }
    }
    let s_chol = DenseCholesky::new(&s).map_err(|_| Error::numerical("singular constraint system A Q⁻¹ Aᵀ"))?;
    Ok(ConstraintCorrection {
        w,
        s,
        s_chol: Some(s_chol),
        rows: constraints.to_vec(),
    })
}

/// Gaussian approximation of `p(x | y, θ)` at the constrained mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub theta: Vec<f64>,
    pub mode: Vec<f64>,
    /// Factor of `H = Q_x(θ) + Bᵀ diag(c) B` at the mode.
    pub factor: Cholesky<f64>,
    pub log_det: f64,
    pub correction: ConstraintCorrection,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// `log p(y | x*) − ½ x*ᵀ Q x*` at the mode.
    pub objective: f64,
    /// Objective after each accepted Newton step, starting point first.
    pub objective_trace: Vec<f64>,
}

impl GaussianApprox {
    /// Marginal variances of the constrained approximation.
    pub fn latent_variance(&self) -> Vec<f64> {
        let mut var = self.factor.selected_inverse().diag();
        for (v, r) in var.iter_mut().zip(self.correction.variance_reduction()) {
            *v = (*v - r).max(0.0);
        }
        var
    }

    /// Draw from the constrained approximation given standard-normal `z`.
    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        let u = self.correction.krige(&self.factor.sample_from_standard(z));
        self.mode.iter().zip(&u).map(|(m, d)| m + d).collect()
    }
}

/// Outcome of one Laplace evaluation at θ.
#[derive(Debug, Clone)]
pub struct LaplaceEvaluation {
    pub log_posterior: f64,
    pub approx: GaussianApprox,
}

/// Precomputed patterns and symbolic factorizations for one model.
///
/// The Newton Hessian is assembled from the dense covariate block, the
/// covariate–random-effect cross terms and per-row pairs of random-effect
/// entries, each scattered into precomputed slots.
#[derive(Debug)]
pub struct Engine<'a> {
    pub model: &'a LatentModel,
    q_symbolic: Arc<Symbolic>,
    h_pattern: SymSparse<f64>,
    h_symbolic: Arc<Symbolic>,
    q_to_h: Vec<usize>,
    dd_slots: Vec<u32>,
    /// `ds_slots[j * k + a]`: slots of `(a, j)` and `(j, a)`.
    ds_slots: Vec<(u32, u32)>,
    ds_columns: Vec<usize>,
    /// Per observation, `(slot_ab, slot_ba, w_a·w_b)` for sparse entry pairs.
    ss_pairs: Vec<Vec<(u32, u32, f64)>>,
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a LatentModel) -> Result<Self> {
        let n = model.dim;
        let k = model.obs.dense.ncols;
        let q0 = model.joint_prior_precision(&vec![0.0; model.n_theta()])?;
        let q_symbolic = Arc::new(Symbolic::analyze(&q0)?);

        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            pairs.extend(q0.row(i).filter(|&(j, _)| j >= i).map(|(j, _)| (i, j)));
        }
        let mut touched = vec![false; n];
        if !model.obs.is_empty() {
            for a in 0..k {
                for b in a..k {
                    pairs.push((a, b));
                }
            }
        }
        for row in &model.obs.sparse {
            for (p, &(ja, _)) in row.iter().enumerate() {
                touched[ja] = true;
                for &(jb, _) in &row[p..] {
                    pairs.push((ja.min(jb), ja.max(jb)));
                }
            }
        }
        let ds_columns: Vec<usize> = (0..n).filter(|&j| touched[j]).collect();
        for &j in &ds_columns {
            for a in 0..k {
                pairs.push((a, j));
            }
        }
        let h_pattern = SymSparse::zeros_with_pattern(n, pairs)?;
        let h_symbolic = Arc::new(Symbolic::analyze(&h_pattern)?);
        let slot = |i: usize, j: usize| -> Result<u32> {
            let s = h_pattern
                .slot(i, j)
                .ok_or_else(|| Error::numerical("entry missing from Hessian pattern"))?;
            u32::try_from(s).map_err(|_| Error::invalid("Hessian pattern too large"))
        };
        let mut q_to_h = Vec::with_capacity(q0.nnz());
        for i in 0..n {
            for (j, _) in q0.row(i) {
                q_to_h.push(slot(i, j)? as usize);
            }
        }
        let mut dd_slots = vec![NONE; k * k];
        if !model.obs.is_empty() {
            for a in 0..k {
                for b in 0..k {
                    dd_slots[a * k + b] = slot(a, b)?;
                }
            }
        }
        let mut ds_slots = vec![(NONE, NONE); n * k];
        for &j in &ds_columns {
            for a in 0..k {
                ds_slots[j * k + a] = (slot(a, j)?, slot(j, a)?);
            }
        }
        let ss_pairs = model
            .obs
            .sparse
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(row.len() * (row.len() + 1) / 2);
                for (p, &(ja, wa)) in row.iter().enumerate() {
                    for &(jb, wb) in &row[p..] {
                        out.push((slot(ja, jb)?, slot(jb, ja)?, wa * wb));
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            q_symbolic,
            h_pattern,
            h_symbolic,
            q_to_h,
            dd_slots,
            ds_slots,
            ds_columns,
            ss_pairs,
        })
    }

    /// Number of nonzeros in the Cholesky factor of the Newton Hessian.
    pub fn hessian_factor_nnz(&self) -> usize {
        self.h_symbolic.nnz_l()
    }

    /// `Q + Bᵀ diag(c) B` on the Hessian pattern.
    pub fn hessian(&self, q: &SymSparse<f64>, c: &[f64]) -> SymSparse<f64> {
        let obs = &self.model.obs;
        let k = obs.dense.ncols;
        let n = self.model.dim;
        let mut h = self.h_pattern.clone();
        let hv = h.values_mut();
        for (s, &v) in self.q_to_h.iter().zip(q.values()) {
            hv[*s] += v;
        }
        if obs.is_empty() {
            return h;
        }
        let mut dd = vec![0.0; k * k];
        let mut ds = vec![0.0; n * k];
        for (r, &cr) in c.iter().enumerate() {
            let xr = obs.dense.row(r);
            for a in 0..k {
                let ca = cr * xr[a];
                if ca != 0.0 {
                    for b in a..k {
                        dd[a * k + b] += ca * xr[b];
                    }
                }
            }
            for &(j, w) in &obs.sparse[r] {
                let cw = cr * w;
                for (d, xa) in ds[j * k..(j + 1) * k].iter_mut().zip(xr) {
                    *d += cw * xa;
                }
            }
            for &(sab, sba, ww) in &self.ss_pairs[r] {
                let v = cr * ww;
                hv[sab as usize] += v;
                if sba != sab {
                    hv[sba as usize] += v;
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                let v = dd[a * k + b];
                hv[self.dd_slots[a * k + b] as usize] += v;
                if a != b {
                    hv[self.dd_slots[b * k + a] as usize] += v;
                }
            }
        }
        for &j in &self.ds_columns {
            for a in 0..k {
                let v = ds[j * k + a];
                let (s1, s2) = self.ds_slots[j * k + a];
                hv[s1 as usize] += v;
                hv[s2 as usize] += v;
            }
        }
        h
    }

    fn objective(&self, q: &SymSparse<f64>, x: &[f64]) -> f64 {
        let m = self.model;
        let ll: f64 = (0..m.obs.len())
            .map(|r| {
                let eta = m.obs.eta_row(r, x);
                match &m.likelihood {
                    super::model::Likelihood::Poisson => m.obs.y[r] * eta - eta.exp(),
                    super::model::Likelihood::Gaussian { precision } => {
                        -0.5 * precision[r] * (m.obs.y[r] - eta).powi(2)
                    }
                }
            })
            .sum();
        ll - 0.5 * q.quad_form(x)
    }

    /// Gradient of the objective and per-row curvature weights.
    fn gradient(&self, q: &SymSparse<f64>, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.model;
        let (g, c): (Vec<f64>, Vec<f64>) = (0..m.obs.len())
            .map(|r| m.likelihood.derivatives(r, m.obs.y[r], m.obs.eta_row(r, x)))
            .unzip();
        let mut grad = m.obs.tr_mul(&g, m.dim);
        for (gi, qi) in grad.iter_mut().zip(q.mul_vec(x)) {
            *gi -= qi;
        }
        (grad, c)
    }

    /// Norm of the gradient projected onto the constraint null space.
    fn projected_norm(&self, grad: &[f64]) -> f64 {
        let cons = &self.model.constraints;
        if cons.is_empty() {
            return grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        }
        let k = cons.len();
        let mut gram = DenseMatrix::zeros(k, k);
        let n = self.model.dim;
        let dense: Vec<Vec<f64>> = cons
            .iter()
            .map(|c| {
                let mut e = vec![0.0; n];
                for &(j, a) in c {
                    e[j] += a;
                }
                e
            })
            .collect();
        for a in 0..k {
            for b in 0..k {
                gram[(a, b)] = dense[a].iter().zip(&dense[b]).map(|(p, q)| p * q).sum();
            }
        }
        let ag: Vec<f64> = dense.iter().map(|d| d.iter().zip(grad).map(|(p, q)| p * q).sum()).collect();
        let lambda = match DenseCholesky::new(&gram) {
            Ok(ch) => ch.solve(&ag),
            Err(_) => vec![0.0; k],
        };
        let mut p = grad.to_vec();
        for (d, l) in dense.iter().zip(&lambda) {
            for (pi, di) in p.iter_mut().zip(d) {
                *pi -= di * l;
            }
        }
        p.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn factor_h(&self, h: &SymSparse<f64>) -> Result<Cholesky<f64>> {
        Cholesky::factor(&self.h_symbolic, h).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot } => {
                Error::numerical(format!("Newton Hessian is not positive definite (pivot {pivot})"))
            }
            other => other,
        })
    }

    /// Constrained Newton iterations from `start` (zero when `None`).
    pub fn gaussian_approx(&self, theta: &[f64], start: Option<&[f64]>) -> Result<GaussianApprox> {
        let q = self.model.joint_prior_precision(theta)?;
        self.gaussian_approx_with(theta, &q, start)
    }

    fn gaussian_approx_with(&self, theta: &[f64], q: &SymSparse<f64>, start: Option<&[f64]>) -> Result<GaussianApprox> {
        let n = self.model.dim;
        let tol_grad = 1e-6 * n as f64;
        let mut x = match start {
            Some(s) if s.len() == n => s.to_vec(),
            Some(_) => return Err(Error::invalid("starting point has the wrong dimension")),
            None => vec![0.0; n],
        };
        // The start must satisfy the constraints; condition it under the prior.
        if !self.model.constraints.is_empty() && start.is_some() {
            let (_, c) = self.gradient(q, &x);
            let fac = self.factor_h(&self.hessian(q, &c))?;
            x = constrain(&x, &fac, &self.model.constraints)?.0;
        }
        let mut f = self.objective(q, &x);
        if !f.is_finite() {
            x = vec![0.0; n];
            f = self.objective(q, &x);
        }
        let mut trace = vec![f];
        let mut iterations = 0;
        let mut converged = false;
        let mut last_gain = f64::INFINITY;
        while iterations < MAX_NEWTON_ITERATIONS {
            let (grad, c) = self.gradient(q, &x);
            if self.projected_norm(&grad) < tol_grad {
                converged = true;
                break;
            }
            let fac = self.factor_h(&self.hessian(q, &c))?;
            let step = fac.solve(&grad);
            let target: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            let (target, _) = constrain(&target, &fac, &self.model.constraints)?;
            let dir: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            iterations += 1;
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, d)| xi + alpha * d).collect();
                let fc = self.objective(q, &cand);
                if fc.is_finite() && fc >= f {
                    accepted = Some((cand, fc));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((cand, fc)) = accepted else {
                // No ascent left at working precision.
                converged = true;
                break;
            };
            last_gain = fc - f;
            x = cand;
            f = fc;
            trace.push(f);
            if last_gain < 1e-8 {
                converged = true;
                break;
            }
        }
        let (grad, c) = self.gradient(q, &x);
        let gradient_norm = self.projected_norm(&grad);
        if !converged {
            return Err(Error::NoConvergence(format!(
                "Newton iterations at θ = {theta:?}: {iterations} iterations, last gain {last_gain:.3e}, gradient norm {gradient_norm:.3e}"
            )));
        }
        let factor = self.factor_h(&self.hessian(q, &c))?;
        let correction = constraint_correction(&factor, &self.model.constraints)?;
        let log_det = factor.log_det();
        Ok(GaussianApprox {
            theta: theta.to_vec(),
            mode: x,
            factor,
            log_det,
            correction,
            iterations,
            gradient_norm,
            objective: f,
            objective_trace: trace,
        })
    }

    /// Gaussian approximation at a given latent point (no Newton iterations).
    pub fn approx_at(&self, theta: &[f64], x: &[f64]) -> Result<GaussianApprox> {
        let q = self.model.joint_prior_precision(theta)?;
        let (grad, c) = self.gradient(&q, x);
        let factor = self.factor_h(&self.hessian(&q, &c))?;
        let correction = constraint_correction(&factor, &self.model.constraints)?;
        Ok(GaussianApprox {
            theta: theta.to_vec(),
            mode: x.to_vec(),
            log_det: factor.log_det(),
            factor,
            correction,
            iterations: 0,
            gradient_norm: self.projected_norm(&grad),
            objective: self.objective(&q, x),
            objective_trace: Vec::new(),
        })
    }

    /// Laplace approximation of `log p(θ | y)` up to a constant.
    pub fn evaluate(&self, theta: &[f64], start: Option<&[f64]>) -> Result<LaplaceEvaluation> {
        let m = self.model;
        let q = m.joint_prior_precision(theta)?;
        let q_fac = Cholesky::factor(&self.q_symbolic, &q).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot } => {
                Error::numerical(format!("prior precision is not positive definite at θ = {theta:?} (pivot {pivot})"))
            }
            other => other,
        })?;
        let q_corr = constraint_correction(&q_fac, &m.constraints)?;
        let approx = self.gaussian_approx_with(theta, &q, start)?;
        let n = m.dim as f64;
        let k = m.n_constraints() as f64;
        let ln2pi = (2.0 * PI).ln();
        let x = &approx.mode;
        let log_prior_x =
            0.5 * q_fac.log_det() - 0.5 * n * ln2pi - 0.5 * q.quad_form(x) + 0.5 * q_corr.log_det() + 0.5 * k * ln2pi;
        let log_post_x = 0.5 * approx.log_det - 0.5 * (n - k) * ln2pi + 0.5 * approx.correction.log_det();
        let log_posterior = m.log_prior(theta) + log_prior_x + m.log_likelihood(x) - log_post_x;
        if !log_posterior.is_finite() {
            return Err(Error::numerical(format!("non-finite Laplace marginal at θ = {theta:?}")));
        }
        Ok(LaplaceEvaluation { log_posterior, approx })
    }
}

/// Constrained Newton mode and Hessian factor of `p(x | y, θ)`.
pub fn gaussian_approx(model: &LatentModel, theta: &[f64]) -> Result<GaussianApprox> {
    Engine::new(model)?.gaussian_approx(theta, None)
}

/// Laplace approximation of `log π(θ | y)` up to an additive constant.
pub fn log_marginal(model: &LatentModel, theta: &[f64]) -> Result<f64> {
    Ok(Engine::new(model)?.evaluate(theta, None)?.log_posterior)
}
