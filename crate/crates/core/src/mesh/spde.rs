//! SPDE (α = 2) precision matrices and the matching Matérn correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymSparse;
use crate::mesh::FemMatrices;
use crate::scalar::Real;

/// `θ₁ = log τ`, `θ₂ = log κ`; smoothness ν = 1 in two dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeParams {
    pub theta1: f64,
    pub theta2: f64,
}

impl SpdeParams {
    pub fn new(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }

    pub fn tau(&self) -> f64 {
        self.theta1.exp()
    }

    pub fn kappa(&self) -> f64 {
        self.theta2.exp()
    }

    /// Parameters giving practical range `rho` and marginal variance `sigma2`.
    pub fn from_range_variance(rho: f64, sigma2: f64) -> Self {
        let kappa = 8f64.sqrt() / rho;
        let tau2 = 1.0 / (4.0 * std::f64::consts::PI * sigma2 * kappa * kappa);
        Self::new(0.5 * tau2.ln(), kappa.ln())
    }
}

/// Practical range `√8/κ` and marginal variance `1/(4πτ²κ²)`.
pub fn range_variance(params: SpdeParams) -> (f64, f64) {
    let rho = 8f64.sqrt() / params.theta2.exp();
    let sigma2 = 1.0
        / (4.0 * std::f64::consts::PI * (2.0 * params.theta1).exp() * (2.0 * params.theta2).exp());
    (rho, sigma2)
}

/// The three fixed matrices `C̃`, `G`, `G C̃⁻¹ G` on one shared pattern.
///
/// Building the precision for new parameters is then a single pass over the values.
#[derive(Debug, Clone)]
pub struct SpdeStructure<T> {
    pattern: SymSparse<T>,
    k0: Vec<T>,
    k1: Vec<T>,
    k2: Vec<T>,
}

impl<T: Real> SpdeStructure<T> {
    pub fn new(fem: &FemMatrices<T>) -> Result<Self> {
        let n = fem.c_lumped.len();
        let g = &fem.g;
        if g.dim() != n {
            return Err(Error::invalid("mass and stiffness dimensions differ"));
        }
        let mut rows: Vec<BTreeMap<usize, T>> = vec![BTreeMap::new(); n];
        for (i, row) in rows.iter_mut().enumerate() {
            row.insert(i, T::zero());
            for (k, gik) in g.row(i) {
                let scaled = gik / fem.c_lumped[k];
                for (j, gkj) in g.row(k) {
                    if j >= i {
                        *row.entry(j).or_insert_with(T::zero) += scaled * gkj;
                    }
                }
            }
        }
        let triplets = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |(&j, &v)| (i, j, v)));
        let k2_mat = SymSparse::from_triplets(n, triplets)?;
        let k2 = k2_mat.values().to_vec();
        let mut k0 = vec![T::zero(); k2.len()];
        let mut k1 = vec![T::zero(); k2.len()];
        for i in 0..n {
            let s = k2_mat.slot(i, i).expect("diagonal present");
            k0[s] = fem.c_lumped[i];
            for (j, v) in g.row(i) {
                let s = k2_mat
                    .slot(i, j)
                    .ok_or_else(|| Error::numerical("stiffness entry outside the precision pattern"))?;
                k1[s] = v;
            }
        }
        Ok(Self {
            pattern: k2_mat,
            k0,
            k1,
            k2,
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    /// `τ²(κ⁴C̃ + 2κ²G + GC̃⁻¹G)`.
    pub fn precision(&self, params: SpdeParams) -> Result<SymSparse<T>> {
        if !params.theta1.is_finite() || !params.theta2.is_finite() {
            return Err(Error::invalid(format!(
                "SPDE parameters must be finite, got θ₁ = {}, θ₂ = {}",
                params.theta1, params.theta2
            )));
        }
        let kappa = params.kappa();
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("SPDE κ must be positive, got {kappa}")));
        }
        let tau2 = T::lit(params.tau().powi(2));
        let k2 = T::lit(kappa * kappa);
        let k4 = k2 * k2;
        let two = T::lit(2.0);
        let mut q = self.pattern.clone();
        for (s, v) in q.values_mut().iter_mut().enumerate() {
            *v = tau2 * (k4 * self.k0[s] + two * k2 * self.k1[s] + self.k2[s]);
        }
        Ok(q)
    }
}

pub fn spde_precision<T: Real>(fem: &FemMatrices<T>, params: SpdeParams) -> Result<SymSparse<T>> {
    SpdeStructure::new(fem)?.precision(params)
}

/// `K_ν(x)` for `x > 0` from `∫₀^∞ exp(−x cosh t) cosh(νt) dt` by the trapezoid rule.
///
/// The integrand is analytic and decays double-exponentially, so a fixed step
/// of 0.05 already gives full double precision.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x > 700.0 {
        return 0.0;
    }
    let h = 0.05;
    let mut sum = 0.5 * (-x).exp();
    let mut k = 1;
    loop {
        let t = k as f64 * h;
        let term = (-x * t.cosh()).exp() * (nu * t).cosh();
        sum += term;
        if term < 1e-18 * sum || k > 100_000 {
            break;
        }
        k += 1;
    }
    sum * h
}

/// Matérn correlation `2^{1−ν}/Γ(ν) (κd)^ν K_ν(κd)`, equal to 1 at `d = 0`.
pub fn matern_correlation(d: f64, kappa: f64, nu: f64) -> f64 {
    let x = kappa * d;
    if x <= 0.0 {
        return 1.0;
    }
    let log_c = (1.0 - nu) * std::f64::consts::LN_2 - statrs::function::gamma::ln_gamma(nu);
    let r = (log_c + nu * x.ln()).exp() * bessel_k(nu, x);
    r.min(1.0)
}
