//! Hyperparameter priors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::log_gamma_prior_logdensity;

/// Prior on one hyperparameter, expressed on its internal (log) scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HyperPrior {
    /// Gamma(a, b) on `exp(θ)`, transformed to θ.
    LogGamma { a: f64, b: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl HyperPrior {
    pub fn log_density(&self, theta: f64) -> f64 {
        match *self {
            HyperPrior::LogGamma { a, b } => log_gamma_prior_logdensity(theta, a, b),
            HyperPrior::Gaussian { mean, sd } => {
                let z = (theta - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    /// Location of the prior density maximum on the θ scale.
    pub fn mode(&self) -> f64 {
        match *self {
            HyperPrior::LogGamma { a, b } => (a / b).ln(),
            HyperPrior::Gaussian { mean, .. } => mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            HyperPrior::LogGamma { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            HyperPrior::Gaussian { mean, sd } => sd > 0.0 && mean.is_finite() && sd.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid hyperprior {self:?}")))
        }
    }
}

/// Priors for the charging-demand model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub fixed_precision: f64,
    pub rw2: HyperPrior,
    pub icar: HyperPrior,
    pub spde_theta1: HyperPrior,
    pub spde_theta2: HyperPrior,
    /// Added to the diagonal of intrinsic blocks.
    pub jitter: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            fixed_precision: 0.001,
            rw2: HyperPrior::LogGamma { a: 1.0, b: 5e-5 },
            icar: HyperPrior::LogGamma { a: 1.0, b: 5e-5 },
            spde_theta1: HyperPrior::Gaussian { mean: 0.0, sd: 10.0 },
            spde_theta2: HyperPrior::Gaussian { mean: 0.0, sd: 10.0 },
            jitter: 1e-5,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_precision > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::invalid("fixed-effect precision must be positive and jitter non-negative"));
        }
        for p in [self.rw2, self.icar, self.spde_theta1, self.spde_theta2] {
            p.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_gamma_mode() {
        let p = HyperPrior::LogGamma { a: 1.0, b: 5e-5 };
        assert!((p.mode() - 9.903_487_552_536_127).abs() < 1e-12);
        let h = 1e-4;
        let d = (p.log_density(p.mode() + h) - p.log_density(p.mode() - h)) / (2.0 * h);
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn gaussian_density_normalised_value() {
        let p = HyperPrior::Gaussian { mean: 0.0, sd: 10.0 };
        let expected = -(10.0f64).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((p.log_density(0.0) - expected).abs() < 1e-14);
        assert!(PriorSpec::default().validate().is_ok());
        assert!(HyperPrior::Gaussian { mean: 0.0, sd: 0.0 }.validate().is_err());
    }
}
