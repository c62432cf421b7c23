//! DIC and WAIC from latent draws of the grid mixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::grid::PosteriorGrid;
use super::laplace::Engine;
use super::model::{LatentModel, Likelihood};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_waic: f64,
    /// `log p(y | x̄)` at the posterior mean.
    pub log_lik_at_mean: f64,
    pub mean_log_lik: f64,
    pub draws: usize,
}

/// Streaming per-row log-mean-exp and variance of pointwise log-likelihoods.
#[derive(Debug, Clone)]
pub struct PointwiseAccumulator {
    count: usize,
    max: Vec<f64>,
    /// `Σ exp(ℓ − max)`.
    scaled_sum: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PointwiseAccumulator {
    pub fn new(rows: usize) -> Self {
        Self {
            count: 0,
            max: vec![f64::NEG_INFINITY; rows],
            scaled_sum: vec![0.0; rows],
            mean: vec![0.0; rows],
            m2: vec![0.0; rows],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds one draw of pointwise log-likelihoods.
    pub fn push(&mut self, loglik: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for (r, &l) in loglik.iter().enumerate() {
            if l > self.max[r] {
                self.scaled_sum[r] = self.scaled_sum[r] * (self.max[r] - l).exp() + 1.0;
                self.max[r] = l;
            } else {
                self.scaled_sum[r] += (l - self.max[r]).exp();
            }
            let delta = l - self.mean[r];
            self.mean[r] += delta / n;
            self.m2[r] += delta * (l - self.mean[r]);
        }
    }

    /// Combines two accumulators over disjoint draws.
    pub fn merge(&mut self, other: &PointwiseAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for r in 0..self.max.len() {
            let m = self.max[r].max(other.max[r]);
            self.scaled_sum[r] =
                self.scaled_sum[r] * (self.max[r] - m).exp() + other.scaled_sum[r] * (other.max[r] - m).exp();
            self.max[r] = m;
            let delta = other.mean[r] - self.mean[r];
            self.mean[r] += delta * nb / n;
            self.m2[r] += other.m2[r] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Criteria given the pointwise log-likelihood at the posterior mean.
    pub fn finish(&self, loglik_at_mean: &[f64]) -> Result<InformationCriteria> {
        if self.count < 2 {
            return Err(Error::invalid("information criteria need at least two draws"));
        }
        let s = self.count as f64;
        let lppd: f64 = self
            .max
            .iter()
            .zip(&self.scaled_sum)
            .map(|(m, z)| m + z.ln() - s.ln())
            .sum();
        let p_waic: f64 = self.m2.iter().map(|v| v / (s - 1.0)).sum();
        let mean_log_lik: f64 = self.mean.iter().sum();
        let log_lik_at_mean: f64 = loglik_at_mean.iter().sum();
        let p_d = 2.0 * (log_lik_at_mean - mean_log_lik);
        Ok(InformationCriteria {
            dic: -2.0 * log_lik_at_mean + 2.0 * p_d,
            p_d,
            waic: -2.0 * (lppd - p_waic),
            p_waic,
            log_lik_at_mean,
            mean_log_lik,
            draws: self.count,
        })
    }
}

fn pointwise(likelihood: &Likelihood, y: &[f64], eta: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(eta)
        .enumerate()
        .map(|(r, (&yr, &e))| likelihood.log_density(r, yr, e))
        .collect()
}

/// Criteria from explicit linear-predictor draws and the predictor at the posterior mean.
pub fn criteria_from_draws(
    likelihood: &Likelihood,
    y: &[f64],
    eta_draws: &[Vec<f64>],
    eta_at_mean: &[f64],
) -> Result<InformationCriteria> {
    let mut acc = PointwiseAccumulator::new(y.len());
    for eta in eta_draws {
        if eta.len() != y.len() {
            return Err(Error::invalid("draw length differs from the number of observations"));
        }
        acc.push(&pointwise(likelihood, y, eta));
    }
    acc.finish(&pointwise(likelihood, y, eta_at_mean))
}

/// Draws `draws` latent vectors from the grid mixture and scores them.
///
/// Component indices come from one seeded stream; the draws of component `g`
/// use their own stream, so results do not depend on thread scheduling.
pub fn information_criteria(
    model: &LatentModel,
    grid: &PosteriorGrid,
    draws: usize,
    seed: u64,
) -> Result<InformationCriteria> {
    if draws < 2 {
        return Err(Error::invalid("information criteria need at least two draws"));
    }
    let engine = Engine::new(model)?;
    let weights = grid.weights();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..draws {
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        for (g, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && w > 0.0 {
                pick = g;
                break;
            }
        }
        counts[pick] += 1;
    }
    let y = &model.obs.y;
    let partial = counts
        .par_iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(g, &c)| -> Result<PointwiseAccumulator> {
            let point = &grid.points[g];
            let approx = engine.approx_at(&point.theta, &point.mode)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(g as u64 + 1);
            let mut acc = PointwiseAccumulator::new(y.len());
            for _ in 0..c {
                let z: Vec<f64> = (0..model.dim).map(|_| rng.sample(StandardNormal)).collect();
                let x = approx.sample(&z);
                acc.push(&pointwise(&model.likelihood, y, &model.obs.eta(&x)));
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = PointwiseAccumulator::new(y.len());
    for p in &partial {
        acc.merge(p);
    }
    let mut x_bar = vec![0.0; model.dim];
    for (_, p) in grid.active() {
        for (xb, m) in x_bar.iter_mut().zip(&p.mode) {
            *xb += p.weight / total * m;
        }
    }
    acc.finish(&pointwise(&model.likelihood, y, &model.obs.eta(&x_bar)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_poisson() {
        let eta = vec![2f64.ln()];
        let c = criteria_from_draws(&Likelihood::Poisson, &[2.0], &vec![eta.clone(); 40], &eta).unwrap();
        let expected = -2.0 * (-2.0 + 2.0 * 2f64.ln() - 2f64.ln());
        assert!((c.dic - expected).abs() < 1e-12);
        assert!((c.dic - 2.6137).abs() < 1e-4);
        assert!(c.p_d.abs() < 1e-12);
        assert!((c.waic - expected).abs() < 1e-12);
    }

    #[test]
    fn merge_matches_sequential() {
        let draws: Vec<Vec<f64>> = (0..9).map(|s| vec![-(s as f64) * 0.3, (s as f64).sin()]).collect();
        let mut all = PointwiseAccumulator::new(2);
        draws.iter().for_each(|d| all.push(d));
        let mut a = PointwiseAccumulator::new(2);
        let mut b = PointwiseAccumulator::new(2);
        draws[..4].iter().for_each(|d| a.push(d));
        draws[4..].iter().for_each(|d| b.push(d));
        a.merge(&b);
        let fa = all.finish(&[0.0, 0.0]).unwrap();
        let fb = a.finish(&[0.0, 0.0]).unwrap();
        assert!((fa.waic - fb.waic).abs() < 1e-12 && (fa.p_waic - fb.p_waic).abs() < 1e-12);
        assert!((fa.dic - fb.dic).abs() < 1e-12);
        assert!(fa.p_waic >= 0.0);
    }
}
