//! Posterior summaries from the Gaussian mixture over the grid.

use serde::{Deserialize, Serialize};

use super::criteria::InformationCriteria;
use super::grid::PosteriorGrid;
use super::model::{ChargeModel, SpatialKind};

pub const Z975: f64 = 1.959_963_984_540_054;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(X ≤ x)` for a Gaussian mixture; zero-SD components are point masses.
pub fn mixture_cdf(weights: &[f64], means: &[f64], sds: &[f64], x: f64) -> f64 {
    weights
        .iter()
        .zip(means)
        .zip(sds)
        .map(|((&w, &m), &s)| {
            let c = if s > 0.0 {
                normal_cdf((x - m) / s)
            } else if x >= m {
                1.0
            } else {
                0.0
            };
            w * c
        })
        .sum()
}

/// Quantile of a Gaussian mixture by bisection on its CDF.
pub fn mixture_quantile(weights: &[f64], means: &[f64], sds: &[f64], p: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let target = p * total;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ((&w, &m), &s) in weights.iter().zip(means).zip(sds) {
        if w > 0.0 {
            lo = lo.min(m - 12.0 * s);
            hi = hi.max(m + 12.0 * s);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return f64::NAN;
    }
    if lo == hi {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mixture_cdf(weights, means, sds, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mean, SD and central 95% interval of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Moments and quantiles of a mixture of Gaussians with the given weights.
pub fn mixture_marginal(name: &str, weights: &[f64], means: &[f64], sds: &[f64]) -> Marginal {
    let total: f64 = weights.iter().sum();
    let mean = weights.iter().zip(means).map(|(w, m)| w * m).sum::<f64>() / total;
    let second = weights
        .iter()
        .zip(means)
        .zip(sds)
        .map(|((w, m), s)| w * (s * s + (m - mean).powi(2)))
        .sum::<f64>()
        / total;
    Marginal {
        name: name.to_string(),
        mean,
        sd: second.max(0.0).sqrt(),
        q025: mixture_quantile(weights, means, sds, 0.025),
        q975: mixture_quantile(weights, means, sds, 0.975),
    }
}

/// Per-element mixture mean and SD of the latent field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Mixture moments of every latent element.
pub fn latent_moments(grid: &PosteriorGrid) -> LatentMoments {
    let n = grid.best().mode.len();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for (_, p) in grid.active() {
        for i in 0..n {
            mean[i] += p.weight * p.mode[i];
            second[i] += p.weight * (p.latent_var[i] + p.mode[i] * p.mode[i]);
        }
    }
    let total: f64 = grid.active().map(|(_, p)| p.weight).sum();
    let sd = mean
        .iter_mut()
        .zip(&second)
        .map(|(m, s)| {
            *m /= total;
            (s / total - *m * *m).max(0.0).sqrt()
        })
        .collect();
    LatentMoments { mean, sd }
}

/// Mixture marginal of latent element `i`.
pub fn latent_marginal(grid: &PosteriorGrid, i: usize, name: &str) -> Marginal {
    let (mut w, mut m, mut s) = (Vec::new(), Vec::new(), Vec::new());
    for (_, p) in grid.active() {
        w.push(p.weight);
        m.push(p.mode[i]);
        s.push(p.latent_var[i].max(0.0).sqrt());
    }
    mixture_marginal(name, &w, &m, &s)
}

/// Summary of `exp(offset + c·θ)` (or of `c·θ` when `log_scale` is false)
/// from the grid weights, with normal quantiles of the linear combination.
fn hyper_marginal(grid: &PosteriorGrid, name: &str, coef: &[f64], offset: f64, exponentiate: bool) -> Marginal {
    let lin: Vec<(f64, f64)> = grid
        .active()
        .map(|(_, p)| (p.weight, offset + coef.iter().zip(&p.theta).map(|(c, t)| c * t).sum::<f64>()))
        .collect();
    let total: f64 = lin.iter().map(|(w, _)| w).sum();
    let moments = |f: &dyn Fn(f64) -> f64| {
        let mean = lin.iter().map(|&(w, v)| w * f(v)).sum::<f64>() / total;
        let var = lin.iter().map(|&(w, v)| w * (f(v) - mean).powi(2)).sum::<f64>() / total;
        (mean, var.max(0.0).sqrt())
    };
    let (lm, ls) = moments(&|v| v);
    if exponentiate {
        let (mean, sd) = moments(&f64::exp);
        let (a, b) = ((lm - Z975 * ls).exp(), (lm + Z975 * ls).exp());
        Marginal {
            name: name.to_string(),
            mean,
            sd,
            q025: a.min(b),
            q975: a.max(b),
        }
    } else {
        Marginal {
            name: name.to_string(),
            mean: lm,
            sd: ls,
            q025: lm - Z975 * ls,
            q975: lm + Z975 * ls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub index: usize,
    pub label: String,
    pub mean: f64,
    pub sd: f64,
}

/// Posterior summary of a fitted charging model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub spatial: SpatialKind,
    pub fixed: Vec<Marginal>,
    pub hyperparameters: Vec<Marginal>,
    /// Precisions, SPDE range (metres) and marginal variance.
    pub derived: Vec<Marginal>,
    pub time: Vec<EffectSummary>,
    pub space: Vec<EffectSummary>,
    pub theta_mode: Vec<f64>,
    pub grid_points: usize,
    pub criteria: Option<InformationCriteria>,
}

/// Fixed-effect, hyperparameter and latent-effect summaries.
pub fn marginals(model: &ChargeModel, grid: &PosteriorGrid) -> PosteriorSummary {
    let fixed = model
        .column_names
        .iter()
        .enumerate()
        .map(|(i, name)| latent_marginal(grid, i, name))
        .collect();
    let d = grid.theta_names.len();
    let unit = |k: usize| -> Vec<f64> { (0..d).map(|i| f64::from(u8::from(i == k))).collect() };
    let hyperparameters = grid
        .theta_names
        .iter()
        .enumerate()
        .map(|(k, name)| hyper_marginal(grid, name, &unit(k), 0.0, false))
        .collect();
    let mut derived = vec![hyper_marginal(grid, "precision_time", &unit(0), 0.0, true)];
    match model.spatial {
        SpatialKind::Icar => derived.push(hyper_marginal(grid, "precision_icar", &unit(1), 0.0, true)),
        SpatialKind::Spde => {
            derived.push(hyper_marginal(grid, "range_m", &[0.0, 0.0, -1.0], 0.5 * 8f64.ln(), true));
            derived.push(hyper_marginal(
                grid,
                "variance",
                &[0.0, -2.0, -2.0],
                -(4.0 * std::f64::consts::PI).ln(),
                true,
            ));
        }
    }
    let moments = latent_moments(grid);
    let t0 = model.time_offset();
    let time = (0..model.n_days)
        .map(|t| EffectSummary {
            index: t,
            label: model.calendar[t].to_string(),
            mean: moments.mean[t0 + t],
            sd: moments.sd[t0 + t],
        })
        .collect();
    let s0 = model.space_offset();
    let space = (0..model.n_space())
        .map(|j| EffectSummary {
            index: j,
            label: match model.spatial {
                SpatialKind::Icar => model.cpids[j].clone(),
                SpatialKind::Spde => format!("vertex_{j}"),
            },
            mean: moments.mean[s0 + j],
            sd: moments.sd[s0 + j],
        })
        .collect();
    PosteriorSummary {
        spatial: model.spatial,
        fixed,
        hyperparameters,
        derived,
        time,
        space,
        theta_mode: grid.theta_mode.clone(),
        grid_points: grid.points.len(),
        criteria: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_quantiles() {
        let m = mixture_marginal("x", &[1.0], &[0.3], &[2.0]);
        assert!((m.q025 - (0.3 - Z975 * 2.0)).abs() < 1e-9);
        assert!((m.q975 - (0.3 + Z975 * 2.0)).abs() < 1e-9);
        assert!((m.sd - 2.0).abs() < 1e-14);
    }

    #[test]
    fn point_masses_and_mixture_mean() {
        let w = [0.2, 0.5, 0.3];
        let mu = [-1.0, 0.5, 4.0];
        let m = mixture_marginal("x", &w, &mu, &[0.0, 0.0, 0.0]);
        assert!((m.mean - (0.2 * -1.0 + 0.5 * 0.5 + 0.3 * 4.0)).abs() < 1e-15);
        assert_eq!(mixture_quantile(&w, &mu, &[0.0; 3], 0.5), 0.5);
        assert!((mixture_cdf(&w, &mu, &[1.0; 3], 100.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bimodal_median_is_between_modes() {
        let q = mixture_quantile(&[0.5, 0.5], &[-3.0, 3.0], &[1.0, 1.0], 0.5);
        assert!(q.abs() < 1e-9);
    }
}
