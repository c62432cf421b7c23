//! Hyperparameter mode search and integration grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, DenseMatrix};

use super::laplace::Engine;
use super::model::LatentModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    /// Simplex diameter at which the mode search stops.
    pub simplex_tol: f64,
    pub max_evaluations: usize,
    pub initial_step: f64,
    /// Central-difference step for the curvature at the mode.
    pub fd_step: f64,
    /// Grid half-width in standard deviations.
    pub half_width: f64,
    pub points_per_axis: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            simplex_tol: 1e-4,
            max_evaluations: 500,
            initial_step: 1.0,
            fd_step: 0.05,
            half_width: 2.5,
            points_per_axis: 5,
        }
    }
}

impl GridOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.simplex_tol > 0.0)
            || !(self.initial_step > 0.0)
            || !(self.fd_step > 0.0)
            || !(self.half_width >= 0.0)
            || self.points_per_axis == 0
            || self.max_evaluations == 0
        {
            return Err(Error::invalid(format!("invalid grid options {self:?}")));
        }
        Ok(())
    }
}

/// One integration point over the hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub theta: Vec<f64>,
    /// Whitened coordinates of the point.
    pub z: Vec<f64>,
    /// `None` when the Laplace evaluation failed; such points carry zero weight.
    pub log_posterior: Option<f64>,
    pub weight: f64,
    /// Conditional mode of the latent field.
    pub mode: Vec<f64>,
    /// Conditional marginal variances of the latent field.
    pub latent_var: Vec<f64>,
}

/// Grid over θ with the information used to lay it out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub theta_names: Vec<String>,
    pub theta_mode: Vec<f64>,
    /// Negative Hessian of the log posterior at the mode.
    pub neg_hessian: DenseMatrix<f64>,
    /// Set when the curvature had to be regularised to be positive definite.
    pub hessian_adjusted: bool,
    pub evaluations: usize,
    pub points: Vec<HyperPoint>,
}

impl PosteriorGrid {
    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.weight).collect()
    }

    /// Point with the largest weight.
    pub fn best(&self) -> &HyperPoint {
        self.points
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .expect("grid is non-empty")
    }

    /// Points carrying weight, in grid order.
    pub fn active(&self) -> impl Iterator<Item = (usize, &HyperPoint)> {
        self.points.iter().enumerate().filter(|(_, p)| p.weight > 0.0)
    }
}

/// Nelder–Mead maximisation; returns the best point, its value and the evaluation count.
pub fn nelder_mead<F>(f: F, start: &[f64], step: f64, tol: f64, max_evaluations: usize) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut f = f;
    let d = start.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    if d == 0 {
        let v = -eval(start, &mut evals);
        return Ok((start.to_vec(), v, evals));
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(start, &mut evals);
    if !v0.is_finite() {
        return Err(Error::numerical(format!("log posterior is not finite at the starting point {start:?}")));
    }
    simplex.push((start.to_vec(), v0));
    for i in 0..d {
        let mut x = start.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < tol {
            let (x, v) = simplex.swap_remove(0);
            return Ok((x, -v, evals));
        }
        if evals >= max_evaluations {
            return Err(Error::NoConvergence(format!(
                "hyperparameter simplex search did not converge in {max_evaluations} evaluations (diameter {diameter:.2e}, best θ = {:?})",
                simplex[0].0
            )));
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(0.5);
            let v = eval(&x, &mut evals);
            (x, v)
        } else {
            let x = along(-0.5);
            let v = eval(&x, &mut evals);
            (x, v)
        };
        if fc < worst.1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best.iter().zip(&item.0).map(|(b, xi)| b + 0.5 * (xi - b)).collect();
            let v = eval(&x, &mut evals);
            *item = (x, v);
        }
    }
}

/// Central-difference Hessian of `f` at `x` with step `h`, evaluated in parallel.
fn fd_hessian<F>(f: &F, x: &[f64], fx: f64, h: f64) -> Result<DenseMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let d = x.len();
    let mut offsets: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut p = x.to_vec();
            p[i] += s * h;
            offsets.push(p);
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut p = x.to_vec();
                p[i] += si * h;
                p[j] += sj * h;
                offsets.push(p);
            }
        }
    }
    let values = offsets.par_iter().map(|p| f(p)).collect::<Result<Vec<f64>>>()?;
    let mut hess = DenseMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (values[2 * i] - 2.0 * fx + values[2 * i + 1]) / (h * h);
    }
    let mut pos = 2 * d;
    for i in 0..d {
        for j in i + 1..d {
            let v = &values[pos..pos + 4];
            let hij = (v[0] - v[1] - v[2] + v[3]) / (4.0 * h * h);
            hess[(i, j)] = hij;
            hess[(j, i)] = hij;
            pos += 4;
        }
    }
    Ok(hess)
}

/// Mode search, curvature and the whitened grid of Laplace evaluations.
pub fn explore_grid(model: &LatentModel, theta_init: &[f64], options: &GridOptions) -> Result<PosteriorGrid> {
    options.validate()?;
    let d = model.n_theta();
    if d > 3 {
        return Err(Error::invalid(format!("grid exploration supports up to 3 hyperparameters, got {d}")));
    }
    if theta_init.len() != d {
        return Err(Error::invalid(format!("θ_init has {} entries, expected {d}", theta_init.len())));
    }
    let engine = Engine::new(model)?;
    let mut warm: Option<Vec<f64>> = None;
    let objective = |theta: &[f64]| -> f64 {
        match engine.evaluate(theta, warm.as_deref()) {
            Ok(ev) => {
                warm = Some(ev.approx.mode);
                ev.log_posterior
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let (theta_mode, _, evaluations) = nelder_mead(
        objective,
        theta_init,
        options.initial_step,
        options.simplex_tol,
        options.max_evaluations,
    )?;
    let center = engine.evaluate(&theta_mode, None)?;
    let x_center = center.approx.mode.clone();
    let f = |theta: &[f64]| -> Result<f64> { Ok(engine.evaluate(theta, Some(&x_center))?.log_posterior) };
    let hess = fd_hessian(&f, &theta_mode, center.log_posterior, options.fd_step)?;

    let mut neg = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            neg[(i, j)] = -hess[(i, j)];
        }
    }
    let (eigvals, eigvecs) = symmetric_eigen(&neg);
    let mut hessian_adjusted = false;
    let scales: Vec<f64> = eigvals
        .iter()
        .map(|&l| {
            if l > 1e-8 && l.is_finite() {
                1.0 / l.sqrt()
            } else {
                hessian_adjusted = true;
                1.0
            }
        })
        .collect();

    let m = options.points_per_axis;
    let axis: Vec<f64> = if m == 1 {
        vec![0.0]
    } else {
        (0..m)
            .map(|i| -options.half_width + 2.0 * options.half_width * i as f64 / (m - 1) as f64)
            .collect()
    };
    let n_points = m.pow(d as u32);
    let zs: Vec<Vec<f64>> = (0..n_points)
        .map(|mut idx| {
            let mut z = vec![0.0; d];
            for k in (0..d).rev() {
                z[k] = axis[idx % m];
                idx /= m;
            }
            z
        })
        .collect();
    let thetas: Vec<Vec<f64>> = zs
        .iter()
        .map(|z| {
            (0..d)
                .map(|i| theta_mode[i] + (0..d).map(|k| eigvecs[(i, k)] * scales[k] * z[k]).sum::<f64>())
                .collect()
        })
        .collect();
    let evaluated: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = thetas
        .par_iter()
        .zip(&zs)
        .map(|(theta, z)| {
            let ev = if z.iter().all(|&v| v == 0.0) {
                Ok(center.clone())
            } else {
                engine.evaluate(theta, Some(&x_center))
            };
            ev.ok().map(|ev| {
                let var = ev.approx.latent_variance();
                (ev.log_posterior, ev.approx.mode, var)
            })
        })
        .collect();
    let max_lp = evaluated
        .iter()
        .flatten()
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_lp.is_finite() {
        return Err(Error::numerical("no grid point could be evaluated"));
    }
    let total: f64 = evaluated.iter().flatten().map(|e| (e.0 - max_lp).exp()).sum();
    let points = thetas
        .into_iter()
        .zip(zs)
        .zip(evaluated)
        .map(|((theta, z), ev)| match ev {
            Some((lp, mode, latent_var)) => HyperPoint {
                theta,
                z,
                log_posterior: Some(lp),
                weight: (lp - max_lp).exp() / total,
                mode,
                latent_var,
            },
            None => HyperPoint {
                theta,
                z,
                log_posterior: None,
                weight: 0.0,
                mode: Vec::new(),
                latent_var: Vec::new(),
            },
        })
        .collect();
    Ok(PosteriorGrid {
        theta_names: model.hyper.iter().map(|h| h.name.clone()).collect(),
        theta_mode,
        neg_hessian: neg,
        hessian_adjusted,
        evaluations,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_quadratic_maximum() {
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2) - 0.5 * x[0] * x[1];
        let (x, _, evals) = nelder_mead(f, &[0.0, 0.0], 1.0, 1e-7, 2000).unwrap();
        // Stationary point of the quadratic.
        // 2x + y/2 = 2, x/2 + 6y = −12.
        let det = 2.0 * 6.0 - 0.25;
        let ex = (2.0 * 6.0 + 0.5 * 12.0) / det;
        let ey = (2.0 * -12.0 - 0.5 * 2.0) / det;
        assert!((x[0] - ex).abs() < 1e-5 && (x[1] - ey).abs() < 1e-5, "{x:?} vs ({ex}, {ey})");
        assert!(evals < 2000);
    }

    #[test]
    fn nelder_mead_reports_budget_exhaustion() {
        let f = |x: &[f64]| -(x[0] - 100.0).powi(2);
        let err = nelder_mead(f, &[0.0], 0.001, 1e-12, 20).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn fd_hessian_of_quadratic_is_exact() {
        let f = |x: &[f64]| -> Result<f64> { Ok(-(2.0 * x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1])) };
        let x = [0.3, -0.2];
        let h = fd_hessian(&f, &x, f(&x).unwrap(), 0.05).unwrap();
        assert!((h[(0, 0)] + 4.0).abs() < 1e-8);
        assert!((h[(1, 1)] + 6.0).abs() < 1e-8);
        assert!((h[(0, 1)] + 1.0).abs() < 1e-8);
    }
}
