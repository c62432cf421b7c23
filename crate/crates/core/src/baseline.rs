//! Per-station Poisson GLM baseline.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ModelFrame;
use crate::linalg::{DenseCholesky, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmOptions {
    pub ridge: f64,
    /// Relative change in deviance at which iterations stop.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-8,
            tol: 1e-10,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    /// Inverse of the penalised Fisher information.
    pub covariance: DenseMatrix<f64>,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Deviance after each accepted iteration, starting point first.
    pub deviance_trace: Vec<f64>,
}

impl GlmFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }
}

/// Poisson deviance `2 Σ [y log(y/μ) − (y − μ)]`.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            let t = if yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
            t - (yi - mi)
        })
        .sum::<f64>()
}

const GRADIENT_TOL: f64 = 1e-8;

fn linear(x: &DenseMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    x.mul_vec(beta)
}

/// Newton (IRLS) fit of a log-link Poisson GLM with penalty `½·ridge·‖β‖²` on
/// every coefficient except all-ones intercept columns.
///
/// Steps are halved until the penalised deviance does not increase. A fit
/// that fails to converge returns its last iterate with `converged = false`.
pub fn irls_poisson(x: &DenseMatrix<f64>, y: &[f64], options: &GlmOptions) -> Result<GlmFit> {
    let (n, p) = (x.nrows, x.ncols);
    if n == 0 || y.len() != n {
        return Err(Error::invalid(format!("GLM needs matching non-empty inputs, got {n} rows and {} responses", y.len())));
    }
    if x.data.iter().any(|v| !v.is_finite()) || y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("GLM inputs must be finite with non-negative responses"));
    }
    // Intercept columns (all ones) are left unpenalised so the ridge does not bias the mean.
    let ridge: Vec<f64> = (0..p)
        .map(|c| if (0..n).all(|r| x[(r, c)] == 1.0) { 0.0 } else { options.ridge })
        .collect();
    let penalised = |beta: &[f64]| -> (f64, f64) {
        let mu: Vec<f64> = linear(x, beta).iter().map(|e| e.exp()).collect();
        let dev = poisson_deviance(y, &mu);
        (dev, dev + beta.iter().zip(&ridge).map(|(b, l)| l * b * b).sum::<f64>())
    };
    let info = |beta: &[f64]| -> (Vec<f64>, DenseMatrix<f64>) {
        let mu: Vec<f64> = linear(x, beta).iter().map(|e| e.exp()).collect();
        let mut grad: Vec<f64> = beta.iter().zip(&ridge).map(|(b, l)| -l * b).collect();
        let mut h = DenseMatrix::zeros(p, p);
        for r in 0..n {
            let xr = x.row(r);
            let resid = y[r] - mu[r];
            for a in 0..p {
                grad[a] += xr[a] * resid;
                let wa = mu[r] * xr[a];
                if wa != 0.0 {
                    for b in 0..p {
                        h[(a, b)] += wa * xr[b];
                    }
                }
            }
        }
        for a in 0..p {
            h[(a, a)] += ridge[a];
        }
        (grad, h)
    };

    let mut beta = vec![0.0; p];
    let (mut dev, mut obj) = penalised(&beta);
    let mut trace = vec![dev];
    let mut change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let (mut grad, mut h) = info(&beta);
    loop {
        let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if change < options.tol && gradient_norm < GRADIENT_TOL {
            converged = true;
            break;
        }
        if iterations == options.max_iterations {
            break;
        }
        iterations += 1;
        let Ok(chol) = DenseCholesky::new(&h) else { break };
        let step = chol.solve(&grad);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + alpha * s).collect();
            let (d, o) = penalised(&cand);
            if o.is_finite() && o <= obj {
                accepted = Some((cand, d, o));
                break;
            }
            alpha *= 0.5;
        }
        // No step lowers the objective: this is the numerical optimum.
        let Some((cand, d, o)) = accepted else {
            converged = change < options.tol || gradient_norm < GRADIENT_TOL;
            break;
        };
        change = (obj - o).abs() / (o.abs() + 0.1);
        beta = cand;
        dev = d;
        obj = o;
        trace.push(dev);
        (grad, h) = info(&beta);
    }
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let covariance = DenseCholesky::new(&h)
        .map(|c| c.inverse())
        .unwrap_or_else(|_| DenseMatrix::zeros(p, p));
    Ok(GlmFit {
        coefficients: beta,
        covariance,
        deviance: dev,
        iterations,
        converged,
        gradient_norm,
        deviance_trace: trace,
    })
}

/// `exp(X β̂)`.
pub fn glm_predict(fit: &GlmFit, x_new: &DenseMatrix<f64>) -> Result<Vec<f64>> {
    if x_new.ncols != fit.coefficients.len() {
        return Err(Error::invalid(format!(
            "design has {} columns but the fit has {} coefficients",
            x_new.ncols,
            fit.coefficients.len()
        )));
    }
    Ok(linear(x_new, &fit.coefficients).iter().map(|e| e.exp()).collect())
}

/// One station's GLM and the frame columns it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFit {
    pub cpid: String,
    pub columns: Vec<String>,
    pub fit: GlmFit,
    pub n_rows: usize,
    /// Too few rows for the full design, so only the intercept was fitted.
    pub intercept_only: bool,
}

/// Fits every station independently.
///
/// Columns constant within the station are dropped (the intercept is kept);
/// stations with at most as many rows as columns get an intercept-only fit.
pub fn fit_all_stations(frame: &ModelFrame, options: &GlmOptions) -> Result<BTreeMap<String, StationFit>> {
    let intercept = frame
        .column("intercept")
        .ok_or_else(|| Error::invalid("frame has no intercept column"))?;
    let mut by_station: Vec<Vec<usize>> = vec![Vec::new(); frame.cpids.len()];
    for r in 0..frame.n_rows() {
        by_station[frame.cpid_index[r]].push(r);
    }
    let fits = by_station
        .par_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(j, rows)| -> Result<StationFit> {
            let mut cols: Vec<usize> = (0..frame.n_cols())
                .filter(|&c| {
                    c == intercept || {
                        let first = frame.x[(rows[0], c)];
                        rows.iter().any(|&r| frame.x[(r, c)] != first)
                    }
                })
                .collect();
            let intercept_only = rows.len() < cols.len() + 1;
            if intercept_only {
                cols = vec![intercept];
            }
            let x = frame.x.select_rows(rows).select_columns(&cols);
            let y: Vec<f64> = rows.iter().map(|&r| f64::from(frame.y[r])).collect();
            Ok(StationFit {
                cpid: frame.cpids[j].clone(),
                columns: cols.iter().map(|&c| frame.column_names[c].clone()).collect(),
                fit: irls_poisson(&x, &y, options)?,
                n_rows: rows.len(),
                intercept_only,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fits.into_iter().map(|f| (f.cpid.clone(), f)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePrediction {
    pub cpid: String,
    pub day: NaiveDate,
    pub y_true: u32,
    pub mean: f64,
}

/// Predicted mean counts for every row of `frame` from the matching station fit.
pub fn predict_stations(fits: &BTreeMap<String, StationFit>, frame: &ModelFrame) -> Result<Vec<BaselinePrediction>> {
    let mut col_cache: HashMap<&str, Vec<usize>> = HashMap::new();
    (0..frame.n_rows())
        .map(|r| {
            let cpid = frame.cpid(r);
            let fit = fits
                .get(cpid)
                .ok_or_else(|| Error::invalid(format!("no baseline fit for CPID {cpid}")))?;
            if !col_cache.contains_key(cpid) {
                let cols = fit
                    .columns
                    .iter()
                    .map(|c| {
                        frame
                            .column(c)
                            .ok_or_else(|| Error::invalid(format!("frame lacks baseline column {c}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                col_cache.insert(cpid, cols);
            }
            let cols = &col_cache[cpid];
            let eta: f64 = cols
                .iter()
                .zip(&fit.fit.coefficients)
                .map(|(&c, b)| frame.x[(r, c)] * b)
                .sum();
            Ok(BaselinePrediction {
                cpid: cpid.to_string(),
                day: frame.day(r),
                y_true: frame.y[r],
                mean: eta.exp(),
            })
        })
        .collect()
}
