//! Predictive count summaries for new frame rows.

use std::collections::HashMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ModelFrame;

use super::grid::PosteriorGrid;
use super::laplace::{Engine, GaussianApprox};
use super::model::ChargeModel;
use super::summary::mixture_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cpid: String,
    pub day: NaiveDate,
    pub y_true: Option<u32>,
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub eta_mean: f64,
    pub eta_sd: f64,
    /// The day lies after the training period and uses the last RW2 state.
    pub carried_forward: bool,
}

/// Linear-predictor incidence of one new row.
#[derive(Debug, Clone)]
struct RowIncidence {
    x: Vec<f64>,
    sparse: Vec<(usize, f64)>,
    carried_forward: bool,
}

/// Covariance lookups for one grid point, falling back to column solves
/// outside the factor pattern.
struct CovarianceOracle<'a> {
    approx: &'a GaussianApprox,
    selinv: crate::linalg::SelectedInverse<f64>,
    columns: HashMap<usize, Vec<f64>>,
}

impl<'a> CovarianceOracle<'a> {
    fn new(approx: &'a GaussianApprox) -> Self {
        Self {
            approx,
            selinv: approx.factor.selected_inverse(),
            columns: HashMap::new(),
        }
    }

    /// Unconstrained `(H⁻¹)_{ij}`.
    fn get(&mut self, i: usize, j: usize) -> f64 {
        if let Some(v) = self.selinv.get(i, j) {
            return v;
        }
        let approx = self.approx;
        let col = self.columns.entry(j).or_insert_with(|| {
            let mut e = vec![0.0; approx.factor.dim()];
            e[j] = 1.0;
            approx.factor.solve(&e)
        });
        col[i]
    }
}

fn row_incidence(model: &ChargeModel, frame: &ModelFrame) -> Result<Vec<RowIncidence>> {
    let station: HashMap<&str, usize> = model.cpids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let day_pos: HashMap<NaiveDate, usize> = model.calendar.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let last_day = *model
        .calendar
        .last()
        .ok_or_else(|| Error::invalid("model has an empty calendar"))?;
    let columns: Vec<usize> = model
        .column_names
        .iter()
        .map(|name| {
            frame
                .column(name)
                .ok_or_else(|| Error::invalid(format!("new frame lacks model column {name}")))
        })
        .collect::<Result<_>>()?;
    (0..frame.n_rows())
        .map(|r| {
            let cpid = frame.cpid(r);
            let &j = station
                .get(cpid)
                .ok_or_else(|| Error::invalid(format!("unknown CPID {cpid} in prediction frame")))?;
            let day = frame.day(r);
            let (t, carried_forward) = match day_pos.get(&day) {
                Some(&t) => (t, false),
                None if day > last_day => (model.n_days - 1, true),
                None => {
                    return Err(Error::invalid(format!(
                        "day {day} lies inside the training period but has no RW2 node"
                    )))
                }
            };
            let row = frame.x.row(r);
            Ok(RowIncidence {
                x: columns.iter().map(|&c| row[c]).collect(),
                sparse: model.incidence(t, j),
                carried_forward,
            })
        })
        .collect()
}

/// Posterior predictive summaries of `e^η` for each row of `frame_new`.
///
/// Mean and SD are those of the lognormal mixture; the interval is its 2.5%
/// and 97.5% quantiles.
pub fn predict(model: &ChargeModel, grid: &PosteriorGrid, frame_new: &ModelFrame) -> Result<Vec<Prediction>> {
    let rows = row_incidence(model, frame_new)?;
    let engine = Engine::new(&model.latent)?;
    let k = model.n_fixed();
    let active: Vec<(usize, f64)> = grid.active().map(|(g, p)| (g, p.weight)).collect();
    if active.is_empty() {
        return Err(Error::invalid("posterior grid carries no weight"));
    }
    let mut needed: Vec<usize> = rows.iter().flat_map(|r| r.sparse.iter().map(|&(j, _)| j)).collect();
    needed.sort_unstable();
    needed.dedup();

    // Per grid point: (μ_η, σ²_η) for every row.
    let moments: Vec<Vec<(f64, f64)>> = active
        .par_iter()
        .map(|&(g, _)| -> Result<Vec<(f64, f64)>> {
            let point = &grid.points[g];
            let approx = engine.approx_at(&point.theta, &point.mode)?;
            let mut cov = CovarianceOracle::new(&approx);
            let mut beta = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    beta[a * k + b] = cov.get(a, b);
                }
            }
            let cross: HashMap<usize, Vec<f64>> = needed
                .iter()
                .map(|&j| (j, (0..k).map(|a| cov.get(a, j)).collect()))
                .collect();
            let out = rows
                .iter()
                .map(|row| {
                    let mean = row.x.iter().zip(&point.mode).map(|(a, m)| a * m).sum::<f64>()
                        + row.sparse.iter().map(|&(j, w)| w * point.mode[j]).sum::<f64>();
                    let mut var = 0.0;
                    for a in 0..k {
                        if row.x[a] == 0.0 {
                            continue;
                        }
                        for b in 0..k {
                            var += row.x[a] * row.x[b] * beta[a * k + b];
                        }
                    }
                    for &(j, w) in &row.sparse {
                        let c = &cross[&j];
                        var += 2.0 * w * row.x.iter().zip(c).map(|(a, v)| a * v).sum::<f64>();
                        for &(l, u) in &row.sparse {
                            var += w * u * cov.get(j, l);
                        }
                    }
                    let mut b: Vec<(usize, f64)> = row.x.iter().enumerate().map(|(a, &v)| (a, v)).collect();
                    b.extend_from_slice(&row.sparse);
                    var -= approx.correction.reduction_times(&b);
                    (mean, var.max(0.0))
                })
                .collect();
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let total: f64 = active.iter().map(|(_, w)| w).sum();
    let weights: Vec<f64> = active.iter().map(|(_, w)| w / total).collect();
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mu: Vec<f64> = moments.iter().map(|m| m[r].0).collect();
            let var: Vec<f64> = moments.iter().map(|m| m[r].1).collect();
            let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            let mean = lognormal_mixture_mean(&weights, &mu, &var);
            let second: f64 = weights
                .iter()
                .zip(&mu)
                .zip(&var)
                .map(|((w, m), v)| w * (2.0 * m + 2.0 * v).exp())
                .sum();
            let eta_mean: f64 = weights.iter().zip(&mu).map(|(w, m)| w * m).sum();
            let eta_var: f64 = weights
                .iter()
                .zip(&mu)
                .zip(&var)
                .map(|((w, m), v)| w * (v + (m - eta_mean).powi(2)))
                .sum();
            Prediction {
                cpid: frame_new.cpid(r).to_string(),
                day: frame_new.day(r),
                y_true: Some(frame_new.y[r]),
                mean,
                sd: (second - mean * mean).max(0.0).sqrt(),
                lo95: mixture_quantile(&weights, &mu, &sd, 0.025).exp(),
                hi95: mixture_quantile(&weights, &mu, &sd, 0.975).exp(),
                eta_mean,
                eta_sd: eta_var.max(0.0).sqrt(),
                carried_forward: row.carried_forward,
            }
        })
        .collect())
}

/// Lognormal mixture mean `Σ w exp(μ + σ²/2)`.
pub fn lognormal_mixture_mean(weights: &[f64], means: &[f64], variances: &[f64]) -> f64 {
    weights
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((w, m), v)| w * (m + 0.5 * v).exp())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lognormal_mean_examples() {
        assert!((lognormal_mixture_mean(&[1.0], &[0.0], &[0.04]) - 0.02f64.exp()).abs() < 1e-15);
        assert!((lognormal_mixture_mean(&[1.0], &[0.0], &[0.04]) - 1.0202).abs() < 1e-4);
        assert_eq!(lognormal_mixture_mean(&[1.0], &[1.5], &[0.0]), 1.5f64.exp());
    }
}
