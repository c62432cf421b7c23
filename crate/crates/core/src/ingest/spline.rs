//! Natural cubic spline basis with quantile knots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// B-spline basis functions of the given order (degree + 1), or their `deriv`-th derivative.
fn bspline(knots: &[f64], order: usize, x: f64, deriv: usize) -> Vec<f64> {
    let n = knots.len() - order;
    if deriv > 0 {
        let lower = bspline(knots, order - 1, x, deriv - 1);
        let k = (order - 1) as f64;
        return (0..n)
            .map(|i| {
                let left = knots[i + order - 1] - knots[i];
                let right = knots[i + order] - knots[i + 1];
                let a = if left > 0.0 { lower[i] / left } else { 0.0 };
                let b = if right > 0.0 { lower[i + 1] / right } else { 0.0 };
                k * (a - b)
            })
            .collect();
    }
    // Order-1 pieces on half-open spans, with the last non-empty span closed on the right.
    let m = knots.len() - 1;
    let last = (0..m).rev().find(|&i| knots[i] < knots[i + 1]).unwrap_or(0);
    let mut b: Vec<f64> = (0..m)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            let at_end = i == last && x == knots[i + 1];
            if inside || at_end {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for k in 2..=order {
        let next: Vec<f64> = (0..knots.len() - k)
            .map(|i| {
                let l = knots[i + k - 1] - knots[i];
                let r = knots[i + k] - knots[i + 1];
                let a = if l > 0.0 { (x - knots[i]) / l * b[i] } else { 0.0 };
                let c = if r > 0.0 { (knots[i + k] - x) / r * b[i + 1] } else { 0.0 };
                a + c
            })
            .collect();
        b = next;
    }
    b
}

/// Householder QR of a tall `rows × cols` matrix; returns the full orthogonal `Q` (row-major).
fn householder_q(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = a.len();
    let cols = a[0].len();
    let mut r: Vec<Vec<f64>> = a.to_vec();
    let mut q: Vec<Vec<f64>> = (0..rows)
        .map(|i| (0..rows).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for k in 0..cols.min(rows - 1) {
        let norm: f64 = (k..rows).map(|i| r[i][k] * r[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = vec![0.0; rows];
        for i in k..rows {
            v[i] = r[i][k];
        }
        v[k] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..cols {
            let s: f64 = (k..rows).map(|i| v[i] * r[i][j]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..rows {
                r[i][j] -= s * v[i];
            }
        }
        // Q ← Q·H.
        for row in q.iter_mut() {
            let s: f64 = (k..rows).map(|i| row[i] * v[i]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..rows {
                row[i] -= s * v[i];
            }
        }
    }
    q
}

/// Linear-type sample quantile (interpolating between order statistics).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Natural cubic spline basis without intercept, three columns.
///
/// Cubic B-splines on the boundary and interior knots, first function dropped,
/// then projected onto the subspace with zero second derivative at both
/// boundary knots. Inputs outside the boundary knots are clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSpline {
    pub boundary: [f64; 2],
    pub interior: Vec<f64>,
    /// `(n_bspline − 1) × df` projection.
    projection: Vec<Vec<f64>>,
}

impl NaturalSpline {
    pub fn from_knots(boundary: [f64; 2], interior: Vec<f64>) -> Result<Self> {
        let mut all = vec![boundary[0]];
        all.extend(interior.iter().copied());
        all.push(boundary[1]);
        if all.iter().any(|v| !v.is_finite()) || all.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("degenerate spline basis: knots must be finite and strictly increasing"));
        }
        let knots = Self::full_knots(boundary, &interior);
        let drop_first = |v: Vec<f64>| v[1..].to_vec();
        let c0 = drop_first(bspline(&knots, 4, boundary[0], 2));
        let c1 = drop_first(bspline(&knots, 4, boundary[1], 2));
        // Columns of the constraint transpose.
        let ct: Vec<Vec<f64>> = (0..c0.len()).map(|i| vec![c0[i], c1[i]]).collect();
        let q = householder_q(&ct);
        let projection = q.iter().map(|row| row[2..].to_vec()).collect();
        Ok(Self {
            boundary,
            interior,
            projection,
        })
    }

    /// Interior knots at the 1/3 and 2/3 quantiles of `training`, boundary knots at its range.
    pub fn fit(training: &[f64]) -> Result<Self> {
        if training.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spline input contains non-finite values"));
        }
        let mut s = training.to_vec();
        s.sort_by(f64::total_cmp);
        if s.is_empty() || s[0] == s[s.len() - 1] {
            return Err(Error::invalid("degenerate spline basis: temperature does not vary"));
        }
        let interior = vec![quantile(&s, 1.0 / 3.0), quantile(&s, 2.0 / 3.0)];
        Self::from_knots([s[0], s[s.len() - 1]], interior)
    }

    fn full_knots(boundary: [f64; 2], interior: &[f64]) -> Vec<f64> {
        let mut k = vec![boundary[0]; 4];
        k.extend_from_slice(interior);
        k.extend(std::iter::repeat_n(boundary[1], 4));
        k
    }

    pub fn df(&self) -> usize {
        self.projection[0].len()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(self.boundary[0], self.boundary[1]);
        let knots = Self::full_knots(self.boundary, &self.interior);
        let b = bspline(&knots, 4, x, 0);
        let b = &b[1..];
        (0..self.df())
            .map(|j| b.iter().zip(&self.projection).map(|(bi, row)| bi * row[j]).sum())
            .collect()
    }

    /// Second derivative of the basis at `x` (inside the boundary knots).
    pub fn eval_second_derivative(&self, x: f64) -> Vec<f64> {
        let knots = Self::full_knots(self.boundary, &self.interior);
        let b = bspline(&knots, 4, x, 2);
        let b = &b[1..];
        (0..self.df())
            .map(|j| b.iter().zip(&self.projection).map(|(bi, row)| bi * row[j]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn bsplines_partition_unity() {
        let knots = NaturalSpline::full_knots([0.0, 3.0], &[1.0, 2.0]);
        for x in linspace(0.0, 3.0, 31) {
            let s: f64 = bspline(&knots, 4, x, 0).iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "{x}: {s}");
        }
    }

    #[test]
    fn second_derivative_vanishes_at_boundaries() {
        let sp = NaturalSpline::fit(&linspace(-5.0, 25.0, 200)).unwrap();
        assert_eq!(sp.df(), 3);
        for x in [-5.0, 25.0] {
            for v in sp.eval_second_derivative(x) {
                assert!(v.abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn columns_are_nonlinear() {
        let t = linspace(-5.0, 25.0, 200);
        let sp = NaturalSpline::fit(&t).unwrap();
        let n = t.len() as f64;
        let tm = t.iter().sum::<f64>() / n;
        let stt: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
        for j in 0..3 {
            let b: Vec<f64> = t.iter().map(|&x| sp.eval(x)[j]).collect();
            let bm = b.iter().sum::<f64>() / n;
            let slope = t.iter().zip(&b).map(|(x, y)| (x - tm) * (y - bm)).sum::<f64>() / stt;
            let resid: f64 = t
                .iter()
                .zip(&b)
                .map(|(x, y)| (y - bm - slope * (x - tm)).powi(2))
                .sum::<f64>()
                / n;
            assert!(resid > 1e-6, "column {j} residual variance {resid}");
        }
    }

    #[test]
    fn clamps_outside_training_range() {
        let sp = NaturalSpline::fit(&linspace(0.0, 30.0, 50)).unwrap();
        assert_eq!(sp.eval(40.0), sp.eval(30.0));
        assert_eq!(sp.eval(-3.0), sp.eval(0.0));
        assert!(sp.eval(0.0).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn second_derivative_is_continuous_and_piecewise_linear() {
        let sp = NaturalSpline::from_knots([0.0, 3.0], vec![1.0, 2.0]).unwrap();
        let coef = [0.3, -1.2, 2.0];
        let f2 = |x: f64| sp.eval_second_derivative(x).iter().zip(coef).map(|(b, c)| b * c).sum::<f64>();
        assert!((f2(1.0 - 1e-9) - f2(1.0 + 1e-9)).abs() < 1e-6);
        assert!((f2(0.5) - (f2(0.0) + f2(1.0)) / 2.0).abs() < 1e-9);
        assert!((f2(1.5) - (f2(1.0) + f2(2.0)) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_input_is_rejected() {
        let err = NaturalSpline::fit(&[4.0; 10]).unwrap_err();
        assert!(err.to_string().contains("degenerate spline basis"));
    }
}
