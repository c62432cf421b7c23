use chargecast::baseline::{fit_all_stations, glm_predict, irls_poisson, predict_stations, GlmOptions};
use chargecast::ingest::{ModelFrame, NaturalSpline};
use chargecast::linalg::DenseMatrix;
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

fn simulate(n: usize, beta: &[f64], seed: u64) -> (DenseMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x = 2.0 * rng.random::<f64>() - 1.0;
        let eta = beta[0] + beta[1] * x;
        rows.push(vec![1.0, x]);
        y.push(Poisson::new(eta.exp()).unwrap().sample(&mut rng));
    }
    (DenseMatrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn simulation_recovers_coefficients_within_three_se() {
    let truth = [1.0, 0.5];
    let (x, y) = simulate(100_000, &truth, 20240815);
    let fit = irls_poisson(&x, &y, &GlmOptions::default()).unwrap();
    assert!(fit.converged && fit.gradient_norm < 1e-8, "{fit:?}");
    let se = fit.standard_errors();
    for i in 0..2 {
        let z = (fit.coefficients[i] - truth[i]) / se[i];
        assert!(z.abs() < 3.0, "coefficient {i}: z = {z}");
    }
    let c = &fit.covariance;
    assert!((c[(0, 1)] - c[(1, 0)]).abs() < 1e-15);
    assert!(c[(0, 0)] > 0.0 && c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)] > 0.0);
    assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn smaller_ridge_barely_moves_a_well_conditioned_fit() {
    let (x, y) = simulate(2_000, &[0.3, -0.8], 3);
    let a = irls_poisson(&x, &y, &GlmOptions::default()).unwrap();
    let b = irls_poisson(&x, &y, &GlmOptions { ridge: 1e-9, ..GlmOptions::default() }).unwrap();
    for (p, q) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((p - q).abs() < 1e-6);
    }
}

#[test]
fn all_zero_counts_drive_the_intercept_down() {
    let x = DenseMatrix::from_rows(&vec![vec![1.0]; 20]).unwrap();
    let fit = irls_poisson(&x, &[0.0; 20], &GlmOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.coefficients[0] < -10.0);
    assert!(glm_predict(&fit, &x).unwrap().iter().all(|m| *m < 1e-4));
}

fn two_station_frame(seed: u64) -> ModelFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2024, 8, 15).unwrap();
    let calendar: Vec<NaiveDate> = start.iter_days().take(40).collect();
    let (mut y, mut rows, mut cpid_index, mut day_index) = (vec![], vec![], vec![], vec![]);
    for j in 0..3 {
        let n_days = if j == 2 { 2 } else { 40 };
        for t in 0..n_days {
            let temp = 10.0 + 5.0 * rng.random::<f64>();
            let weekend = f64::from(u8::from(t % 7 >= 5));
            let rapid = f64::from(u8::from(j == 0));
            let eta = 0.5 + 0.7 * rapid - 0.3 * weekend + 0.05 * temp;
            y.push(Poisson::new(eta.exp()).unwrap().sample(&mut rng) as u32);
            rows.push(vec![1.0, rapid, weekend, temp]);
            cpid_index.push(j);
            day_index.push(t);
        }
    }
    ModelFrame {
        y,
        x: DenseMatrix::from_rows(&rows).unwrap(),
        column_names: ["intercept", "rapid", "weekend", "temp"].map(String::from).to_vec(),
        cpid_index,
        day_index,
        cpids: vec!["A".into(), "B".into(), "C".into()],
        coords: vec![(-4.25, 55.86), (-4.26, 55.87), (-4.27, 55.85)],
        calendar,
        spline: NaturalSpline::fit(&[0.0, 1.0, 2.0, 3.0]).unwrap(),
    }
}

#[test]
fn station_fits_drop_constant_columns_and_satisfy_the_score_equation() {
    let frame = two_station_frame(11);
    let fits = fit_all_stations(&frame, &GlmOptions::default()).unwrap();
    assert_eq!(fits.keys().collect::<Vec<_>>(), ["A", "B", "C"]);
    assert_eq!(fits["A"].columns, ["intercept", "weekend", "temp"]);
    assert!(!fits["A"].intercept_only);
    assert!(fits["C"].intercept_only);
    assert_eq!(fits["C"].columns, ["intercept"]);

    let preds = predict_stations(&fits, &frame).unwrap();
    for cpid in ["A", "B", "C"] {
        let resid: Vec<f64> = preds
            .iter()
            .filter(|p| p.cpid == cpid)
            .map(|p| f64::from(p.y_true) - p.mean)
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        assert!(mean.abs() < 1e-6, "{cpid}: {mean}");
    }
}

#[test]
fn station_fits_are_independent() {
    let frame = two_station_frame(12);
    let base = fit_all_stations(&frame, &GlmOptions::default()).unwrap();
    let mut order: Vec<usize> = (0..frame.n_rows()).collect();
    // Reverse only station B's rows.
    let b_rows: Vec<usize> = order.iter().copied().filter(|&r| frame.cpid_index[r] == 1).collect();
    for (slot, r) in b_rows.iter().zip(b_rows.iter().rev()) {
        order[*slot] = *r;
    }
    let shuffled = fit_all_stations(&frame.subset(&order), &GlmOptions::default()).unwrap();
    assert_eq!(base["A"], shuffled["A"]);
    assert_eq!(base["C"], shuffled["C"]);
}
