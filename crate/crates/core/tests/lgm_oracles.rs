use chargecast::graph::{icar_structure, knn_graph, rw2_structure};
use chargecast::lgm::{
    constrain, explore_grid, gaussian_approx, latent_marginal, log_marginal, BlockPrecision, Engine, GridOptions,
    HyperPrior, Hyperparameter, LatentBlock, LatentModel, Likelihood, Observations,
};
use chargecast::linalg::{Cholesky, DenseMatrix, SymSparse};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn to_dense(q: &SymSparse<f64>) -> DMatrix<f64> {
    let rows = q.to_dense();
    DMatrix::from_fn(q.dim(), q.dim(), |i, j| rows[i][j])
}

fn single_latent(prior_precision: f64, y: f64, likelihood: Likelihood) -> LatentModel {
    LatentModel::new(
        vec![LatentBlock {
            name: "x".into(),
            offset: 0,
            size: 1,
            precision: BlockPrecision::Fixed {
                precision: prior_precision,
            },
        }],
        Observations {
            y: vec![y],
            dense: DenseMatrix::zeros(1, 0),
            sparse: vec![vec![(0, 1.0)]],
        },
        likelihood,
        vec![],
        vec![],
    )
    .unwrap()
}

#[test]
fn conjugate_gaussian_toy() {
    let m = single_latent(1.0, 2.0, Likelihood::Gaussian { precision: vec![1.0] });
    let ga = gaussian_approx(&m, &[]).unwrap();
    assert!((ga.mode[0] - 1.0).abs() < 1e-12);
    assert!((ga.latent_variance()[0] - 0.5).abs() < 1e-12);
    // y ~ N(0, 2).
    let exact = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25 * 4.0;
    assert!((log_marginal(&m, &[]).unwrap() - exact).abs() < 1e-12);
}

/// Root of `p·x + e^x = y` by bisection.
fn poisson_mode(p: f64, y: f64) -> f64 {
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if p * mid + mid.exp() < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn poisson_log_evidence(p: f64, y: f64) -> f64 {
    let ln_fact = statrs::function::gamma::ln_gamma(y + 1.0);
    let f = |x: f64| {
        (0.5 * (p / (2.0 * std::f64::consts::PI)).ln() - 0.5 * p * x * x + y * x - x.exp() - ln_fact).exp()
    };
    let n = 10_000;
    let (a, b) = (-10.0, 10.0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    (s * h / 3.0).ln()
}

#[test]
fn one_dimensional_poisson() {
    let m = single_latent(1.0, 3.0, Likelihood::Poisson);
    let ga = gaussian_approx(&m, &[]).unwrap();
    let mode = poisson_mode(1.0, 3.0);
    assert!((mode - 0.7921).abs() < 1e-4);
    assert!((ga.mode[0] - mode).abs() < 1e-8, "{} vs {mode}", ga.mode[0]);
    let var = 1.0 / (1.0 + mode.exp());
    assert!((var - 0.3117).abs() < 1e-4);
    assert!((ga.latent_variance()[0] - var).abs() < 1e-8);
    // The Laplace evidence carries the usual O(1/n) error for a single
    // observation, about 0.14% here, so only a loose check is possible.
    let lm = log_marginal(&m, &[]).unwrap();
    let exact = poisson_log_evidence(1.0, 3.0);
    assert!(((lm - exact) / exact).abs() < 1e-2, "{lm} vs {exact}");
}

#[test]
fn newton_objective_never_decreases() {
    for y in [0.0, 1.0, 7.0, 40.0] {
        let m = single_latent(0.5, y, Likelihood::Poisson);
        let ga = gaussian_approx(&m, &[]).unwrap();
        assert!(ga.objective_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(ga.gradient_norm < 1e-6);
    }
}

#[test]
fn all_zero_counts_drive_eta_down() {
    let n = 20;
    let m = LatentModel::new(
        vec![LatentBlock {
            name: "fixed".into(),
            offset: 0,
            size: 1,
            precision: BlockPrecision::Fixed { precision: 0.001 },
        }],
        Observations {
            y: vec![0.0; n],
            dense: DenseMatrix::from_rows(&vec![vec![1.0]; n]).unwrap(),
            sparse: vec![vec![]; n],
        },
        Likelihood::Poisson,
        vec![],
        vec![],
    )
    .unwrap();
    let ga = gaussian_approx(&m, &[]).unwrap();
    // Stationary point of −n e^β − 0.0005 β².
    assert!(ga.mode[0] < -5.0 && ga.mode[0].is_finite());
    let g = -(n as f64) * ga.mode[0].exp() - 0.001 * ga.mode[0];
    assert!(g.abs() < 1e-6);
}

#[test]
fn constrain_projects_two_dimensional_toy() {
    let q = SymSparse::<f64>::identity(2);
    let fac = Cholesky::new(&q).unwrap();
    let (x, corr) = constrain(&[3.0, 1.0], &fac, &[vec![(0, 1.0), (1, 1.0)]]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] + 1.0).abs() < 1e-14);
    let (same, _) = constrain(&x, &fac, &[vec![(0, 1.0), (1, 1.0)]]).unwrap();
    assert!(same.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-14));
    assert!((corr.log_det() - 2f64.ln()).abs() < 1e-14);
}

/// Random model with a fixed block, an RW2 block and an ICAR block, both
/// sum-to-zero constrained, observed through Gaussian terms.
fn random_gaussian_model(rng: &mut ChaCha8Rng) -> (LatentModel, Vec<f64>) {
    let k = rng.random_range(1..=3);
    let n_t = rng.random_range(3..=25);
    let n_s = rng.random_range(5..=20);
    let coords: Vec<[f64; 2]> = (0..n_s).map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0]).collect();
    let graph = chargecast::graph::bridge_components(&knn_graph(&coords, 3).unwrap());
    let icar = icar_structure(&graph).unwrap();
    let n_obs = rng.random_range(10..=120);
    let rows: Vec<Vec<f64>> = (0..n_obs).map(|_| (0..k).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let sparse: Vec<Vec<(usize, f64)>> = (0..n_obs)
        .map(|_| {
            let t = rng.random_range(0..n_t);
            let s = rng.random_range(0..n_s);
            let w: f64 = rng.random_range(0.2..1.0);
            let mut row = vec![(k + t, 1.0), (k + n_t + s, w)];
            if s + 1 < n_s {
                row.push((k + n_t + s + 1, 1.0 - w));
            }
            row
        })
        .collect();
    let y: Vec<f64> = (0..n_obs).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let precision: Vec<f64> = (0..n_obs).map(|_| rng.random_range(0.5..3.0)).collect();
    let blocks = vec![
        LatentBlock {
            name: "fixed".into(),
            offset: 0,
            size: k,
            precision: BlockPrecision::Fixed { precision: 0.1 },
        },
        LatentBlock {
            name: "time".into(),
            offset: k,
            size: n_t,
            precision: BlockPrecision::Scaled {
                structure: rw2_structure(n_t).unwrap(),
                jitter: 0.05,
                theta: 0,
            },
        },
        LatentBlock {
            name: "space".into(),
            offset: k + n_t,
            size: n_s,
            precision: BlockPrecision::Scaled {
                structure: icar,
                jitter: 0.05,
                theta: 1,
            },
        },
    ];
    let constraints = vec![
        (k..k + n_t).map(|j| (j, 1.0)).collect(),
        (k + n_t..k + n_t + n_s).map(|j| (j, 1.0)).collect(),
    ];
    let hyper = vec![
        Hyperparameter {
            name: "a".into(),
            prior: HyperPrior::LogGamma { a: 1.0, b: 5e-5 },
        },
        Hyperparameter {
            name: "b".into(),
            prior: HyperPrior::Gaussian { mean: 0.0, sd: 2.0 },
        },
    ];
    let model = LatentModel::new(
        blocks,
        Observations {
            y,
            dense: DenseMatrix::from_rows(&rows).unwrap(),
            sparse,
        },
        Likelihood::Gaussian { precision },
        constraints,
        hyper,
    )
    .unwrap();
    let theta = vec![rng.random_range(-1.0..2.0), rng.random_range(-1.0..1.0)];
    (model, theta)
}

/// Exact evidence, posterior mean and marginal SDs of a constrained Gaussian model.
fn closed_form(model: &LatentModel, theta: &[f64]) -> (f64, DVector<f64>, DVector<f64>) {
    let n = model.dim;
    let q = to_dense(&model.joint_prior_precision(theta).unwrap());
    let sigma = q.clone().cholesky().unwrap().inverse();
    let kc = model.constraints.len();
    let mut a = DMatrix::zeros(kc, n);
    for (r, c) in model.constraints.iter().enumerate() {
        for &(j, v) in c {
            a[(r, j)] += v;
        }
    }
    let sat = &sigma * a.transpose();
    let s = &a * &sat;
    let sigma_c = &sigma - &sat * s.cholesky().unwrap().inverse() * sat.transpose();
    let n_obs = model.obs.len();
    let mut b = DMatrix::zeros(n_obs, n);
    for r in 0..n_obs {
        for (j, &v) in model.obs.dense.row(r).iter().enumerate() {
            b[(r, j)] += v;
        }
        for &(j, w) in &model.obs.sparse[r] {
            b[(r, j)] += w;
        }
    }
    let Likelihood::Gaussian { precision } = &model.likelihood else {
        unreachable!()
    };
    let mut cov_y = &b * &sigma_c * b.transpose();
    for r in 0..n_obs {
        cov_y[(r, r)] += 1.0 / precision[r];
    }
    let y = DVector::from_column_slice(&model.obs.y);
    let chol = cov_y.cholesky().unwrap();
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let evidence =
        -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n_obs as f64 * (2.0 * std::f64::consts::PI).ln() + model.log_prior(theta);
    let gain = &sigma_c * b.transpose();
    let mean = &gain * &alpha;
    let post = &sigma_c - &gain * chol.solve(&gain.transpose());
    let sd = post.diagonal().map(|v| v.max(0.0).sqrt());
    (evidence, mean, sd)
}

#[test]
fn gaussian_models_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..8 {
        let (model, theta) = random_gaussian_model(&mut rng);
        let engine = Engine::new(&model).unwrap();
        let ev = engine.evaluate(&theta, None).unwrap();
        let (exact, mean, sd) = closed_form(&model, &theta);
        assert!((ev.log_posterior - exact).abs() < 1e-8, "case {case}: {} vs {exact}", ev.log_posterior);
        let var = ev.approx.latent_variance();
        for i in 0..model.dim {
            assert!((ev.approx.mode[i] - mean[i]).abs() < 1e-6, "case {case} mean {i}");
            assert!((var[i].sqrt() - sd[i]).abs() < 1e-6, "case {case} sd {i}");
        }
        let c = model.constraint_values(&ev.approx.mode);
        assert!(c.iter().all(|v| v.abs() < 1e-8), "{c:?}");
    }
}

#[test]
fn prior_constant_shifts_log_marginal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (model, theta) = random_gaussian_model(&mut rng);
    let base = log_marginal(&model, &theta).unwrap();
    let mut shifted = model.clone();
    // Changing the Gaussian prior SD from 2 to 4 at θ_b shifts log π by a known constant.
    shifted.hyper[1].prior = HyperPrior::Gaussian { mean: 0.0, sd: 4.0 };
    let delta = shifted.log_prior(&theta) - model.log_prior(&theta);
    let moved = log_marginal(&shifted, &theta).unwrap();
    assert!((moved - base - delta).abs() < 1e-10);
}

#[test]
fn joint_precision_scaling_and_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (model, theta) = random_gaussian_model(&mut rng);
    let q1 = model.joint_prior_precision(&theta).unwrap();
    let q4 = model.joint_prior_precision(&[theta[0] + 4f64.ln(), theta[1]]).unwrap();
    assert!(q1.same_pattern(&q4));
    let time = model.block("time").unwrap().range();
    for i in time.clone() {
        for (j, v) in q1.row(i) {
            assert!(time.contains(&j), "time row touches another block");
            let jitter = if i == j { 0.05 } else { 0.0 };
            assert!(((q4.get(i, j) - jitter) - 4.0 * (v - jitter)).abs() < 1e-10);
        }
    }
    let big = rw2_structure::<f64>(879).unwrap().add_diagonal(1e-5);
    assert!(Cholesky::new(&big).is_ok());
}

#[test]
fn one_hyperparameter_grid_mean_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 60;
    let theta_true: f64 = 1.0;
    let y: Vec<f64> = (0..m)
        .map(|_| {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) * (-0.5 * theta_true).exp();
            x + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let prior = HyperPrior::Gaussian { mean: 0.5, sd: 1.0 };
    let model = LatentModel::new(
        vec![LatentBlock {
            name: "x".into(),
            offset: 0,
            size: m,
            precision: BlockPrecision::Scaled {
                structure: SymSparse::identity(m),
                jitter: 0.0,
                theta: 0,
            },
        }],
        Observations {
            y: y.clone(),
            dense: DenseMatrix::zeros(m, 0),
            sparse: (0..m).map(|i| vec![(i, 1.0)]).collect(),
        },
        Likelihood::Gaussian { precision: vec![1.0; m] },
        vec![],
        vec![Hyperparameter {
            name: "theta".into(),
            prior,
        }],
    )
    .unwrap();
    let grid = explore_grid(&model, &[0.0], &GridOptions::default()).unwrap();
    let wsum: f64 = grid.points.iter().map(|p| p.weight).sum();
    assert!((wsum - 1.0).abs() < 1e-12);
    assert_eq!(grid.points.len(), 5);
    let center = &grid.points[2];
    assert!(grid.points.iter().all(|p| p.weight <= center.weight));
    let grid_mean: f64 = grid.points.iter().map(|p| p.weight * p.theta[0]).sum();

    let log_post = |t: f64| {
        let v = (-t).exp() + 1.0;
        prior.log_density(t) + y.iter().map(|yi| -0.5 * (v.ln() + yi * yi / v)).sum::<f64>()
    };
    let (a, b, n) = (-6.0, 8.0, 20_000);
    let h = (b - a) / n as f64;
    let pts: Vec<f64> = (0..=n).map(|i| a + i as f64 * h).collect();
    let lmax = pts.iter().map(|&t| log_post(t)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut s1) = (0.0, 0.0);
    for &t in &pts {
        let w = (log_post(t) - lmax).exp();
        z += w;
        s1 += w * t;
    }
    let exact = s1 / z;
    assert!(((grid_mean - exact) / exact).abs() < 0.02, "{grid_mean} vs {exact}");
    // Each latent element is a one-component mixture per grid point.
    let marg = latent_marginal(&grid, 0, "x0");
    assert!(marg.q025 <= marg.mean && marg.mean <= marg.q975);
}

#[test]
fn withheld_data_returns_prior_mode() {
    let n = 12;
    let model = LatentModel::new(
        vec![LatentBlock {
            name: "time".into(),
            offset: 0,
            size: n,
            precision: BlockPrecision::Scaled {
                structure: rw2_structure(n).unwrap(),
                jitter: 1e-5,
                theta: 0,
            },
        }],
        Observations {
            y: vec![],
            dense: DenseMatrix::zeros(0, 0),
            sparse: vec![],
        },
        Likelihood::Poisson,
        vec![(0..n).map(|j| (j, 1.0)).collect()],
        vec![Hyperparameter {
            name: "theta_t".into(),
            prior: HyperPrior::LogGamma { a: 1.0, b: 5e-5 },
        }],
    )
    .unwrap();
    let grid = explore_grid(&model, &[4.0], &GridOptions::default()).unwrap();
    let prior_mode = (1.0f64 / 5e-5).ln();
    assert!((grid.theta_mode[0] - prior_mode).abs() < 1e-3, "{:?}", grid.theta_mode);
}
