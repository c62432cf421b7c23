use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chargecast::baseline::{fit_all_stations, predict_stations};
use chargecast::config::Config;
use chargecast::error::{Error, Result};
use chargecast::eval::{
    compare_tables, metric_table, read_predictions, sessions_vs_chargers, weekday_summary, write_dominance,
    write_long_metrics, write_predictions, Metric, MetricTable, Observation, PredictionRecord,
};
use chargecast::graph::{bridge_components, icar_structure, knn_graph, AdjacencyGraph};
use chargecast::ingest::{
    ingest, read_panel_csv, read_sessions, read_stations, read_weather, temporal_split, write_panel_csv, ModelFrame,
};
use chargecast::lgm::{
    assemble, explore_grid, EffectSummary, information_criteria, marginals, predict, ChargeModel, PosteriorGrid, Prediction,
    SpatialKind, SpatialSpec, TemporalSpec,
};
use chargecast::mesh::{
    assemble_fem, build_mesh, project_coords, projection_matrix, triangulation_geojson, write_triangles_csv,
    write_vertices_csv, Mesh, PlanarPoints, SpdeParams, SpdeStructure,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{announce, create, read_json, write_json, write_rows, write_text};
use crate::{Cli, Command, Spatial};

const FRAME_HINT: &str = "run `chargecast ingest` first";

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.as_path();
    match &cli.command {
        Command::Ingest => run_ingest(&config, out),
        Command::Mesh => run_mesh(&config, out),
        Command::Fit { spatial } => run_fit(&config, out, *spatial),
        Command::Predict { fit, frame } => run_predict(&config, out, fit, frame.as_deref()),
        Command::Baseline => run_baseline(&config, out),
        Command::Evaluate { predictions, model } => run_evaluate(&config, out, predictions, model.as_deref()),
        Command::Benchmark { files } => run_benchmark(&config, out, files),
        Command::Eda => run_eda(&config, out),
    }
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    n_cpids: usize,
    n_days: usize,
    first_day: NaiveDate,
    last_day: NaiveDate,
    total_sessions: u64,
    session_day_records: usize,
    panel_rows: usize,
    frame_columns: Vec<String>,
}

fn run_ingest(config: &Config, out: &Path) -> Result<()> {
    let data = &config.data;
    if data.sessions.is_empty() {
        return Err(Error::invalid("config lists no session files under data.sessions"));
    }
    let mut records = Vec::new();
    for path in &data.sessions {
        records.extend(read_sessions(path, &config.columns)?);
    }
    let stations = read_stations(&data.stations)?;
    let weather = read_weather(&data.weather)?;
    let result = ingest(
        &records,
        &stations,
        &weather,
        &config.curation,
        config.zero_fill,
        Some(config.split_date),
    )?;
    let panel = &result.panel;
    let first_day = panel.iter().map(|r| r.day).min().expect("non-empty panel");
    let last_day = panel.iter().map(|r| r.day).max().expect("non-empty panel");
    let summary = IngestSummary {
        n_cpids: panel.iter().map(|r| r.cpid.as_str()).collect::<BTreeSet<_>>().len(),
        n_days: (last_day - first_day).num_days() as usize + 1,
        first_day,
        last_day,
        total_sessions: panel.iter().map(|r| u64::from(r.y)).sum(),
        session_day_records: panel.iter().filter(|r| r.y > 0).count(),
        panel_rows: panel.len(),
        frame_columns: result.frame.column_names.clone(),
    };

    let path = out.join("panel.csv");
    write_panel_csv(panel, create(&path)?)?;
    announce(&path);
    let path = out.join("frame.csv");
    result.frame.write_csv(create(&path)?)?;
    announce(&path);
    for (name, value) in [
        ("frame.json", serde_json::to_value(&result.frame)?),
        ("curation_report.json", serde_json::to_value(&result.report)?),
        ("ingest_summary.json", serde_json::to_value(&summary)?),
    ] {
        let path = out.join(name);
        write_json(&path, &value)?;
        announce(&path);
    }
    println!(
        "{} stations, {} days, {} sessions, {} session-day records",
        summary.n_cpids, summary.n_days, summary.total_sessions, summary.session_day_records
    );
    Ok(())
}

fn load_frame(out: &Path) -> Result<ModelFrame> {
    read_json(&out.join("frame.json"), FRAME_HINT)
}

fn station_graph(points: &PlanarPoints, k: usize) -> Result<AdjacencyGraph<f64>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("the station graph needs at least two stations"));
    }
    let k = if k >= n {
        eprintln!("note: graph.k = {k} reduced to {} for {n} stations", n - 1);
        n - 1
    } else {
        k
    };
    Ok(bridge_components(&knn_graph(&points.xy, k)?))
}

fn run_mesh(config: &Config, out: &Path) -> Result<()> {
    let frame = load_frame(out)?;
    let points = project_coords(&frame.coords)?;
    let mesh = build_mesh(&points.xy, &config.mesh)?;
    let graph = station_graph(&points, config.graph.k)?;
    let dir = out.join("mesh");
    let path = dir.join("vertices.csv");
    write_vertices_csv(&mesh, &points.projection, create(&path)?)?;
    announce(&path);
    let path = dir.join("triangles.csv");
    write_triangles_csv(&mesh, create(&path)?)?;
    announce(&path);
    let path = dir.join("mesh.geojson");
    write_json(&path, &triangulation_geojson(&mesh, &points.projection, None))?;
    announce(&path);
    let path = dir.join("graph_edges.csv");
    write_text(&path, &graph.to_edge_csv())?;
    announce(&path);
    let path = dir.join("graph_adjacency.txt");
    write_text(&path, &graph.to_adjacency_text())?;
    announce(&path);
    let (inner, outer) = mesh.max_edges();
    let path = dir.join("mesh_summary.json");
    write_json(
        &path,
        &json!({
            "vertices": mesh.n_vertices(),
            "triangles": mesh.n_triangles(),
            "sites": mesh.n_sites,
            "max_inner_edge_m": inner,
            "max_outer_edge_m": outer,
            "graph_edges": graph.n_edges(),
            "graph_bridges": graph.bridges().len(),
        }),
    )?;
    announce(&path);
    println!("mesh: {} vertices, {} triangles", mesh.n_vertices(), mesh.n_triangles());
    Ok(())
}

/// Spatial structure plus what is needed to map it back to coordinates.
struct SpatialSetup {
    spec: SpatialSpec,
    points: PlanarPoints,
    mesh: Option<Mesh>,
}

fn spatial_setup(config: &Config, frame: &ModelFrame, kind: Spatial) -> Result<SpatialSetup> {
    let points = project_coords(&frame.coords)?;
    match kind {
        Spatial::Icar => {
            let graph = station_graph(&points, config.graph.k)?;
            Ok(SpatialSetup {
                spec: SpatialSpec::Icar {
                    structure: icar_structure(&graph)?,
                },
                points,
                mesh: None,
            })
        }
        Spatial::Spde => {
            let mesh = build_mesh(&points.xy, &config.mesh)?;
            let fem = assemble_fem(&mesh)?;
            let weights = projection_matrix::<f64>(&mesh, &points.xy)?;
            Ok(SpatialSetup {
                spec: SpatialSpec::Spde {
                    structure: SpdeStructure::new(&fem)?,
                    station_weights: weights.rows,
                },
                points,
                mesh: Some(mesh),
            })
        }
    }
}

fn theta_init(config: &Config, kind: Spatial, points: &PlanarPoints) -> Vec<f64> {
    match kind {
        Spatial::Icar => config.theta_init.icar.clone(),
        Spatial::Spde => config.theta_init.spde.clone().unwrap_or_else(|| {
            let (w, h) = points.extent();
            let extent = if w.max(h) > 0.0 { w.max(h) } else { 1000.0 };
            let p = SpdeParams::from_range_variance(extent / 5.0, 1.0);
            vec![config.theta_init.icar[0], p.theta1, p.theta2]
        }),
    }
}

fn training_model(config: &Config, frame: &ModelFrame, kind: Spatial) -> Result<(ChargeModel, SpatialSetup)> {
    let (train, _) = temporal_split(frame, config.split_date)?;
    let setup = spatial_setup(config, &train, kind)?;
    let n_days = train.day_index.iter().max().map_or(0, |d| d + 1);
    let model = assemble(&train, setup.spec.clone(), TemporalSpec { n_days }, &config.priors)?;
    Ok((model, setup))
}

/// What `predict` needs to rebuild a fitted model.
#[derive(Debug, Serialize, Deserialize)]
struct FitState {
    spatial: SpatialKind,
    split_date: NaiveDate,
    cpids: Vec<String>,
    column_names: Vec<String>,
    n_days: usize,
    grid: PosteriorGrid,
}

fn kind_of(s: SpatialKind) -> Spatial {
    match s {
        SpatialKind::Icar => Spatial::Icar,
        SpatialKind::Spde => Spatial::Spde,
    }
}

fn run_fit(config: &Config, out: &Path, kind: Spatial) -> Result<()> {
    let frame = load_frame(out)?;
    let (model, setup) = training_model(config, &frame, kind)?;
    let init = theta_init(config, kind, &setup.points);
    let grid = explore_grid(&model.latent, &init, &config.grid)?;
    let mut summary = marginals(&model, &grid);
    summary.criteria = Some(information_criteria(&model.latent, &grid, config.draws, config.seed)?);
    let (_, test) = temporal_split(&frame, config.split_date)?;
    let predictions = predict(&model, &grid, &test)?;

    let dir = out.join(format!("fit_{}", model.spatial.as_str()));
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    announce(&path);

    let path = dir.join("grid.csv");
    let mut header: Vec<&str> = grid.theta_names.iter().map(String::as_str).collect();
    header.extend(["log_posterior", "weight"]);
    write_rows(
        &path,
        &header,
        grid.points.iter().map(|p| {
            let mut row: Vec<String> = p.theta.iter().map(f64::to_string).collect();
            row.push(p.log_posterior.map_or_else(|| "NA".to_string(), |v| v.to_string()));
            row.push(p.weight.to_string());
            row
        }),
    )?;
    announce(&path);

    let path = dir.join("latent_time.csv");
    write_rows(
        &path,
        &["day", "mean", "sd"],
        summary.time.iter().map(|e| vec![e.label.clone(), e.mean.to_string(), e.sd.to_string()]),
    )?;
    announce(&path);

    write_space_effects(&dir, &summary.space, &setup)?;

    let path = dir.join("predictions.csv");
    write_prediction_table(&path, &predictions)?;
    announce(&path);

    let state = FitState {
        spatial: model.spatial,
        split_date: config.split_date,
        cpids: model.cpids.clone(),
        column_names: model.column_names.clone(),
        n_days: model.n_days,
        grid,
    };
    let path = dir.join("fit_state.json");
    write_json(&path, &state)?;
    announce(&path);

    let c = summary.criteria.as_ref().expect("criteria computed above");
    println!(
        "{} fit: {} grid points, DIC {:.3}, WAIC {:.3}",
        model.spatial.as_str(),
        summary.grid_points,
        c.dic,
        c.waic
    );
    Ok(())
}

fn write_space_effects(
    dir: &Path,
    space: &[EffectSummary],
    setup: &SpatialSetup,
) -> Result<()> {
    let csv_path = dir.join("latent_space.csv");
    let geo_path = dir.join("latent_space.geojson");
    match &setup.mesh {
        None => {
            write_rows(
                &csv_path,
                &["cpid", "lon", "lat", "mean", "sd"],
                space.iter().enumerate().map(|(j, e)| {
                    let (lon, lat) = station_lonlat(setup, j);
                    vec![e.label.clone(), lon.to_string(), lat.to_string(), e.mean.to_string(), e.sd.to_string()]
                }),
            )?;
            let features: Vec<serde_json::Value> = space
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    let (lon, lat) = station_lonlat(setup, j);
                    json!({
                        "type": "Feature",
                        "geometry": {"type": "Point", "coordinates": [lon, lat]},
                        "properties": {"cpid": e.label, "mean": e.mean, "sd": e.sd},
                    })
                })
                .collect();
            write_json(&geo_path, &json!({"type": "FeatureCollection", "features": features}))?;
        }
        Some(mesh) => {
            let projection = &setup.points.projection;
            write_rows(
                &csv_path,
                &["vertex", "lon", "lat", "mean", "sd"],
                space.iter().enumerate().map(|(v, e)| {
                    let (lon, lat) = projection.inverse(mesh.vertices[v]);
                    vec![v.to_string(), lon.to_string(), lat.to_string(), e.mean.to_string(), e.sd.to_string()]
                }),
            )?;
            let means: Vec<f64> = space.iter().map(|e| e.mean).collect();
            write_json(&geo_path, &triangulation_geojson(mesh, projection, Some(&means)))?;
        }
    }
    announce(&csv_path);
    announce(&geo_path);
    Ok(())
}

fn station_lonlat(setup: &SpatialSetup, j: usize) -> (f64, f64) {
    setup.points.projection.inverse(setup.points.xy[j])
}

fn write_prediction_table(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_rows(
        path,
        &["cpid", "day", "y_true", "mean", "sd", "lo95", "hi95", "carried_forward"],
        predictions.iter().map(|p| {
            vec![
                p.cpid.clone(),
                p.day.to_string(),
                p.y_true.map(|y| y.to_string()).unwrap_or_default(),
                p.mean.to_string(),
                p.sd.to_string(),
                p.lo95.to_string(),
                p.hi95.to_string(),
                p.carried_forward.to_string(),
            ]
        }),
    )
}

fn run_predict(config: &Config, out: &Path, fit_dir: &Path, frame_path: Option<&Path>) -> Result<()> {
    let state: FitState = read_json(&fit_dir.join("fit_state.json"), "run `chargecast fit` first")?;
    let mut config = config.clone();
    config.split_date = state.split_date;
    let frame = load_frame(out)?;
    let kind = kind_of(state.spatial);
    let (model, _) = training_model(&config, &frame, kind)?;
    if model.cpids != state.cpids || model.column_names != state.column_names || model.n_days != state.n_days {
        return Err(Error::invalid(format!(
            "{} does not match the current frame and config; refit the model",
            fit_dir.display()
        )));
    }
    let target = match frame_path {
        Some(p) => read_json(p, "expected a frame.json written by ingest")?,
        None => temporal_split(&frame, state.split_date)?.1,
    };
    let predictions = predict(&model, &state.grid, &target)?;
    let path = out.join(format!("predictions_{}.csv", state.spatial.as_str()));
    write_prediction_table(&path, &predictions)?;
    announce(&path);
    Ok(())
}

fn run_baseline(config: &Config, out: &Path) -> Result<()> {
    let frame = load_frame(out)?;
    let (train, test) = temporal_split(&frame, config.split_date)?;
    let fits = fit_all_stations(&train, &config.glm)?;
    let preds = predict_stations(&fits, &test)?;
    let dir = out.join("baseline");
    let path = dir.join("baseline_fits.json");
    write_json(&path, &fits)?;
    announce(&path);
    let records: Vec<PredictionRecord> = preds
        .iter()
        .map(|p| PredictionRecord {
            cpid: p.cpid.clone(),
            day: p.day,
            mean: p.mean,
        })
        .collect();
    let path = dir.join("baseline_predictions.csv");
    write_predictions(&records, create(&path)?)?;
    announce(&path);
    let unconverged: Vec<&str> = fits
        .values()
        .filter(|f| !f.fit.converged)
        .map(|f| f.cpid.as_str())
        .collect();
    if !unconverged.is_empty() {
        eprintln!("note: GLM did not converge for {}", unconverged.join(", "));
    }
    println!("baseline: {} station fits", fits.len());
    Ok(())
}

fn test_truth(config: &Config, out: &Path) -> Result<Vec<Observation>> {
    let frame = load_frame(out)?;
    let (_, test) = temporal_split(&frame, config.split_date)?;
    Ok((0..test.n_rows())
        .map(|r| Observation {
            cpid: test.cpid(r).to_string(),
            day: test.day(r),
            y: test.y[r],
        })
        .collect())
}

fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    read_predictions(file).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn run_evaluate(config: &Config, out: &Path, predictions: &Path, model: Option<&str>) -> Result<()> {
    let truth = test_truth(config, out)?;
    let name = model.map_or_else(|| file_stem(predictions), str::to_string);
    let table = metric_table(&name, &truth, &load_predictions(predictions)?)?;
    let path = out.join("evaluate").join(format!("{name}_metrics.csv"));
    table.write_csv(create(&path)?)?;
    announce(&path);
    let p = &table.pooled;
    println!(
        "{name}: MAE {:.4}, RMSE {:.4}, MAPE {} ({} zero rows skipped)",
        p.mae,
        p.rmse,
        p.mape.map_or_else(|| "undefined".to_string(), |v| format!("{v:.2}%")),
        p.mape_skipped
    );
    Ok(())
}

fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            (file_stem(&path), path)
        }
    }
}

fn run_benchmark(config: &Config, out: &Path, files: &[String]) -> Result<()> {
    let truth = test_truth(config, out)?;
    let models: Vec<(String, PathBuf)> = files.iter().map(|f| parse_model_arg(f)).collect();
    let mut seen = BTreeSet::new();
    for (name, _) in &models {
        if !seen.insert(name.as_str()) {
            return Err(Error::invalid(format!(
                "model name {name} is used twice; label files as name=path"
            )));
        }
    }
    let mut tables: Vec<MetricTable> = models
        .iter()
        .map(|(name, path)| metric_table(name, &truth, &load_predictions(path)?))
        .collect::<Result<_>>()?;
    tables.sort_by(|a, b| a.model.cmp(&b.model));

    let dir = out.join("benchmark");
    let path = dir.join("metrics_long.csv");
    write_long_metrics(&tables, create(&path)?)?;
    announce(&path);

    let mut results = Vec::new();
    for (i, a) in tables.iter().enumerate() {
        for b in tables.iter().skip(i + 1) {
            for metric in Metric::ALL {
                results.push(compare_tables(a, b, metric)?);
            }
        }
    }
    // A single file is compared with itself so that the table is never empty.
    if tables.len() == 1 {
        for metric in Metric::ALL {
            results.push(compare_tables(&tables[0], &tables[0], metric)?);
        }
    }
    let path = dir.join("dominance.csv");
    write_dominance(&results, create(&path)?)?;
    announce(&path);
    for r in &results {
        println!(
            "{} vs {} on {}: {:.1}% / {:.1}% of {} stations, {} ties",
            r.model_a,
            r.model_b,
            r.metric.as_str(),
            r.percent_a(),
            r.percent_b(),
            r.n_stations,
            r.ties
        );
    }
    Ok(())
}

fn run_eda(config: &Config, out: &Path) -> Result<()> {
    let path = out.join("panel.csv");
    let file = std::fs::File::open(&path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e} ({FRAME_HINT})", path.display())))?;
    let panel = read_panel_csv(file)?;
    let boot = config.bootstrap;
    let weekdays = weekday_summary(&panel, boot.resamples, boot.level, config.seed)?;
    let dir = out.join("eda");
    let path = dir.join("weekday_summary.csv");
    write_rows(
        &path,
        &["weekday", "n_days", "mean", "lo", "hi"],
        weekdays.iter().map(|w| {
            vec![w.weekday.clone(), w.n_days.to_string(), w.mean.to_string(), w.lo.to_string(), w.hi.to_string()]
        }),
    )?;
    announce(&path);
    let path = dir.join("sessions_vs_chargers.csv");
    write_rows(
        &path,
        &["day", "sessions", "active_chargers", "recorded_chargers"],
        sessions_vs_chargers(&panel).iter().map(|d| {
            vec![
                d.day.to_string(),
                d.sessions.to_string(),
                d.active_chargers.to_string(),
                d.recorded_chargers.to_string(),
            ]
        }),
    )?;
    announce(&path);
    Ok(())
}
