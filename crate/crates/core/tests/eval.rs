use std::collections::BTreeMap;

use chargecast::eval::{
    bootstrap_ci, compare_tables, dominance, mae, mape, metric_table, read_predictions, rmse, sessions_vs_chargers,
    weekday_summary, write_predictions, Metric, Observation, PredictionRecord,
};
use chargecast::ingest::{ConnectorClass, DailyPanelRow};
use chrono::{Datelike, NaiveDate};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 1..40)) {
        let (y, h): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(rmse(&y, &h).unwrap() >= mae(&y, &h).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn metrics_ignore_joint_permutation(
        pairs in prop::collection::vec((0u32..20, 0.0..20.0f64), 2..30),
        seed in any::<u64>(),
    ) {
        let (y, h): (Vec<f64>, Vec<f64>) = pairs.iter().map(|&(a, b)| (f64::from(a) + 1.0, b)).unzip();
        let mut idx: Vec<usize> = (0..y.len()).collect();
        idx.rotate_left((seed % y.len() as u64) as usize);
        idx.reverse();
        let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let hp: Vec<f64> = idx.iter().map(|&i| h[i]).collect();
        prop_assert!((mae(&y, &h).unwrap() - mae(&yp, &hp).unwrap()).abs() < 1e-12);
        prop_assert!((rmse(&y, &h).unwrap() - rmse(&yp, &hp).unwrap()).abs() < 1e-12);
        prop_assert!((mape(&y, &h).unwrap() - mape(&yp, &hp).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn dominance_is_antisymmetric(errs in prop::collection::vec((0u8..5, 0u8..5), 1..50)) {
        let a: BTreeMap<String, f64> = errs.iter().enumerate().map(|(i, e)| (format!("s{i}"), f64::from(e.0))).collect();
        let b: BTreeMap<String, f64> = errs.iter().enumerate().map(|(i, e)| (format!("s{i}"), f64::from(e.1))).collect();
        let (wa, wb, t) = dominance(&a, &b).unwrap();
        prop_assert_eq!(dominance(&b, &a).unwrap(), (wb, wa, t));
        prop_assert_eq!(wa + wb + t, errs.len());
    }
}

fn obs(cpid: &str, day: u32, y: u32) -> Observation {
    Observation {
        cpid: cpid.into(),
        day: NaiveDate::from_ymd_opt(2024, 10, day).unwrap(),
        y,
    }
}

fn pred(cpid: &str, day: u32, mean: f64) -> PredictionRecord {
    PredictionRecord {
        cpid: cpid.into(),
        day: NaiveDate::from_ymd_opt(2024, 10, day).unwrap(),
        mean,
    }
}

#[test]
fn metric_table_scores_each_station_and_the_pool() {
    let truth = vec![obs("B", 7, 2), obs("A", 7, 0), obs("A", 8, 0), obs("B", 8, 4)];
    let preds = vec![pred("A", 7, 3.0), pred("A", 8, 4.0), pred("B", 7, 1.0), pred("B", 8, 5.0), pred("Z", 1, 9.0)];
    let t = metric_table("m", &truth, &preds).unwrap();
    assert_eq!(t.stations[0].station, "A");
    assert_eq!(t.stations[0].mae, 3.5);
    assert_eq!(t.stations[0].mape, None);
    assert_eq!(t.stations[0].mape_skipped, 2);
    assert_eq!(t.stations[1].mape, Some(37.5));
    assert_eq!(t.pooled.n, 4);
    assert_eq!(t.pooled.mape, Some(37.5));
    assert_eq!(t.pooled.mape_skipped, 2);

    let exact: Vec<PredictionRecord> = truth.iter().map(|o| PredictionRecord { cpid: o.cpid.clone(), day: o.day, mean: f64::from(o.y) }).collect();
    let zero = metric_table("truth", &truth, &exact).unwrap();
    assert_eq!((zero.pooled.mae, zero.pooled.rmse, zero.pooled.mape), (0.0, 0.0, Some(0.0)));

    let d = compare_tables(&t, &t, Metric::Mae).unwrap();
    assert_eq!((d.wins_a, d.wins_b, d.ties), (0, 0, 2));
    let d = compare_tables(&zero, &t, Metric::Mape).unwrap();
    assert_eq!((d.n_stations, d.wins_a), (1, 1));

    assert!(metric_table("m", &truth, &preds[1..]).is_err());
}

#[test]
fn predictions_round_trip_through_csv() {
    let preds = vec![pred("A", 7, 3.25), pred("B", 9, 0.0)];
    let mut buf = Vec::new();
    write_predictions(&preds, &mut buf).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("cpid,day,mean\n"));
    assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);
    let extra = "model,cpid,mean,day\nx,A,1.5,2024-10-07\n";
    assert_eq!(read_predictions(extra.as_bytes()).unwrap(), vec![pred("A", 7, 1.5)]);
    assert!(read_predictions("cpid,day\nA,2024-10-07\n".as_bytes()).is_err());
    assert!(read_predictions("cpid,day,mean\nA,2024-10-07,-1\n".as_bytes()).is_err());
}

fn panel_row(cpid: &str, day: NaiveDate, y: u32) -> DailyPanelRow {
    DailyPanelRow {
        cpid: cpid.into(),
        day,
        y,
        connector_class: ConnectorClass::Ac,
        is_public_access: true,
        is_free: false,
        weekday: day.weekday(),
        temp_c: None,
        wind_ms: None,
        humidity_pct: None,
    }
}

#[test]
fn weekday_summary_examples() {
    let start = NaiveDate::from_ymd_opt(2024, 9, 2).unwrap();
    let panel: Vec<DailyPanelRow> = start
        .iter_days()
        .take(28)
        .flat_map(|d| [panel_row("A", d, 3), panel_row("B", d, 2)])
        .collect();
    let s = weekday_summary(&panel, 500, 0.95, 9).unwrap();
    assert_eq!(s.len(), 7);
    assert_eq!(s[0].weekday, "Mon");
    assert!(s.iter().all(|w| w.mean == 5.0 && w.lo == 5.0 && w.hi == 5.0 && w.n_days == 4));

    let one = weekday_summary(&panel[..2], 500, 0.95, 9).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!((one[0].lo, one[0].mean, one[0].hi), (5.0, 5.0, 5.0));
    assert!(weekday_summary(&[], 10, 0.95, 1).is_err());
}

#[test]
fn network_series_counts_chargers() {
    let d = |k: u32| NaiveDate::from_ymd_opt(2024, 9, k).unwrap();
    let panel = vec![
        panel_row("A", d(1), 2),
        panel_row("B", d(1), 0),
        panel_row("A", d(2), 0),
        panel_row("B", d(2), 5),
        panel_row("C", d(3), 1),
    ];
    let s = sessions_vs_chargers(&panel);
    let got: Vec<(u64, usize, usize)> = s.iter().map(|n| (n.sessions, n.active_chargers, n.recorded_chargers)).collect();
    assert_eq!(got, vec![(2, 1, 1), (5, 1, 2), (1, 1, 3)]);
}

#[test]
fn bootstrap_is_seeded() {
    let v: Vec<f64> = (0..50).map(|i| f64::from(i % 7)).collect();
    let a = bootstrap_ci(&v, 1000, 0.95, 5).unwrap();
    assert_eq!(a, bootstrap_ci(&v, 1000, 0.95, 5).unwrap());
    assert!(a.lo < a.mean && a.mean < a.hi);
}
