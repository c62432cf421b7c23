//! Response vector, fixed-effect design matrix and row indices.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::panel::{attach_weather, DailyPanelRow};
use crate::ingest::records::{ConnectorClass, StationMeta, WeatherDay};
use crate::ingest::spline::NaturalSpline;
use crate::linalg::DenseMatrix;

pub const ALL_COLUMNS: [&str; 15] = [
    "intercept", "rapid", "public", "free", "mon", "tue", "wed", "thu", "sat", "sun", "temp_s1", "temp_s2",
    "temp_s3", "wind", "humidity",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFrame {
    pub y: Vec<u32>,
    pub x: DenseMatrix<f64>,
    pub column_names: Vec<String>,
    /// Row → position in `cpids`.
    pub cpid_index: Vec<usize>,
    /// Row → position in `calendar` (zero-based).
    pub day_index: Vec<usize>,
    /// Sorted charge-point identifiers.
    pub cpids: Vec<String>,
    /// (lon, lat) per entry of `cpids`.
    pub coords: Vec<(f64, f64)>,
    /// Sorted distinct days of the full panel.
    pub calendar: Vec<NaiveDate>,
    pub spline: NaturalSpline,
}

fn weekday_dummies(w: Weekday) -> [f64; 6] {
    let mut d = [0.0; 6];
    let k = match w {
        Weekday::Mon => Some(0),
        Weekday::Tue => Some(1),
        Weekday::Wed => Some(2),
        Weekday::Thu => Some(3),
        Weekday::Fri => None,
        Weekday::Sat => Some(4),
        Weekday::Sun => Some(5),
    };
    if let Some(k) = k {
        d[k] = 1.0;
    }
    d
}

/// Builds the design matrix from the panel; rows are ordered by (cpid, day).
///
/// Spline knots come from the per-day temperatures of days before
/// `training_end` (all days when `None`). Non-intercept columns that are zero
/// on every row are dropped.
pub fn build_frame(
    panel: &[DailyPanelRow],
    stations: &[StationMeta],
    weather: &[WeatherDay],
    training_end: Option<NaiveDate>,
) -> Result<ModelFrame> {
    if panel.is_empty() {
        return Err(Error::invalid("cannot build a model frame from an empty panel"));
    }
    let mut panel = panel.to_vec();
    panel.sort_by(|a, b| a.cpid.cmp(&b.cpid).then(a.day.cmp(&b.day)));
    attach_weather(&mut panel, weather)?;

    let meta: BTreeMap<&str, &StationMeta> = stations.iter().map(|s| (s.cpid.as_str(), s)).collect();
    let cpids: Vec<String> = panel
        .iter()
        .map(|r| r.cpid.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let coords = cpids
        .iter()
        .map(|c| {
            meta.get(c.as_str())
                .map(|s| (s.lon, s.lat))
                .ok_or_else(|| Error::invalid(format!("no station metadata for cpid {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let calendar: Vec<NaiveDate> = panel
        .iter()
        .map(|r| r.day)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let temp_by_day: BTreeMap<NaiveDate, f64> = panel.iter().map(|r| (r.day, r.temp_c.expect("attached"))).collect();
    let training: Vec<f64> = temp_by_day
        .iter()
        .filter(|(d, _)| training_end.is_none_or(|end| **d < end))
        .map(|(_, &t)| t)
        .collect();
    if training.is_empty() {
        return Err(Error::invalid("no training days before the split date to place spline knots"));
    }
    let spline = NaturalSpline::fit(&training)?;

    let cpid_pos: BTreeMap<&str, usize> = cpids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let day_pos: BTreeMap<NaiveDate, usize> = calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut full = DenseMatrix::zeros(panel.len(), ALL_COLUMNS.len());
    for (i, r) in panel.iter().enumerate() {
        let row = full.row_mut(i);
        row[0] = 1.0;
        row[1] = f64::from(u8::from(r.connector_class == ConnectorClass::Rapid));
        row[2] = f64::from(u8::from(r.is_public_access));
        row[3] = f64::from(u8::from(r.is_free));
        row[4..10].copy_from_slice(&weekday_dummies(r.weekday));
        row[10..13].copy_from_slice(&spline.eval(r.temp_c.expect("attached")));
        row[13] = r.wind_ms.expect("attached");
        row[14] = r.humidity_pct.expect("attached");
    }
    let keep: Vec<usize> = (0..ALL_COLUMNS.len())
        .filter(|&j| j == 0 || (0..panel.len()).any(|i| full[(i, j)] != 0.0))
        .collect();

    Ok(ModelFrame {
        y: panel.iter().map(|r| r.y).collect(),
        x: full.select_columns(&keep),
        column_names: keep.iter().map(|&j| ALL_COLUMNS[j].to_string()).collect(),
        cpid_index: panel.iter().map(|r| cpid_pos[r.cpid.as_str()]).collect(),
        day_index: panel.iter().map(|r| day_pos[&r.day]).collect(),
        cpids,
        coords,
        calendar,
        spline,
    })
}

impl ModelFrame {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols
    }

    pub fn day(&self, row: usize) -> NaiveDate {
        self.calendar[self.day_index[row]]
    }

    pub fn cpid(&self, row: usize) -> &str {
        &self.cpids[self.cpid_index[row]]
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Frame restricted to `rows`; station and calendar tables are shared.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            y: rows.iter().map(|&r| self.y[r]).collect(),
            x: self.x.select_rows(rows),
            column_names: self.column_names.clone(),
            cpid_index: rows.iter().map(|&r| self.cpid_index[r]).collect(),
            day_index: rows.iter().map(|&r| self.day_index[r]).collect(),
            cpids: self.cpids.clone(),
            coords: self.coords.clone(),
            calendar: self.calendar.clone(),
            spline: self.spline.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cpid".to_string(), "day".into(), "day_index".into(), "y".into()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![
                self.cpid(r).to_string(),
                self.day(r).to_string(),
                (self.day_index[r] + 1).to_string(),
                self.y[r].to_string(),
            ];
            rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows dated before `split_date` train; the rest (including that day) test.
pub fn temporal_split(frame: &ModelFrame, split_date: NaiveDate) -> Result<(ModelFrame, ModelFrame)> {
    let (train, test): (Vec<usize>, Vec<usize>) = (0..frame.n_rows()).partition(|&r| frame.day(r) < split_date);
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "split date {split_date} leaves the {} side empty",
            if train.is_empty() { "training" } else { "test" }
        )));
    }
    Ok((frame.subset(&train), frame.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::panel::weekday_name;
    use chrono::Datelike;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn fixture() -> (Vec<DailyPanelRow>, Vec<StationMeta>, Vec<WeatherDay>) {
        let stations = vec![
            StationMeta {
                cpid: "B".into(),
                lon: -4.25,
                lat: 55.86,
                connector_class: ConnectorClass::Rapid,
                is_public_access: true,
                tariff_start_date: Some(d("2024-10-08")),
                neighbourhood: String::new(),
            },
            StationMeta {
                cpid: "A".into(),
                lon: -4.26,
                lat: 55.87,
                connector_class: ConnectorClass::Ac,
                is_public_access: false,
                tariff_start_date: None,
                neighbourhood: String::new(),
            },
        ];
        let mut panel = Vec::new();
        let mut weather = Vec::new();
        for (k, day) in d("2024-10-01").iter_days().take(10).enumerate() {
            weather.push(WeatherDay {
                date: day,
                temp_c: 5.0 + (k as f64 * 1.7) % 9.0,
                wind_ms: 3.0 + k as f64 * 0.1,
                humidity_pct: 80.0 - k as f64,
            });
            for s in &stations {
                panel.push(DailyPanelRow {
                    cpid: s.cpid.clone(),
                    day,
                    y: k as u32 % 3,
                    connector_class: s.connector_class,
                    is_public_access: s.is_public_access,
                    is_free: s.is_free_on(day),
                    weekday: day.weekday(),
                    temp_c: None,
                    wind_ms: None,
                    humidity_pct: None,
                });
            }
        }
        (panel, stations, weather)
    }

    #[test]
    fn columns_and_dummies() {
        let (panel, stations, weather) = fixture();
        let f = build_frame(&panel, &stations, &weather, Some(d("2024-10-06"))).unwrap();
        assert_eq!(f.column_names, ALL_COLUMNS.map(String::from).to_vec());
        for r in 0..f.n_rows() {
            let dow: f64 = f.x.row(r)[4..10].iter().sum();
            assert!(dow == 0.0 || dow == 1.0);
            if weekday_name(f.day(r).weekday()) == "Fri" {
                assert_eq!(dow, 0.0);
            }
            if f.cpid(r) == "B" && f.day(r) < d("2024-10-08") {
                assert_eq!(&f.x.row(r)[1..4], &[1.0, 1.0, 1.0]);
            }
        }
        assert_eq!(f.cpids, vec!["A", "B"]);
        assert_eq!(f.calendar.len(), 10);
    }

    #[test]
    fn all_zero_columns_are_dropped() {
        let (panel, mut stations, weather) = fixture();
        for s in &mut stations {
            s.connector_class = ConnectorClass::Ac;
        }
        let panel: Vec<DailyPanelRow> = panel
            .into_iter()
            .map(|mut r| {
                r.connector_class = ConnectorClass::Ac;
                r
            })
            .collect();
        let f = build_frame(&panel, &stations, &weather, None).unwrap();
        assert!(f.column("rapid").is_none());
        assert_eq!(f.n_cols(), 14);
    }

    #[test]
    fn split_is_test_inclusive_partition() {
        let (panel, stations, weather) = fixture();
        let f = build_frame(&panel, &stations, &weather, Some(d("2024-10-06"))).unwrap();
        let (train, test) = temporal_split(&f, d("2024-10-06")).unwrap();
        assert_eq!(train.n_rows() + test.n_rows(), f.n_rows());
        assert!((0..train.n_rows()).all(|r| train.day(r) <= d("2024-10-05")));
        assert!((0..test.n_rows()).all(|r| test.day(r) >= d("2024-10-06")));
        assert!(temporal_split(&f, d("2024-09-01")).is_err());
        assert!(temporal_split(&f, d("2024-12-01")).is_err());
    }

    #[test]
    fn missing_weather_is_reported() {
        let (panel, stations, mut weather) = fixture();
        weather.remove(3);
        let err = build_frame(&panel, &stations, &weather, None).unwrap_err();
        assert!(err.to_string().contains("2024-10-04"));
    }

    #[test]
    fn csv_uses_one_based_day_index() {
        let (panel, stations, weather) = fixture();
        let f = build_frame(&panel, &stations, &weather, None).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("cpid,day,day_index,y,intercept,rapid"));
        assert!(lines.next().unwrap().starts_with("A,2024-10-01,1,0,1,"));
    }
}
