//! Daily session counts per charge point, zero-filled.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::curate::{in_any_window, CleanSession, DateWindow};
use crate::ingest::records::{ConnectorClass, StationMeta, WeatherDay};

/// Which (cpid, day) cells without sessions receive a zero row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroFill {
    /// Every day between a charge point's first and last session.
    #[default]
    ActiveWindow,
    /// Every day between the first and last session of the whole log.
    FullRange,
    /// Only days with at least one session.
    ObservedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPanelRow {
    pub cpid: String,
    pub day: NaiveDate,
    pub y: u32,
    pub connector_class: ConnectorClass,
    pub is_public_access: bool,
    pub is_free: bool,
    pub weekday: Weekday,
    pub temp_c: Option<f64>,
    pub wind_ms: Option<f64>,
    pub humidity_pct: Option<f64>,
}

fn days_between(a: NaiveDate, b: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    a.iter_days().take_while(move |d| *d <= b)
}

/// Counts sessions per (cpid, day) and zero-fills according to `zero_fill`.
///
/// Returns the panel sorted by (cpid, day) and the sessions whose cpid has no
/// station metadata. Days inside `excluded_windows` never receive rows.
pub fn aggregate_daily(
    sessions: &[CleanSession],
    stations: &[StationMeta],
    zero_fill: ZeroFill,
    excluded_windows: &[DateWindow],
) -> (Vec<DailyPanelRow>, Vec<CleanSession>) {
    let meta: BTreeMap<&str, &StationMeta> = stations.iter().map(|s| (s.cpid.as_str(), s)).collect();
    let mut counts: BTreeMap<&str, BTreeMap<NaiveDate, u32>> = BTreeMap::new();
    let mut orphans = Vec::new();
    for s in sessions {
        if meta.contains_key(s.cpid.as_str()) {
            *counts.entry(s.cpid.as_str()).or_default().entry(s.day).or_default() += 1;
        } else {
            orphans.push(s.clone());
        }
    }
    let global = counts
        .values()
        .flat_map(|m| m.keys().copied())
        .fold(None, |acc: Option<(NaiveDate, NaiveDate)>, d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        });

    let mut rows = Vec::new();
    for (cpid, by_day) in &counts {
        let station = meta[cpid];
        let days: Vec<NaiveDate> = match zero_fill {
            ZeroFill::ObservedOnly => by_day.keys().copied().collect(),
            ZeroFill::ActiveWindow => {
                let lo = *by_day.keys().next().expect("non-empty");
                let hi = *by_day.keys().next_back().expect("non-empty");
                days_between(lo, hi).collect()
            }
            ZeroFill::FullRange => {
                let (lo, hi) = global.expect("some sessions");
                days_between(lo, hi).collect()
            }
        };
        for day in days {
            if in_any_window(excluded_windows, day) {
                continue;
            }
            rows.push(DailyPanelRow {
                cpid: cpid.to_string(),
                day,
                y: by_day.get(&day).copied().unwrap_or(0),
                connector_class: station.connector_class,
                is_public_access: station.is_public_access,
                is_free: station.is_free_on(day),
                weekday: day.weekday(),
                temp_c: None,
                wind_ms: None,
                humidity_pct: None,
            });
        }
    }
    (rows, orphans)
}

/// Fills the weather columns; every panel day must be covered.
pub fn attach_weather(panel: &mut [DailyPanelRow], weather: &[WeatherDay]) -> Result<()> {
    let by_day: BTreeMap<NaiveDate, &WeatherDay> = weather.iter().map(|w| (w.date, w)).collect();
    let missing: BTreeSet<NaiveDate> = panel
        .iter()
        .map(|r| r.day)
        .filter(|d| !by_day.contains_key(d))
        .collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().take(20).map(|d| d.to_string()).collect();
        let more = if missing.len() > 20 {
            format!(" and {} more", missing.len() - 20)
        } else {
            String::new()
        };
        return Err(Error::invalid(format!(
            "weather file has no entry for {} panel day(s): {}{more}",
            missing.len(),
            list.join(", ")
        )));
    }
    for r in panel.iter_mut() {
        let w = by_day[&r.day];
        r.temp_c = Some(w.temp_c);
        r.wind_ms = Some(w.wind_ms);
        r.humidity_pct = Some(w.humidity_pct);
    }
    Ok(())
}

pub fn weekday_name(w: Weekday) -> &'static str {
    match w {
        Weekday::Mon => "Mon",
        Weekday::Tue => "Tue",
        Weekday::Wed => "Wed",
        Weekday::Thu => "Thu",
        Weekday::Fri => "Fri",
        Weekday::Sat => "Sat",
        Weekday::Sun => "Sun",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const PANEL_HEADER: [&str; 10] = [
    "cpid",
    "day",
    "y",
    "connector_class",
    "is_public_access",
    "is_free",
    "weekday",
    "temp_c",
    "wind_ms",
    "humidity_pct",
];

pub fn write_panel_csv<W: Write>(panel: &[DailyPanelRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PANEL_HEADER)?;
    for r in panel {
        w.write_record([
            r.cpid.clone(),
            r.day.to_string(),
            r.y.to_string(),
            r.connector_class.as_str().to_string(),
            u8::from(r.is_public_access).to_string(),
            u8::from(r.is_free).to_string(),
            weekday_name(r.weekday).to_string(),
            opt(r.temp_c),
            opt(r.wind_ms),
            opt(r.humidity_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_panel_csv<R: Read>(input: R) -> Result<Vec<DailyPanelRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().collect::<Vec<_>>() != PANEL_HEADER {
        return Err(Error::invalid("panel CSV header does not match the expected columns"));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::invalid(format!("panel row {}: invalid {what}", line + 2));
        let num = |k: usize| -> Result<Option<f64>> {
            let s = &rec[k];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(PANEL_HEADER[k]))
            }
        };
        let day: NaiveDate = rec[1].parse().map_err(|_| bad("day"))?;
        out.push(DailyPanelRow {
            cpid: rec[0].to_string(),
            day,
            y: rec[2].parse().map_err(|_| bad("y"))?,
            connector_class: ConnectorClass::parse(&rec[3]).ok_or_else(|| bad("connector_class"))?,
            is_public_access: &rec[4] == "1",
            is_free: &rec[5] == "1",
            weekday: day.weekday(),
            temp_c: num(7)?,
            wind_ms: num(8)?,
            humidity_pct: num(9)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn session(cpid: &str, day: &str) -> CleanSession {
        let start: NaiveDateTime = d(day).and_hms_opt(10, 0, 0).unwrap();
        CleanSession {
            cpid: cpid.into(),
            start,
            end: start,
            day: d(day),
            duration_min: 10.0,
            energy_kwh: 5.0,
            cost: 1.0,
            local_authority: String::new(),
            source_file: "f".into(),
        }
    }

    fn station(cpid: &str) -> StationMeta {
        StationMeta {
            cpid: cpid.into(),
            lon: -4.25,
            lat: 55.86,
            connector_class: ConnectorClass::Rapid,
            is_public_access: true,
            tariff_start_date: Some(d("2024-01-03")),
            neighbourhood: String::new(),
        }
    }

    #[test]
    fn counts_and_zero_fill() {
        let s = [session("A", "2024-01-01"), session("A", "2024-01-01"), session("A", "2024-01-03")];
        let (rows, orphans) = aggregate_daily(&s, &[station("A")], ZeroFill::ActiveWindow, &[]);
        assert!(orphans.is_empty());
        assert_eq!(rows.iter().map(|r| r.y).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert_eq!(rows.iter().map(|r| r.is_free).collect::<Vec<_>>(), vec![true, true, false]);
        let (obs, _) = aggregate_daily(&s, &[station("A")], ZeroFill::ObservedOnly, &[]);
        assert_eq!(obs.len(), 2);
    }

    #[test]
    fn single_session_gives_single_row() {
        let (rows, _) = aggregate_daily(&[session("A", "2024-01-05")], &[station("A")], ZeroFill::ActiveWindow, &[]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].y, 1);
    }

    #[test]
    fn full_range_and_windows_and_orphans() {
        let s = [session("A", "2024-01-01"), session("B", "2024-01-04"), session("Z", "2024-01-02")];
        let win = [DateWindow {
            start: d("2024-01-02"),
            end: d("2024-01-02"),
        }];
        let (rows, orphans) = aggregate_daily(&s, &[station("A"), station("B")], ZeroFill::FullRange, &win);
        assert_eq!(orphans.len(), 1);
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.day != d("2024-01-02")));
        assert_eq!(rows.iter().map(|r| r.y).sum::<u32>(), 2);
    }

    #[test]
    fn weather_must_cover_panel() {
        let (mut rows, _) = aggregate_daily(&[session("A", "2024-01-01"), session("A", "2024-01-02")], &[station("A")], ZeroFill::ActiveWindow, &[]);
        let w = [WeatherDay {
            date: d("2024-01-01"),
            temp_c: 4.0,
            wind_ms: 3.0,
            humidity_pct: 80.0,
        }];
        let err = attach_weather(&mut rows, &w).unwrap_err();
        assert!(err.to_string().contains("2024-01-02"));
    }

    #[test]
    fn panel_csv_round_trip() {
        let (mut rows, _) = aggregate_daily(&[session("A", "2024-01-01")], &[station("A")], ZeroFill::ActiveWindow, &[]);
        rows[0].temp_c = Some(3.5);
        let mut buf = Vec::new();
        write_panel_csv(&rows, &mut buf).unwrap();
        let back = read_panel_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }
}
