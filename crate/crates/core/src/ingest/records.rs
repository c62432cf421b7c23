//! Raw input records and their CSV readers.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::timestamp::parse_date;

/// One charging session as read from a log file; missing fields are empty/None.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSessionRecord {
    pub cpid: String,
    pub start_raw: String,
    pub end_raw: String,
    pub duration_min: Option<f64>,
    pub energy_kwh: Option<f64>,
    pub cost: Option<f64>,
    pub local_authority: String,
    pub source_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnectorClass {
    #[serde(rename = "AC")]
    Ac,
    Rapid,
}

impl ConnectorClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rapid" | "dc" => Some(Self::Rapid),
            "ac" | "fast" | "slow" | "standard" => Some(Self::Ac),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ac => "AC",
            Self::Rapid => "Rapid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub cpid: String,
    pub lon: f64,
    pub lat: f64,
    pub connector_class: ConnectorClass,
    pub is_public_access: bool,
    /// First day on which charging is paid; `None` means paid throughout.
    pub tariff_start_date: Option<NaiveDate>,
    pub neighbourhood: String,
}

impl StationMeta {
    pub fn is_free_on(&self, day: NaiveDate) -> bool {
        self.tariff_start_date.is_some_and(|t| day < t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    pub date: NaiveDate,
    pub temp_c: f64,
    pub wind_ms: f64,
    pub humidity_pct: f64,
}

/// Header names of the session log columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub cpid: String,
    pub start_date: String,
    /// Empty when the date column already carries the time.
    pub start_time: String,
    pub end_date: String,
    pub end_time: String,
    pub duration: String,
    pub energy: String,
    pub cost: String,
    pub local_authority: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            cpid: "CPID".into(),
            start_date: "Start Date".into(),
            start_time: "Start Time".into(),
            end_date: "End Date".into(),
            end_time: "End Time".into(),
            duration: "Duration".into(),
            energy: "Total kWh".into(),
            cost: "Cost".into(),
            local_authority: "Local Authority".into(),
        }
    }
}

/// Minutes from `h:mm:ss`, `h:mm` or a plain number of minutes.
pub fn parse_duration_min(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().ok()?;
        let minutes = match parts.as_slice() {
            [h, m] => h * 60.0 + m,
            [h, m, sec] => h * 60.0 + m + sec / 60.0,
            _ => return None,
        };
        return (minutes.is_finite() && parts.iter().all(|&p| p >= 0.0)).then_some(minutes);
    }
    parse_amount(s)
}

/// Non-negative finite number, tolerating a currency sign and thousands separators.
pub fn parse_amount(s: &str) -> Option<f64> {
    let cleaned: String = s.trim().trim_start_matches('£').chars().filter(|&c| c != ',').collect();
    let v: f64 = cleaned.trim().parse().ok()?;
    (v.is_finite() && v >= 0.0).then_some(v)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn header_index(headers: &csv::StringRecord, name: &str, file: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
        .ok_or_else(|| Error::invalid(format!("{file}: missing column '{name}'")))
}

fn join_date_time(date: &str, time: Option<&str>) -> String {
    match time.map(str::trim).filter(|t| !t.is_empty()) {
        Some(t) if !date.trim().is_empty() => format!("{} {}", date.trim(), t),
        _ => date.trim().to_string(),
    }
}

pub fn read_sessions(path: &Path, columns: &ColumnMap) -> Result<Vec<RawSessionRecord>> {
    let file = file_label(path);
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| header_index(&headers, name, &file);
    let optional = |name: &str| {
        if name.is_empty() {
            Ok(None)
        } else {
            col(name).map(Some)
        }
    };
    let (i_cpid, i_sd, i_ed) = (col(&columns.cpid)?, col(&columns.start_date)?, optional(&columns.end_date)?);
    let (i_st, i_et) = (optional(&columns.start_time)?, optional(&columns.end_time)?);
    let (i_dur, i_kwh, i_cost) = (optional(&columns.duration)?, col(&columns.energy)?, optional(&columns.cost)?);
    let i_la = optional(&columns.local_authority)?;

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: Option<usize>| i.and_then(|i| rec.get(i)).unwrap_or("");
        out.push(RawSessionRecord {
            cpid: get(Some(i_cpid)).trim().to_string(),
            start_raw: join_date_time(get(Some(i_sd)), i_st.map(|i| get(Some(i)))),
            end_raw: join_date_time(get(i_ed), i_et.map(|i| get(Some(i)))),
            duration_min: parse_duration_min(get(i_dur)),
            energy_kwh: parse_amount(get(Some(i_kwh))),
            cost: parse_amount(get(i_cost)),
            local_authority: get(i_la).trim().to_string(),
            source_file: file.clone(),
        });
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "public" => Some(true),
        "0" | "false" | "no" | "n" | "private" | "restricted" => Some(false),
        _ => None,
    }
}

/// Reads `cpid, lon, lat, connector_class, is_public_access, tariff_start_date, neighbourhood`.
pub fn read_stations(path: &Path) -> Result<Vec<StationMeta>> {
    let file = file_label(path);
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = [
        "cpid",
        "lon",
        "lat",
        "connector_class",
        "is_public_access",
        "tariff_start_date",
        "neighbourhood",
    ]
    .iter()
    .map(|n| header_index(&headers, n, &file))
    .collect::<Result<_>>()?;
    let mut out: Vec<StationMeta> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let bad = |what: &str| Error::invalid(format!("{file} row {}: invalid {what}", line + 2));
        let tariff = f(5);
        out.push(StationMeta {
            cpid: f(0).to_string(),
            lon: f(1).parse().map_err(|_| bad("lon"))?,
            lat: f(2).parse().map_err(|_| bad("lat"))?,
            connector_class: ConnectorClass::parse(f(3)).ok_or_else(|| bad("connector_class"))?,
            is_public_access: parse_bool(f(4)).ok_or_else(|| bad("is_public_access"))?,
            tariff_start_date: if tariff.is_empty() {
                None
            } else {
                Some(parse_date(tariff).ok_or_else(|| bad("tariff_start_date"))?)
            },
            neighbourhood: f(6).to_string(),
        });
    }
    let mut seen = BTreeMap::new();
    for s in &out {
        if seen.insert(s.cpid.clone(), ()).is_some() {
            return Err(Error::invalid(format!("{file}: duplicate cpid {}", s.cpid)));
        }
    }
    Ok(out)
}

/// Reads `date, temp_c, wind_ms, humidity_pct`.
pub fn read_weather(path: &Path) -> Result<Vec<WeatherDay>> {
    let file = file_label(path);
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = ["date", "temp_c", "wind_ms", "humidity_pct"]
        .iter()
        .map(|n| header_index(&headers, n, &file))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let bad = |what: &str| Error::invalid(format!("{file} row {}: invalid {what}", line + 2));
        let num = |k: usize, what: &str| -> Result<f64> {
            f(k).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(what))
        };
        out.push(WeatherDay {
            date: parse_date(f(0)).ok_or_else(|| bad("date"))?,
            temp_c: num(1, "temp_c")?,
            wind_ms: num(2, "wind_ms")?,
            humidity_pct: num(3, "humidity_pct")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration_min("01:30:00"), Some(90.0));
        assert_eq!(parse_duration_min("0:45"), Some(45.0));
        assert_eq!(parse_duration_min("12.5"), Some(12.5));
        assert_eq!(parse_duration_min(""), None);
        assert_eq!(parse_duration_min("-3"), None);
    }

    #[test]
    fn amounts() {
        assert_eq!(parse_amount("£1,234.50"), Some(1234.5));
        assert_eq!(parse_amount("nan"), None);
        assert_eq!(parse_amount("abc"), None);
    }

    #[test]
    fn free_until_tariff_start() {
        let s = StationMeta {
            cpid: "1".into(),
            lon: 0.0,
            lat: 0.0,
            connector_class: ConnectorClass::Ac,
            is_public_access: true,
            tariff_start_date: NaiveDate::from_ymd_opt(2023, 3, 1),
            neighbourhood: String::new(),
        };
        assert!(s.is_free_on(NaiveDate::from_ymd_opt(2023, 2, 28).unwrap()));
        assert!(!s.is_free_on(NaiveDate::from_ymd_opt(2023, 3, 1).unwrap()));
        let paid = StationMeta {
            tariff_start_date: None,
            ..s
        };
        assert!(!paid.is_free_on(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()));
    }

    #[test]
    fn reads_session_file_with_default_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        std::fs::write(
            &p,
            "CPID,Start Date,Start Time,End Date,End Time,Duration,Total kWh,Cost,Site,Local Authority\n\
             50001,25/12/2022,10:00,25/12/2022,11:00,01:00:00,7.5,2.10,Car park,Glasgow City\n\
             50002,26/12/2022,09:00,,,,,,,Glasgow City\n",
        )
        .unwrap();
        let recs = read_sessions(&p, &ColumnMap::default()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].start_raw, "25/12/2022 10:00");
        assert_eq!(recs[0].duration_min, Some(60.0));
        assert_eq!(recs[1].energy_kwh, None);
        assert_eq!(recs[1].end_raw, "");
        assert_eq!(recs[0].source_file, "log.csv");
        let bad = ColumnMap {
            energy: "kWh".into(),
            ..ColumnMap::default()
        };
        assert!(read_sessions(&p, &bad).unwrap_err().to_string().contains("'kWh'"));
    }
}
