//! Session-log curation, daily aggregation and the model frame.

mod curate;
mod frame;
mod panel;
mod records;
mod spline;
mod timestamp;

use chrono::NaiveDate;

pub use curate::{
    curate, in_any_window, CleanSession, CurationReport, CurationRules, DateWindow, DropRule, MonthCounts,
    DEFAULT_EXCLUDED_CPIDS,
};
pub use frame::{build_frame, temporal_split, ModelFrame, ALL_COLUMNS};
pub use panel::{aggregate_daily, attach_weather, read_panel_csv, weekday_name, write_panel_csv, DailyPanelRow, ZeroFill};
pub use records::{
    parse_amount, parse_duration_min, read_sessions, read_stations, read_weather, ColumnMap, ConnectorClass,
    RawSessionRecord, StationMeta, WeatherDay,
};
pub use spline::{quantile, NaturalSpline};
pub use timestamp::{parse_date, parse_timestamp, resolve_policy, DatePolicy};

use crate::error::Result;

/// Everything produced by one pass from raw logs to the model frame.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub sessions: Vec<CleanSession>,
    pub report: CurationReport,
    pub panel: Vec<DailyPanelRow>,
    pub frame: ModelFrame,
}

/// Curates, aggregates and builds the frame; spline knots use days before `split_date`.
pub fn ingest(
    records: &[RawSessionRecord],
    stations: &[StationMeta],
    weather: &[WeatherDay],
    rules: &CurationRules,
    zero_fill: ZeroFill,
    split_date: Option<NaiveDate>,
) -> Result<Ingested> {
    let (mut sessions, mut report) = curate(records, rules)?;
    let (mut panel, orphans) = aggregate_daily(&sessions, stations, zero_fill, &rules.excluded_windows);
    report.record_missing_station(&orphans);
    if !orphans.is_empty() {
        let known: std::collections::BTreeSet<&str> = stations.iter().map(|s| s.cpid.as_str()).collect();
        sessions.retain(|s| known.contains(s.cpid.as_str()));
    }
    attach_weather(&mut panel, weather)?;
    let frame = build_frame(&panel, stations, weather, split_date)?;
    Ok(Ingested {
        sessions,
        report,
        panel,
        frame,
    })
}
