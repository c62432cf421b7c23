//! Record-level cleaning rules and the curation report.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::records::RawSessionRecord;
use crate::ingest::timestamp::{parse_timestamp, resolve_policy, DatePolicy};

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }
}

pub fn in_any_window(windows: &[DateWindow], day: NaiveDate) -> bool {
    windows.iter().any(|w| w.contains(day))
}

pub const DEFAULT_EXCLUDED_CPIDS: [&str; 7] = ["62201", "62202", "62203", "62266", "62261", "50433", "62123"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationRules {
    pub capacity_cap_kwh: f64,
    pub tariff_cap_gbp: f64,
    pub excluded_cpids: Vec<String>,
    pub excluded_windows: Vec<DateWindow>,
    pub date_policy: DatePolicy,
}

impl Default for CurationRules {
    fn default() -> Self {
        Self {
            capacity_cap_kwh: 100.0,
            tariff_cap_gbp: 50.0,
            excluded_cpids: DEFAULT_EXCLUDED_CPIDS.iter().map(|s| s.to_string()).collect(),
            excluded_windows: Vec::new(),
            date_policy: DatePolicy::Auto,
        }
    }
}

/// Drop reasons, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropRule {
    NullEntry,
    UnparseableTimestamp,
    ExcludedCpid,
    ExcludedWindow,
    ZeroDuration,
    ZeroEnergy,
    OverCapacity,
    OverTariff,
    MissingStation,
}

impl DropRule {
    pub const ALL: [DropRule; 9] = [
        DropRule::NullEntry,
        DropRule::UnparseableTimestamp,
        DropRule::ExcludedCpid,
        DropRule::ExcludedWindow,
        DropRule::ZeroDuration,
        DropRule::ZeroEnergy,
        DropRule::OverCapacity,
        DropRule::OverTariff,
        DropRule::MissingStation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DropRule::NullEntry => "null-entry",
            DropRule::UnparseableTimestamp => "unparseable-timestamp",
            DropRule::ExcludedCpid => "excluded-cpid",
            DropRule::ExcludedWindow => "excluded-window",
            DropRule::ZeroDuration => "zero-duration",
            DropRule::ZeroEnergy => "zero-energy",
            DropRule::OverCapacity => "over-capacity",
            DropRule::OverTariff => "over-tariff",
            DropRule::MissingStation => "missing-station",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSession {
    pub cpid: String,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub day: NaiveDate,
    pub duration_min: f64,
    pub energy_kwh: f64,
    pub cost: f64,
    pub local_authority: String,
    pub source_file: String,
}

const ISO: &str = "%Y-%m-%d %H:%M:%S%.f";

impl CleanSession {
    /// Raw form that curates back to the same session.
    pub fn to_raw(&self) -> RawSessionRecord {
        RawSessionRecord {
            cpid: self.cpid.clone(),
            start_raw: self.start.format(ISO).to_string(),
            end_raw: self.end.format(ISO).to_string(),
            duration_min: Some(self.duration_min),
            energy_kwh: Some(self.energy_kwh),
            cost: Some(self.cost),
            local_authority: self.local_authority.clone(),
            source_file: self.source_file.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonthCounts {
    pub input: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input_total: usize,
    pub kept: usize,
    pub dropped: BTreeMap<String, usize>,
    /// Keyed by `YYYY-MM` of the session start; unparseable starts are not counted here.
    pub per_month: BTreeMap<String, MonthCounts>,
    pub excluded_cpids: Vec<String>,
    pub excluded_windows: Vec<DateWindow>,
    /// Day/month order used per input file.
    pub date_policies: BTreeMap<String, DatePolicy>,
}

impl CurationReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }

    fn drop(&mut self, rule: DropRule) {
        *self.dropped.entry(rule.name().to_string()).or_default() += 1;
    }

    /// Moves sessions discarded for lack of station metadata from kept to dropped.
    pub fn record_missing_station(&mut self, sessions: &[CleanSession]) {
        for s in sessions {
            self.kept -= 1;
            self.drop(DropRule::MissingStation);
            if let Some(m) = self.per_month.get_mut(&s.start.format("%Y-%m").to_string()) {
                m.kept -= 1;
            }
        }
    }
}

fn check(
    rec: &RawSessionRecord,
    policy: DatePolicy,
    rules: &CurationRules,
    excluded: &BTreeSet<&str>,
) -> std::result::Result<CleanSession, (DropRule, Option<NaiveDateTime>)> {
    if rec.cpid.is_empty() || rec.start_raw.trim().is_empty() || rec.energy_kwh.is_none() {
        return Err((DropRule::NullEntry, None));
    }
    let start = parse_timestamp(&rec.start_raw, policy).ok_or((DropRule::UnparseableTimestamp, None))?;
    let end = if rec.end_raw.trim().is_empty() {
        None
    } else {
        Some(parse_timestamp(&rec.end_raw, policy).ok_or((DropRule::UnparseableTimestamp, Some(start)))?)
    };
    let duration = match (rec.duration_min, end) {
        (Some(d), _) => d,
        (None, Some(e)) => (e - start).num_milliseconds() as f64 / 60_000.0,
        (None, None) => return Err((DropRule::NullEntry, Some(start))),
    };
    let end = end.unwrap_or_else(|| start + Duration::milliseconds((duration * 60_000.0).round() as i64));
    let day = start.date();
    let energy = rec.energy_kwh.unwrap_or(0.0);
    let cost = rec.cost.unwrap_or(0.0);
    let fail = |r| Err((r, Some(start)));
    if excluded.contains(rec.cpid.as_str()) {
        return fail(DropRule::ExcludedCpid);
    }
    if in_any_window(&rules.excluded_windows, day) {
        return fail(DropRule::ExcludedWindow);
    }
    if !(duration > 0.0) {
        return fail(DropRule::ZeroDuration);
    }
    if !(energy > 0.0) {
        return fail(DropRule::ZeroEnergy);
    }
    if energy > rules.capacity_cap_kwh {
        return fail(DropRule::OverCapacity);
    }
    if cost > rules.tariff_cap_gbp {
        return fail(DropRule::OverTariff);
    }
    Ok(CleanSession {
        cpid: rec.cpid.clone(),
        start,
        end,
        day,
        duration_min: duration,
        energy_kwh: energy,
        cost,
        local_authority: rec.local_authority.clone(),
        source_file: rec.source_file.clone(),
    })
}

/// Applies the drop rules; only an undecidable date order is a hard error.
pub fn curate(records: &[RawSessionRecord], rules: &CurationRules) -> Result<(Vec<CleanSession>, CurationReport)> {
    let mut policies: BTreeMap<String, DatePolicy> = BTreeMap::new();
    let mut by_file: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        let v = by_file.entry(r.source_file.as_str()).or_default();
        v.push(r.start_raw.as_str());
        v.push(r.end_raw.as_str());
    }
    for (file, raws) in by_file {
        let p = resolve_policy(rules.date_policy, raws.iter().copied().filter(|s| !s.trim().is_empty()), file)?;
        policies.insert(file.to_string(), p);
    }

    let excluded: BTreeSet<&str> = rules.excluded_cpids.iter().map(String::as_str).collect();
    let mut report = CurationReport {
        input_total: records.len(),
        excluded_cpids: rules.excluded_cpids.clone(),
        excluded_windows: rules.excluded_windows.clone(),
        date_policies: policies.clone(),
        ..Default::default()
    };
    for rule in DropRule::ALL {
        report.dropped.insert(rule.name().to_string(), 0);
    }
    let mut kept = Vec::new();
    for r in records {
        let policy = policies[&r.source_file];
        match check(r, policy, rules, &excluded) {
            Ok(s) => {
                let m = report.per_month.entry(s.start.format("%Y-%m").to_string()).or_default();
                m.input += 1;
                m.kept += 1;
                kept.push(s);
            }
            Err((rule, start)) => {
                report.drop(rule);
                if let Some(t) = start {
                    report.per_month.entry(t.format("%Y-%m").to_string()).or_default().input += 1;
                }
            }
        }
    }
    report.kept = kept.len();
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(cpid: &str, start: &str, dur: f64, kwh: f64, cost: f64) -> RawSessionRecord {
        RawSessionRecord {
            cpid: cpid.into(),
            start_raw: start.into(),
            end_raw: String::new(),
            duration_min: Some(dur),
            energy_kwh: Some(kwh),
            cost: Some(cost),
            local_authority: "Glasgow City".into(),
            source_file: "f.csv".into(),
        }
    }

    fn only_rule(records: &[RawSessionRecord], rules: &CurationRules) -> Vec<&'static str> {
        let (_, rep) = curate(records, rules).unwrap();
        DropRule::ALL
            .iter()
            .filter(|r| rep.dropped[r.name()] > 0)
            .map(|r| r.name())
            .collect()
    }

    #[test]
    fn each_rule_fires() {
        let rules = CurationRules::default();
        assert_eq!(only_rule(&[raw("1", "25/12/2022 10:00", 30.0, 0.0, 0.0)], &rules), ["zero-energy"]);
        assert_eq!(only_rule(&[raw("1", "25/12/2022 10:00", 30.0, 150.0, 0.0)], &rules), ["over-capacity"]);
        assert_eq!(only_rule(&[raw("1", "25/12/2022 10:00", 30.0, 10.0, 80.0)], &rules), ["over-tariff"]);
        assert_eq!(only_rule(&[raw("1", "25/12/2022 10:00", 0.0, 10.0, 1.0)], &rules), ["zero-duration"]);
        assert_eq!(only_rule(&[raw("62266", "25/12/2022 10:00", 30.0, 10.0, 1.0)], &rules), ["excluded-cpid"]);
        assert_eq!(only_rule(&[raw("1", "31/31/2023", 30.0, 10.0, 1.0)], &rules), ["unparseable-timestamp"]);
        let mut r = raw("1", "25/12/2022 10:00", 30.0, 10.0, 1.0);
        r.energy_kwh = None;
        assert_eq!(only_rule(&[r], &rules), ["null-entry"]);
        let windowed = CurationRules {
            excluded_windows: vec![DateWindow {
                start: NaiveDate::from_ymd_opt(2022, 12, 1).unwrap(),
                end: NaiveDate::from_ymd_opt(2022, 12, 31).unwrap(),
            }],
            ..CurationRules::default()
        };
        assert_eq!(only_rule(&[raw("1", "25/12/2022 10:00", 30.0, 10.0, 1.0)], &windowed), ["excluded-window"]);
    }

    #[test]
    fn report_balances_and_policy_is_per_file() {
        let mut recs = vec![
            raw("1", "25/12/2022 10:00", 30.0, 10.0, 1.0),
            raw("1", "02/03/2023 08:00", 30.0, 10.0, 1.0),
            raw("2", "03/02/2023 08:00", 30.0, 0.0, 1.0),
        ];
        recs[2].source_file = "g.csv".into();
        recs.push(RawSessionRecord {
            start_raw: "12/13/2022 09:00".into(),
            source_file: "g.csv".into(),
            ..raw("2", "", 5.0, 3.0, 0.0)
        });
        let (kept, rep) = curate(&recs, &CurationRules::default()).unwrap();
        assert_eq!(rep.kept + rep.dropped_total(), rep.input_total);
        assert_eq!(rep.date_policies["f.csv"], DatePolicy::DayFirst);
        assert_eq!(rep.date_policies["g.csv"], DatePolicy::MonthFirst);
        assert_eq!(kept[1].day, NaiveDate::from_ymd_opt(2023, 3, 2).unwrap());
        assert_eq!(kept[2].day, NaiveDate::from_ymd_opt(2022, 12, 13).unwrap());
        assert_eq!(rep.per_month["2023-03"], MonthCounts { input: 2, kept: 1 });
    }

    #[test]
    fn end_time_fills_missing_duration() {
        let mut r = raw("1", "2024-01-01 10:00", 0.0, 5.0, 0.0);
        r.duration_min = None;
        r.end_raw = "2024-01-01 10:45".into();
        let (kept, _) = curate(&[r], &CurationRules::default()).unwrap();
        assert_eq!(kept[0].duration_min, 45.0);
    }

    #[test]
    fn curation_is_idempotent() {
        let recs = vec![
            raw("1", "25/12/2022 10:00", 30.5, 10.0, 1.0),
            raw("2", "05/01/2023 23:59", 0.25, 99.9, 50.0),
            raw("3", "05/01/2023 07:00", 30.0, 0.0, 1.0),
        ];
        let (once, _) = curate(&recs, &CurationRules::default()).unwrap();
        let again: Vec<RawSessionRecord> = once.iter().map(CleanSession::to_raw).collect();
        let (twice, rep) = curate(&again, &CurationRules::default()).unwrap();
        assert_eq!(once, twice);
        assert_eq!(rep.dropped_total(), 0);
    }
}
