//! Timestamp parsing with day-first / month-first disambiguation.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatePolicy {
    DayFirst,
    MonthFirst,
    #[default]
    Auto,
}

/// Reading of the date part of a raw timestamp before a policy is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DateShape {
    Iso(i32, u32, u32),
    /// `a/b/year` with both orders still possible.
    Slashed(u32, u32, i32),
}

fn split_date_time(raw: &str) -> Option<(&str, Option<&str>)> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    let mut parts = raw.splitn(2, |c: char| c == ' ' || c == 'T');
    let date = parts.next()?;
    let time = parts.next().map(str::trim).filter(|s| !s.is_empty());
    Some((date, time))
}

fn parse_year(s: &str) -> Option<i32> {
    let y: i32 = s.parse().ok()?;
    match s.len() {
        2 => Some(2000 + y),
        4 => Some(y),
        _ => None,
    }
}

fn date_shape(date: &str) -> Option<DateShape> {
    let fields: Vec<&str> = date.split(['/', '-', '.']).collect();
    if fields.len() != 3 || fields.iter().any(|f| f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit())) {
        return None;
    }
    if fields[0].len() == 4 {
        return Some(DateShape::Iso(
            fields[0].parse().ok()?,
            fields[1].parse().ok()?,
            fields[2].parse().ok()?,
        ));
    }
    Some(DateShape::Slashed(
        fields[0].parse().ok()?,
        fields[1].parse().ok()?,
        parse_year(fields[2])?,
    ))
}

fn parse_time(s: &str) -> Option<NaiveTime> {
    ["%H:%M:%S%.f", "%H:%M:%S", "%H:%M"]
        .iter()
        .find_map(|f| NaiveTime::parse_from_str(s, f).ok())
}

/// Which order an unambiguous slashed date forces, if any.
fn vote(raw: &str) -> Option<DatePolicy> {
    let (date, _) = split_date_time(raw)?;
    match date_shape(date)? {
        DateShape::Slashed(a, b, _) if a > 12 && b <= 12 => Some(DatePolicy::DayFirst),
        DateShape::Slashed(a, b, _) if b > 12 && a <= 12 => Some(DatePolicy::MonthFirst),
        _ => None,
    }
}

/// Resolves `Auto` for one file by majority vote over its unambiguous rows.
///
/// Files whose dates are all ISO (or contain no slashed dates) need no vote
/// and resolve to day-first.
pub fn resolve_policy<'a, I>(policy: DatePolicy, raws: I, file: &str) -> Result<DatePolicy>
where
    I: IntoIterator<Item = &'a str>,
{
    if policy != DatePolicy::Auto {
        return Ok(policy);
    }
    let (mut day, mut month, mut ambiguous) = (0usize, 0usize, 0usize);
    for raw in raws {
        match vote(raw) {
            Some(DatePolicy::DayFirst) => day += 1,
            Some(DatePolicy::MonthFirst) => month += 1,
            _ => {
                let both_valid = split_date_time(raw)
                    .and_then(|(d, _)| date_shape(d))
                    .is_some_and(|s| matches!(s, DateShape::Slashed(a, b, _) if a <= 12 && b <= 12));
                if both_valid {
                    ambiguous += 1;
                }
            }
        }
    }
    match (day, month) {
        (0, 0) if ambiguous == 0 => Ok(DatePolicy::DayFirst),
        (0, 0) => Err(Error::invalid(format!(
            "{file}: no unambiguous dates to infer day/month order; set date_policy explicitly"
        ))),
        (d, m) if d > m => Ok(DatePolicy::DayFirst),
        (d, m) if m > d => Ok(DatePolicy::MonthFirst),
        _ => Err(Error::invalid(format!(
            "{file}: day-first and month-first dates are equally common; set date_policy explicitly"
        ))),
    }
}

/// Parses `date[ time]` under a resolved policy. `Auto` falls back to the
/// single-row vote and then to day-first.
pub fn parse_timestamp(raw: &str, policy: DatePolicy) -> Option<NaiveDateTime> {
    let (date, time) = split_date_time(raw)?;
    let day = match date_shape(date)? {
        DateShape::Iso(y, m, d) => NaiveDate::from_ymd_opt(y, m, d)?,
        DateShape::Slashed(a, b, y) => {
            let policy = match policy {
                DatePolicy::Auto => vote(raw).unwrap_or(DatePolicy::DayFirst),
                p => p,
            };
            match policy {
                DatePolicy::MonthFirst => NaiveDate::from_ymd_opt(y, a, b)?,
                _ => NaiveDate::from_ymd_opt(y, b, a)?,
            }
        }
    };
    let time = match time {
        Some(t) => parse_time(t)?,
        None => NaiveTime::MIN,
    };
    Some(day.and_time(time))
}

/// Parses a calendar date given in ISO or day-first form.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    parse_timestamp(raw, DatePolicy::DayFirst).map(|t| t.date())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    #[test]
    fn unambiguous_day_first() {
        assert_eq!(parse_timestamp("25/12/2022 10:00", DatePolicy::Auto), Some(ts("2022-12-25 10:00")));
    }

    #[test]
    fn file_vote_decides_ambiguous_rows() {
        let rows = ["25/12/2022 10:00", "02/03/2023 08:00"];
        let p = resolve_policy(DatePolicy::Auto, rows, "a.csv").unwrap();
        assert_eq!(p, DatePolicy::DayFirst);
        assert_eq!(parse_timestamp(rows[1], p), Some(ts("2023-03-02 08:00")));
        let rows = ["12/25/2022 10:00", "02/03/2023 08:00"];
        let p = resolve_policy(DatePolicy::Auto, rows, "b.csv").unwrap();
        assert_eq!(p, DatePolicy::MonthFirst);
        assert_eq!(parse_timestamp(rows[1], p), Some(ts("2023-02-03 08:00")));
    }

    #[test]
    fn invalid_calendar_reading_is_rejected() {
        assert_eq!(parse_timestamp("31/31/2023", DatePolicy::Auto), None);
        assert_eq!(parse_timestamp("", DatePolicy::Auto), None);
        assert_eq!(parse_timestamp("yesterday", DatePolicy::DayFirst), None);
        assert_eq!(parse_timestamp("01/02/2023 25:00", DatePolicy::DayFirst), None);
    }

    #[test]
    fn all_ambiguous_file_needs_explicit_policy() {
        let err = resolve_policy(DatePolicy::Auto, ["01/02/2023 10:00", "03/04/2023"], "c.csv").unwrap_err();
        assert!(err.to_string().contains("date_policy"));
        assert_eq!(
            resolve_policy(DatePolicy::MonthFirst, ["01/02/2023"], "c.csv").unwrap(),
            DatePolicy::MonthFirst
        );
    }

    #[test]
    fn iso_and_seconds_are_accepted() {
        assert_eq!(parse_timestamp("2024-10-06T07:30:15", DatePolicy::Auto).unwrap().to_string(), "2024-10-06 07:30:15");
        assert_eq!(resolve_policy(DatePolicy::Auto, ["2024-10-06 07:30"], "d.csv").unwrap(), DatePolicy::DayFirst);
        assert_eq!(parse_date("06/10/2024"), NaiveDate::from_ymd_opt(2024, 10, 6));
    }
}
