//! Forecast metrics, station-level dominance and bootstrap summaries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{quantile, weekday_name, DailyPanelRow};

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::invalid(format!(
            "metric inputs need equal non-zero lengths, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Percentage error over rows with `y > 0`; also returns the number of rows skipped.
pub fn mape_with_skipped(y: &[f64], y_hat: &[f64]) -> Result<(f64, usize)> {
    check_pair(y, y_hat)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in y.iter().zip(y_hat) {
        if *a > 0.0 {
            sum += (a - b).abs() / a;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("MAPE is undefined when every observed count is zero"));
    }
    Ok((100.0 * sum / n as f64, y.len() - n))
}

pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    mape_with_skipped(y, y_hat).map(|(v, _)| v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Mae,
    Rmse,
    Mape,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mae, Metric::Rmse, Metric::Mape];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Mape => "MAPE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub station: String,
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when every observed count is zero.
    pub mape: Option<f64>,
    pub mape_skipped: usize,
}

impl MetricRow {
    pub fn compute(station: &str, y: &[f64], y_hat: &[f64]) -> Result<Self> {
        let (mape, mape_skipped) = match mape_with_skipped(y, y_hat) {
            Ok((v, s)) => (Some(v), s),
            Err(_) if !y.is_empty() => (None, y.len()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            station: station.to_string(),
            n: y.len(),
            mae: mae(y, y_hat)?,
            rmse: rmse(y, y_hat)?,
            mape,
            mape_skipped,
        })
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Mae => Some(self.mae),
            Metric::Rmse => Some(self.rmse),
            Metric::Mape => self.mape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub model: String,
    /// Sorted by station id.
    pub stations: Vec<MetricRow>,
    pub pooled: MetricRow,
}

impl MetricTable {
    pub fn station_values(&self, metric: Metric) -> BTreeMap<String, f64> {
        self.stations
            .iter()
            .filter_map(|r| r.get(metric).map(|v| (r.station.clone(), v)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["station", "model", "n", "mae", "rmse", "mape", "mape_skipped"])?;
        for row in self.stations.iter().chain(std::iter::once(&self.pooled)) {
            w.write_record([
                row.station.clone(),
                self.model.clone(),
                row.n.to_string(),
                row.mae.to_string(),
                row.rmse.to_string(),
                row.mape.map(|v| v.to_string()).unwrap_or_default(),
                row.mape_skipped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One forecast row in the exchange format shared by every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cpid: String,
    pub day: NaiveDate,
    pub mean: f64,
}

/// Observed count for one station-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cpid: String,
    pub day: NaiveDate,
    pub y: u32,
}

/// Reads a `(cpid, day, mean)` CSV; extra columns are ignored.
pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictionRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::invalid(format!("prediction file lacks a {name} column")))
    };
    let (ci, di, mi) = (find("cpid")?, find("day")?, find("mean")?);
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let day = NaiveDate::parse_from_str(field(di), "%Y-%m-%d")
            .map_err(|_| Error::invalid(format!("prediction row {}: bad day {:?}", line + 2, field(di))))?;
        let mean: f64 = field(mi)
            .parse()
            .map_err(|_| Error::invalid(format!("prediction row {}: bad mean {:?}", line + 2, field(mi))))?;
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::invalid(format!("prediction row {}: mean must be finite and non-negative", line + 2)));
        }
        out.push(PredictionRecord {
            cpid: field(ci).to_string(),
            day,
            mean,
        });
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Scores `predictions` against every row of `truth`.
///
/// Each truth row needs exactly one prediction; predictions for station-days
/// absent from `truth` are ignored.
pub fn metric_table(model: &str, truth: &[Observation], predictions: &[PredictionRecord]) -> Result<MetricTable> {
    if truth.is_empty() {
        return Err(Error::invalid("no observations to score"));
    }
    let mut lookup: HashMap<(&str, NaiveDate), f64> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if lookup.insert((p.cpid.as_str(), p.day), p.mean).is_some() {
            return Err(Error::invalid(format!("model {model}: duplicate prediction for {} on {}", p.cpid, p.day)));
        }
    }
    let mut by_station: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_y, mut all_hat) = (Vec::with_capacity(truth.len()), Vec::with_capacity(truth.len()));
    for o in truth {
        let hat = *lookup
            .get(&(o.cpid.as_str(), o.day))
            .ok_or_else(|| Error::invalid(format!("model {model}: no prediction for {} on {}", o.cpid, o.day)))?;
        let entry = by_station.entry(o.cpid.as_str()).or_default();
        entry.0.push(f64::from(o.y));
        entry.1.push(hat);
        all_y.push(f64::from(o.y));
        all_hat.push(hat);
    }
    let stations = by_station
        .iter()
        .map(|(s, (y, h))| MetricRow::compute(s, y, h))
        .collect::<Result<_>>()?;
    Ok(MetricTable {
        model: model.to_string(),
        stations,
        pooled: MetricRow::compute("pooled", &all_y, &all_hat)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceResult {
    pub model_a: String,
    pub model_b: String,
    pub metric: Metric,
    pub n_stations: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

impl DominanceResult {
    pub fn percent_a(&self) -> f64 {
        percent_1dp(self.wins_a, self.n_stations)
    }

    pub fn percent_b(&self) -> f64 {
        percent_1dp(self.wins_b, self.n_stations)
    }
}

/// `100·k/n` rounded to one decimal place.
pub fn percent_1dp(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (1000.0 * k as f64 / n as f64).round() / 10.0
}

/// Counts stations where each model's error is strictly lower.
pub fn dominance(
    errors_a: &BTreeMap<String, f64>,
    errors_b: &BTreeMap<String, f64>,
) -> Result<(usize, usize, usize)> {
    if errors_a.len() != errors_b.len() || errors_a.keys().zip(errors_b.keys()).any(|(a, b)| a != b) {
        return Err(Error::invalid("dominance needs the same set of stations for both models"));
    }
    let (mut a, mut b, mut t) = (0, 0, 0);
    for (ea, eb) in errors_a.values().zip(errors_b.values()) {
        if ea < eb {
            a += 1;
        } else if eb < ea {
            b += 1;
        } else {
            t += 1;
        }
    }
    Ok((a, b, t))
}

/// Pairwise dominance for one metric between two tables.
///
/// For MAPE only stations where both models have a defined value take part.
pub fn compare_tables(a: &MetricTable, b: &MetricTable, metric: Metric) -> Result<DominanceResult> {
    let sa: BTreeSet<&str> = a.stations.iter().map(|r| r.station.as_str()).collect();
    let sb: BTreeSet<&str> = b.stations.iter().map(|r| r.station.as_str()).collect();
    if sa != sb {
        return Err(Error::invalid(format!(
            "models {} and {} were scored on different stations",
            a.model, b.model
        )));
    }
    let mut va = a.station_values(metric);
    let mut vb = b.station_values(metric);
    va.retain(|k, _| vb.contains_key(k));
    vb.retain(|k, _| va.contains_key(k));
    let (wins_a, wins_b, ties) = dominance(&va, &vb)?;
    Ok(DominanceResult {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        metric,
        n_stations: va.len(),
        wins_a,
        wins_b,
        ties,
    })
}

/// Long-format `(station, model, metric, value)` rows, pooled rows last per model.
pub fn write_long_metrics<W: Write>(tables: &[MetricTable], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station", "model", "metric", "value"])?;
    for t in tables {
        for row in t.stations.iter().chain(std::iter::once(&t.pooled)) {
            for m in Metric::ALL {
                if let Some(v) = row.get(m) {
                    w.write_record([row.station.as_str(), t.model.as_str(), m.as_str(), &v.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dominance<W: Write>(results: &[DominanceResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model_a", "model_b", "metric", "n_stations", "wins_a", "wins_b", "ties", "pct_a", "pct_b",
    ])?;
    for r in results {
        w.write_record([
            r.model_a.clone(),
            r.model_b.clone(),
            r.metric.as_str().to_string(),
            r.n_stations.to_string(),
            r.wins_a.to_string(),
            r.wins_b.to_string(),
            r.ties.to_string(),
            format!("{:.1}", r.percent_a()),
            format!("{:.1}", r.percent_b()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one value"));
    }
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("bootstrap needs resamples >= 1 and a level in (0, 1)"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    // Rounding in the resample means must not push a constant vector off its value.
    let clamp = |v: f64| {
        let (min, max) = values.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        v.clamp(min, max)
    };
    Ok(BootstrapCi {
        mean,
        lo: clamp(quantile(&means, alpha)),
        hi: clamp(quantile(&means, 1.0 - alpha)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdaySummary {
    pub weekday: String,
    pub n_days: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Mean total daily sessions per weekday, Monday first; weekdays without data are omitted.
pub fn weekday_summary(panel: &[DailyPanelRow], resamples: usize, level: f64, seed: u64) -> Result<Vec<WeekdaySummary>> {
    if panel.is_empty() {
        return Err(Error::invalid("weekday summary needs a non-empty panel"));
    }
    let mut totals: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for row in panel {
        *totals.entry(row.day).or_default() += f64::from(row.y);
    }
    let mut groups: [Vec<f64>; 7] = Default::default();
    for (day, total) in &totals {
        groups[day.weekday().num_days_from_monday() as usize].push(*total);
    }
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(i, g)| {
            let ci = bootstrap_ci(g, resamples, level, seed.wrapping_add(i as u64))?;
            Ok(WeekdaySummary {
                weekday: weekday_name(Weekday::try_from(i as u8).expect("weekday index")).to_string(),
                n_days: g.len(),
                mean: ci.mean,
                lo: ci.lo,
                hi: ci.hi,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDay {
    pub day: NaiveDate,
    pub sessions: u64,
    /// Stations with at least one session that day.
    pub active_chargers: usize,
    /// Stations whose first recorded session is on or before that day.
    pub recorded_chargers: usize,
}

/// Daily session totals next to the size of the charger network.
pub fn sessions_vs_chargers(panel: &[DailyPanelRow]) -> Vec<NetworkDay> {
    let mut first_seen: BTreeMap<&str, NaiveDate> = BTreeMap::new();
    let mut days: BTreeMap<NaiveDate, (u64, usize)> = BTreeMap::new();
    for row in panel {
        let entry = days.entry(row.day).or_default();
        entry.0 += u64::from(row.y);
        if row.y > 0 {
            entry.1 += 1;
            let first = first_seen.entry(row.cpid.as_str()).or_insert(row.day);
            *first = (*first).min(row.day);
        }
    }
    let mut starts: Vec<NaiveDate> = first_seen.into_values().collect();
    starts.sort_unstable();
    days.into_iter()
        .map(|(day, (sessions, active))| NetworkDay {
            day,
            sessions,
            active_chargers: active,
            recorded_chargers: starts.partition_point(|d| *d <= day),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let y = [1.0, 5.0, 2.0];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(mape(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 3.5);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert_eq!(mape(&[2.0, 4.0], &[1.0, 5.0]).unwrap(), 37.5);
        let err = mape(&[0.0, 0.0], &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("undefined"));
        assert_eq!(mape_with_skipped(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), (50.0, 1));
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dominance_examples() {
        let a: BTreeMap<String, f64> = (0..96).map(|i| (format!("s{i:02}"), 1.0)).collect();
        let b: BTreeMap<String, f64> = (0..96).map(|i| (format!("s{i:02}"), if i < 77 { 2.0 } else { 0.5 })).collect();
        assert_eq!(dominance(&a, &a).unwrap(), (0, 0, 96));
        assert_eq!(dominance(&a, &b).unwrap(), (77, 19, 0));
        assert_eq!(dominance(&b, &a).unwrap(), (19, 77, 0));
        assert_eq!(percent_1dp(77, 96), 80.2);
        let mut c = a.clone();
        c.remove("s00");
        assert!(dominance(&a, &c).is_err());
    }

    #[test]
    fn bootstrap_examples() {
        let c = bootstrap_ci(&[3.0; 10], 1000, 0.95, 1).unwrap();
        assert_eq!((c.lo, c.mean, c.hi), (3.0, 3.0, 3.0));
        let b = bootstrap_ci(&[0.0, 1.0], 20000, 0.95, 7).unwrap();
        assert_eq!(b.mean, 0.5);
        assert!(b.lo.abs() < 1e-12 && (b.hi - 1.0).abs() < 1e-12);
        assert_eq!(b, bootstrap_ci(&[0.0, 1.0], 20000, 0.95, 7).unwrap());
        assert!(bootstrap_ci(&[], 10, 0.95, 1).is_err());
    }
}
