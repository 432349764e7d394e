//! Training-data preparation: per-day normalization of DA/RT net loads,
//! forecast-error fields, quarter labels, CSV ingestion and dataset splits.
//!
//! Normalization is anchored at the per-node DA minimum so that the
//! normalized DA range is exactly 1.0 in floating point: values are computed
//! as `(x - min)/range - (ave - min)/range`, which is algebraically
//! `(x - ave)/range` but places the extremes on exact grid points.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read load file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed load CSV at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("degenerate day {date} at node {node}: flat DA profile")]
    DegenerateDay { date: Date, node: String },
    #[error("invalid date: {0}")]
    BadDate(String),
    #[error("not enough samples: need more than {requested}, have {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Calendar date without any timezone semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Date {
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

impl Date {
    pub fn parse(text: &str) -> Result<Date, DataError> {
        let parts: Vec<&str> = text.split('-').collect();
        let err = || DataError::BadDate(text.to_string());
        if parts.len() != 3 {
            return Err(err());
        }
        let year: i32 = parts[0].parse().map_err(|_| err())?;
        let month: u32 = parts[1].parse().map_err(|_| err())?;
        let day: u32 = parts[2].parse().map_err(|_| err())?;
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(err());
        }
        Ok(Date { year, month, day })
    }
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
            if leap {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

impl TryFrom<String> for Date {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Date::parse(&s).map_err(|e| e.to_string())
    }
}

impl From<Date> for String {
    fn from(d: Date) -> String {
        d.to_string()
    }
}

/// Condition label. The default vocabulary is the four quarters of the year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label(pub usize);

pub const QUARTER_LABELS: usize = 4;

/// Quarter-of-year labeling: Jan-Mar 0, Apr-Jun 1, Jul-Sep 2, Oct-Dec 3.
pub fn assign_label(date: Date) -> Label {
    Label(((date.month - 1) / 3) as usize)
}

/// One day of data: DA forecast and RT actual net load, `[node][hour]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySample {
    pub date: Date,
    pub da_real: Vec<Vec<f64>>,
    pub rt_real: Vec<Vec<f64>>,
    pub label: Label,
}

impl DaySample {
    pub fn n_nodes(&self) -> usize {
        self.da_real.len()
    }

    pub fn horizon(&self) -> usize {
        self.da_real.first().map_or(0, |row| row.len())
    }
}

/// Per-node min/average/max of the DA profile of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub da_min: Vec<f64>,
    pub da_ave: Vec<f64>,
    pub da_max: Vec<f64>,
}

impl DayStats {
    pub fn range(&self, node: usize) -> f64 {
        self.da_max[node] - self.da_min[node]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    Normalized,
    PhysicalMw,
}

/// Forecast-error field, `[node][hour]`, tagged with its unit system.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField {
    pub eps: Vec<Vec<f64>>,
    pub kind: ErrorKind,
}

impl ErrorField {
    pub fn zeros(n_nodes: usize, horizon: usize, kind: ErrorKind) -> Self {
        ErrorField {
            eps: vec![vec![0.0; horizon]; n_nodes],
            kind,
        }
    }
}

/// Direction convention used when turning a normalized error back into a
/// physical net load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `d = DA - eps * range`; inverts the error definition exactly, so the
    /// round trip reproduces the RT actuals.
    RoundTrip,
    /// `d = eps * range + DA`, the additive convention.
    PaperPlus,
}

impl SignMode {
    /// Sign of `d(load)/d(eps)` divided by the range factor.
    pub fn direction(self) -> f64 {
        match self {
            SignMode::RoundTrip => -1.0,
            SignMode::PaperPlus => 1.0,
        }
    }
}

impl fmt::Display for SignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignMode::RoundTrip => write!(f, "round_trip"),
            SignMode::PaperPlus => write!(f, "paper_plus"),
        }
    }
}

/// Per-node min/mean/max of the day's DA values.
pub fn day_stats(sample: &DaySample) -> Result<DayStats, DataError> {
    let horizon = sample.horizon();
    let mut da_min = Vec::with_capacity(sample.n_nodes());
    let mut da_ave = Vec::with_capacity(sample.n_nodes());
    let mut da_max = Vec::with_capacity(sample.n_nodes());
    for (node, row) in sample.da_real.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        if hi <= lo {
            return Err(DataError::DegenerateDay {
                date: sample.date,
                node: format!("{node}"),
            });
        }
        da_min.push(lo);
        da_ave.push(sum / horizon as f64);
        da_max.push(hi);
    }
    Ok(DayStats {
        da_min,
        da_ave,
        da_max,
    })
}

fn normalize_row(row: &[f64], min: f64, ave: f64, range: f64) -> Vec<f64> {
    let center = (ave - min) / range;
    row.iter().map(|&v| (v - min) / range - center).collect()
}

/// Normalized DA and RT profiles. Both are normalized with the DA statistics.
pub fn normalize_day(
    sample: &DaySample,
    stats: &DayStats,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), DataError> {
    let mut da_norm = Vec::with_capacity(sample.n_nodes());
    let mut rt_norm = Vec::with_capacity(sample.n_nodes());
    for node in 0..sample.n_nodes() {
        let range = stats.range(node);
        if range <= 0.0 {
            return Err(DataError::DegenerateDay {
                date: sample.date,
                node: format!("{node}"),
            });
        }
        da_norm.push(normalize_row(
            &sample.da_real[node],
            stats.da_min[node],
            stats.da_ave[node],
            range,
        ));
        rt_norm.push(normalize_row(
            &sample.rt_real[node],
            stats.da_min[node],
            stats.da_ave[node],
            range,
        ));
    }
    Ok((da_norm, rt_norm))
}

/// Normalized forecast error `eps = da_norm - rt_norm`.
pub fn forecast_error(da_norm: &[Vec<f64>], rt_norm: &[Vec<f64>]) -> ErrorField {
    let eps = da_norm
        .iter()
        .zip(rt_norm)
        .map(|(da, rt)| da.iter().zip(rt).map(|(a, b)| a - b).collect())
        .collect();
    ErrorField {
        eps,
        kind: ErrorKind::Normalized,
    }
}

/// Turn a normalized error field into physical net load values `[node][hour]`.
pub fn denormalize_error(
    eps: &ErrorField,
    sample: &DaySample,
    stats: &DayStats,
    sign: SignMode,
) -> Result<Vec<Vec<f64>>, DataError> {
    if eps.kind != ErrorKind::Normalized {
        return Err(DataError::Shape("expected a normalized error field".into()));
    }
    if eps.eps.len() != sample.n_nodes() {
        return Err(DataError::Shape(format!(
            "error field has {} nodes, sample has {}",
            eps.eps.len(),
            sample.n_nodes()
        )));
    }
    let mut out = Vec::with_capacity(sample.n_nodes());
    for node in 0..sample.n_nodes() {
        if eps.eps[node].len() != sample.horizon() {
            return Err(DataError::Shape(format!(
                "error field horizon {} != sample horizon {}",
                eps.eps[node].len(),
                sample.horizon()
            )));
        }
        let range = stats.range(node);
        let row = eps.eps[node]
            .iter()
            .zip(&sample.da_real[node])
            .map(|(&e, &da)| match sign {
                SignMode::RoundTrip => da - e * range,
                SignMode::PaperPlus => e * range + da,
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Deterministic shuffle split into `(train, test)`.
pub fn split_dataset(
    samples: Vec<DaySample>,
    n_train: usize,
    seed: u64,
) -> Result<(Vec<DaySample>, Vec<DaySample>), DataError> {
    if n_train >= samples.len() {
        return Err(DataError::InsufficientData {
            requested: n_train,
            available: samples.len(),
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train_idx = &order[..n_train];
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(samples.len() - n_train);
    let chosen: std::collections::BTreeSet<usize> = train_idx.iter().copied().collect();
    for (i, s) in samples.into_iter().enumerate() {
        if chosen.contains(&i) {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    Ok((train, test))
}

/// Result of ingesting a load CSV: complete days kept in date order, plus
/// the count of days dropped for missing hours or flat profiles.
#[derive(Debug, Clone)]
pub struct Ingest {
    pub zones: Vec<String>,
    pub days: Vec<DaySample>,
    pub dropped: Vec<(Date, String)>,
}

pub const HOURS_PER_DAY: usize = 24;

/// Parse a load CSV with header `date,zone,hour,da_mw,rt_mw` (hour 1..=24).
/// Days missing any (zone, hour) cell or with a flat DA profile at some zone
/// are dropped and reported.
pub fn ingest_load_csv(path: impl AsRef<Path>) -> Result<Ingest, DataError> {
    let text = std::fs::read_to_string(path)?;
    ingest_load_str(&text)
}

pub fn ingest_load_str(text: &str) -> Result<Ingest, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let expected = "date,zone,hour,da_mw,rt_mw";
    if header.trim() != expected {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected header {expected:?}, got {header:?}"),
        });
    }

    // (date, zone, hour) -> (da, rt)
    let mut cells: std::collections::BTreeMap<(Date, String), Vec<Option<(f64, f64)>>> =
        std::collections::BTreeMap::new();
    let mut zones: Vec<String> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let date = Date::parse(fields[0].trim()).map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let zone = fields[1].trim().to_string();
        let hour: usize = fields[2].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            msg: format!("bad hour {:?}", fields[2]),
        })?;
        if !(1..=HOURS_PER_DAY).contains(&hour) {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("hour {hour} outside 1..=24"),
            });
        }
        let da: f64 = fields[3].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            msg: format!("bad da_mw {:?}", fields[3]),
        })?;
        let rt: f64 = fields[4].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            msg: format!("bad rt_mw {:?}", fields[4]),
        })?;
        if !da.is_finite() || !rt.is_finite() {
            return Err(DataError::Parse {
                line: line_no,
                msg: "non-finite load value".into(),
            });
        }
        if !zones.contains(&zone) {
            zones.push(zone.clone());
        }
        let slot = cells
            .entry((date, zone))
            .or_insert_with(|| vec![None; HOURS_PER_DAY]);
        slot[hour - 1] = Some((da, rt));
    }
    if cells.is_empty() {
        return Err(DataError::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    zones.sort();

    let mut dates: Vec<Date> = cells.keys().map(|(d, _)| *d).collect();
    dates.dedup();
    let mut days = Vec::new();
    let mut dropped = Vec::new();
    'day: for date in dates {
        let mut da = Vec::with_capacity(zones.len());
        let mut rt = Vec::with_capacity(zones.len());
        for zone in &zones {
            let Some(slot) = cells.get(&(date, zone.clone())) else {
                dropped.push((date, format!("zone {zone} missing")));
                continue 'day;
            };
            let mut da_row = Vec::with_capacity(HOURS_PER_DAY);
            let mut rt_row = Vec::with_capacity(HOURS_PER_DAY);
            for (h, cell) in slot.iter().enumerate() {
                match cell {
                    Some((d, r)) => {
                        da_row.push(*d);
                        rt_row.push(*r);
                    }
                    None => {
                        dropped.push((date, format!("zone {zone} hour {} missing", h + 1)));
                        continue 'day;
                    }
                }
            }
            da.push(da_row);
            rt.push(rt_row);
        }
        let sample = DaySample {
            date,
            da_real: da,
            rt_real: rt,
            label: assign_label(date),
        };
        match day_stats(&sample) {
            Ok(_) => days.push(sample),
            Err(DataError::DegenerateDay { node, .. }) => {
                dropped.push((date, format!("flat DA profile at zone index {node}")));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Ingest {
        zones,
        days,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sample() -> DaySample {
        DaySample {
            date: Date::parse("2018-04-10").unwrap(),
            da_real: vec![vec![10.0, 20.0, 30.0]],
            rt_real: vec![vec![12.0, 18.0, 33.0]],
            label: Label(1),
        }
    }

    #[test]
    fn stats_of_simple_row() {
        let stats = day_stats(&toy_sample()).unwrap();
        assert_eq!(stats.da_min, vec![10.0]);
        assert_eq!(stats.da_ave, vec![20.0]);
        assert_eq!(stats.da_max, vec![30.0]);
    }

    #[test]
    fn flat_day_rejected() {
        let mut s = toy_sample();
        s.da_real = vec![vec![5.0, 5.0, 5.0]];
        assert!(matches!(
            day_stats(&s),
            Err(DataError::DegenerateDay { .. })
        ));
    }

    #[test]
    fn stats_permutation_invariant() {
        let mut s = toy_sample();
        s.da_real = vec![vec![30.0, 20.0, 10.0]];
        let a = day_stats(&toy_sample()).unwrap();
        let b = day_stats(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_worked_example() {
        let s = toy_sample();
        let stats = day_stats(&s).unwrap();
        let (da_norm, rt_norm) = normalize_day(&s, &stats).unwrap();
        for (got, want) in da_norm[0].iter().zip([-0.5, 0.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in rt_norm[0].iter().zip([-0.4, -0.1, 0.65]) {
            assert!((got - want).abs() < 1e-12);
        }
        let eps = forecast_error(&da_norm, &rt_norm);
        for (got, want) in eps.eps[0].iter().zip([-0.1, 0.1, -0.15]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rt_equal_da_gives_zero_error() {
        let mut s = toy_sample();
        s.rt_real = s.da_real.clone();
        let stats = day_stats(&s).unwrap();
        let (da_norm, rt_norm) = normalize_day(&s, &stats).unwrap();
        assert_eq!(da_norm, rt_norm);
        let eps = forecast_error(&da_norm, &rt_norm);
        assert!(eps.eps[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn error_antisymmetric() {
        let s = toy_sample();
        let stats = day_stats(&s).unwrap();
        let (da_norm, rt_norm) = normalize_day(&s, &stats).unwrap();
        let fwd = forecast_error(&da_norm, &rt_norm);
        let rev = forecast_error(&rt_norm, &da_norm);
        for (a, b) in fwd.eps[0].iter().zip(&rev.eps[0]) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn round_trip_recovers_rt() {
        let s = toy_sample();
        let stats = day_stats(&s).unwrap();
        let (da_norm, rt_norm) = normalize_day(&s, &stats).unwrap();
        let eps = forecast_error(&da_norm, &rt_norm);
        let d = denormalize_error(&eps, &s, &stats, SignMode::RoundTrip).unwrap();
        for (got, want) in d[0].iter().zip(&s.rt_real[0]) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn paper_plus_worked_example() {
        let s = toy_sample();
        let stats = day_stats(&s).unwrap();
        let eps = ErrorField {
            eps: vec![vec![-0.1, 0.1, -0.15]],
            kind: ErrorKind::Normalized,
        };
        let d = denormalize_error(&eps, &s, &stats, SignMode::PaperPlus).unwrap();
        for (got, want) in d[0].iter().zip([8.0, 22.0, 27.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_error_denormalizes_to_da() {
        let s = toy_sample();
        let stats = day_stats(&s).unwrap();
        let eps = ErrorField::zeros(1, 3, ErrorKind::Normalized);
        for sign in [SignMode::RoundTrip, SignMode::PaperPlus] {
            let d = denormalize_error(&eps, &s, &stats, sign).unwrap();
            assert_eq!(d, s.da_real);
        }
    }

    #[test]
    fn normalized_da_range_is_exactly_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let row: Vec<f64> = (0..24).map(|_| rng.gen_range(50.0..5000.0)).collect();
            let s = DaySample {
                date: Date::parse("2019-06-15").unwrap(),
                da_real: vec![row.clone()],
                rt_real: vec![row],
                label: Label(1),
            };
            let stats = match day_stats(&s) {
                Ok(st) => st,
                Err(_) => continue,
            };
            let (da_norm, _) = normalize_day(&s, &stats).unwrap();
            let hi = da_norm[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = da_norm[0].iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(hi - lo, 1.0);
        }
    }

    #[test]
    fn quarter_labels() {
        assert_eq!(assign_label(Date::parse("2018-04-10").unwrap()), Label(1));
        assert_eq!(assign_label(Date::parse("2018-01-01").unwrap()), Label(0));
        assert_eq!(assign_label(Date::parse("2020-12-31").unwrap()), Label(3));
        assert_eq!(assign_label(Date::parse("2019-07-20").unwrap()), Label(2));
    }

    #[test]
    fn bad_dates_rejected() {
        assert!(Date::parse("2018-13-01").is_err());
        assert!(Date::parse("2018-02-30").is_err());
        assert!(Date::parse("2020-02-29").is_ok());
        assert!(Date::parse("2019-02-29").is_err());
        assert!(Date::parse("nonsense").is_err());
    }

    fn sample_on(date: &str) -> DaySample {
        let mut s = toy_sample();
        s.date = Date::parse(date).unwrap();
        s
    }

    #[test]
    fn split_sizes_and_determinism() {
        let days: Vec<DaySample> = (1..=28).map(|d| sample_on(&format!("2018-02-{d:02}"))).collect();
        let (train1, test1) = split_dataset(days.clone(), 20, 9).unwrap();
        assert_eq!(train1.len(), 20);
        assert_eq!(test1.len(), 8);
        let (train2, test2) = split_dataset(days.clone(), 20, 9).unwrap();
        let dates = |v: &[DaySample]| v.iter().map(|s| s.date).collect::<Vec<_>>();
        assert_eq!(dates(&train1), dates(&train2));
        assert_eq!(dates(&test1), dates(&test2));
        // disjoint partition
        for t in dates(&train1) {
            assert!(!dates(&test1).contains(&t));
        }
    }

    #[test]
    fn split_requires_spare_samples() {
        let days: Vec<DaySample> = (1..=10).map(|d| sample_on(&format!("2018-03-{d:02}"))).collect();
        assert!(matches!(
            split_dataset(days, 10, 0),
            Err(DataError::InsufficientData { .. })
        ));
    }

    #[test]
    fn split_eleven_hundred_days() {
        let days: Vec<DaySample> = (0..1100)
            .map(|i| sample_on(&format!("{:04}-{:02}-{:02}", 2018 + i / 336, 1 + (i / 28) % 12, 1 + i % 28)))
            .collect();
        let (train, test) = split_dataset(days, 1000, 3).unwrap();
        assert_eq!(train.len(), 1000);
        assert_eq!(test.len(), 100);
    }

    fn toy_csv(days: &[&str]) -> String {
        let mut out = String::from("date,zone,hour,da_mw,rt_mw\n");
        for date in days {
            for zone in ["z1", "z2"] {
                for hour in 1..=24 {
                    let da = 100.0 + hour as f64 * 3.0;
                    let rt = da + 1.5;
                    out.push_str(&format!("{date},{zone},{hour},{da},{rt}\n"));
                }
            }
        }
        out
    }

    #[test]
    fn ingest_complete_days() {
        let csv = toy_csv(&["2018-01-05", "2018-04-11", "2018-10-02"]);
        let ingest = ingest_load_str(&csv).unwrap();
        assert_eq!(ingest.zones, vec!["z1", "z2"]);
        assert_eq!(ingest.days.len(), 3);
        assert!(ingest.dropped.is_empty());
        assert_eq!(ingest.days[0].label, Label(0));
        assert_eq!(ingest.days[1].label, Label(1));
        assert_eq!(ingest.days[2].label, Label(3));
    }

    #[test]
    fn ingest_drops_incomplete_day() {
        let mut csv = toy_csv(&["2018-01-05", "2018-01-06"]);
        // remove one hour row of the second day
        let needle = "2018-01-06,z2,13,";
        let pos = csv.find(needle).unwrap();
        let end = csv[pos..].find('\n').unwrap() + pos + 1;
        csv.replace_range(pos..end, "");
        let ingest = ingest_load_str(&csv).unwrap();
        assert_eq!(ingest.days.len(), 1);
        assert_eq!(ingest.dropped.len(), 1);
    }

    #[test]
    fn ingest_rejects_empty() {
        assert!(matches!(
            ingest_load_str("date,zone,hour,da_mw,rt_mw\n"),
            Err(DataError::Parse { .. })
        ));
        assert!(matches!(ingest_load_str(""), Err(DataError::Parse { .. })));
    }
}
