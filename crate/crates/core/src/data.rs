//! Half-hourly series ingestion, scaling into `(−1, 1)`, lag windows and
//! chronological splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SLOTS_PER_DAY: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub timestamp: NaiveDateTime,
    pub kwh: f64,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    None
}

/// Reads `timestamp,kwh` rows. Rows must be strictly increasing in time.
pub fn load_long_csv(path: impl AsRef<Path>) -> Result<Vec<SeriesRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    read_long_csv(file)
}

pub fn read_long_csv(r: impl Read) -> Result<Vec<SeriesRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "kwh" {
        return Err(Error::data(format!(
            "line 1: expected header timestamp,kwh, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<SeriesRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let timestamp = parse_timestamp(&row[0])
            .ok_or_else(|| Error::data(format!("line {line}: bad timestamp {:?}", &row[0])))?;
        let kwh: f64 = row[1]
            .parse()
            .map_err(|_| Error::data(format!("line {line}: bad kwh {:?}", &row[1])))?;
        if !(kwh >= 0.0) || !kwh.is_finite() {
            return Err(Error::data(format!("line {line}: kwh must be a non-negative number, got {kwh}")));
        }
        if let Some(prev) = out.last() {
            if prev.timestamp == timestamp {
                return Err(Error::data(format!("line {line}: duplicate timestamp {timestamp}")));
            }
            if prev.timestamp > timestamp {
                return Err(Error::data(format!(
                    "line {line}: timestamp {timestamp} precedes {}",
                    prev.timestamp
                )));
            }
        }
        out.push(SeriesRecord { timestamp, kwh });
    }
    if out.is_empty() {
        return Err(Error::data("series has no rows"));
    }
    Ok(out)
}

pub fn write_long_csv(path: impl AsRef<Path>, records: &[SeriesRecord]) -> Result<()> {
    write_long_csv_to(File::create(path)?, records)
}

/// Converts the vendor's one-row-per-customer-day layout into a half-hourly
/// series for one customer and consumption category (`"GG"` is gross
/// generation). Title lines before the `Customer` header are skipped.
pub fn ausgrid_wide_to_long(path: impl AsRef<Path>, customer_id: u32, channel: &str) -> Result<Vec<SeriesRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    read_ausgrid_wide(BufReader::new(file), customer_id, channel)
}

pub fn read_ausgrid_wide(mut r: impl BufRead, customer_id: u32, channel: &str) -> Result<Vec<SeriesRecord>> {
    let mut skipped = 0u64;
    let mut header = String::new();
    loop {
        header.clear();
        if r.read_line(&mut header)? == 0 {
            return Err(Error::data("no header row starting with Customer"));
        }
        skipped += 1;
        if header.trim_start().starts_with("Customer") {
            break;
        }
    }
    let mut rest = String::new();
    r.read_to_string(&mut rest)?;
    let body = format!("{header}{rest}");
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let cols: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| cols.iter().position(|c| c.eq_ignore_ascii_case(name));
    let c_cust = find("Customer").ok_or_else(|| Error::data("missing Customer column"))?;
    let c_cat = find("Consumption Category").ok_or_else(|| Error::data("missing Consumption Category column"))?;
    let c_date = find("date").ok_or_else(|| Error::data("missing date column"))?;
    let first_slot = c_date + 1;
    let quality = find("Row Quality");
    let slots_end = quality.unwrap_or(cols.len());
    if slots_end - first_slot != SLOTS_PER_DAY {
        return Err(Error::data(format!(
            "line {skipped}: expected {SLOTS_PER_DAY} half-hour columns after date, found {}",
            slots_end - first_slot
        )));
    }

    let mut days: BTreeMap<NaiveDate, [f64; SLOTS_PER_DAY]> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = skipped + row.position().map_or(0, |p| p.line()) - 1;
        let Some(id) = row.get(c_cust).and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        if id != customer_id || row.get(c_cat) != Some(channel) {
            continue;
        }
        let width = row.len().min(slots_end).saturating_sub(first_slot);
        if width != SLOTS_PER_DAY {
            return Err(Error::data(format!(
                "line {line}: day has {width} half-hour values, expected {SLOTS_PER_DAY}"
            )));
        }
        let date = NaiveDate::parse_from_str(&row[c_date], "%d/%m/%Y")
            .or_else(|_| NaiveDate::parse_from_str(&row[c_date], "%Y-%m-%d"))
            .map_err(|_| Error::data(format!("line {line}: bad date {:?}", &row[c_date])))?;
        let mut vals = [0.0; SLOTS_PER_DAY];
        for (k, v) in vals.iter_mut().enumerate() {
            let cell = &row[first_slot + k];
            *v = cell
                .parse()
                .map_err(|_| Error::data(format!("line {line}: bad value {cell:?} in slot {k}")))?;
            if *v < 0.0 {
                return Err(Error::data(format!("line {line}: negative value in slot {k}")));
            }
        }
        if days.insert(date, vals).is_some() {
            return Err(Error::data(format!("line {line}: duplicate day {date}")));
        }
    }
    if days.is_empty() {
        return Err(Error::NotFound(format!(
            "no rows for customer {customer_id} with category {channel}"
        )));
    }
    let mut out = Vec::with_capacity(days.len() * SLOTS_PER_DAY);
    for (date, vals) in days {
        let midnight = date.and_time(NaiveTime::MIN);
        for (k, &kwh) in vals.iter().enumerate() {
            out.push(SeriesRecord {
                timestamp: midnight + Duration::minutes(30 * k as i64),
                kwh,
            });
        }
    }
    Ok(out)
}

fn slot_of(t: &NaiveDateTime) -> Option<usize> {
    if t.second() != 0 || !t.minute().is_multiple_of(30) {
        return None;
    }
    Some(t.hour() as usize * 2 + t.minute() as usize / 30)
}

/// Puts records on a full 30-minute grid of whole days. Missing slots in a
/// run bounded by zeros (night) become zero, a single missing slot between
/// non-zero readings is interpolated, and days with longer daylight gaps are
/// dropped. Returns the cleaned series and the dropped dates.
pub fn clean_series(records: &[SeriesRecord]) -> Result<(Vec<SeriesRecord>, Vec<NaiveDate>)> {
    let first = records.first().ok_or_else(|| Error::data("series has no rows"))?;
    let last = records.last().expect("non-empty");
    let d0 = first.timestamp.date();
    let ndays = (last.timestamp.date() - d0).num_days() as usize + 1;
    let mut grid: Vec<Option<f64>> = vec![None; ndays * SLOTS_PER_DAY];
    for r in records {
        let slot = slot_of(&r.timestamp)
            .ok_or_else(|| Error::data(format!("timestamp {} is not on a 30-minute boundary", r.timestamp)))?;
        let day = (r.timestamp.date() - d0).num_days() as usize;
        grid[day * SLOTS_PER_DAY + slot] = Some(r.kwh);
    }
    let mut bad_days = vec![false; ndays];
    let mut i = 0;
    while i < grid.len() {
        if grid[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < grid.len() && grid[i].is_none() {
            i += 1;
        }
        let before = start.checked_sub(1).and_then(|j| grid[j]);
        let after = grid.get(i).copied().flatten();
        let dark = |v: Option<f64>| v.is_none_or(|x| x == 0.0);
        if dark(before) && dark(after) {
            grid[start..i].iter_mut().for_each(|v| *v = Some(0.0));
        } else if i - start == 1 {
            if let (Some(a), Some(b)) = (before, after) {
                grid[start] = Some(0.5 * (a + b));
            } else {
                bad_days[start / SLOTS_PER_DAY] = true;
            }
        } else {
            for j in start..i {
                bad_days[j / SLOTS_PER_DAY] = true;
            }
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut dropped = Vec::new();
    for (day, bad) in bad_days.iter().enumerate() {
        let date = d0 + Duration::days(day as i64);
        if *bad {
            dropped.push(date);
            continue;
        }
        let midnight = date.and_time(NaiveTime::MIN);
        for k in 0..SLOTS_PER_DAY {
            out.push(SeriesRecord {
                timestamp: midnight + Duration::minutes(30 * k as i64),
                kwh: grid[day * SLOTS_PER_DAY + k].expect("filled"),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::data("no complete days left after cleaning"));
    }
    Ok((out, dropped))
}

/// Min–max map onto `[−1, 1]`, fitted on training data only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

impl ScalerParams {
    pub fn fit(train: &[f64]) -> Result<Self> {
        let min = train.iter().copied().fold(f64::INFINITY, f64::min);
        let max = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::contract("cannot scale a constant or empty series"));
        }
        Ok(ScalerParams { min, max })
    }

    /// The map that leaves values unchanged.
    pub fn identity() -> Self {
        ScalerParams { min: -1.0, max: 1.0 }
    }

    pub fn apply(&self, x: f64) -> f64 {
        2.0 * (x - self.min) / (self.max - self.min) - 1.0
    }

    pub fn invert(&self, s: f64) -> f64 {
        (s + 1.0) * 0.5 * (self.max - self.min) + self.min
    }

    /// Converts a scaled-unit spread (std, interval width) to original units.
    pub fn invert_spread(&self, s: f64) -> f64 {
        s * 0.5 * (self.max - self.min)
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn invert_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.invert(x)).collect()
    }
}

/// Lag matrix `x` (`n×L`, scaled) with next-step targets `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub x: Tensor,
    pub y: Vec<f64>,
    pub scaler: ScalerParams,
    /// Timestamp of each target, when known.
    pub times: Option<Vec<NaiveDateTime>>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn lags(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> WindowedDataset {
        WindowedDataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            scaler: self.scaler,
            times: self.times.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Targets in original units.
    pub fn y_original(&self) -> Vec<f64> {
        self.scaler.invert_all(&self.y)
    }
}

/// Rows used for training. Only this type reaches `fit`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSplit(pub WindowedDataset);

/// Held-out rows for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSplit(pub WindowedDataset);

fn windows_at(series: &[f64], lags: usize, targets: &[usize]) -> Result<Tensor> {
    let mut x = Vec::with_capacity(targets.len() * lags);
    for &t in targets {
        x.extend_from_slice(&series[t - lags..t]);
    }
    Tensor::matrix(targets.len(), lags, x)
}

/// Every window of `series`: `X[i] = series[i..i+L]`, `y[i] = series[i+L]`.
/// The series is taken as already scaled by `scaler`.
pub fn make_windows(series: &[f64], lags: usize, scaler: ScalerParams) -> Result<WindowedDataset> {
    if lags == 0 || series.len() <= lags {
        return Err(Error::contract(format!(
            "series of length {} is too short for {lags} lags",
            series.len()
        )));
    }
    let targets: Vec<usize> = (lags..series.len()).collect();
    Ok(WindowedDataset {
        x: windows_at(series, lags, &targets)?,
        y: series[lags..].to_vec(),
        scaler,
        times: None,
    })
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::contract(format!("train ratio must be in (0,1), got {ratio}")));
    }
    Ok(())
}

/// First `⌊ratio·n⌋` rows train, the rest test.
pub fn split(ds: &WindowedDataset, ratio: f64) -> Result<(TrainSplit, TestSplit)> {
    check_ratio(ratio)?;
    let n_train = (ratio * ds.len() as f64).floor() as usize;
    if n_train == 0 || n_train == ds.len() {
        return Err(Error::contract(format!(
            "ratio {ratio} leaves an empty side of {} rows",
            ds.len()
        )));
    }
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..ds.len()).collect();
    Ok((TrainSplit(ds.select(&train)), TestSplit(ds.select(&test))))
}

/// Which part of the series to model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    #[default]
    Full,
    /// The first six calendar months of data.
    SixMonths,
    /// Targets between 07:30 (inclusive) and 16:30 (exclusive).
    Intraday,
}

impl std::str::FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Subset::Full),
            "six-months" => Ok(Subset::SixMonths),
            "intraday" => Ok(Subset::Intraday),
            _ => Err(Error::config(format!("unknown subset {s:?}; use full, six-months or intraday"))),
        }
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Subset::Full => "full",
            Subset::SixMonths => "six-months",
            Subset::Intraday => "intraday",
        })
    }
}

fn in_intraday(t: &NaiveDateTime) -> bool {
    let m = t.hour() * 60 + t.minute();
    (7 * 60 + 30..16 * 60 + 30).contains(&m)
}

fn six_month_end(start: NaiveDate) -> NaiveDate {
    let months = start.year() * 12 + start.month0() as i32 + 6;
    NaiveDate::from_ymd_opt(months / 12, (months % 12) as u32 + 1, 1).expect("valid month start")
}

/// Subsets, scales, windows and splits a series. The scaler is fitted on
/// the values up to the last training target, so test data never informs it.
pub fn prepare(
    records: &[SeriesRecord],
    lags: usize,
    ratio: f64,
    subset: Subset,
) -> Result<(TrainSplit, TestSplit)> {
    check_ratio(ratio)?;
    let recs: Vec<SeriesRecord> = match subset {
        Subset::SixMonths => {
            let first = records.first().ok_or_else(|| Error::data("series has no rows"))?;
            let end = six_month_end(first.timestamp.date());
            records.iter().copied().filter(|r| r.timestamp.date() < end).collect()
        }
        _ => records.to_vec(),
    };
    if recs.len() <= lags {
        return Err(Error::contract(format!(
            "{} records are too few for {lags} lags",
            recs.len()
        )));
    }
    let values: Vec<f64> = recs.iter().map(|r| r.kwh).collect();
    let times: Vec<NaiveDateTime> = recs.iter().map(|r| r.timestamp).collect();
    let targets: Vec<usize> = (lags..recs.len())
        .filter(|&t| subset != Subset::Intraday || in_intraday(&times[t]))
        .collect();
    let n_train = (ratio * targets.len() as f64).floor() as usize;
    if n_train == 0 || n_train == targets.len() {
        return Err(Error::contract(format!(
            "ratio {ratio} leaves an empty side of {} windows",
            targets.len()
        )));
    }
    let scaler = ScalerParams::fit(&values[..=targets[n_train - 1]])?;
    let scaled = scaler.apply_all(&values);
    let build = |idx: &[usize]| -> Result<WindowedDataset> {
        Ok(WindowedDataset {
            x: windows_at(&scaled, lags, idx)?,
            y: idx.iter().map(|&t| scaled[t]).collect(),
            scaler,
            times: Some(idx.iter().map(|&t| times[t]).collect()),
        })
    };
    Ok((
        TrainSplit(build(&targets[..n_train])?),
        TestSplit(build(&targets[n_train..])?),
    ))
}

/// Timestamps every 30 minutes from `start`.
pub fn half_hour_times(start: NaiveDateTime, n: usize) -> Vec<NaiveDateTime> {
    (0..n).map(|i| start + Duration::minutes(30 * i as i64)).collect()
}

pub fn records_from_values(start: NaiveDateTime, values: &[f64]) -> Vec<SeriesRecord> {
    half_hour_times(start, values.len())
        .into_iter()
        .zip(values)
        .map(|(timestamp, &kwh)| SeriesRecord { timestamp, kwh })
        .collect()
}

/// Writes records as the long CSV layout to any writer.
pub fn write_long_csv_to(w: impl Write, records: &[SeriesRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["timestamp", "kwh"])?;
    for r in records {
        w.write_record([r.timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(), format!("{}", r.kwh)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;
    use proptest::prelude::*;

    fn t0() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2011, 7, 1).unwrap().and_time(NaiveTime::MIN)
    }

    #[test]
    fn long_csv_cases() {
        let ok = "timestamp,kwh\n2011-07-01T00:00:00,0\n2011-07-01T00:30:00,0.5\n2011-07-01T01:00:00,1.25\n";
        let r = read_long_csv(ok.as_bytes()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[2].kwh, 1.25);

        let dup = "timestamp,kwh\n2011-07-01T00:00:00,0\n2011-07-01T00:00:00,0.5\n";
        let err = read_long_csv(dup.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("2011-07-01 00:00:00"), "{err}");

        let neg = "timestamp,kwh\n2011-07-01T00:00:00,-0.1\n";
        assert!(matches!(read_long_csv(neg.as_bytes()), Err(Error::Data(_))));

        let back = "timestamp,kwh\n2011-07-01T01:00:00,0\n2011-07-01T00:30:00,0\n";
        assert!(matches!(read_long_csv(back.as_bytes()), Err(Error::Data(_))));

        let garbage = "timestamp,kwh\n2011-07-01T00:00:00,0\nnot-a-time,1\n";
        let msg = read_long_csv(garbage.as_bytes()).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    fn wide_row(cust: u32, cat: &str, date: &str, v: f64) -> String {
        let vals: Vec<String> = (0..48).map(|k| format!("{}", v + k as f64 * 0.001)).collect();
        format!("{cust},1.5,2000,{cat},{date},{},", vals.join(","))
    }

    fn wide_file(rows: &[String]) -> String {
        let slots: Vec<String> = (0..48)
            .map(|k| format!("{}:{:02}", (k + 1) / 2 % 24, if k % 2 == 0 { 30 } else { 0 }))
            .collect();
        format!(
            "Solar home electricity data\nCustomer,Generator Capacity,Postcode,Consumption Category,date,{},Row Quality\n{}\n",
            slots.join(","),
            rows.join("\n")
        )
    }

    #[test]
    fn ausgrid_conversion() {
        let f = wide_file(&[
            wide_row(2076, "GG", "1/07/2011", 0.1),
            wide_row(2076, "GC", "1/07/2011", 9.0),
            wide_row(12, "GG", "1/07/2011", 5.0),
            wide_row(2076, "GG", "2/07/2011", 0.2),
        ]);
        let r = read_ausgrid_wide(f.as_bytes(), 2076, "GG").unwrap();
        assert_eq!(r.len(), 96);
        assert!(r.iter().all(|x| x.kwh < 1.0));
        assert_eq!(r[0].timestamp, t0());
        assert_eq!(r[47].timestamp, t0() + Duration::minutes(30 * 47));
        assert_eq!(r[48].timestamp.date(), NaiveDate::from_ymd_opt(2011, 7, 2).unwrap());

        let one = read_ausgrid_wide(f.as_bytes(), 12, "GG").unwrap();
        assert_eq!(one.len(), 48);
        assert!(matches!(read_ausgrid_wide(f.as_bytes(), 99, "GG"), Err(Error::NotFound(_))));
    }

    #[test]
    fn ausgrid_short_day_is_rejected() {
        let mut short = wide_row(2076, "GG", "1/07/2011", 0.1);
        short = short.rsplitn(3, ',').nth(2).unwrap().to_string();
        let f = wide_file(&[short]);
        assert!(matches!(read_ausgrid_wide(f.as_bytes(), 2076, "GG"), Err(Error::Data(_))));
    }

    #[test]
    fn cleaning_fills_and_drops() {
        let mut vals = vec![0.0; 96];
        for v in vals[14..34].iter_mut() {
            *v = 1.0;
        }
        for v in vals[62..82].iter_mut() {
            *v = 2.0;
        }
        let recs = records_from_values(t0(), &vals);
        // night gap, single daytime gap (day 1), long daytime gap (day 2)
        let keep: Vec<SeriesRecord> = recs
            .iter()
            .enumerate()
            .filter(|(i, _)| !matches!(i, 2..=5 | 20 | 70..=72))
            .map(|(_, r)| *r)
            .collect();
        let (clean, dropped) = clean_series(&keep).unwrap();
        assert_eq!(clean.len(), 48);
        assert_eq!(dropped, vec![NaiveDate::from_ymd_opt(2011, 7, 2).unwrap()]);
        assert_eq!(clean[3].kwh, 0.0);
        assert_eq!(clean[20].kwh, 1.0);
    }

    #[test]
    fn scaler_examples() {
        let s = ScalerParams { min: 0.0, max: 2.0 };
        assert_eq!(s.apply(1.0), 0.0);
        assert_eq!(s.apply(0.0), -1.0);
        assert_eq!(s.apply(2.0), 1.0);
        assert!(ScalerParams::fit(&[3.0, 3.0]).is_err());
        assert!((ScalerParams::identity().apply(0.37) - 0.37).abs() < 1e-15);
        assert!(s.apply(5.0) > 1.0);
    }

    #[test]
    fn scaler_round_trip_sweep() {
        let mut rng = RngState::new(8);
        let xs: Vec<f64> = (0..1000).map(|_| 10.0 * rng.normal()).collect();
        let s = ScalerParams::fit(&xs).unwrap();
        for &x in &xs {
            assert!((s.invert(s.apply(x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn window_examples() {
        let series: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ds = make_windows(&series, 96, ScalerParams::identity()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.x.row(1)[..95], ds.x.row(0)[1..]);
        let edge = make_windows(&series[..97], 96, ScalerParams::identity()).unwrap();
        assert_eq!(edge.len(), 1);
        assert_eq!(edge.y[0], 96.0);
        assert!(make_windows(&series[..96], 96, ScalerParams::identity()).is_err());
    }

    #[test]
    fn split_cases() {
        let series: Vec<f64> = (0..13).map(|i| i as f64).collect();
        let ds = make_windows(&series, 3, ScalerParams::identity()).unwrap();
        let (tr, te) = split(&ds, 0.8).unwrap();
        assert_eq!((tr.0.len(), te.0.len()), (8, 2));
        let mut joined = tr.0.y.clone();
        joined.extend(&te.0.y);
        assert_eq!(joined, ds.y);
        for r in [0.8, 0.7, 0.6, 0.5] {
            let (a, b) = split(&ds, r).unwrap();
            assert_eq!(a.0.len() + b.0.len(), 10);
        }
        assert!(split(&ds, 1.0).is_err());
        assert!(split(&ds, 0.0).is_err());
    }

    #[test]
    fn prepare_fits_scaler_on_training_values_only() {
        let mut vals: Vec<f64> = (0..200).map(|i| (i % 48) as f64 / 100.0).collect();
        vals[190] = 50.0;
        let recs = records_from_values(t0(), &vals);
        let (tr, te) = prepare(&recs, 10, 0.8, Subset::Full).unwrap();
        assert_eq!(tr.0.len() + te.0.len(), 190);
        assert_eq!(tr.0.scaler.max, 0.47);
        assert!(te.0.y.iter().any(|&v| v > 1.0));
        assert_eq!(tr.0.y_original()[0], vals[10]);
    }

    #[test]
    fn subsets() {
        let vals: Vec<f64> = (0..48 * 400).map(|i| ((i % 48) as f64 - 24.0).abs()).collect();
        let recs = records_from_values(t0(), &vals);
        let (tr, te) = prepare(&recs, 96, 0.8, Subset::Intraday).unwrap();
        for t in tr.0.times.as_ref().unwrap().iter().chain(te.0.times.as_ref().unwrap()) {
            assert!(in_intraday(t));
        }
        let per_day = (tr.0.len() + te.0.len()) as f64 / 398.0;
        assert!((per_day - 18.0).abs() < 0.1);
        let (tr6, te6) = prepare(&recs, 96, 0.8, Subset::SixMonths).unwrap();
        let last = te6.0.times.as_ref().unwrap().last().unwrap();
        assert_eq!(last.date(), NaiveDate::from_ymd_opt(2011, 12, 31).unwrap());
        assert!(tr6.0.len() < tr.0.len() * 3);
        assert_eq!("intraday".parse::<Subset>().unwrap(), Subset::Intraday);
        assert!("weekly".parse::<Subset>().is_err());
    }

    proptest! {
        #[test]
        fn windows_reconstruct_series(series in proptest::collection::vec(-5.0f64..5.0, 6..60), lags in 1usize..5) {
            let ds = make_windows(&series, lags, ScalerParams::identity()).unwrap();
            prop_assert_eq!(ds.len(), series.len() - lags);
            let mut rebuilt = ds.x.row(0).to_vec();
            rebuilt.extend(&ds.y);
            prop_assert_eq!(rebuilt, series);
        }
    }
}
