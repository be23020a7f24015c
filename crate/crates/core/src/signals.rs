//! Per-event daily series over the `[-7, +30]` window: publication volume,
//! semantic drift of smoothed centroids, and semantic dispersion.

use std::io::Write;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{FIRST_DAY, LAST_DAY, WINDOW_LEN};
use crate::embedding::{cosine_distance, normalize};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.3;

/// UTC calendar-day difference between publication and onset.
pub fn day_offset(published_at: &DateTime<Utc>, onset: NaiveDate) -> i64 {
    (published_at.date_naive() - onset).num_days()
}

pub fn days() -> impl Iterator<Item = i64> {
    FIRST_DAY..=LAST_DAY
}

fn slot(day: i64) -> Result<usize> {
    if (FIRST_DAY..=LAST_DAY).contains(&day) {
        Ok((day - FIRST_DAY) as usize)
    } else {
        Err(Error::InvalidInput(format!(
            "day offset {day} outside [{FIRST_DAY}, {LAST_DAY}]"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Volume,
    Drift,
    DriftPercent,
    Dispersion,
    BaselineVolume,
}

impl Signal {
    pub const ALL: [Signal; 5] = [
        Signal::Volume,
        Signal::Drift,
        Signal::DriftPercent,
        Signal::Dispersion,
        Signal::BaselineVolume,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Signal::Volume => "volume",
            Signal::Drift => "drift",
            Signal::DriftPercent => "drift_percent",
            Signal::Dispersion => "dispersion",
            Signal::BaselineVolume => "baseline_volume",
        }
    }
}

impl std::fmt::Display for Signal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Signal::ALL
            .into_iter()
            .find(|sig| sig.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown signal `{s}`")))
    }
}

/// One value (possibly missing) and one document count per day of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    values: Vec<Option<f64>>,
    counts: Vec<usize>,
    degenerate: bool,
}

impl DailySeries {
    pub fn new(values: Vec<Option<f64>>, counts: Vec<usize>) -> Result<Self> {
        if values.len() != WINDOW_LEN || counts.len() != WINDOW_LEN {
            return Err(Error::InvalidInput(format!(
                "daily series needs {WINDOW_LEN} slots, got {} values and {} counts",
                values.len(),
                counts.len()
            )));
        }
        Ok(DailySeries {
            values,
            counts,
            degenerate: false,
        })
    }

    /// Convenience constructor: all values present, counts zero.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().copied().map(Some).collect(), vec![0; values.len()])
    }

    pub fn value(&self, day: i64) -> Option<f64> {
        slot(day).ok().and_then(|s| self.values[s])
    }

    pub fn count(&self, day: i64) -> usize {
        slot(day).map(|s| self.counts[s]).unwrap_or(0)
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `(day, value)` for every present value.
    pub fn present(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        days().zip(&self.values).filter_map(|(d, v)| v.map(|v| (d, v)))
    }

    pub fn total(&self) -> f64 {
        self.present().map(|(_, v)| v).sum()
    }

    /// Mean over present values, `None` if every day is missing.
    pub fn mean(&self) -> Option<f64> {
        let (sum, n) = self.present().fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Share of documents published on each day. Empty input gives an all-zero
/// series flagged degenerate.
pub fn volume_series(day_offsets: &[i64]) -> Result<DailySeries> {
    let mut counts = vec![0usize; WINDOW_LEN];
    for &d in day_offsets {
        counts[slot(d)?] += 1;
    }
    let total = day_offsets.len();
    let values = counts
        .iter()
        .map(|&c| Some(if total == 0 { 0.0 } else { c as f64 / total as f64 }))
        .collect();
    let mut series = DailySeries::new(values, counts)?;
    series.degenerate = total == 0;
    Ok(series)
}

/// Daily raw centroids and their exponential moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTrack {
    alpha: f64,
    raw: Vec<Option<Vec<f64>>>,
    smoothed: Vec<Option<Vec<f64>>>,
    counts: Vec<usize>,
}

impl CentroidTrack {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Plain mean of the day's embeddings (not re-normalized).
    pub fn raw(&self, day: i64) -> Option<&[f64]> {
        slot(day).ok().and_then(|s| self.raw[s].as_deref())
    }

    pub fn smoothed(&self, day: i64) -> Option<&[f64]> {
        slot(day).ok().and_then(|s| self.smoothed[s].as_deref())
    }

    pub fn count(&self, day: i64) -> usize {
        slot(day).map(|s| self.counts[s]).unwrap_or(0)
    }

    pub fn first_day(&self) -> Option<i64> {
        days().find(|&d| self.count(d) > 0)
    }
}

/// Groups embeddings by day slot after checking alignment and range.
fn bucket<'a>(day_offsets: &[i64], embeddings: &'a [Vec<f64>]) -> Result<Vec<Vec<&'a [f64]>>> {
    if day_offsets.len() != embeddings.len() {
        return Err(Error::InvalidInput(format!(
            "{} day offsets but {} embeddings",
            day_offsets.len(),
            embeddings.len()
        )));
    }
    let mut buckets = vec![Vec::new(); WINDOW_LEN];
    for (&d, e) in day_offsets.iter().zip(embeddings) {
        buckets[slot(d)?].push(e.as_slice());
    }
    Ok(buckets)
}

fn mean_vector(rows: &[&[f64]]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut acc = vec![0.0; dim];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r.iter()) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

/// `s_first = c_first`; afterwards `s_t = alpha c_t + (1 - alpha) s_{t-1}` on
/// days with documents and `s_t = s_{t-1}` on empty days.
pub fn centroid_track(day_offsets: &[i64], embeddings: &[Vec<f64>], alpha: f64) -> Result<CentroidTrack> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, 1]")));
    }
    if day_offsets.is_empty() {
        return Err(Error::Precondition(
            "centroid track needs at least one document".into(),
        ));
    }
    let buckets = bucket(day_offsets, embeddings)?;
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::InvalidInput("embeddings have mixed dimensions".into()));
    }
    let counts: Vec<usize> = buckets.iter().map(Vec::len).collect();
    let raw: Vec<Option<Vec<f64>>> = buckets
        .iter()
        .map(|b| (!b.is_empty()).then(|| mean_vector(b)))
        .collect();
    let mut smoothed: Vec<Option<Vec<f64>>> = Vec::with_capacity(WINDOW_LEN);
    let mut prev: Option<Vec<f64>> = None;
    for c in &raw {
        let next = match (c, prev.as_ref()) {
            (Some(c), None) => Some(c.clone()),
            (Some(c), Some(p)) => Some(
                c.iter()
                    .zip(p)
                    .map(|(ci, pi)| alpha * ci + (1.0 - alpha) * pi)
                    .collect(),
            ),
            (None, p) => p.cloned(),
        };
        smoothed.push(next.clone());
        prev = next;
    }
    Ok(CentroidTrack {
        alpha,
        raw,
        smoothed,
        counts,
    })
}

/// Cosine distance between consecutive smoothed centroids. The first day
/// with documents is 0; days before it and days without documents are
/// missing.
pub fn drift_series(track: &CentroidTrack) -> Result<DailySeries> {
    let first = track
        .first_day()
        .ok_or_else(|| Error::Precondition("centroid track has no defined day".into()))?;
    let unit = |day: i64| -> Result<Vec<f64>> {
        let s = track.smoothed(day).expect("smoothed defined after first day");
        normalize(s).ok_or_else(|| Error::Degenerate(format!("zero-norm smoothed centroid on day {day}")))
    };
    let mut values = vec![None; WINDOW_LEN];
    let mut prev = unit(first)?;
    values[slot(first)?] = Some(0.0);
    for day in (first + 1)..=LAST_DAY {
        let current = unit(day)?;
        if track.count(day) > 0 {
            values[slot(day)?] = Some(cosine_distance(&current, &prev)?);
        }
        prev = current;
    }
    DailySeries::new(values, track.counts.clone())
}

/// Each present value as a percentage of the series total. All-zero series
/// stay all zero.
pub fn percent_of_total(series: &DailySeries) -> DailySeries {
    let total = series.total();
    let values = series
        .values
        .iter()
        .map(|v| v.map(|x| if total > 0.0 { 100.0 * x / total } else { 0.0 }))
        .collect();
    DailySeries {
        values,
        counts: series.counts.clone(),
        degenerate: series.degenerate,
    }
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Population variance of document-to-centroid cosine distances per day,
/// using the raw (unsmoothed) daily centroid. Days whose embeddings are all
/// identical are exactly 0.
pub fn dispersion_series(day_offsets: &[i64], embeddings: &[Vec<f64>], track: &CentroidTrack) -> Result<DailySeries> {
    let buckets = bucket(day_offsets, embeddings)?;
    let mut values = vec![None; WINDOW_LEN];
    for (day, rows) in days().zip(&buckets) {
        if rows.is_empty() {
            continue;
        }
        if rows.windows(2).all(|w| w[0] == w[1]) {
            values[slot(day)?] = Some(0.0);
            continue;
        }
        let raw = track
            .raw(day)
            .ok_or_else(|| Error::InvalidInput(format!("track has no centroid for day {day}")))?;
        let centroid =
            normalize(raw).ok_or_else(|| Error::Degenerate(format!("zero-norm centroid on day {day}")))?;
        let distances = rows
            .iter()
            .map(|x| cosine_distance(x, &centroid))
            .collect::<Result<Vec<_>>>()?;
        values[slot(day)?] = Some(population_variance(&distances));
    }
    DailySeries::new(values, buckets.iter().map(Vec::len).collect())
}

/// The per-event series computed from one document subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBundle {
    pub volume: DailySeries,
    pub drift: DailySeries,
    pub drift_percent: DailySeries,
    pub dispersion: DailySeries,
    pub track: CentroidTrack,
}

impl SignalBundle {
    pub fn compute(day_offsets: &[i64], embeddings: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let volume = volume_series(day_offsets)?;
        let track = centroid_track(day_offsets, embeddings, alpha)?;
        let drift = drift_series(&track)?;
        let drift_percent = percent_of_total(&drift);
        let dispersion = dispersion_series(day_offsets, embeddings, &track)?;
        Ok(SignalBundle {
            volume,
            drift,
            drift_percent,
            dispersion,
            track,
        })
    }
}

/// Row of the series CSV: `event_id,signal,day,value,count,missing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub event_id: String,
    pub signal: Signal,
    pub day: i64,
    pub value: Option<f64>,
    pub count: usize,
    pub missing: bool,
}

pub fn write_series_csv<'a>(
    out: impl Write,
    rows: impl IntoIterator<Item = (&'a str, Signal, &'a DailySeries)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (event_id, signal, series) in rows {
        for (i, day) in days().enumerate() {
            w.serialize(SeriesRow {
                event_id: event_id.to_string(),
                signal,
                day,
                value: series.values[i],
                count: series.counts[i],
                missing: series.values[i].is_none(),
            })?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

type SeriesAccumulator = (String, Signal, Vec<Option<f64>>, Vec<usize>);

/// Reads a series CSV back into `(event_id, signal, series)` triples, in
/// first-appearance order.
pub fn read_series_csv(input: impl std::io::Read) -> Result<Vec<(String, Signal, DailySeries)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<SeriesAccumulator> = Vec::new();
    for row in r.deserialize::<SeriesRow>() {
        let row = row?;
        let s = slot(row.day)?;
        let idx = match out.iter().position(|(e, sig, _, _)| *e == row.event_id && *sig == row.signal) {
            Some(i) => i,
            None => {
                out.push((row.event_id.clone(), row.signal, vec![None; WINDOW_LEN], vec![0; WINDOW_LEN]));
                out.len() - 1
            }
        };
        out[idx].2[s] = if row.missing { None } else { row.value };
        out[idx].3[s] = row.count;
    }
    out.into_iter()
        .map(|(e, sig, values, counts)| Ok((e, sig, DailySeries::new(values, counts)?)))
        .collect()
}
