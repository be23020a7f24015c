//! Category-level aggregation across events and change-point extraction.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, LAST_DAY, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::signals::{days, DailySeries, Signal};

/// Normal-approximation multiplier for a 95% interval.
pub const Z_95: f64 = 1.96;
pub const DEFAULT_EPSILON: f64 = 0.005;
/// Days (including the candidate) that must stay at baseline.
pub const RETURN_PERSISTENCE: i64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateDay {
    pub day: i64,
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSeries {
    pub category: Category,
    pub signal: Signal,
    pub days: Vec<AggregateDay>,
    /// Only one event contributed; SEM is reported as 0.
    pub single_event: bool,
}

impl AggregateSeries {
    /// The per-day means as a series (days with no contributing event are
    /// missing), with `n` as the count.
    pub fn mean_series(&self) -> DailySeries {
        DailySeries::new(
            self.days.iter().map(|d| d.mean).collect(),
            self.days.iter().map(|d| d.n).collect(),
        )
        .expect("aggregate has one slot per day")
    }

    pub fn day(&self, day: i64) -> Option<&AggregateDay> {
        self.days.iter().find(|d| d.day == day)
    }
}

/// Mean, standard error (sample std / sqrt(n)) and `mean +/- 1.96 sem` per
/// day, over the events with a value that day.
pub fn aggregate_category(category: Category, signal: Signal, series: &[DailySeries]) -> Result<AggregateSeries> {
    if series.is_empty() {
        return Err(Error::Precondition(format!(
            "no events to aggregate for {category}/{signal}"
        )));
    }
    let mut out_days = Vec::with_capacity(WINDOW_LEN);
    for (slot, day) in days().enumerate() {
        let values: Vec<f64> = series.iter().filter_map(|s| s.values()[slot]).collect();
        let n = values.len();
        let agg = if n == 0 {
            AggregateDay {
                day,
                mean: None,
                sem: None,
                ci_low: None,
                ci_high: None,
                n,
            }
        } else {
            let nf = n as f64;
            let mean = values.iter().sum::<f64>() / nf;
            let sem = if n == 1 {
                0.0
            } else {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
                var.sqrt() / nf.sqrt()
            };
            let half = Z_95 * sem;
            AggregateDay {
                day,
                mean: Some(mean),
                sem: Some(sem),
                ci_low: Some(mean - half),
                ci_high: Some(mean + half),
                n,
            }
        };
        out_days.push(agg);
    }
    Ok(AggregateSeries {
        category,
        signal,
        days: out_days,
        single_event: series.len() == 1,
    })
}

/// Day and value of the maximum over `[from, to]`, earliest day on ties.
pub fn detect_peak(series: &DailySeries, from: i64, to: i64) -> Result<(i64, f64)> {
    let mut best: Option<(i64, f64)> = None;
    for (day, v) in series.present().filter(|(d, _)| (from..=to).contains(d)) {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((day, v));
        }
    }
    best.ok_or_else(|| Error::Precondition(format!("no values in day range [{from}, {to}]")))
}

/// First day after the peak where the value and the following two days are
/// all within `epsilon` above `baseline_level`. Candidates whose persistence
/// window runs past the end of the series, or hits a missing value, do not
/// qualify.
pub fn detect_return(series: &DailySeries, baseline_level: f64, peak_day: i64, epsilon: f64) -> Option<i64> {
    let limit = baseline_level + epsilon;
    let at_base = |d: i64| series.value(d).is_some_and(|v| v <= limit);
    ((peak_day + 1)..=(LAST_DAY - RETURN_PERSISTENCE + 1))
        .find(|&t| (t..t + RETURN_PERSISTENCE).all(at_base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePoints {
    pub peak_day: i64,
    pub peak_value: f64,
    pub baseline_level: f64,
    pub return_day: Option<i64>,
}

pub fn change_points(series: &DailySeries, baseline_level: f64, epsilon: f64) -> Result<ChangePoints> {
    let (peak_day, peak_value) = detect_peak(series, 0, LAST_DAY)?;
    Ok(ChangePoints {
        peak_day,
        peak_value,
        baseline_level,
        return_day: detect_return(series, baseline_level, peak_day, epsilon),
    })
}

/// CSV with columns `category,signal,day,mean,sem,ci_low,ci_high,n`.
pub fn write_aggregate_csv<'a>(out: impl Write, series: impl IntoIterator<Item = &'a AggregateSeries>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        category: Category,
        signal: Signal,
        day: i64,
        mean: Option<f64>,
        sem: Option<f64>,
        ci_low: Option<f64>,
        ci_high: Option<f64>,
        n: usize,
    }
    let mut w = csv::Writer::from_writer(out);
    for s in series {
        for d in &s.days {
            w.serialize(Row {
                category: s.category,
                signal: s.signal,
                day: d.day,
                mean: d.mean,
                sem: d.sem,
                ci_low: d.ci_low,
                ci_high: d.ci_high,
                n: d.n,
            })?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Reads an aggregate CSV back, grouping rows by `(category, signal)`.
pub fn read_aggregate_csv(input: impl std::io::Read) -> Result<Vec<AggregateSeries>> {
    #[derive(Deserialize)]
    struct Row {
        category: Category,
        signal: Signal,
        day: i64,
        mean: Option<f64>,
        sem: Option<f64>,
        ci_low: Option<f64>,
        ci_high: Option<f64>,
        n: usize,
    }
    let mut out: Vec<AggregateSeries> = Vec::new();
    let mut r = csv::Reader::from_reader(input);
    for row in r.deserialize::<Row>() {
        let row = row?;
        let day = AggregateDay {
            day: row.day,
            mean: row.mean,
            sem: row.sem,
            ci_low: row.ci_low,
            ci_high: row.ci_high,
            n: row.n,
        };
        match out
            .iter_mut()
            .find(|s| s.category == row.category && s.signal == row.signal)
        {
            Some(s) => s.days.push(day),
            None => out.push(AggregateSeries {
                category: row.category,
                signal: row.signal,
                days: vec![day],
                single_event: false,
            }),
        }
    }
    for s in &mut out {
        s.single_event = s.days.iter().map(|d| d.n).max().unwrap_or(0) <= 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> DailySeries {
        DailySeries::from_values(&[v; WINDOW_LEN]).unwrap()
    }

    fn with(values: &[(i64, f64)], fill: f64) -> DailySeries {
        let mut v = vec![fill; WINDOW_LEN];
        for &(d, x) in values {
            v[(d + 7) as usize] = x;
        }
        DailySeries::from_values(&v).unwrap()
    }

    #[test]
    fn two_events_by_hand() {
        let agg = aggregate_category(Category::Disaster, Signal::Volume, &[constant(2.0), constant(4.0)]).unwrap();
        let d = agg.day(0).unwrap();
        assert_eq!(d.mean, Some(3.0));
        assert_eq!(d.sem, Some(1.0));
        assert!((d.ci_low.unwrap() - 1.04).abs() < 1e-12);
        assert!((d.ci_high.unwrap() - 4.96).abs() < 1e-12);
        assert_eq!(d.n, 2);
        assert!(!agg.single_event);
    }

    #[test]
    fn identical_events_have_zero_sem() {
        let agg = aggregate_category(Category::Violence, Signal::Drift, &vec![constant(0.3); 4]).unwrap();
        assert!(agg.days.iter().all(|d| d.sem == Some(0.0)));
    }

    #[test]
    fn missing_days_reduce_n() {
        let mut values = vec![Some(1.0); WINDOW_LEN];
        values[14] = None;
        let holey = DailySeries::new(values, vec![1; WINDOW_LEN]).unwrap();
        let agg = aggregate_category(Category::Disaster, Signal::Dispersion, &[holey, constant(3.0), constant(5.0)]).unwrap();
        let d7 = agg.day(7).unwrap();
        assert_eq!(d7.n, 2);
        assert_eq!(d7.mean, Some(4.0));
        assert_eq!(agg.day(6).unwrap().n, 3);
    }

    #[test]
    fn single_event_is_flagged() {
        let s = with(&[(2, 0.5)], 0.1);
        let agg = aggregate_category(Category::Disaster, Signal::Volume, std::slice::from_ref(&s)).unwrap();
        assert!(agg.single_event);
        assert_eq!(agg.mean_series().values(), s.values());
        assert!(aggregate_category(Category::Disaster, Signal::Volume, &[]).is_err());
    }

    #[test]
    fn peak_rules() {
        assert_eq!(detect_peak(&with(&[(5, 0.9)], 0.1), 0, 30).unwrap(), (5, 0.9));
        assert_eq!(detect_peak(&constant(0.2), 0, 30).unwrap().0, 0);
        // Values before the search range are ignored.
        assert_eq!(detect_peak(&with(&[(-3, 5.0), (8, 1.0)], 0.0), 0, 30).unwrap().0, 8);
        let empty = DailySeries::new(vec![None; WINDOW_LEN], vec![0; WINDOW_LEN]).unwrap();
        assert!(detect_peak(&empty, 0, 30).is_err());
    }

    #[test]
    fn return_rules() {
        let mut v: Vec<(i64, f64)> = (0..10).map(|d| (d, 0.1)).collect();
        v[5].1 = 0.2;
        let s = with(&v, 0.02);
        assert_eq!(detect_return(&s, 0.02, 5, 0.005), Some(10));

        let never = with(&[], 0.5);
        assert_eq!(detect_return(&never, 0.02, 5, 0.005), None);

        // A one-day dip at 8 is rejected; the series settles at 13.
        let mut v: Vec<(i64, f64)> = (0..13).map(|d| (d, 0.1)).collect();
        v[8].1 = 0.01;
        let dip = with(&v, 0.01);
        assert_eq!(detect_return(&dip, 0.02, 5, 0.005), Some(13));
    }

    #[test]
    fn csv_round_trip() {
        let agg = aggregate_category(Category::Violence, Signal::Volume, &[constant(2.0), with(&[(1, 7.0)], 4.0)]).unwrap();
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, [&agg]).unwrap();
        let back = read_aggregate_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![agg]);
    }
}
