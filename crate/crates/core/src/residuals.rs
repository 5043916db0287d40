//! Sensor samples, CSV ingestion and windowed residual aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::scalar::Real;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Ok,
    Missing,
    Stuck,
}

/// One row of sensor data: measured flow and model prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorSample {
    pub sensor_id: String,
    pub timestamp: NaiveDateTime,
    pub measured: f64,
    pub predicted: f64,
    pub quality: Quality,
}

impl SensorSample {
    fn is_usable(&self) -> bool {
        self.quality == Quality::Ok && self.measured.is_finite() && self.predicted.is_finite()
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    timestamp: String,
    sensor_id: String,
    measured: Option<f64>,
    predicted: Option<f64>,
    quality: Quality,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

pub fn read_samples<R: Read>(reader: R, source: &str) -> Result<Vec<SensorSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(format!("{source}:1"), e))?
        .clone();
    let expected = ["timestamp", "sensor_id", "measured", "predicted", "quality"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            format!("{source}:1"),
            format!("expected header '{}'", expected.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(format!("{source}:{line}"), e))?;
        let timestamp = parse_timestamp(&row.timestamp).ok_or_else(|| {
            Error::parse(format!("{source}:{line}"), format!("bad timestamp '{}'", row.timestamp))
        })?;
        let sample = SensorSample {
            sensor_id: row.sensor_id,
            timestamp,
            measured: row.measured.unwrap_or(f64::NAN),
            predicted: row.predicted.unwrap_or(f64::NAN),
            quality: row.quality,
        };
        if sample.quality == Quality::Ok && !(sample.measured.is_finite() && sample.predicted.is_finite()) {
            return Err(Error::parse(
                format!("{source}:{line}"),
                "quality 'ok' requires finite measured and predicted values",
            ));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<SensorSample>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_samples(file, &path.display().to_string())
}

pub fn write_samples<W: Write>(writer: W, samples: &[SensorSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        let finite = |v: f64| v.is_finite().then_some(v);
        w.serialize(CsvRow {
            timestamp: format_timestamp(&s.timestamp),
            sensor_id: s.sensor_id.clone(),
            measured: finite(s.measured),
            predicted: finite(s.predicted),
            quality: s.quality,
        })
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregation window length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowSpec {
    Daily,
    Hourly,
    Minutes(u32),
    /// Every sample in one window.
    All,
}

impl FromStr for WindowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" | "day" => Ok(Self::Daily),
            "hourly" | "hour" => Ok(Self::Hourly),
            "all" => Ok(Self::All),
            other => {
                let digits = other
                    .strip_suffix("min")
                    .or_else(|| other.strip_suffix('m'))
                    .ok_or_else(|| Error::Validation(format!("unknown window '{other}'")))?;
                match digits.parse::<u32>() {
                    Ok(n) if n > 0 && 1440 % n == 0 => Ok(Self::Minutes(n)),
                    _ => Err(Error::Validation(format!(
                        "window '{other}' must be a positive divisor of a day in minutes"
                    ))),
                }
            }
        }
    }
}

impl fmt::Display for WindowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Daily => write!(f, "daily"),
            Self::Hourly => write!(f, "hourly"),
            Self::Minutes(n) => write!(f, "{n}min"),
            Self::All => write!(f, "all"),
        }
    }
}

impl WindowSpec {
    fn minutes(self) -> Option<u32> {
        match self {
            Self::Daily => Some(1440),
            Self::Hourly => Some(60),
            Self::Minutes(n) => Some(n),
            Self::All => None,
        }
    }

    /// Start of the window holding `ts`.
    pub fn window_start(self, ts: NaiveDateTime) -> NaiveDateTime {
        let Some(len) = self.minutes() else {
            return NaiveDateTime::MIN;
        };
        let midnight = ts.date().and_hms_opt(0, 0, 0).expect("midnight exists");
        let minute_of_day = ts.hour() * 60 + ts.minute();
        midnight + Duration::minutes(i64::from(minute_of_day - minute_of_day % len))
    }
}

/// Residuals of one window, ordered like the topology's sensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVector<T> {
    pub window: String,
    pub sensor_ids: Vec<String>,
    /// NaN for uninformative sensors.
    pub values: Vec<T>,
    pub uninformative: BTreeSet<String>,
}

impl<T: Real> ResidualVector<T> {
    /// Residuals for a topology, every sensor informative.
    pub fn new(topology: &Topology, values: &[T]) -> Result<Self> {
        if values.len() != topology.sensors().len() {
            return Err(Error::Validation(format!(
                "{} residuals for {} sensors",
                values.len(),
                topology.sensors().len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite residual for an informative sensor".into()));
        }
        Ok(Self {
            window: String::new(),
            sensor_ids: topology.sensors().iter().map(|s| s.id.clone()).collect(),
            values: values.to_vec(),
            uninformative: BTreeSet::new(),
        })
    }

    pub fn from_f64(topology: &Topology, values: &[f64]) -> Result<Self> {
        let v: Vec<T> = values.iter().map(|&x| T::of_f64(x)).collect();
        Self::new(topology, &v)
    }

    pub fn get(&self, sensor_id: &str) -> Option<T> {
        self.sensor_ids.iter().position(|s| s == sensor_id).map(|i| self.values[i])
    }

    /// Values in the order of the topology's sensors.
    pub fn ordered_for(&self, topology: &Topology) -> Result<Vec<T>> {
        topology
            .sensors()
            .iter()
            .map(|s| {
                let v = self
                    .get(&s.id)
                    .ok_or_else(|| Error::Validation(format!("no residual for sensor '{}'", s.id)))?;
                if !v.is_finite() {
                    return Err(Error::Validation(format!("sensor '{}' is uninformative", s.id)));
                }
                Ok(v)
            })
            .collect()
    }

    pub fn sup_norm(&self) -> T {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * c).collect(),
            ..self.clone()
        }
    }
}

/// Mean residual per sensor over the samples of one window.
///
/// A sensor is uninformative when it has no usable sample, or when its
/// measurement is frozen at one value while the prediction moves.
pub fn compute_residuals<T: Real>(
    samples: &[SensorSample],
    sensor_ids: &[String],
    window: &str,
) -> Result<ResidualVector<T>> {
    if samples.is_empty() {
        return Err(Error::EmptyWindow(format!("window '{window}' has no samples")));
    }
    let known: BTreeSet<&str> = sensor_ids.iter().map(String::as_str).collect();
    if let Some(s) = samples.iter().find(|s| !known.contains(s.sensor_id.as_str())) {
        return Err(Error::Validation(format!("sample for unknown sensor '{}'", s.sensor_id)));
    }
    let mut values = Vec::with_capacity(sensor_ids.len());
    let mut uninformative = BTreeSet::new();
    for id in sensor_ids {
        let usable: Vec<&SensorSample> = samples.iter().filter(|s| &s.sensor_id == id && s.is_usable()).collect();
        let frozen = usable.len() > 1
            && usable.iter().all(|s| s.measured == usable[0].measured)
            && usable.iter().any(|s| s.predicted != usable[0].predicted);
        if usable.is_empty() || frozen {
            uninformative.insert(id.clone());
            values.push(T::nan());
            continue;
        }
        let sum: f64 = usable.iter().map(|s| s.measured - s.predicted).sum();
        values.push(T::of_f64(sum / usable.len() as f64));
    }
    Ok(ResidualVector {
        window: window.to_string(),
        sensor_ids: sensor_ids.to_vec(),
        values,
        uninformative,
    })
}

/// Groups samples into windows and aggregates each one, in time order.
pub fn residual_series<T: Real>(
    samples: &[SensorSample],
    sensor_ids: &[String],
    spec: WindowSpec,
) -> Result<Vec<ResidualVector<T>>> {
    if samples.is_empty() {
        return Err(Error::EmptyWindow("no samples in data".into()));
    }
    let mut groups: BTreeMap<NaiveDateTime, Vec<SensorSample>> = BTreeMap::new();
    for s in samples {
        groups.entry(spec.window_start(s.timestamp)).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(start, group)| {
            let label = if spec == WindowSpec::All { "all".to_string() } else { format_timestamp(&start) };
            compute_residuals(&group, sensor_ids, &label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ts(day: u32, minute: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, day)
            .unwrap()
            .and_hms_opt(minute / 60, minute % 60, 0)
            .unwrap()
    }

    fn sample(id: &str, t: NaiveDateTime, y: f64, m: f64) -> SensorSample {
        SensorSample {
            sensor_id: id.into(),
            timestamp: t,
            measured: y,
            predicted: m,
            quality: Quality::Ok,
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_prediction_gives_zero() {
        let s: Vec<_> = (0..4).map(|k| sample("a", ts(1, k * 15), 3.0 + k as f64, 3.0 + k as f64)).collect();
        let r = compute_residuals::<f64>(&s, &ids(&["a"]), "w").unwrap();
        assert_eq!(r.values, [0.0]);
    }

    #[test]
    fn one_point_mean() {
        let r = compute_residuals::<f64>(&[sample("a", ts(1, 0), 6.0, 4.0)], &ids(&["a"]), "w").unwrap();
        assert_eq!(r.values, [2.0]);
    }

    #[test]
    fn daily_mean_cancels_alternating_noise() {
        let s: Vec<_> = (0..96)
            .map(|k| {
                let noise = if k % 2 == 0 { 1.0 } else { -1.0 };
                let m = 10.0 + (k as f64 * 0.1).sin();
                sample("a", ts(1, k * 15), m + 2.0 + noise, m)
            })
            .collect();
        let series = residual_series::<f64>(&s, &ids(&["a"]), WindowSpec::Daily).unwrap();
        assert_eq!(series.len(), 1);
        assert!((series[0].values[0] - 2.0).abs() < 1e-12);
        assert_eq!(series[0].window, "2024-01-01T00:00:00");
    }

    #[test]
    fn empty_window_is_error() {
        assert!(matches!(
            compute_residuals::<f64>(&[], &ids(&["a"]), "w"),
            Err(Error::EmptyWindow(_))
        ));
        assert!(matches!(
            residual_series::<f64>(&[], &ids(&["a"]), WindowSpec::Daily),
            Err(Error::EmptyWindow(_))
        ));
    }

    #[test]
    fn missing_and_frozen_sensors_flagged() {
        let mut s = Vec::new();
        for k in 0..4 {
            s.push(sample("a", ts(1, k * 15), 5.0, 4.0));
            s.push(sample("b", ts(1, k * 15), 0.0, 1.0 + k as f64));
            s.push(SensorSample {
                quality: Quality::Missing,
                measured: f64::NAN,
                ..sample("c", ts(1, k * 15), 0.0, 1.0)
            });
        }
        let r = compute_residuals::<f64>(&s, &ids(&["a", "b", "c"]), "w").unwrap();
        assert_eq!(r.values[0], 1.0);
        assert!(r.values[1].is_nan() && r.values[2].is_nan());
        assert_eq!(r.uninformative, ["b".to_string(), "c".to_string()].into_iter().collect());
    }

    #[test]
    fn constant_measurement_with_constant_prediction_is_informative() {
        let s: Vec<_> = (0..4).map(|k| sample("a", ts(1, k * 15), 5.0, 4.0)).collect();
        let r = compute_residuals::<f64>(&s, &ids(&["a"]), "w").unwrap();
        assert!(r.uninformative.is_empty());
    }

    #[test]
    fn window_specs() {
        assert_eq!("daily".parse::<WindowSpec>().unwrap(), WindowSpec::Daily);
        assert_eq!("15min".parse::<WindowSpec>().unwrap(), WindowSpec::Minutes(15));
        assert!("7min".parse::<WindowSpec>().is_err());
        assert!("weekly".parse::<WindowSpec>().is_err());
        assert_eq!(WindowSpec::Hourly.window_start(ts(2, 135)), ts(2, 120));
        assert_eq!(WindowSpec::Minutes(15).window_start(ts(2, 137)), ts(2, 135));
    }

    #[test]
    fn csv_round_trip() {
        let s = vec![
            sample("1", ts(1, 0), 6.25, 4.0),
            SensorSample {
                quality: Quality::Missing,
                measured: f64::NAN,
                ..sample("2", ts(1, 0), 0.0, 2.0)
            },
        ];
        let mut buf = Vec::new();
        write_samples(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,sensor_id,measured,predicted,quality\n"));
        let back = read_samples(buf.as_slice(), "mem").unwrap();
        assert_eq!(back[0], s[0]);
        assert!(back[1].measured.is_nan());
        assert_eq!(back[1].quality, Quality::Missing);
    }

    #[test]
    fn csv_errors_carry_line() {
        let text = "timestamp,sensor_id,measured,predicted,quality\n2024-01-01T00:00:00,1,1.0,1.0,ok\nnot-a-time,1,1,1,ok\n";
        let err = read_samples(text.as_bytes(), "data.csv").unwrap_err().to_string();
        assert!(err.contains("data.csv:3"), "{err}");
        let bad_header = "time,sensor,measured\n";
        assert!(read_samples(bad_header.as_bytes(), "x").is_err());
    }
}
