//! Uniformly sampled multi-channel time series, CSV ingestion, resampling
//! and weekly fold splitting.
//!
//! Every other module consumes [`TimeSeries`]. Samples are interval values:
//! sample `k` describes `[start + k·step, start + (k+1)·step)`.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Timelike, Utc};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest run of missing samples that is linearly interpolated on load.
pub const MAX_INTERPOLATED_GAP: usize = 3;

/// Default fold length for cross validation: one week.
pub const WEEK_SECS: i64 = 7 * 24 * 3600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "degC")]
    Celsius,
    #[serde(rename = "W")]
    Watt,
    #[serde(rename = "W/m2")]
    WattPerSquareMeter,
    /// Dimensionless in `[0, 1]` (valve positions, duty cycles).
    #[serde(rename = "fraction")]
    Fraction,
    /// Energy per sample; summed when resampling.
    #[serde(rename = "Wh")]
    WattHour,
    #[serde(rename = "1")]
    Dimensionless,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::Celsius => "degC",
            Unit::Watt => "W",
            Unit::WattPerSquareMeter => "W/m2",
            Unit::Fraction => "fraction",
            Unit::WattHour => "Wh",
            Unit::Dimensionless => "1",
        }
    }

    fn is_extensive(self) -> bool {
        matches!(self, Unit::WattHour)
    }
}

/// Channel name to unit map used to validate CSV headers.
pub type Schema = IndexMap<String, Unit>;

/// Builds a schema by channel naming convention: `T_*` temperatures,
/// `b_*` valves, `I_*` irradiance, `Q_*` power, `E_*` energy, anything
/// else dimensionless.
pub fn infer_schema<'a>(names: impl IntoIterator<Item = &'a str>) -> Schema {
    names
        .into_iter()
        .map(|n| {
            let unit = if n.starts_with("T_") {
                Unit::Celsius
            } else if n.starts_with("b_") || n.starts_with("u_") {
                Unit::Fraction
            } else if n.starts_with("I_") {
                Unit::WattPerSquareMeter
            } else if n.starts_with("Q_") {
                Unit::Watt
            } else if n.starts_with("E_") {
                Unit::WattHour
            } else {
                Unit::Dimensionless
            };
            (n.to_string(), unit)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub unit: Unit,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    start: DateTime<Utc>,
    step: i64,
    len: usize,
    channels: IndexMap<String, Channel>,
}

pub struct TimeSeriesBuilder {
    start: DateTime<Utc>,
    step: i64,
    channels: Vec<(String, Channel)>,
}

impl TimeSeriesBuilder {
    pub fn channel(mut self, name: impl Into<String>, unit: Unit, values: Vec<f64>) -> Self {
        self.channels.push((name.into(), Channel { unit, values }));
        self
    }

    pub fn build(self) -> Result<TimeSeries> {
        TimeSeries::from_channels(self.start, self.step, self.channels)
    }
}

impl TimeSeries {
    pub fn builder(start: DateTime<Utc>, step_secs: i64) -> TimeSeriesBuilder {
        TimeSeriesBuilder {
            start,
            step: step_secs,
            channels: Vec::new(),
        }
    }

    pub fn from_channels(
        start: DateTime<Utc>,
        step_secs: i64,
        channels: Vec<(String, Channel)>,
    ) -> Result<Self> {
        if step_secs <= 0 {
            return Err(Error::invalid(format!("step must be positive, got {step_secs}")));
        }
        let len = channels.first().map(|(_, c)| c.values.len()).unwrap_or(0);
        let mut map = IndexMap::with_capacity(channels.len());
        for (name, ch) in channels {
            if ch.values.len() != len {
                return Err(Error::SchemaMismatch(format!(
                    "channel `{name}` has {} samples, expected {len}",
                    ch.values.len()
                )));
            }
            validate_range(&name, &ch)?;
            if map.insert(name.clone(), ch).is_some() {
                return Err(Error::SchemaMismatch(format!("duplicate channel `{name}`")));
            }
        }
        Ok(Self {
            start,
            step: step_secs,
            len,
            channels: map,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step_secs(&self) -> i64 {
        self.step
    }

    /// Start time of sample `k`.
    pub fn time_at(&self, k: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step * k as i64)
    }

    /// Midpoint of the interval covered by sample `k`.
    pub fn mid_time(&self, k: usize) -> DateTime<Utc> {
        self.start + Duration::milliseconds(self.step * 1000 * k as i64 + self.step * 500)
    }

    pub fn span_secs(&self) -> i64 {
        self.step * self.len as i64
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn unit(&self, name: &str) -> Result<Unit> {
        self.channels
            .get(name)
            .map(|c| c.unit)
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn schema(&self) -> Schema {
        self.channels
            .iter()
            .map(|(n, c)| (n.clone(), c.unit))
            .collect()
    }

    /// Adds or replaces a channel.
    pub fn with_channel(mut self, name: impl Into<String>, unit: Unit, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.len {
            return Err(Error::SchemaMismatch(format!(
                "channel `{name}` has {} samples, expected {}",
                values.len(),
                self.len
            )));
        }
        let ch = Channel { unit, values };
        validate_range(&name, &ch)?;
        self.channels.insert(name, ch);
        Ok(self)
    }

    pub fn slice(&self, range: Range<usize>) -> TimeSeries {
        assert!(range.end <= self.len, "slice {range:?} out of bounds for length {}", self.len);
        TimeSeries {
            start: self.time_at(range.start),
            step: self.step,
            len: range.len(),
            channels: self
                .channels
                .iter()
                .map(|(n, c)| {
                    (
                        n.clone(),
                        Channel {
                            unit: c.unit,
                            values: c.values[range.clone()].to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Appends `other`, which must start right after `self` ends and carry
    /// the same channels.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries> {
        if other.step != self.step {
            return Err(Error::SchemaMismatch("step mismatch".into()));
        }
        if !self.is_empty() && other.start != self.time_at(self.len) {
            return Err(Error::NonMonotonicTime { row: self.len });
        }
        let mut out = self.clone();
        for (name, ch) in out.channels.iter_mut() {
            let theirs = other
                .channels
                .get(name)
                .ok_or_else(|| Error::SchemaMismatch(format!("channel `{name}` missing in appended series")))?;
            ch.values.extend_from_slice(&theirs.values);
        }
        if other.channels.len() != self.channels.len() {
            return Err(Error::SchemaMismatch("channel sets differ".into()));
        }
        out.len += other.len;
        Ok(out)
    }

    /// Aggregates to a coarser step. Intensive channels (temperatures,
    /// power, irradiance, valve duty) become interval means, energy channels
    /// interval sums. A trailing partial interval is dropped.
    pub fn resample(&self, new_step: i64) -> Result<TimeSeries> {
        if new_step <= 0 || new_step % self.step != 0 {
            return Err(Error::NonIntegerRatio {
                step: self.step,
                new_step,
            });
        }
        let ratio = (new_step / self.step) as usize;
        let n = self.len / ratio;
        let channels = self
            .channels
            .iter()
            .map(|(name, ch)| {
                let values = ch
                    .values
                    .chunks_exact(ratio)
                    .take(n)
                    .map(|w| {
                        let s: f64 = w.iter().sum();
                        if ch.unit.is_extensive() {
                            s
                        } else {
                            s / ratio as f64
                        }
                    })
                    .collect();
                (name.clone(), Channel { unit: ch.unit, values })
            })
            .collect();
        Ok(TimeSeries {
            start: self.start,
            step: new_step,
            len: n,
            channels,
        })
    }

    /// Seconds since UTC midnight at the midpoint of sample `k`.
    pub fn time_of_day(&self, k: usize) -> f64 {
        let t = self.mid_time(k);
        t.num_seconds_from_midnight() as f64 + f64::from(t.nanosecond()) * 1e-9
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.channels.keys().cloned());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len {
            row.clear();
            row.push(format_time(self.time_at(k)));
            for ch in self.channels.values() {
                row.push(format_float(ch.values[k]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<TimeSeries> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(Error::SchemaMismatch("first column must be `timestamp`".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        for n in &names {
            if !schema.contains_key(n) {
                return Err(Error::SchemaMismatch(format!("unexpected column `{n}`")));
            }
        }
        for n in schema.keys() {
            if !names.contains(n) {
                return Err(Error::SchemaMismatch(format!("missing column `{n}`")));
            }
        }

        let mut times: Vec<DateTime<Utc>> = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (row_idx, rec) in r.records().enumerate() {
            let rec = rec?;
            let t = DateTime::parse_from_rfc3339(rec.get(0).unwrap_or("").trim())
                .map_err(|e| Error::SchemaMismatch(format!("row {row_idx}: bad timestamp: {e}")))?
                .with_timezone(&Utc);
            times.push(t);
            for (j, col) in cols.iter_mut().enumerate() {
                let cell = rec.get(j + 1).unwrap_or("").trim();
                let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    f64::NAN
                } else {
                    cell.parse::<f64>()
                        .map_err(|e| Error::SchemaMismatch(format!("row {row_idx}, column `{}`: {e}", names[j])))?
                };
                col.push(v);
            }
        }
        if times.len() < 2 {
            return Err(Error::NotEnoughData("need at least two rows to infer the step".into()));
        }
        let step = (times[1] - times[0]).num_seconds();
        if step <= 0 {
            return Err(Error::NonMonotonicTime { row: 1 });
        }

        // Place rows on the regular grid; missing rows become missing samples.
        let start = times[0];
        let mut slots = Vec::with_capacity(times.len());
        for (i, t) in times.iter().enumerate() {
            let off = (*t - start).num_seconds();
            if off % step != 0 || (i > 0 && *t <= times[i - 1]) {
                return Err(Error::NonMonotonicTime { row: i });
            }
            slots.push((off / step) as usize);
        }
        let len = slots.last().copied().unwrap_or(0) + 1;
        let mut channels = Vec::with_capacity(names.len());
        for (name, col) in names.iter().zip(cols) {
            let mut values = vec![f64::NAN; len];
            for (slot, v) in slots.iter().zip(col) {
                values[*slot] = v;
            }
            fill_gaps(name, &mut values)?;
            channels.push((name.clone(), Channel { unit: schema[name], values }));
        }
        TimeSeries::from_channels(start, step, channels)
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TimeSeries> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), schema)
    }

    /// Loads a CSV whose units follow the naming convention of [`infer_schema`].
    pub fn load_csv_inferred(path: impl AsRef<Path>) -> Result<TimeSeries> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let schema = infer_schema(r.headers()?.iter().skip(1));
        Self::load_csv(path, &schema)
    }
}

fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Shortest representation that parses back to the identical `f64`.
fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

fn validate_range(name: &str, ch: &Channel) -> Result<()> {
    let check: fn(f64) -> bool = match ch.unit {
        Unit::Fraction => |v| (0.0..=1.0).contains(&v),
        Unit::WattPerSquareMeter => |v| v >= 0.0,
        _ => return Ok(()),
    };
    match ch.values.iter().position(|&v| !v.is_nan() && !check(v)) {
        Some(index) => Err(Error::ValueOutOfRange {
            channel: name.to_string(),
            index,
            value: ch.values[index],
        }),
        None => Ok(()),
    }
}

fn fill_gaps(name: &str, values: &mut [f64]) -> Result<()> {
    let n = values.len();
    let mut i = 0;
    while i < n {
        if !values[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].is_nan() {
            i += 1;
        }
        let len = i - start;
        if len > MAX_INTERPOLATED_GAP || start == 0 || i == n {
            return Err(Error::GapTooLarge {
                channel: name.to_string(),
                start,
                len,
            });
        }
        let (a, b) = (values[start - 1], values[i]);
        for (j, v) in values[start..i].iter_mut().enumerate() {
            let w = (j + 1) as f64 / (len + 1) as f64;
            *v = a + (b - a) * w;
        }
    }
    Ok(())
}

/// Random partition of whole folds into training and validation sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_length: i64,
    pub fold_samples: usize,
    pub n_folds: usize,
    pub train_fold_indices: Vec<usize>,
    pub validation_fold_indices: Vec<usize>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn fold_range(&self, fold: usize) -> Range<usize> {
        fold * self.fold_samples..(fold + 1) * self.fold_samples
    }

    pub fn train_segments(&self, ts: &TimeSeries) -> Vec<TimeSeries> {
        self.train_fold_indices
            .iter()
            .map(|&f| ts.slice(self.fold_range(f)))
            .collect()
    }

    pub fn validation_segments(&self, ts: &TimeSeries) -> Vec<TimeSeries> {
        self.validation_fold_indices
            .iter()
            .map(|&f| ts.slice(self.fold_range(f)))
            .collect()
    }
}

/// Splits `ts` into weekly folds and draws `n_train_folds` of them for training.
pub fn split_folds(ts: &TimeSeries, n_train_folds: usize, seed: u64) -> Result<FoldSplit> {
    split_folds_with_length(ts, WEEK_SECS, n_train_folds, seed)
}

pub fn split_folds_with_length(
    ts: &TimeSeries,
    fold_length: i64,
    n_train_folds: usize,
    seed: u64,
) -> Result<FoldSplit> {
    if fold_length <= 0 || fold_length % ts.step_secs() != 0 {
        return Err(Error::NonIntegerRatio {
            step: ts.step_secs(),
            new_step: fold_length,
        });
    }
    let fold_samples = (fold_length / ts.step_secs()) as usize;
    let n_folds = ts.len() / fold_samples;
    if n_folds < n_train_folds + 1 {
        return Err(Error::NotEnoughData(format!(
            "{n_folds} whole folds available, {} needed",
            n_train_folds + 1
        )));
    }
    let mut idx: Vec<usize> = (0..n_folds).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n_train_folds].to_vec();
    let mut validation = idx[n_train_folds..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(FoldSplit {
        fold_length,
        fold_samples,
        n_folds,
        train_fold_indices: train,
        validation_fold_indices: validation,
        seed,
    })
}
