//! CSV ingestion, failure-report labelling, evaluation-window filtering and
//! downsampling.
//!
//! Timestamps are wall-clock times of the operator's local zone, stored as
//! integer seconds since the Unix epoch *as if* they were UTC. Calendar-day
//! arithmetic is therefore plain `div_euclid(86_400)`.

use crate::sensor::{ClassLabel, Sensor, N_SENSORS};
use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Default labelling horizon ahead of each failure.
pub const DEFAULT_PRE_WINDOW: i64 = 2 * 3600;

/// Row errors kept verbatim in the report; the rest are only counted.
const MAX_KEPT_ROW_ERRORS: usize = 64;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("unparseable timestamp `{0}`")]
    BadTimestamp(String),
    #[error("invalid failure event: {0}")]
    InvalidEvent(String),
    #[error("failure events overlap after pre-window extension: {0} and {1}")]
    OverlappingEvents(String, String),
    #[error("events file: {0}")]
    EventsFile(String),
    #[error("downsample factor must be at least 1")]
    ZeroFactor,
}

/// One 1 Hz reading of all sixteen signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub seq_id: u64,
    /// Seconds since the epoch, local wall clock.
    pub timestamp: i64,
    /// Indexed by [`Sensor::index`].
    pub values: [f64; N_SENSORS],
}

impl RawSample {
    #[inline]
    pub fn value(&self, sensor: Sensor) -> f64 {
        self.values[sensor.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample: RawSample,
    pub label: ClassLabel,
}

/// Anything carrying the stream position assigned at parse time.
pub trait Sequenced {
    fn seq_id(&self) -> u64;
}

impl Sequenced for RawSample {
    fn seq_id(&self) -> u64 {
        self.seq_id
    }
}

impl Sequenced for LabeledSample {
    fn seq_id(&self) -> u64 {
        self.sample.seq_id
    }
}

impl<T: Sequenced, U> Sequenced for (T, U) {
    fn seq_id(&self) -> u64 {
        self.0.seq_id()
    }
}

/// Parses the timestamp spellings seen in dataset dumps and event tables.
pub fn parse_timestamp(text: &str) -> Result<i64, IngestError> {
    // day-first two-digit-year forms go first: `%Y` would happily read "28"
    const FORMATS: [&str; 6] = [
        "%d-%m-%y %H:%M:%S",
        "%d-%m-%y %H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ];
    let t = text.trim();
    // tolerate a trailing UTC designator; offsets are not interpreted
    let t = t.strip_suffix('Z').unwrap_or(t);
    for fmt in FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp());
    }
    if let Ok(secs) = t.parse::<i64>() {
        return Ok(secs);
    }
    Err(IngestError::BadTimestamp(text.to_string()))
}

pub fn format_timestamp(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .map(|dt| dt.naive_utc().format("%Y-%m-%d %H:%M:%S").to_string())
        .unwrap_or_else(|| ts.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the source, header included.
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_read: u64,
    pub emitted: u64,
    pub skipped: u64,
    pub out_of_order: u64,
    /// The first few row errors, for diagnostics.
    pub errors: Vec<RowError>,
}

/// Streaming CSV reader yielding [`RawSample`]s in file order.
///
/// Malformed rows are skipped and recorded in [`SampleReader::report`];
/// schema problems are fatal and surface from [`SampleReader::new`].
pub struct SampleReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    timestamp_col: usize,
    columns: Vec<(Sensor, usize)>,
    next_seq: u64,
    last_ts: Option<i64>,
    report: ParseReport,
}

impl<R: Read> SampleReader<R> {
    /// `schema` lists the signals that must be present; every sample still
    /// carries all sixteen slots, unlisted ones read as zero.
    pub fn new(source: R, schema: &[Sensor]) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let headers = reader.headers()?.clone();
        let timestamp_col = headers
            .iter()
            .position(|h| matches!(h.trim().to_ascii_lowercase().as_str(), "timestamp" | "time" | "datetime"))
            .ok_or_else(|| IngestError::MissingColumn("timestamp".into()))?;
        let mut columns = Vec::with_capacity(schema.len());
        for &sensor in schema {
            let col = headers
                .iter()
                .position(|h| Sensor::from_column(h) == Some(sensor))
                .ok_or_else(|| IngestError::MissingColumn(sensor.name().into()))?;
            columns.push((sensor, col));
        }
        Ok(Self {
            records: reader.into_records(),
            timestamp_col,
            columns,
            next_seq: 0,
            last_ts: None,
            report: ParseReport::default(),
        })
    }

    pub fn report(&self) -> &ParseReport {
        &self.report
    }

    pub fn into_report(self) -> ParseReport {
        self.report
    }

    fn skip(&mut self, row: u64, reason: String) {
        self.report.skipped += 1;
        if self.report.errors.len() < MAX_KEPT_ROW_ERRORS {
            self.report.errors.push(RowError { row, reason });
        }
    }

    fn parse_row(&self, record: &csv::StringRecord) -> Result<(i64, [f64; N_SENSORS]), String> {
        let ts_text = record
            .get(self.timestamp_col)
            .ok_or_else(|| "missing timestamp cell".to_string())?;
        let timestamp = parse_timestamp(ts_text).map_err(|e| e.to_string())?;
        let mut values = [0.0; N_SENSORS];
        for &(sensor, col) in &self.columns {
            let cell = record
                .get(col)
                .ok_or_else(|| format!("missing cell for `{sensor}`"))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| format!("non-numeric value `{cell}` in `{sensor}`"))?;
            if !v.is_finite() {
                return Err(format!("non-finite value `{cell}` in `{sensor}`"));
            }
            if !sensor.is_analog() && v != 0.0 && v != 1.0 {
                return Err(format!("digital signal `{sensor}` outside {{0,1}}: `{cell}`"));
            }
            values[sensor.index()] = v;
        }
        Ok((timestamp, values))
    }
}

impl<R: Read> Iterator for SampleReader<R> {
    type Item = RawSample;

    fn next(&mut self) -> Option<RawSample> {
        loop {
            let record = self.records.next()?;
            self.report.rows_read += 1;
            let record = match record {
                Ok(r) => r,
                Err(e) => {
                    let row = e.position().map(|p| p.line()).unwrap_or(0);
                    self.skip(row, e.to_string());
                    continue;
                }
            };
            let row = record.position().map(|p| p.line()).unwrap_or(0);
            match self.parse_row(&record) {
                Ok((timestamp, values)) => {
                    if self.last_ts.is_some_and(|last| timestamp < last) {
                        log::warn!("row {row}: timestamp goes backwards; row retained");
                        self.report.out_of_order += 1;
                    }
                    self.last_ts = Some(timestamp);
                    let sample = RawSample { seq_id: self.next_seq, timestamp, values };
                    self.next_seq += 1;
                    self.report.emitted += 1;
                    return Some(sample);
                }
                Err(reason) => self.skip(row, reason),
            }
        }
    }
}

/// Parses a whole source into memory.
pub fn parse_stream<R: Read>(source: R, schema: &[Sensor]) -> Result<(Vec<RawSample>, ParseReport), IngestError> {
    let mut reader = SampleReader::new(source, schema)?;
    let samples: Vec<RawSample> = reader.by_ref().collect();
    Ok((samples, reader.into_report()))
}

pub fn read_samples(path: &Path) -> Result<(Vec<RawSample>, ParseReport), IngestError> {
    let file = std::fs::File::open(path)?;
    parse_stream(std::io::BufReader::with_capacity(1 << 20, file), &Sensor::ALL)
}

/// A reported failure interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureEvent {
    pub label: ClassLabel,
    pub start: i64,
    pub end: i64,
}

impl FailureEvent {
    pub fn new(label: ClassLabel, start: i64, end: i64) -> Result<Self, IngestError> {
        if label == ClassLabel::NonFailure {
            return Err(IngestError::InvalidEvent("an event cannot carry the NonFailure class".into()));
        }
        if start >= end {
            return Err(IngestError::InvalidEvent(format!(
                "{label} starts at {} but ends at {}",
                format_timestamp(start),
                format_timestamp(end)
            )));
        }
        Ok(Self { label, start, end })
    }

    fn describe(&self) -> String {
        format!("{} [{} .. {}]", self.label, format_timestamp(self.start), format_timestamp(self.end))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsFile {
    #[serde(default)]
    pre_window_seconds: Option<i64>,
    event: Vec<EventEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EventEntry {
    label: String,
    start: String,
    end: String,
}

/// Validated, non-overlapping failure events plus the labelling horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSet {
    events: Vec<FailureEvent>,
    pre_window: i64,
}

impl EventSet {
    pub fn new(mut events: Vec<FailureEvent>, pre_window: i64) -> Result<Self, IngestError> {
        if pre_window < 0 {
            return Err(IngestError::InvalidEvent("pre-window must be non-negative".into()));
        }
        events.sort_by_key(|e| (e.start, e.end));
        for pair in events.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.start - pre_window <= a.end {
                return Err(IngestError::OverlappingEvents(a.describe(), b.describe()));
            }
        }
        Ok(Self { events, pre_window })
    }

    /// The three reported failures of the Porto metro APU dataset.
    pub fn metropt() -> Self {
        let ev = |label, s: &str, e: &str| FailureEvent::new(label, parse_timestamp(s).unwrap(), parse_timestamp(e).unwrap()).unwrap();
        Self::new(
            vec![
                ev(ClassLabel::AirLeakDryer, "2022-02-28 21:53:00", "2022-03-01 02:00:00"),
                ev(ClassLabel::AirLeakClient, "2022-03-23 14:54:00", "2022-03-23 15:24:00"),
                ev(ClassLabel::OilLeakCompressor, "2022-05-30 12:00:00", "2022-06-02 06:18:00"),
            ],
            DEFAULT_PRE_WINDOW,
        )
        .unwrap()
    }

    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        let file: EventsFile = toml::from_str(text).map_err(|e| IngestError::EventsFile(e.to_string()))?;
        let mut events = Vec::with_capacity(file.event.len());
        for entry in file.event {
            let label: ClassLabel = entry.label.parse().map_err(IngestError::EventsFile)?;
            events.push(FailureEvent::new(label, parse_timestamp(&entry.start)?, parse_timestamp(&entry.end)?)?);
        }
        Self::new(events, file.pre_window_seconds.unwrap_or(DEFAULT_PRE_WINDOW))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        let mut out = format!("pre_window_seconds = {}\n", self.pre_window);
        for e in &self.events {
            out.push_str(&format!(
                "\n[[event]]\nlabel = \"{}\"\nstart = \"{}\"\nend = \"{}\"\n",
                e.label,
                format_timestamp(e.start),
                format_timestamp(e.end)
            ));
        }
        out
    }

    pub fn events(&self) -> &[FailureEvent] {
        &self.events
    }

    pub fn pre_window(&self) -> i64 {
        self.pre_window
    }

    /// Class of an instant: the event label inside `[start - pre_window, end]`.
    pub fn label_at(&self, timestamp: i64) -> ClassLabel {
        self.events
            .iter()
            .find(|e| timestamp >= e.start - self.pre_window && timestamp <= e.end)
            .map_or(ClassLabel::NonFailure, |e| e.label)
    }

    pub fn label_sample(&self, sample: RawSample) -> LabeledSample {
        let label = self.label_at(sample.timestamp);
        LabeledSample { sample, label }
    }

    /// Half-open evaluation intervals, from midnight of the day before each
    /// event to the end of the day after it, merged where they touch.
    pub fn evaluation_intervals(&self) -> Vec<(i64, i64)> {
        let mut spans: Vec<(i64, i64)> = self
            .events
            .iter()
            .map(|e| {
                let from = e.start.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY - SECONDS_PER_DAY;
                let to = e.end.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY + 2 * SECONDS_PER_DAY;
                (from, to)
            })
            .collect();
        spans.sort_unstable();
        let mut merged: Vec<(i64, i64)> = Vec::with_capacity(spans.len());
        for (from, to) in spans {
            match merged.last_mut() {
                Some(last) if from <= last.1 => last.1 = last.1.max(to),
                _ => merged.push((from, to)),
            }
        }
        merged
    }

    pub fn in_evaluation_window(&self, timestamp: i64) -> bool {
        self.evaluation_intervals()
            .iter()
            .any(|&(from, to)| timestamp >= from && timestamp < to)
    }

    /// Keeps only samples inside some event's evaluation window.
    pub fn filter_evaluation_window<I>(&self, stream: I) -> impl Iterator<Item = RawSample>
    where
        I: IntoIterator<Item = RawSample>,
    {
        let spans = self.evaluation_intervals();
        stream
            .into_iter()
            .filter(move |s| spans.iter().any(|&(from, to)| s.timestamp >= from && s.timestamp < to))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownsampleMode {
    Stride,
    Random,
}

impl std::str::FromStr for DownsampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stride" => Ok(DownsampleMode::Stride),
            "random" => Ok(DownsampleMode::Random),
            other => Err(format!("unknown downsample mode `{other}` (expected stride|random)")),
        }
    }
}

/// Per-item keep/drop decision shared by [`downsample`] and callers that
/// must still see every item (sliding windows run over the full stream).
#[derive(Debug, Clone)]
pub struct Downsampler {
    factor: u64,
    mode: DownsampleMode,
    rng: ChaCha8Rng,
}

impl Downsampler {
    pub fn new(factor: u64, mode: DownsampleMode, seed: u64) -> Result<Self, IngestError> {
        if factor == 0 {
            return Err(IngestError::ZeroFactor);
        }
        Ok(Self { factor, mode, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn factor(&self) -> u64 {
        self.factor
    }

    /// Decides the next item. Random mode draws one coin per call, so every
    /// item must be offered in stream order.
    pub fn keep(&mut self, seq_id: u64) -> bool {
        match (self.factor, self.mode) {
            (1, _) => true,
            (f, DownsampleMode::Stride) => seq_id % f == 0,
            (f, DownsampleMode::Random) => self.rng.random_bool(1.0 / f as f64),
        }
    }
}

/// Keeps one item in `factor`: by `seq_id` residue in stride mode, or by an
/// independent seeded coin flip per item in random mode. Order is preserved.
pub fn downsample<I>(
    stream: I,
    factor: u64,
    mode: DownsampleMode,
    seed: u64,
) -> Result<impl Iterator<Item = I::Item>, IngestError>
where
    I: IntoIterator,
    I::Item: Sequenced,
{
    let mut sampler = Downsampler::new(factor, mode, seed)?;
    Ok(stream.into_iter().filter(move |item| sampler.keep(item.seq_id())))
}

/// Prefix of the stream covering `days` days from its first timestamp.
pub fn leading_days(samples: &[RawSample], days: i64) -> &[RawSample] {
    let Some(first) = samples.first() else {
        return samples;
    };
    let limit = first.timestamp + days * SECONDS_PER_DAY;
    let end = samples.partition_point(|s| s.timestamp < limit);
    &samples[..end]
}
