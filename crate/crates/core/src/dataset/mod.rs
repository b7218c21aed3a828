//! Behavioral logs: ingestion, request-log synthesis, slicing, sensor
//! chunking and one-vs-universe attack augmentation.
//!
//! The on-disk format is line-delimited JSON, one [`DataPoint`] per line:
//!
//! ```text
//! {"user_id":"u003","session_id":"u003-s1","timestamp":1600000012345,"source":"swipe",
//!  "payload":{"view":"HomeScreen","os":"Android 10","points":[{"t":..,"x":..,"y":..},..],"score":null}}
//! {"user_id":"u003","session_id":"u003-s1","timestamp":1600000012400,"source":"gyroscope",
//!  "payload":{"x":0.01,"y":-0.2,"z":0.03}}
//! ```

mod augment;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, validate_augmented, AugmentConfig};

/// Length of an authentication slice in milliseconds.
pub const SLICE_MS: i64 = 300_000;
/// Samples per sensor chunk.
pub const CHUNK_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown source tag `{tag}`")]
    UnknownSource { line: usize, tag: String },
    #[error("augmentation needs at least 2 users, found {0}")]
    TooFewUsers(usize),
    #[error("no donor with a long enough consecutive sequence for slice {slice} after {retries} attempts")]
    DonorUnavailable { slice: String, retries: usize },
    #[error("augmented slice {slice} violates invariant: {reason}")]
    Invalid { slice: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Swipe,
    Accelerometer,
    Gyroscope,
    Magnetometer,
    Request,
}

impl Source {
    pub const ALL: [Source; 5] =
        [Source::Swipe, Source::Accelerometer, Source::Gyroscope, Source::Magnetometer, Source::Request];
    pub const SENSORS: [Source; 3] = [Source::Accelerometer, Source::Gyroscope, Source::Magnetometer];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::Swipe => "swipe",
            Source::Accelerometer => "accelerometer",
            Source::Gyroscope => "gyroscope",
            Source::Magnetometer => "magnetometer",
            Source::Request => "request",
        }
    }

    pub fn is_sensor(self) -> bool {
        Source::SENSORS.contains(&self)
    }

    /// Frontend sources are encrypted under the user's key, the request log under the backend's.
    pub fn is_frontend(self) -> bool {
        self != Source::Request
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Source::ALL
            .into_iter()
            .find(|src| src.name() == s)
            .ok_or_else(|| format!("unknown source `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchPoint {
    pub t: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwipeRecord {
    pub view: String,
    pub os: String,
    pub points: Vec<TouchPoint>,
    /// Set on the last gesture of a finished game.
    #[serde(default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub page: String,
    pub user_agent: String,
    pub finished_game: bool,
    #[serde(default)]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", content = "payload", rename_all = "lowercase")]
pub enum Payload {
    Swipe(SwipeRecord),
    Accelerometer(SensorSample),
    Gyroscope(SensorSample),
    Magnetometer(SensorSample),
    Request(RequestRecord),
}

impl Payload {
    pub fn source(&self) -> Source {
        match self {
            Payload::Swipe(_) => Source::Swipe,
            Payload::Accelerometer(_) => Source::Accelerometer,
            Payload::Gyroscope(_) => Source::Gyroscope,
            Payload::Magnetometer(_) => Source::Magnetometer,
            Payload::Request(_) => Source::Request,
        }
    }

    pub fn sensor(&self) -> Option<&SensorSample> {
        match self {
            Payload::Accelerometer(s) | Payload::Gyroscope(s) | Payload::Magnetometer(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub user_id: String,
    pub session_id: String,
    pub timestamp: i64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl DataPoint {
    pub fn source(&self) -> Source {
        self.payload.source()
    }

    /// Copy moved in time by `delta` ms, including any touch points.
    pub fn shifted(&self, delta: i64) -> DataPoint {
        let mut p = self.clone();
        p.timestamp += delta;
        if let Payload::Swipe(s) = &mut p.payload {
            for tp in &mut s.points {
                tp.t += delta;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    /// Sorted by timestamp.
    pub points: Vec<DataPoint>,
}

impl Session {
    pub fn start(&self) -> Option<i64> {
        self.points.first().map(|p| p.timestamp)
    }

    pub fn end(&self) -> Option<i64> {
        self.points.last().map(|p| p.timestamp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserData {
    pub user_id: String,
    /// Ordered by start time.
    pub sessions: Vec<Session>,
}

impl UserData {
    pub fn point_count(&self) -> usize {
        self.sessions.iter().map(|s| s.points.len()).sum()
    }
}

/// Data points grouped by user (sorted by id) and session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub users: Vec<UserData>,
}

impl Dataset {
    /// Group loose points into users and sessions, sorting each session by time.
    pub fn from_points(points: Vec<DataPoint>) -> Dataset {
        let mut by_user: BTreeMap<String, BTreeMap<String, Vec<DataPoint>>> = BTreeMap::new();
        for p in points {
            by_user
                .entry(p.user_id.clone())
                .or_default()
                .entry(p.session_id.clone())
                .or_default()
                .push(p);
        }
        let users = by_user
            .into_iter()
            .map(|(user_id, sessions)| {
                let mut sessions: Vec<Session> = sessions
                    .into_iter()
                    .map(|(session_id, mut points)| {
                        points.sort_by_key(|p| (p.timestamp, p.source()));
                        Session { session_id, points }
                    })
                    .collect();
                sessions.sort_by(|a, b| a.start().cmp(&b.start()).then(a.session_id.cmp(&b.session_id)));
                UserData { user_id, sessions }
            })
            .collect();
        Dataset { users }
    }

    pub fn point_count(&self) -> usize {
        self.users.iter().map(UserData::point_count).sum()
    }

    pub fn user(&self, user_id: &str) -> Option<&UserData> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    /// All points in file order (user, session, time).
    pub fn points(&self) -> impl Iterator<Item = &DataPoint> {
        self.users.iter().flat_map(|u| u.sessions.iter().flat_map(|s| s.points.iter()))
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for p in self.points() {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Add synthesized request points for every session of every user.
    pub fn with_requests(mut self) -> Dataset {
        for user in &mut self.users {
            for session in &mut user.sessions {
                let meta = DeviceMeta::from_points(&session.points);
                let mut requests = synthesize_requests(&session.points, &meta);
                if requests.is_empty() {
                    continue;
                }
                session.points.retain(|p| p.source() != Source::Request);
                session.points.append(&mut requests);
                session.points.sort_by_key(|p| (p.timestamp, p.source()));
            }
        }
        self
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<DataPoint> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
    match value.get("source").and_then(|s| s.as_str()) {
        Some(tag) if tag.parse::<Source>().is_err() => {
            return Err(DatasetError::UnknownSource { line: line_no, tag: tag.to_string() })
        }
        None => {
            return Err(DatasetError::Parse { line: line_no, message: "missing source tag".into() })
        }
        _ => {}
    }
    serde_json::from_value(value).map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })
}

/// Read line-delimited records; users with fewer than `min_points` records are dropped.
pub fn ingest_reader(reader: impl BufRead, min_points: usize) -> Result<Dataset> {
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        points.push(parse_line(&line, i + 1)?);
    }
    let mut ds = Dataset::from_points(points);
    ds.users.retain(|u| u.point_count() >= min_points);
    Ok(ds)
}

pub fn ingest(path: &Path, min_points: usize) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    ingest_reader(BufReader::new(file), min_points)
}

/// Device metadata attached to synthesized requests.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceMeta {
    pub os: String,
}

impl DeviceMeta {
    /// Operating system named by the first swipe record, or "unknown".
    pub fn from_points(points: &[DataPoint]) -> DeviceMeta {
        let os = points
            .iter()
            .find_map(|p| match &p.payload {
                Payload::Swipe(s) => Some(s.os.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "unknown".to_string());
        DeviceMeta { os }
    }
}

/// Page address for a view: `/` + the view name without a `Screen`/`View` suffix, lowercased.
pub fn page_for_view(view: &str) -> String {
    let stem = ["Screen", "View"]
        .iter()
        .find_map(|suffix| view.strip_suffix(suffix).filter(|s| !s.is_empty()))
        .unwrap_or(view);
    format!("/{}", stem.to_lowercase())
}

/// One request per view transition of the touch stream. A finished-game score
/// seen since the previous request is attached to the next one.
pub fn synthesize_requests(points: &[DataPoint], meta: &DeviceMeta) -> Vec<DataPoint> {
    let mut out = Vec::new();
    let mut current: Option<&str> = None;
    let mut pending_score: Option<f64> = None;
    for p in points {
        let Payload::Swipe(s) = &p.payload else { continue };
        if s.view.is_empty() {
            continue;
        }
        if current != Some(s.view.as_str()) {
            current = Some(s.view.as_str());
            out.push(DataPoint {
                user_id: p.user_id.clone(),
                session_id: p.session_id.clone(),
                timestamp: p.timestamp,
                payload: Payload::Request(RequestRecord {
                    page: page_for_view(&s.view),
                    user_agent: meta.os.clone(),
                    finished_game: pending_score.is_some(),
                    score: pending_score.take(),
                }),
            });
        }
        if let Some(score) = s.score {
            pending_score = Some(score);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Legitimate,
    Attacked,
}

/// One user's data points in a 300 s window of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub user_id: String,
    pub session_id: String,
    pub index: usize,
    pub start: i64,
    pub end: i64,
    /// Per-source points indexed by [`Source::index`], each sorted by time.
    pub points: [Vec<DataPoint>; 5],
    pub label: Label,
    pub entry_point: Option<f64>,
    pub imposter_id: Option<String>,
}

impl Slice {
    pub fn source(&self, src: Source) -> &[DataPoint] {
        &self.points[src.index()]
    }

    pub fn point_count(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }

    pub fn key(&self) -> String {
        format!("{}/{}#{}", self.user_id, self.session_id, self.index)
    }

    /// Start of the session this slice was cut from.
    pub fn session_start(&self) -> i64 {
        self.start - self.index as i64 * (self.end - self.start)
    }

    /// Timestamp at which substituted data begins, for attacked slices.
    pub fn entry_time(&self) -> Option<i64> {
        self.entry_point.map(|ep| self.start + entry_offset(ep))
    }
}

pub(crate) fn entry_offset(ep: f64) -> i64 {
    (ep * SLICE_MS as f64).round() as i64
}

/// Partition a session into half-open `[start + k*len, start + (k+1)*len)` slices.
/// Slices without points are not emitted.
pub fn slice_session(user_id: &str, session: &Session, slice_len: i64) -> Vec<Slice> {
    let Some(start) = session.start() else { return Vec::new() };
    let mut slices: BTreeMap<usize, Slice> = BTreeMap::new();
    for p in &session.points {
        let idx = ((p.timestamp - start) / slice_len) as usize;
        let slice = slices.entry(idx).or_insert_with(|| Slice {
            user_id: user_id.to_string(),
            session_id: session.session_id.clone(),
            index: idx,
            start: start + idx as i64 * slice_len,
            end: start + (idx as i64 + 1) * slice_len,
            points: Default::default(),
            label: Label::Legitimate,
            entry_point: None,
            imposter_id: None,
        });
        slice.points[p.source().index()].push(p.clone());
    }
    slices.into_values().collect()
}

pub fn slice_sessions(user: &UserData, slice_len: i64) -> Vec<Slice> {
    user.sessions.iter().flat_map(|s| slice_session(&user.user_id, s, slice_len)).collect()
}

/// Ten consecutive samples of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorChunk {
    pub source: Source,
    pub samples: [SensorSample; CHUNK_LEN],
    pub timestamp: i64,
    /// User that produced the majority of samples (ties go to the first sample).
    pub origin_user: String,
}

/// Group each sensor stream into non-overlapping chunks of ten; a trailing
/// remainder is discarded.
pub fn chunk_sensors(slice: &Slice) -> Vec<(Source, Vec<SensorChunk>)> {
    Source::SENSORS
        .iter()
        .map(|&src| {
            let chunks = slice
                .source(src)
                .chunks_exact(CHUNK_LEN)
                .map(|group| {
                    let samples = std::array::from_fn(|i| *group[i].payload.sensor().expect("sensor source"));
                    let first = &group[0].user_id;
                    let same = group.iter().filter(|p| &p.user_id == first).count();
                    let origin_user = if 2 * same >= CHUNK_LEN {
                        first.clone()
                    } else {
                        group.iter().find(|p| &p.user_id != first).unwrap().user_id.clone()
                    };
                    SensorChunk { source: src, samples, timestamp: group[0].timestamp, origin_user }
                })
                .collect();
            (src, chunks)
        })
        .collect()
}
