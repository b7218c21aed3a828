//! Synthetic BrainRun-like logs with per-user behavioral signatures.
//!
//! Each user gets Gaussian swipe dynamics, a sensor bias and noise level per
//! sensor, a page-transition matrix, a device OS and a game skill. Sensors
//! are sampled at 100 ms in short bursts around each gesture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{DataPoint, Dataset, Payload, SensorSample, SwipeRecord, TouchPoint, CHUNK_LEN};

pub const VIEWS: [&str; 7] = [
    "HomeScreen",
    "MathisisScreen",
    "FocusScreen",
    "SpeedyScreen",
    "ReachScreen",
    "ProfileScreen",
    "StatsScreen",
];
const GAME_VIEWS: [usize; 4] = [1, 2, 3, 4];
const OS_CHOICES: [(&str, f64); 4] = [("Android 10", 0.4), ("Android 9", 0.25), ("iOS 14", 0.25), ("iOS 13", 0.1)];
const SENSOR_SPREAD: [f64; 3] = [1.0, 0.55, 0.4];
const SENSOR_BASE: [[f64; 3]; 3] = [[0.0, 0.0, 9.81], [0.0, 0.0, 0.0], [22.0, -5.0, -40.0]];
const SAMPLE_MS: i64 = 100;
const TOUCH_MS: i64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "d_users")]
    pub users: usize,
    #[serde(default = "d_sessions")]
    pub sessions_per_user: usize,
    #[serde(default = "d_min_minutes")]
    pub min_session_minutes: f64,
    #[serde(default = "d_max_minutes")]
    pub max_session_minutes: f64,
    /// Mean seconds between gestures.
    #[serde(default = "d_swipe_interval")]
    pub swipe_interval_s: f64,
    /// Mean seconds spent on a view.
    #[serde(default = "d_dwell")]
    pub view_dwell_s: f64,
    /// Maximum sensor chunks recorded around one gesture.
    #[serde(default = "d_burst")]
    pub max_burst_chunks: usize,
    /// Multiplier on between-user differences; 0 makes all users identical in distribution.
    #[serde(default = "d_signal")]
    pub signal: f64,
    #[serde(default = "d_start")]
    pub start_time_ms: i64,
}

fn d_users() -> usize {
    20
}
fn d_sessions() -> usize {
    5
}
fn d_min_minutes() -> f64 {
    10.0
}
fn d_max_minutes() -> f64 {
    16.0
}
fn d_swipe_interval() -> f64 {
    9.0
}
fn d_dwell() -> f64 {
    22.0
}
fn d_burst() -> usize {
    2
}
fn d_signal() -> f64 {
    1.0
}
fn d_start() -> i64 {
    1_600_000_000_000
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: d_users(),
            sessions_per_user: d_sessions(),
            min_session_minutes: d_min_minutes(),
            max_session_minutes: d_max_minutes(),
            swipe_interval_s: d_swipe_interval(),
            view_dwell_s: d_dwell(),
            max_burst_chunks: d_burst(),
            signal: d_signal(),
            start_time_ms: d_start(),
        }
    }
}

struct Profile {
    os: &'static str,
    speed: f64,
    duration_ms: f64,
    bend: f64,
    angle: f64,
    origin: (f64, f64),
    sensor_bias: [[f64; 3]; 3],
    sensor_noise: [f64; 3],
    transitions: Vec<Vec<f64>>,
    dwell_s: f64,
    skill: f64,
}

fn normal(rng: &mut ChaCha20Rng, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return mean;
    }
    Normal::new(mean, std).unwrap().sample(rng)
}

impl Profile {
    fn draw(rng: &mut ChaCha20Rng, signal: f64) -> Profile {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let os = OS_CHOICES
            .iter()
            .find(|(_, p)| {
                acc += p;
                u < acc
            })
            .map_or(OS_CHOICES[0].0, |(name, _)| name);
        let sensor_bias = std::array::from_fn(|s| {
            std::array::from_fn(|_| normal(rng, 0.0, SENSOR_SPREAD[s] * signal))
        });
        let sensor_noise = std::array::from_fn(|_| (normal(rng, 0.0, 0.25 * signal)).exp() * 0.6);
        let transitions = (0..VIEWS.len())
            .map(|i| {
                let w: Vec<f64> = (0..VIEWS.len())
                    .map(|j| if i == j { 0.0 } else { normal(rng, 0.0, 1.2 * signal).exp() })
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            })
            .collect();
        Profile {
            os,
            speed: normal(rng, 0.0, 0.35 * signal).exp(),
            duration_ms: 160.0 * normal(rng, 0.0, 0.3 * signal).exp(),
            bend: normal(rng, 0.0, 0.25 * signal),
            angle: rng.random_range(0.0..std::f64::consts::TAU),
            origin: (540.0 + normal(rng, 0.0, 150.0 * signal), 1100.0 + normal(rng, 0.0, 300.0 * signal)),
            sensor_bias,
            sensor_noise,
            transitions,
            dwell_s: normal(rng, 0.0, 0.25 * signal).exp(),
            skill: normal(rng, 50.0, 15.0 * signal),
        }
    }
}

struct SessionWriter<'a> {
    user_id: &'a str,
    session_id: String,
    points: Vec<DataPoint>,
    last_sensor: i64,
}

impl SessionWriter<'_> {
    fn push(&mut self, timestamp: i64, payload: Payload) {
        self.points.push(DataPoint {
            user_id: self.user_id.to_string(),
            session_id: self.session_id.clone(),
            timestamp,
            payload,
        });
    }

    fn swipe(&mut self, rng: &mut ChaCha20Rng, p: &Profile, t: i64, view: usize) -> usize {
        let duration = (p.duration_ms * normal(rng, 0.0, 0.25).exp()).clamp(40.0, 1200.0);
        let speed = p.speed * normal(rng, 0.0, 0.2).exp();
        let length = speed * duration;
        let angle = p.angle + normal(rng, 0.0, 0.5);
        let bend = p.bend + normal(rng, 0.0, 0.12);
        let (x0, y0) = (p.origin.0 + normal(rng, 0.0, 60.0), p.origin.1 + normal(rng, 0.0, 90.0));
        let n = ((duration / TOUCH_MS as f64).round() as usize).clamp(3, 40);
        let (dx, dy) = (angle.cos(), angle.sin());
        let points = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                // Ease-in-out progress plus a sideways arc.
                let progress = 0.5 - 0.5 * (std::f64::consts::PI * s).cos();
                let side = bend * length * (std::f64::consts::PI * s).sin();
                TouchPoint {
                    t: t + i as i64 * TOUCH_MS,
                    x: x0 + dx * progress * length - dy * side + normal(rng, 0.0, 0.8),
                    y: y0 + dy * progress * length + dx * side + normal(rng, 0.0, 0.8),
                }
            })
            .collect();
        self.push(
            t,
            Payload::Swipe(SwipeRecord { view: VIEWS[view].to_string(), os: p.os.to_string(), points, score: None }),
        );
        self.points.len() - 1
    }

    fn burst(&mut self, rng: &mut ChaCha20Rng, p: &Profile, t: i64, chunks: usize, posture: &[[f64; 3]; 3]) {
        let start = (t - 500).max(self.last_sensor + SAMPLE_MS);
        let n = chunks * CHUNK_LEN;
        let mut state = [[0.0f64; 3]; 3];
        for i in 0..n {
            let ts = start + i as i64 * SAMPLE_MS;
            for s in 0..3 {
                let v: [f64; 3] = std::array::from_fn(|a| {
                    state[s][a] = 0.6 * state[s][a] + normal(rng, 0.0, p.sensor_noise[s]);
                    SENSOR_BASE[s][a] + p.sensor_bias[s][a] + posture[s][a] + state[s][a]
                });
                let sample = SensorSample { x: v[0], y: v[1], z: v[2] };
                let payload = match s {
                    0 => Payload::Accelerometer(sample),
                    1 => Payload::Gyroscope(sample),
                    _ => Payload::Magnetometer(sample),
                };
                self.push(ts, payload);
            }
        }
        self.last_sensor = start + (n as i64 - 1) * SAMPLE_MS;
    }
}

fn generate_session(
    rng: &mut ChaCha20Rng,
    cfg: &SynthConfig,
    profile: &Profile,
    user_id: &str,
    session_id: String,
    start: i64,
) -> Vec<DataPoint> {
    let minutes = rng.random_range(cfg.min_session_minutes..=cfg.max_session_minutes.max(cfg.min_session_minutes));
    let end = start + (minutes * 60_000.0) as i64;
    let posture: [[f64; 3]; 3] = std::array::from_fn(|s| std::array::from_fn(|_| normal(rng, 0.0, 0.3 * SENSOR_SPREAD[s])));
    let mut w = SessionWriter { user_id, session_id, points: Vec::new(), last_sensor: i64::MIN / 2 };
    let gap = Exp::new(1.0 / (cfg.swipe_interval_s * 1000.0)).unwrap();
    let dwell = Exp::new(1.0 / (cfg.view_dwell_s * profile.dwell_s * 1000.0)).unwrap();
    let mut view = 0usize;
    let mut t = start;
    while t < end {
        let visit_end = (t + (dwell.sample(rng) as i64).clamp(5_000, 90_000)).min(end);
        let mut last_swipe = None;
        let mut ts = t + rng.random_range(200..2_000);
        while ts < visit_end {
            last_swipe = Some(w.swipe(rng, profile, ts, view));
            let chunks = rng.random_range(1..=cfg.max_burst_chunks.max(1));
            w.burst(rng, profile, ts, chunks, &posture);
            ts = ts.max(w.last_sensor) + 1_000 + gap.sample(rng) as i64;
        }
        if GAME_VIEWS.contains(&view) && rng.random_bool(0.7) {
            if let Some(i) = last_swipe {
                if let Payload::Swipe(s) = &mut w.points[i].payload {
                    s.score = Some(normal(rng, profile.skill, 8.0).max(0.0).round());
                }
            }
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        view = profile.transitions[view]
            .iter()
            .position(|&pr| {
                acc += pr;
                u < acc
            })
            .unwrap_or(0);
        t = visit_end.max(ts.min(end));
    }
    w.points
}

/// Generate a dataset of raw swipe and sensor points (no request log).
pub fn generate(cfg: &SynthConfig, seed: u64) -> Dataset {
    let mut points = Vec::new();
    for u in 0..cfg.users {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(u as u64 + 1)));
        let user_id = format!("u{u:03}");
        let profile = Profile::draw(&mut rng, cfg.signal);
        for s in 0..cfg.sessions_per_user {
            let day = cfg.start_time_ms + (s as i64) * 86_400_000 + (u as i64) * 3_600_000;
            let start = day + rng.random_range(0..3_600_000);
            let session_id = format!("{user_id}-s{s}");
            points.extend(generate_session(&mut rng, cfg, &profile, &user_id, session_id, start));
        }
    }
    Dataset::from_points(points)
}
