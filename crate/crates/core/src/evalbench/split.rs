//! Train/test split by user, enrollment history and attack augmentation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, slice_sessions, AugmentConfig, Dataset, DatasetError, Slice, SLICE_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of users whose slices train the models.
    #[serde(default = "d_train")]
    pub train_fraction: f64,
    /// Leading sessions per user used only as enrollment history.
    #[serde(default = "d_enroll")]
    pub enroll_sessions: usize,
}

fn d_train() -> f64 {
    0.7
}
fn d_enroll() -> usize {
    2
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: d_train(), enroll_sessions: d_enroll() }
    }
}

/// Slices of a dataset arranged for training and evaluation.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
    /// Clean enrollment slices of every user.
    pub history: Vec<Slice>,
    /// Augmented later slices of training users.
    pub train: Vec<Slice>,
    /// Augmented later slices of test users.
    pub test: Vec<Slice>,
}

impl Experiment {
    /// Slices the preprocessors are fitted on: training users only.
    pub fn fit_slices(&self) -> Vec<Slice> {
        self.history.iter().filter(|s| self.train_users.contains(&s.user_id)).chain(&self.train).cloned().collect()
    }

    pub fn test_history(&self) -> Vec<Slice> {
        self.history.iter().filter(|s| self.test_users.contains(&s.user_id)).cloned().collect()
    }
}

/// Donor pool for one side of the split; the whole dataset when the side
/// has a single user.
fn donors(dataset: &Dataset, users: &[String]) -> Dataset {
    if users.len() < 2 {
        return dataset.clone();
    }
    Dataset { users: dataset.users.iter().filter(|u| users.contains(&u.user_id)).cloned().collect() }
}

/// Split users, keep each user's first sessions as history and augment the
/// rest. Attack donors come from the same side of the split when it has
/// at least two users.
pub fn prepare(dataset: &Dataset, split: &SplitConfig, aug: &AugmentConfig, seed: u64) -> Result<Experiment, DatasetError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut users: Vec<String> = dataset.users.iter().map(|u| u.user_id.clone()).collect();
    users.shuffle(&mut rng);
    let n = users.len();
    let mut n_train = (split.train_fraction * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let test_users = users.split_off(n_train.min(n));
    let mut train_users = users;
    train_users.sort();
    let mut test_users = test_users;
    test_users.sort();

    let mut history = Vec::new();
    let mut later: (Vec<Slice>, Vec<Slice>) = (Vec::new(), Vec::new());
    for user in &dataset.users {
        let mut sessions = user.sessions.clone();
        sessions.sort_by_key(|s| s.start());
        let cut = split.enroll_sessions.min(sessions.len());
        let mut enrolled = user.clone();
        enrolled.sessions = sessions[..cut].to_vec();
        history.extend(slice_sessions(&enrolled, SLICE_MS));
        let mut rest = user.clone();
        rest.sessions = sessions[cut..].to_vec();
        let target = if train_users.contains(&user.user_id) { &mut later.0 } else { &mut later.1 };
        target.extend(slice_sessions(&rest, SLICE_MS));
    }
    let train = augment(&donors(dataset, &train_users), &later.0, aug, &mut rng)?;
    let test = augment(&donors(dataset, &test_users), &later.1, aug, &mut rng)?;
    Ok(Experiment { train_users, test_users, history, train, test })
}
