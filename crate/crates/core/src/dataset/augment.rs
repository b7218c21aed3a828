use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{entry_offset, DataPoint, Dataset, DatasetError, Label, Result, Slice, SLICE_MS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "default_fraction")]
    pub attack_fraction: f64,
    #[serde(default = "default_entry_points")]
    pub entry_points: Vec<f64>,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_fraction() -> f64 {
    0.5
}

fn default_entry_points() -> Vec<f64> {
    vec![0.0, 0.33, 0.66]
}

fn default_retries() -> usize {
    10
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            attack_fraction: default_fraction(),
            entry_points: default_entry_points(),
            max_retries: default_retries(),
        }
    }
}

/// A consecutive run of one donor session covering `[t0, t0 + len)`.
fn donor_segment<'a>(
    dataset: &'a Dataset,
    victim: &str,
    len: i64,
    rng: &mut impl Rng,
) -> Option<(&'a str, i64, Vec<&'a DataPoint>)> {
    let donors: Vec<_> = dataset.users.iter().filter(|u| u.user_id != victim).collect();
    let donor = donors[rng.random_range(0..donors.len())];
    if donor.sessions.is_empty() {
        return None;
    }
    let session = &donor.sessions[rng.random_range(0..donor.sessions.len())];
    let (start, end) = (session.start()?, session.end()?);
    if end - start < len {
        return None;
    }
    let t0 = rng.random_range(start..=end - len);
    let points: Vec<&DataPoint> =
        session.points.iter().filter(|p| p.timestamp >= t0 && p.timestamp < t0 + len).collect();
    if points.is_empty() {
        return None;
    }
    Some((&donor.user_id, t0, points))
}

/// One-vs-universe augmentation.
///
/// For every user, `attack_fraction` of their slices (chosen at random) have all
/// points from `start + EP * 300 s` onward replaced by a consecutive run from one
/// other user's session, shifted so the run begins at the entry point. Entry
/// points are assigned round-robin. Substituted points keep their donor
/// `user_id` and `session_id`.
pub fn augment(
    dataset: &Dataset,
    slices: &[Slice],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Slice>> {
    if dataset.users.len() < 2 {
        return Err(DatasetError::TooFewUsers(dataset.users.len()));
    }
    let mut out = slices.to_vec();
    if cfg.attack_fraction <= 0.0 || cfg.entry_points.is_empty() {
        return Ok(out);
    }
    let mut users: Vec<&str> = slices.iter().map(|s| s.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    let mut ep_counter = 0usize;
    for user in users {
        let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].user_id == user).collect();
        let n_convert = ((cfg.attack_fraction.min(1.0) * idx.len() as f64).round() as usize).min(idx.len());
        idx.shuffle(rng);
        let mut chosen = idx[..n_convert].to_vec();
        chosen.sort_unstable();
        for i in chosen {
            let ep = cfg.entry_points[ep_counter % cfg.entry_points.len()];
            ep_counter += 1;
            let slice = &mut out[i];
            let len = SLICE_MS - entry_offset(ep);
            let mut segment = None;
            for _ in 0..cfg.max_retries {
                segment = donor_segment(dataset, &slice.user_id, len, rng);
                if segment.is_some() {
                    break;
                }
            }
            let Some((donor, t0, points)) = segment else {
                return Err(DatasetError::DonorUnavailable { slice: slice.key(), retries: cfg.max_retries });
            };
            let boundary = slice.start + entry_offset(ep);
            for list in slice.points.iter_mut() {
                list.retain(|p| p.timestamp < boundary);
            }
            for p in points {
                slice.points[p.source().index()].push(p.shifted(boundary - t0));
            }
            for list in slice.points.iter_mut() {
                list.sort_by_key(|p| p.timestamp);
            }
            slice.label = Label::Attacked;
            slice.entry_point = Some(ep);
            slice.imposter_id = Some(donor.to_string());
        }
    }
    Ok(out)
}

/// Check the labeling and purity invariants of augmented slices.
pub fn validate_augmented(slices: &[Slice]) -> Result<()> {
    let fail = |s: &Slice, reason: String| DatasetError::Invalid { slice: s.key(), reason };
    for s in slices {
        for p in s.points.iter().flatten() {
            if p.timestamp < s.start || p.timestamp >= s.end {
                return Err(fail(s, format!("point at {} outside slice", p.timestamp)));
            }
        }
        match s.label {
            Label::Legitimate => {
                if s.entry_point.is_some() || s.imposter_id.is_some() {
                    return Err(fail(s, "legitimate slice carries attack metadata".into()));
                }
                if let Some(p) = s.points.iter().flatten().find(|p| p.user_id != s.user_id) {
                    return Err(fail(s, format!("foreign point from {}", p.user_id)));
                }
            }
            Label::Attacked => {
                let (Some(boundary), Some(imposter)) = (s.entry_time(), s.imposter_id.as_deref()) else {
                    return Err(fail(s, "attacked slice lacks entry point or imposter".into()));
                };
                let mut donor_session: Option<&str> = None;
                for list in &s.points {
                    let mut last: Option<i64> = None;
                    for p in list {
                        if p.timestamp < boundary {
                            if p.user_id != s.user_id {
                                return Err(fail(s, "foreign point before entry point".into()));
                            }
                            continue;
                        }
                        if p.user_id != imposter {
                            return Err(fail(s, format!("point from {} after entry point", p.user_id)));
                        }
                        match donor_session {
                            None => donor_session = Some(&p.session_id),
                            Some(d) if d != p.session_id => {
                                return Err(fail(s, "substitute spans several donor sessions".into()))
                            }
                            _ => {}
                        }
                        if last.is_some_and(|t| t >= p.timestamp) {
                            return Err(fail(s, "substitute timestamps not strictly increasing".into()));
                        }
                        last = Some(p.timestamp);
                    }
                }
            }
        }
    }
    Ok(())
}
