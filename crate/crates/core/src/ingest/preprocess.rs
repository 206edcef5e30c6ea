use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::ingest::dataset::Dataset;
use crate::ingest::raw::RawCheckIn;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Filtering thresholds. Defaults: users with 20 to 50 check-ins (inclusive),
/// then POIs with at least 10 distinct surviving visitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessConfig {
    pub min_visits: usize,
    pub max_visits: usize,
    pub min_users_per_poi: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_visits: 20,
            max_visits: 50,
            min_users_per_poi: 10,
        }
    }
}

/// Filters raw check-ins and re-indexes them.
///
/// Runs exactly two steps, once each: keep users whose total check-in count
/// lies in `[min_visits, max_visits]`, then drop POIs with fewer than
/// `min_users_per_poi` distinct surviving visitors. Users whose check-ins all
/// disappear in the second step vanish with them. The result is not split.
pub fn preprocess(raw: &[RawCheckIn], config: &PreprocessConfig) -> Result<Dataset> {
    if config.min_visits == 0 || config.max_visits == 0 || config.min_users_per_poi == 0 {
        return Err(Error::Config("preprocessing thresholds must be positive".into()));
    }
    if config.min_visits > config.max_visits {
        return Err(Error::Config(format!(
            "min_visits {} exceeds max_visits {}",
            config.min_visits, config.max_visits
        )));
    }

    let mut visits: HashMap<&str, usize> = HashMap::new();
    for r in raw {
        *visits.entry(&r.user_key).or_default() += 1;
    }
    let in_band = |r: &&RawCheckIn| {
        let n = visits[r.user_key.as_str()];
        (config.min_visits..=config.max_visits).contains(&n)
    };
    let banded: Vec<&RawCheckIn> = raw.iter().filter(in_band).collect();

    let mut visitors: HashMap<&str, HashSet<&str>> = HashMap::new();
    for r in &banded {
        visitors.entry(&r.poi_key).or_default().insert(&r.user_key);
    }
    let kept: Vec<RawCheckIn> = banded
        .into_iter()
        .filter(|r| visitors[r.poi_key.as_str()].len() >= config.min_users_per_poi)
        .cloned()
        .collect();

    Dataset::from_raw(&kept)
}

/// Splits every sequence chronologically: the first
/// `floor(train_fraction * len)` check-ins train, the rest test, clamped so
/// both parts keep at least one check-in.
pub fn split(mut dataset: Dataset, train_fraction: f64) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut points = Vec::with_capacity(dataset.num_users());
    for (u, seq) in dataset.sequences().iter().enumerate() {
        let len = seq.len();
        if len < 2 {
            return Err(Error::SequenceTooShort { user: u, len });
        }
        let p = (train_fraction * len as f64).floor() as usize;
        points.push(p.clamp(1, len - 1));
    }
    dataset.set_split_points(points);
    Ok(dataset)
}
