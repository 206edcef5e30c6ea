use std::collections::BTreeMap;

use crate::error::Result;
use crate::ids::{PoiId, UserId};
use crate::ingest::Dataset;
use crate::models::ABSTAIN;

/// TOP: global check-in frequency of each POI over all train partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Popularity {
    pub(crate) counts: Vec<u64>,
}

impl Popularity {
    pub fn empty(num_pois: usize) -> Self {
        Popularity {
            counts: vec![0; num_pois],
        }
    }

    pub fn fit(dataset: &Dataset) -> Result<Self> {
        dataset.require_split()?;
        let mut counts = vec![0u64; dataset.num_pois()];
        for u in dataset.users() {
            for c in dataset.train(u) {
                counts[c.poi.index()] += 1;
            }
        }
        Ok(Popularity { counts })
    }

    pub fn count(&self, poi: PoiId) -> u64 {
        self.counts[poi.index()]
    }

    pub fn score(&self, poi: PoiId) -> f64 {
        self.counts[poi.index()] as f64
    }
}

/// U-TOP: each user's own train frequency. POIs the user never visited get
/// the abstain score rather than a zero that could win a tie.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPopularity {
    pub(crate) counts: Vec<BTreeMap<PoiId, u64>>,
}

impl UserPopularity {
    pub fn empty(num_users: usize) -> Self {
        UserPopularity {
            counts: vec![BTreeMap::new(); num_users],
        }
    }

    pub fn fit(dataset: &Dataset) -> Result<Self> {
        dataset.require_split()?;
        let counts = dataset
            .users()
            .map(|u| {
                let mut m = BTreeMap::new();
                for c in dataset.train(u) {
                    *m.entry(c.poi).or_insert(0) += 1;
                }
                m
            })
            .collect();
        Ok(UserPopularity { counts })
    }

    pub fn count(&self, user: UserId, poi: PoiId) -> u64 {
        self.counts[user.index()].get(&poi).copied().unwrap_or(0)
    }

    pub fn score(&self, user: UserId, poi: PoiId) -> f64 {
        match self.count(user, poi) {
            0 => ABSTAIN,
            n => n as f64,
        }
    }
}
