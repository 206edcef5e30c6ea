use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::raw::RawCheckIn;

/// A check-in after dense re-indexing of users and POIs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckIn {
    pub user: UserId,
    pub poi: PoiId,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: i64,
}

/// Users, POIs and per-user chronological check-in sequences.
///
/// Every sequence is sorted by nondecreasing timestamp and every POI id occurs
/// in at least one sequence. Once split, `split_points[u]` separates the train
/// prefix of user `u` from the test suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<Vec<CheckIn>>,
    split_points: Option<Vec<usize>>,
    user_keys: Vec<String>,
    poi_keys: Vec<String>,
    user_index: HashMap<String, UserId>,
    poi_index: HashMap<String, PoiId>,
}

impl Dataset {
    /// Builds a dataset, checking every structural invariant.
    pub fn new(
        user_keys: Vec<String>,
        poi_keys: Vec<String>,
        sequences: Vec<Vec<CheckIn>>,
        split_points: Option<Vec<usize>>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidDataset(msg));
        if sequences.len() != user_keys.len() {
            return invalid(format!(
                "{} sequences but {} user keys",
                sequences.len(),
                user_keys.len()
            ));
        }
        if user_keys.is_empty() || poi_keys.is_empty() {
            return Err(Error::EmptyDataset {
                users: user_keys.len(),
                pois: poi_keys.len(),
            });
        }
        let mut seen_poi = vec![false; poi_keys.len()];
        for (u, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return invalid(format!("user {u} has no check-ins"));
            }
            for (i, c) in seq.iter().enumerate() {
                if c.user.index() != u {
                    return invalid(format!("check-in of user {} stored under user {u}", c.user));
                }
                if c.poi.index() >= poi_keys.len() {
                    return invalid(format!("POI {} out of range", c.poi));
                }
                if !(-90.0..=90.0).contains(&c.lat) || !(-180.0..=180.0).contains(&c.lon) {
                    return invalid(format!("user {u}: coordinates ({}, {}) out of range", c.lat, c.lon));
                }
                if i > 0 && seq[i - 1].timestamp > c.timestamp {
                    return invalid(format!("user {u}: sequence not in chronological order"));
                }
                seen_poi[c.poi.index()] = true;
            }
        }
        if let Some(p) = seen_poi.iter().position(|s| !s) {
            return invalid(format!("POI {p} has no check-ins"));
        }
        if let Some(points) = &split_points {
            if points.len() != sequences.len() {
                return invalid("split point count differs from user count".into());
            }
            for (u, (&p, seq)) in points.iter().zip(&sequences).enumerate() {
                if p > seq.len() {
                    return invalid(format!("user {u}: split point {p} beyond sequence end"));
                }
            }
        }
        let user_index = index_keys(&user_keys, UserId::from_index, "user")?;
        let poi_index = index_keys(&poi_keys, PoiId::from_index, "POI")?;
        Ok(Dataset {
            sequences,
            split_points,
            user_keys,
            poi_keys,
            user_index,
            poi_index,
        })
    }

    /// Re-indexes raw check-ins without any filtering. Ids follow first
    /// appearance in `raw`; sequences are stably sorted by timestamp.
    pub fn from_raw(raw: &[RawCheckIn]) -> Result<Self> {
        let mut user_index: HashMap<&str, UserId> = HashMap::new();
        let mut poi_index: HashMap<&str, PoiId> = HashMap::new();
        let mut user_keys = Vec::new();
        let mut poi_keys = Vec::new();
        let mut sequences: Vec<Vec<CheckIn>> = Vec::new();
        for r in raw {
            let user = *user_index.entry(r.user_key.as_str()).or_insert_with(|| {
                user_keys.push(r.user_key.clone());
                sequences.push(Vec::new());
                UserId::from_index(user_keys.len() - 1)
            });
            let poi = *poi_index.entry(r.poi_key.as_str()).or_insert_with(|| {
                poi_keys.push(r.poi_key.clone());
                PoiId::from_index(poi_keys.len() - 1)
            });
            sequences[user.index()].push(CheckIn {
                user,
                poi,
                lat: r.lat,
                lon: r.lon,
                timestamp: r.timestamp,
            });
        }
        for seq in &mut sequences {
            // stable: equal timestamps keep input order
            seq.sort_by_key(|c| c.timestamp);
        }
        Dataset::new(user_keys, poi_keys, sequences, None)
    }

    /// Inverse of [`Dataset::from_raw`] up to ordering: every check-in with
    /// its original keys, users in id order, each sequence chronological.
    pub fn flatten(&self) -> Vec<RawCheckIn> {
        self.sequences
            .iter()
            .flatten()
            .map(|c| RawCheckIn {
                user_key: self.user_keys[c.user.index()].clone(),
                poi_key: self.poi_keys[c.poi.index()].clone(),
                lat: c.lat,
                lon: c.lon,
                timestamp: c.timestamp,
            })
            .collect()
    }

    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_pois(&self) -> usize {
        self.poi_keys.len()
    }

    pub fn num_checkins(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> {
        (0..self.num_users()).map(UserId::from_index)
    }

    pub fn sequence(&self, user: UserId) -> &[CheckIn] {
        &self.sequences[user.index()]
    }

    pub fn sequences(&self) -> &[Vec<CheckIn>] {
        &self.sequences
    }

    pub fn is_split(&self) -> bool {
        self.split_points.is_some()
    }

    pub fn split_points(&self) -> Option<&[usize]> {
        self.split_points.as_deref()
    }

    pub fn split_point(&self, user: UserId) -> Option<usize> {
        self.split_points.as_ref().map(|p| p[user.index()])
    }

    pub(crate) fn set_split_points(&mut self, points: Vec<usize>) {
        debug_assert_eq!(points.len(), self.sequences.len());
        self.split_points = Some(points);
    }

    /// Fails with [`Error::NotSplit`] unless the train/test split is set.
    pub fn require_split(&self) -> Result<()> {
        if self.is_split() {
            Ok(())
        } else {
            Err(Error::NotSplit)
        }
    }

    /// Train prefix of a user's sequence.
    ///
    /// # Panics
    ///
    /// Panics if the dataset is not split; check with [`Dataset::require_split`].
    pub fn train(&self, user: UserId) -> &[CheckIn] {
        let p = self.split_point(user).expect("dataset is not split");
        &self.sequences[user.index()][..p]
    }

    /// Test suffix of a user's sequence. Panics like [`Dataset::train`].
    pub fn test(&self, user: UserId) -> &[CheckIn] {
        let p = self.split_point(user).expect("dataset is not split");
        &self.sequences[user.index()][p..]
    }

    /// Sorted, deduplicated POIs in the user's train partition.
    pub fn train_pois(&self, user: UserId) -> Vec<PoiId> {
        let mut pois: Vec<PoiId> = self.train(user).iter().map(|c| c.poi).collect();
        pois.sort_unstable();
        pois.dedup();
        pois
    }

    pub fn user_key(&self, user: UserId) -> &str {
        &self.user_keys[user.index()]
    }

    pub fn poi_key(&self, poi: PoiId) -> &str {
        &self.poi_keys[poi.index()]
    }

    pub fn user_keys(&self) -> &[String] {
        &self.user_keys
    }

    pub fn poi_keys(&self) -> &[String] {
        &self.poi_keys
    }

    pub fn user_id(&self, key: &str) -> Option<UserId> {
        self.user_index.get(key).copied()
    }

    pub fn poi_id(&self, key: &str) -> Option<PoiId> {
        self.poi_index.get(key).copied()
    }
}

fn index_keys<T: Copy>(
    keys: &[String],
    make: impl Fn(usize) -> T,
    what: &str,
) -> Result<HashMap<String, T>> {
    let mut map = HashMap::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        if map.insert(k.clone(), make(i)).is_some() {
            return Err(Error::InvalidDataset(format!("duplicate {what} key {k:?}")));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(user: &str, poi: &str, ts: i64) -> RawCheckIn {
        RawCheckIn {
            user_key: user.into(),
            poi_key: poi.into(),
            lat: 1.0,
            lon: 2.0,
            timestamp: ts,
        }
    }

    #[test]
    fn ids_follow_first_appearance() {
        let d = Dataset::from_raw(&[raw("b", "x", 5), raw("a", "y", 1), raw("b", "y", 2)]).unwrap();
        assert_eq!(d.user_keys(), ["b", "a"]);
        assert_eq!(d.poi_keys(), ["x", "y"]);
        let b = d.user_id("b").unwrap();
        let ts: Vec<i64> = d.sequence(b).iter().map(|c| c.timestamp).collect();
        assert_eq!(ts, [2, 5]);
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let d = Dataset::from_raw(&[raw("a", "p", 3), raw("a", "q", 3), raw("a", "r", 1)]).unwrap();
        let keys: Vec<&str> = d.sequence(UserId(0)).iter().map(|c| d.poi_key(c.poi)).collect();
        assert_eq!(keys, ["r", "p", "q"]);
    }

    #[test]
    fn key_maps_are_inverse() {
        let d = Dataset::from_raw(&[raw("u1", "p1", 0), raw("u2", "p2", 0), raw("u1", "p2", 1)]).unwrap();
        for u in d.users() {
            assert_eq!(d.user_id(d.user_key(u)), Some(u));
        }
        for p in 0..d.num_pois() {
            let p = PoiId::from_index(p);
            assert_eq!(d.poi_id(d.poi_key(p)), Some(p));
        }
    }

    #[test]
    fn rejects_unsorted_sequence() {
        let c = |ts| CheckIn {
            user: UserId(0),
            poi: PoiId(0),
            lat: 0.0,
            lon: 0.0,
            timestamp: ts,
        };
        let err = Dataset::new(vec!["u".into()], vec!["p".into()], vec![vec![c(2), c(1)]], None);
        assert!(matches!(err, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn empty_input_is_an_empty_dataset_error() {
        assert!(matches!(Dataset::from_raw(&[]), Err(Error::EmptyDataset { .. })));
    }
}
