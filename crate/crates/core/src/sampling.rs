//! Visited (user, POI) relations and negative sampling over their complement.

use rand::seq::index;
use rand::Rng;

use crate::error::Result;
use crate::ids::{PoiId, UserId};
use crate::ingest::Dataset;

/// A visited relation: `user` checked in at `poi` at least once in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrainTuple {
    pub user: UserId,
    pub poi: PoiId,
}

/// How repeated check-ins of the same (user, POI) pair become tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TupleSemantics {
    /// One tuple per distinct pair.
    #[default]
    Set,
    /// One tuple per train check-in event.
    Multiplicity,
}

/// Builds the triplet-loss training set from every user's train partition,
/// ordered by (user, poi).
pub fn build_train_tuples(dataset: &Dataset, semantics: TupleSemantics) -> Result<Vec<TrainTuple>> {
    dataset.require_split()?;
    let mut tuples = Vec::new();
    for user in dataset.users() {
        let mut pois: Vec<PoiId> = dataset.train(user).iter().map(|c| c.poi).collect();
        pois.sort_unstable();
        if semantics == TupleSemantics::Set {
            pois.dedup();
        }
        tuples.extend(pois.into_iter().map(|poi| TrainTuple { user, poi }));
    }
    Ok(tuples)
}

/// Sorted adjacency lists over a fixed universe with complement sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Adjacency {
    lists: Vec<Vec<u32>>,
    universe: usize,
}

impl Adjacency {
    fn from_lists(mut lists: Vec<Vec<u32>>, universe: usize) -> Self {
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Adjacency { lists, universe }
    }

    fn contains(&self, row: usize, x: u32) -> bool {
        self.lists[row].binary_search(&x).is_ok()
    }

    fn complement_len(&self, row: usize) -> usize {
        self.universe - self.lists[row].len()
    }

    /// Up to `k` distinct members of the complement of `row`, uniformly
    /// without replacement.
    fn sample_complement<R: Rng + ?Sized>(&self, row: usize, k: usize, rng: &mut R) -> Vec<u32> {
        let excluded = &self.lists[row];
        let c = self.complement_len(row);
        let n = k.min(c);
        if n == 0 {
            return Vec::new();
        }
        if excluded.len() > self.universe / 2 || n > c / 2 {
            // Dense exclusion or a large draw: materialise the complement.
            let complement: Vec<u32> = (0..self.universe as u32)
                .filter(|x| excluded.binary_search(x).is_err())
                .collect();
            return index::sample(rng, c, n).into_iter().map(|i| complement[i]).collect();
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = rng.gen_range(0..self.universe as u32);
            if excluded.binary_search(&x).is_err() && !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }
}

/// For each POI, the users who visited it in training. The complement of a
/// POI's visitor set is its pool of negative users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitorIndex {
    inner: Adjacency,
}

impl VisitorIndex {
    pub fn build(dataset: &Dataset) -> Result<Self> {
        dataset.require_split()?;
        let mut lists = vec![Vec::new(); dataset.num_pois()];
        for user in dataset.users() {
            for c in dataset.train(user) {
                lists[c.poi.index()].push(user.0);
            }
        }
        Ok(VisitorIndex {
            inner: Adjacency::from_lists(lists, dataset.num_users()),
        })
    }

    pub fn num_users(&self) -> usize {
        self.inner.universe
    }

    pub fn num_pois(&self) -> usize {
        self.inner.lists.len()
    }

    pub fn visitors(&self, poi: PoiId) -> impl Iterator<Item = UserId> + '_ {
        self.inner.lists[poi.index()].iter().map(|&u| UserId(u))
    }

    pub fn num_visitors(&self, poi: PoiId) -> usize {
        self.inner.lists[poi.index()].len()
    }

    pub fn is_visitor(&self, poi: PoiId, user: UserId) -> bool {
        self.inner.contains(poi.index(), user.0)
    }

    /// Number of users who never visited `poi` in training.
    pub fn complement_len(&self, poi: PoiId) -> usize {
        self.inner.complement_len(poi.index())
    }

    /// Draws `min(k, complement_len(poi))` distinct never-visitors of `poi`.
    pub fn sample_negatives<R: Rng + ?Sized>(&self, poi: PoiId, k: usize, rng: &mut R) -> Vec<UserId> {
        self.inner
            .sample_complement(poi.index(), k, rng)
            .into_iter()
            .map(UserId)
            .collect()
    }
}

/// Convenience wrapper matching [`VisitorIndex::build`].
pub fn build_visitor_index(dataset: &Dataset) -> Result<VisitorIndex> {
    VisitorIndex::build(dataset)
}

/// For each user, the POIs visited in training; used to draw unvisited POIs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitedIndex {
    inner: Adjacency,
}

impl VisitedIndex {
    pub fn build(dataset: &Dataset) -> Result<Self> {
        dataset.require_split()?;
        let lists = dataset
            .users()
            .map(|u| dataset.train(u).iter().map(|c| c.poi.0).collect())
            .collect();
        Ok(VisitedIndex {
            inner: Adjacency::from_lists(lists, dataset.num_pois()),
        })
    }

    pub fn has_visited(&self, user: UserId, poi: PoiId) -> bool {
        self.inner.contains(user.index(), poi.0)
    }

    pub fn sample_unvisited<R: Rng + ?Sized>(&self, user: UserId, k: usize, rng: &mut R) -> Vec<PoiId> {
        self.inner
            .sample_complement(user.index(), k, rng)
            .into_iter()
            .map(PoiId)
            .collect()
    }
}
