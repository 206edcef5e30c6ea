//! Matrix factorisation on implicit check-in feedback: logistic loss on each
//! visited (user, POI) pair against a few sampled unvisited POIs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::ids::PoiId;
use crate::ingest::Dataset;
use crate::jtll::jtll_loss_and_grads;
use crate::models::{BaseTrainConfig, GradSet, SharedParams};
use crate::sampling::{build_train_tuples, TrainTuple, TupleSemantics, VisitedIndex};

#[derive(Debug, Clone)]
pub(crate) struct MfData {
    tuples: Vec<TrainTuple>,
    visited: VisitedIndex,
}

impl MfData {
    pub(crate) fn build(dataset: &Dataset) -> Result<Self> {
        Ok(MfData {
            tuples: build_train_tuples(dataset, TupleSemantics::Set)?,
            visited: VisitedIndex::build(dataset)?,
        })
    }
}

pub(crate) type MfBatch = Vec<(TrainTuple, Vec<PoiId>)>;

pub(crate) fn batches<R: Rng + ?Sized>(data: &MfData, config: BaseTrainConfig, rng: &mut R) -> Vec<MfBatch> {
    let mut order = data.tuples.clone();
    order.shuffle(rng);
    order
        .chunks(config.batch_size)
        .map(|chunk| {
            chunk
                .iter()
                .map(|t| (*t, data.visited.sample_unvisited(t.user, config.negatives, rng)))
                .collect()
        })
        .collect()
}

pub(crate) fn batch_loss_and_grads(params: &SharedParams, batch: &MfBatch, grads: &mut GradSet) -> Result<(f64, usize)> {
    let mut total = 0.0;
    for (t, negatives) in batch {
        let user = params.user.row(t.user.index());
        let neg_rows: Vec<&[f64]> = negatives.iter().map(|p| params.poi.row(p.index())).collect();
        // Same sampled logistic form as the triplet loss with the roles
        // swapped: the user is the anchor, POIs are positive and negatives.
        let (loss, g) = jtll_loss_and_grads(params.poi.row(t.poi.index()), user, &neg_rows)?;
        total += loss;
        grads.poi.add(t.poi.index(), 1.0, &g.user);
        grads.user.add(t.user.index(), 1.0, &g.poi);
        for (p, gn) in negatives.iter().zip(&g.negatives) {
            grads.poi.add(p.index(), 1.0, gn);
        }
    }
    Ok((total, batch.len()))
}
