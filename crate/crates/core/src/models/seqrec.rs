//! FPMC-style sequential scorer: `score(u, l | prev) = (W_user[u] + T[prev]) · W_poi[l]`,
//! trained with full-softmax cross-entropy on every train transition.

use rand::Rng;

use crate::error::Result;
use crate::ids::{PoiId, UserId};
use crate::ingest::Dataset;
use crate::models::{softmax_cross_entropy, GradSet, SharedParams};
use crate::optim::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SeqRec {
    /// Row `p` embeds "the previous check-in was at POI `p`".
    pub transition: EmbeddingMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Transition {
    pub user: UserId,
    pub prev: PoiId,
    pub next: PoiId,
}

/// Every consecutive pair inside each user's train partition.
pub(crate) fn transitions(dataset: &Dataset) -> Vec<Transition> {
    let mut out = Vec::new();
    for user in dataset.users() {
        for w in dataset.train(user).windows(2) {
            out.push(Transition {
                user,
                prev: w[0].poi,
                next: w[1].poi,
            });
        }
    }
    out
}

impl SeqRec {
    pub fn init<R: Rng + ?Sized>(num_pois: usize, dim: usize, rng: &mut R) -> Self {
        SeqRec {
            transition: EmbeddingMatrix::init_embedding(num_pois, dim, rng),
        }
    }

    pub fn query_vector(&self, params: &SharedParams, user: UserId, prev: PoiId) -> Vec<f64> {
        params
            .user
            .row(user.index())
            .iter()
            .zip(self.transition.row(prev.index()))
            .map(|(u, t)| u + t)
            .collect()
    }

    pub(crate) fn batch_loss_and_grads(
        &self,
        params: &SharedParams,
        batch: &[Transition],
        grads: &mut GradSet,
    ) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut dq = vec![0.0; params.dim()];
        for t in batch {
            let q = self.query_vector(params, t.user, t.prev);
            dq.fill(0.0);
            total += softmax_cross_entropy(&q, &params.poi, t.next.index(), &mut grads.poi, &mut dq);
            grads.user.add(t.user.index(), 1.0, &dq);
            grads.extra[0].add(t.prev.index(), 1.0, &dq);
        }
        Ok((total, batch.len()))
    }
}
