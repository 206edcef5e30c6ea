//! Joint triplet loss over (anchor POI, positive user, negative users).
//!
//! For a visited relation `(u_h, l_b)` and users `u_n` that never visited
//! `l_b`:
//!
//! ```text
//! J = -ln σ(u_h · l_b) - Σ_n ln σ(-u_n · l_b)
//! ```
//!
//! Minimising `J` raises the score of the visitor and lowers the scores of
//! the never-visitors for the same POI, so user embeddings learn from both
//! the visited and the unvisited entries of the user-POI matrix.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::models::SharedParams;
use crate::optim::{axpy, dot, log_sigmoid, sigmoid, AdamConfig, AdamState, DropoutSpec, RowGrads};
use crate::sampling::{TrainTuple, VisitorIndex};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_NEGATIVES: usize = 5;
pub const DEFAULT_DROPOUT: f64 = 0.8;

fn check_dims(user: &[f64], poi: &[f64], negatives: &[&[f64]]) -> Result<()> {
    let d = poi.len();
    for len in std::iter::once(user.len()).chain(negatives.iter().map(|n| n.len())) {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, found: len });
        }
    }
    Ok(())
}

/// Loss for one visited relation. An empty `negatives` slice leaves only the
/// positive term.
pub fn jtll_loss(user: &[f64], poi: &[f64], negatives: &[&[f64]]) -> Result<f64> {
    check_dims(user, poi, negatives)?;
    let positive = -log_sigmoid(dot(user, poi));
    let negative: f64 = negatives.iter().map(|n| -log_sigmoid(-dot(n, poi))).sum();
    Ok(positive + negative)
}

/// Gradients of [`jtll_loss`] with respect to every row involved.
#[derive(Debug, Clone, PartialEq)]
pub struct JtllGrads {
    pub user: Vec<f64>,
    pub poi: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn jtll_grads(user: &[f64], poi: &[f64], negatives: &[&[f64]]) -> Result<JtllGrads> {
    jtll_loss_and_grads(user, poi, negatives).map(|(_, g)| g)
}

/// Loss and gradients in one pass:
///
/// * `∂J/∂u_h = -(1 - σ(u_h·l_b)) l_b`
/// * `∂J/∂l_b = -(1 - σ(u_h·l_b)) u_h + Σ_n σ(u_n·l_b) u_n`
/// * `∂J/∂u_n = σ(u_n·l_b) l_b`
pub fn jtll_loss_and_grads(user: &[f64], poi: &[f64], negatives: &[&[f64]]) -> Result<(f64, JtllGrads)> {
    check_dims(user, poi, negatives)?;
    let d = poi.len();
    let pos_score = dot(user, poi);
    let mut loss = -log_sigmoid(pos_score);
    let pull = 1.0 - sigmoid(pos_score);

    let mut g_user = vec![0.0; d];
    axpy(-pull, poi, &mut g_user);
    let mut g_poi = vec![0.0; d];
    axpy(-pull, user, &mut g_poi);

    let mut g_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(n, poi);
        loss -= log_sigmoid(-s);
        let push = sigmoid(s);
        axpy(push, n, &mut g_poi);
        let mut g = vec![0.0; d];
        axpy(push, poi, &mut g);
        g_negs.push(g);
    }
    Ok((
        loss,
        JtllGrads {
            user: g_user,
            poi: g_poi,
            negatives: g_negs,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JtllConfig {
    pub batch_size: usize,
    pub negatives: usize,
    pub dropout: DropoutSpec,
    /// Draw each tuple's negatives once and reuse them every epoch.
    pub fixed_negatives: bool,
    pub adam: AdamConfig,
}

impl Default for JtllConfig {
    fn default() -> Self {
        JtllConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            negatives: DEFAULT_NEGATIVES,
            dropout: DropoutSpec::new(DEFAULT_DROPOUT).expect("valid default"),
            fixed_negatives: false,
            adam: AdamConfig::default(),
        }
    }
}

/// Optimiser state for the triplet-loss pass. Keeps its own Adam moments for
/// the shared user and POI matrices.
#[derive(Debug, Clone)]
pub struct JtllTrainer {
    config: JtllConfig,
    user_adam: AdamState,
    poi_adam: AdamState,
    user_grads: RowGrads,
    poi_grads: RowGrads,
    fixed: Option<Vec<Vec<UserId>>>,
}

impl JtllTrainer {
    pub fn new(params: &SharedParams, config: JtllConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(JtllTrainer {
            config,
            user_adam: AdamState::for_matrix(&params.user, config.adam),
            poi_adam: AdamState::for_matrix(&params.poi, config.adam),
            user_grads: RowGrads::for_matrix(&params.user),
            poi_grads: RowGrads::for_matrix(&params.poi),
            fixed: None,
        })
    }

    pub fn config(&self) -> &JtllConfig {
        &self.config
    }

    fn negatives_for<R: Rng + ?Sized>(
        &mut self,
        tuple_idx: usize,
        tuple: &TrainTuple,
        num_tuples: usize,
        index: &VisitorIndex,
        rng: &mut R,
    ) -> Vec<UserId> {
        let k = self.config.negatives;
        if !self.config.fixed_negatives {
            return index.sample_negatives(tuple.poi, k, rng);
        }
        let cache = self.fixed.get_or_insert_with(|| vec![Vec::new(); num_tuples]);
        if cache.len() != num_tuples {
            *cache = vec![Vec::new(); num_tuples];
        }
        if cache[tuple_idx].is_empty() {
            cache[tuple_idx] = index.sample_negatives(tuple.poi, k, rng);
        }
        cache[tuple_idx].clone()
    }

    /// One pass over `tuples`: shuffle, then per batch of `batch_size` tuples
    /// sample negatives, apply dropout to every row involved, sum the
    /// gradients and take one Adam step on the touched rows of each shared
    /// matrix. Returns the mean per-tuple loss (0 for an empty pass).
    pub fn epoch<R: Rng + ?Sized>(
        &mut self,
        params: &mut SharedParams,
        tuples: &[TrainTuple],
        index: &VisitorIndex,
        rng: &mut R,
    ) -> Result<f64> {
        if tuples.is_empty() {
            return Ok(0.0);
        }
        let mut order: Vec<usize> = (0..tuples.len()).collect();
        order.shuffle(rng);
        let dim = params.dim();
        let dropout = self.config.dropout;
        let mut total = 0.0;

        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let mut batch_loss = 0.0;
            for &ti in batch {
                let t = tuples[ti];
                let negs = self.negatives_for(ti, &t, tuples.len(), index, rng);

                let user_mask = dropout.sample_mask(dim, rng);
                let poi_mask = dropout.sample_mask(dim, rng);
                let neg_masks: Vec<Vec<f64>> = negs.iter().map(|_| dropout.sample_mask(dim, rng)).collect();

                let masked = |row: &[f64], mask: &[f64]| -> Vec<f64> { row.iter().zip(mask).map(|(x, m)| x * m).collect() };
                let u = masked(params.user.row(t.user.index()), &user_mask);
                let l = masked(params.poi.row(t.poi.index()), &poi_mask);
                let n_rows: Vec<Vec<f64>> = negs
                    .iter()
                    .zip(&neg_masks)
                    .map(|(n, m)| masked(params.user.row(n.index()), m))
                    .collect();
                let n_refs: Vec<&[f64]> = n_rows.iter().map(Vec::as_slice).collect();

                let (loss, g) = jtll_loss_and_grads(&u, &l, &n_refs)?;
                batch_loss += loss;

                add_masked(&mut self.user_grads, t.user.index(), &g.user, &user_mask);
                add_masked(&mut self.poi_grads, t.poi.index(), &g.poi, &poi_mask);
                for ((n, gn), m) in negs.iter().zip(&g.negatives).zip(&neg_masks) {
                    add_masked(&mut self.user_grads, n.index(), gn, m);
                }
            }
            if !batch_loss.is_finite() {
                self.user_grads.clear();
                self.poi_grads.clear();
                return Err(Error::NonFiniteLoss {
                    context: format!("triplet-loss batch {b}"),
                });
            }
            total += batch_loss;
            let stepped = self
                .user_adam
                .step(&mut params.user, &self.user_grads, "W_user")
                .and_then(|_| self.poi_adam.step(&mut params.poi, &self.poi_grads, "W_poi"));
            self.user_grads.clear();
            self.poi_grads.clear();
            stepped?;
        }
        Ok(total / tuples.len() as f64)
    }
}

fn add_masked(grads: &mut RowGrads, row: usize, g: &[f64], mask: &[f64]) {
    let dst = grads.row_mut(row);
    for ((d, gi), m) in dst.iter_mut().zip(g).zip(mask) {
        *d += gi * m;
    }
}
