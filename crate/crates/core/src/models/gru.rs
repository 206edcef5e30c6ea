//! GRU over the POI embeddings of a check-in history.
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ h̃
//! ```
//!
//! with `x_t = W_poi[l_t]` and `h_0 = 0`. After consuming a history the next
//! POI is scored by `(h + W_user[u]) · W_poi[l]`. Training runs the recurrence
//! over each user's train partition, applies full-softmax cross-entropy at
//! every step and backpropagates through the whole sequence.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::ids::{PoiId, UserId};
use crate::ingest::Dataset;
use crate::models::{softmax_cross_entropy, GradSet, SharedParams};
use crate::optim::{sigmoid, EmbeddingMatrix, RowGrads};

const W_Z: usize = 0;
const U_Z: usize = 1;
const B_Z: usize = 2;
const W_R: usize = 3;
const U_R: usize = 4;
const B_R: usize = 5;
const W_H: usize = 6;
const U_H: usize = 7;
const B_H: usize = 8;

pub const GRU_MATRIX_NAMES: [&str; 9] = ["W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h"];

/// Gate parameters. Square matrices are `d × d` with rows as output
/// coordinates; biases are `1 × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: EmbeddingMatrix,
    pub u_z: EmbeddingMatrix,
    pub b_z: EmbeddingMatrix,
    pub w_r: EmbeddingMatrix,
    pub u_r: EmbeddingMatrix,
    pub b_r: EmbeddingMatrix,
    pub w_h: EmbeddingMatrix,
    pub u_h: EmbeddingMatrix,
    pub b_h: EmbeddingMatrix,
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    candidate: Vec<f64>,
    reset_h: Vec<f64>,
    pub h: Vec<f64>,
}

impl Gru {
    /// Weights uniform in `(-1/√d, 1/√d)`, biases zero.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut sq = || EmbeddingMatrix::uniform(dim, dim, bound, rng);
        let (w_z, u_z, w_r, u_r, w_h, u_h) = (sq(), sq(), sq(), sq(), sq(), sq());
        let bias = || EmbeddingMatrix::zeros(1, dim);
        Gru {
            w_z,
            u_z,
            b_z: bias(),
            w_r,
            u_r,
            b_r: bias(),
            w_h,
            u_h,
            b_h: bias(),
        }
    }

    /// All-zero gates; the hidden state then stays at zero.
    pub fn zeros(dim: usize) -> Self {
        let sq = || EmbeddingMatrix::zeros(dim, dim);
        let bias = || EmbeddingMatrix::zeros(1, dim);
        Gru {
            w_z: sq(),
            u_z: sq(),
            b_z: bias(),
            w_r: sq(),
            u_r: sq(),
            b_r: bias(),
            w_h: sq(),
            u_h: sq(),
            b_h: bias(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_z.dim()
    }

    pub(crate) fn matrices(&self) -> Vec<(&'static str, &EmbeddingMatrix)> {
        let m = [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ];
        GRU_MATRIX_NAMES.into_iter().zip(m).collect()
    }

    pub(crate) fn matrices_mut(&mut self) -> Vec<(&'static str, &mut EmbeddingMatrix)> {
        let m = [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ];
        GRU_MATRIX_NAMES.into_iter().zip(m).collect()
    }

    fn affine(&self, w: &EmbeddingMatrix, u: &EmbeddingMatrix, b: &EmbeddingMatrix, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut a = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        w.matvec(x, &mut a);
        u.matvec(h, &mut tmp);
        for i in 0..d {
            a[i] += tmp[i] + b.row(0)[i];
        }
        a
    }

    pub(crate) fn step(&self, x: &[f64], h_prev: &[f64]) -> StepCache {
        let z: Vec<f64> = self.affine(&self.w_z, &self.u_z, &self.b_z, x, h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = self.affine(&self.w_r, &self.u_r, &self.b_r, x, h_prev).into_iter().map(sigmoid).collect();
        let reset_h: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        let candidate: Vec<f64> = self
            .affine(&self.w_h, &self.u_h, &self.b_h, x, &reset_h)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let h = (0..x.len())
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
            .collect();
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            candidate,
            reset_h,
            h,
        }
    }

    /// Hidden state after consuming `pois` from `h_0 = 0`.
    pub fn hidden(&self, params: &SharedParams, pois: &[PoiId]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim()];
        for p in pois {
            h = self.step(params.poi.row(p.index()), &h).h;
        }
        h
    }

    pub fn query_vector(&self, params: &SharedParams, user: UserId, history: &[PoiId]) -> Vec<f64> {
        let mut q = self.hidden(params, history);
        for (qi, ui) in q.iter_mut().zip(params.user.row(user.index())) {
            *qi += ui;
        }
        q
    }

    /// Summed cross-entropy of predicting `seq[t+1]` after `seq[..=t]`, for
    /// every `t`. Forward pass only.
    pub fn sequence_loss(&self, params: &SharedParams, user: UserId, seq: &[PoiId]) -> f64 {
        let mut h = vec![0.0; self.dim()];
        let mut scratch = RowGrads::for_matrix(&params.poi);
        let mut dq = vec![0.0; self.dim()];
        let mut total = 0.0;
        for (t, p) in seq.iter().enumerate() {
            h = self.step(params.poi.row(p.index()), &h).h;
            if let Some(next) = seq.get(t + 1) {
                let q: Vec<f64> = h.iter().zip(params.user.row(user.index())).map(|(a, b)| a + b).collect();
                scratch.clear();
                total += softmax_cross_entropy(&q, &params.poi, next.index(), &mut scratch, &mut dq);
            }
        }
        total
    }

    /// Loss as in [`Gru::sequence_loss`], with gradients of every parameter
    /// accumulated into `grads` by backpropagation through time. Returns the
    /// loss and the number of predicted transitions.
    pub fn sequence_loss_and_grads(
        &self,
        params: &SharedParams,
        user: UserId,
        seq: &[PoiId],
        grads: &mut GradSet,
    ) -> Result<(f64, usize)> {
        let d = self.dim();
        let user_row = params.user.row(user.index());
        let mut caches = Vec::with_capacity(seq.len());
        let mut dqs = Vec::with_capacity(seq.len());
        let mut total = 0.0;
        let mut h = vec![0.0; d];
        for (t, p) in seq.iter().enumerate() {
            let cache = self.step(params.poi.row(p.index()), &h);
            h = cache.h.clone();
            let mut dq = vec![0.0; d];
            if let Some(next) = seq.get(t + 1) {
                let q: Vec<f64> = h.iter().zip(user_row).map(|(a, b)| a + b).collect();
                total += softmax_cross_entropy(&q, &params.poi, next.index(), &mut grads.poi, &mut dq);
                grads.user.add(user.index(), 1.0, &dq);
            }
            caches.push(cache);
            dqs.push(dq);
        }

        let mut dh_next = vec![0.0; d];
        for t in (0..seq.len()).rev() {
            let dh: Vec<f64> = dh_next.iter().zip(&dqs[t]).map(|(a, b)| a + b).collect();
            let (dx, dh_prev) = self.backward_step(&caches[t], &dh, &mut grads.extra);
            grads.poi.add(seq[t].index(), 1.0, &dx);
            dh_next = dh_prev;
        }
        Ok((total, seq.len().saturating_sub(1)))
    }

    /// Backpropagates `dh = ∂L/∂h_t` through one step; returns `(∂L/∂x_t, ∂L/∂h_{t-1})`.
    fn backward_step(&self, c: &StepCache, dh: &[f64], g: &mut [RowGrads]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut dh_prev = vec![0.0; d];
        let mut da_z = vec![0.0; d];
        let mut da_h = vec![0.0; d];
        for i in 0..d {
            let d_cand = dh[i] * c.z[i];
            let dz = dh[i] * (c.candidate[i] - c.h_prev[i]);
            dh_prev[i] = dh[i] * (1.0 - c.z[i]);
            da_h[i] = d_cand * (1.0 - c.candidate[i] * c.candidate[i]);
            da_z[i] = dz * c.z[i] * (1.0 - c.z[i]);
        }

        // candidate path: U_h acts on r ⊙ h_prev
        let mut d_reset_h = vec![0.0; d];
        self.u_h.matvec_t_acc(&da_h, &mut d_reset_h);
        let mut da_r = vec![0.0; d];
        for i in 0..d {
            dh_prev[i] += d_reset_h[i] * c.r[i];
            let dr = d_reset_h[i] * c.h_prev[i];
            da_r[i] = dr * c.r[i] * (1.0 - c.r[i]);
        }

        for i in 0..d {
            g[W_Z].add(i, da_z[i], &c.x);
            g[U_Z].add(i, da_z[i], &c.h_prev);
            g[W_R].add(i, da_r[i], &c.x);
            g[U_R].add(i, da_r[i], &c.h_prev);
            g[W_H].add(i, da_h[i], &c.x);
            g[U_H].add(i, da_h[i], &c.reset_h);
        }
        g[B_Z].add(0, 1.0, &da_z);
        g[B_R].add(0, 1.0, &da_r);
        g[B_H].add(0, 1.0, &da_h);

        let mut dx = vec![0.0; d];
        self.w_z.matvec_t_acc(&da_z, &mut dx);
        self.w_r.matvec_t_acc(&da_r, &mut dx);
        self.w_h.matvec_t_acc(&da_h, &mut dx);
        self.u_z.matvec_t_acc(&da_z, &mut dh_prev);
        self.u_r.matvec_t_acc(&da_r, &mut dh_prev);
        (dx, dh_prev)
    }
}

pub(crate) type GruBatch = Vec<(UserId, Vec<PoiId>)>;

/// Users with at least one train transition, shuffled, grouped so each batch
/// holds at least `min_transitions` transitions (the last may hold fewer).
pub(crate) fn batches<R: Rng + ?Sized>(dataset: &Dataset, min_transitions: usize, rng: &mut R) -> Vec<GruBatch> {
    let mut users: Vec<UserId> = dataset.users().filter(|&u| dataset.train(u).len() >= 2).collect();
    users.shuffle(rng);
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut count = 0;
    for u in users {
        let seq: Vec<PoiId> = dataset.train(u).iter().map(|c| c.poi).collect();
        count += seq.len() - 1;
        current.push((u, seq));
        if count >= min_transitions {
            out.push(std::mem::take(&mut current));
            count = 0;
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}
