//! Finite-difference checks of the hand-written gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ids::{PoiId, UserId};
use crate::jtll::jtll_loss_and_grads;
use crate::models::{GradSet, Gru, Model, SharedParams};
use crate::optim::{finite_diff_check, RowGrads, DEFAULT_FD_STEP};

pub const JTLL_INSTANCES: usize = 100;
pub const JTLL_DIMS: [usize; 3] = [2, 8, 32];
pub const JTLL_MAX_NEGATIVES: usize = 8;
pub const JTLL_TOLERANCE: f64 = 1e-5;
pub const GRU_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error per parameter group.
    pub groups: Vec<(String, f64)>,
    pub instances: usize,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    fn record(&mut self, name: &str, err: f64) {
        match self.groups.iter_mut().find(|(n, _)| n == name) {
            Some((_, e)) => *e = e.max(err),
            None => self.groups.push((name.to_string(), err)),
        }
    }
}

/// Random triplet-loss instances with entries in [-1, 1], dims cycling
/// through [`JTLL_DIMS`] and 0..=8 negatives.
pub fn jtll_suite(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        groups: Vec::new(),
        instances: JTLL_INSTANCES,
    };
    for i in 0..JTLL_INSTANCES {
        let d = JTLL_DIMS[i % JTLL_DIMS.len()];
        let k = rng.gen_range(0..=JTLL_MAX_NEGATIVES);
        let vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let user = vec(&mut rng);
        let poi = vec(&mut rng);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| vec(&mut rng)).collect();

        // flatten all roles into one point: [user | poi | neg_0 | ...]
        let point: Vec<f64> = user.iter().chain(&poi).chain(negs.iter().flatten()).copied().collect();
        let loss_at = |x: &[f64]| {
            let rows: Vec<&[f64]> = x.chunks(d).collect();
            crate::jtll::jtll_loss(rows[0], rows[1], &rows[2..]).expect("dims agree")
        };
        let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let (_, g) = jtll_loss_and_grads(&user, &poi, &neg_refs)?;

        let analytic: Vec<f64> = g.user.iter().chain(&g.poi).chain(g.negatives.iter().flatten()).copied().collect();
        // check each role separately for a per-role breakdown
        let roles = [("user", 0, d), ("poi", d, 2 * d), ("negatives", 2 * d, point.len())];
        for (name, lo, hi) in roles {
            if lo == hi {
                continue;
            }
            let f = |x: &[f64]| {
                let mut full = point.clone();
                full[lo..hi].copy_from_slice(x);
                loss_at(&full)
            };
            let err = finite_diff_check(f, &analytic[lo..hi], &point[lo..hi], DEFAULT_FD_STEP);
            report.record(name, err);
        }
    }
    Ok(report)
}

fn dense(grads: &RowGrads, rows: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * dim];
    for r in 0..rows {
        if grads.is_touched(r) {
            out[r * dim..(r + 1) * dim].copy_from_slice(grads.row(r));
        }
    }
    out
}

/// BPTT check on a d=4, Q=5, M=2 instance with a length-3 sequence, over
/// every parameter matrix including the shared embeddings.
pub fn gru_suite(seed: u64) -> Result<GradCheckReport> {
    let (d, q, m) = (4, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SharedParams::init(m, q, d, &mut rng);
    // larger than the default init so gradients are not vanishingly small
    for v in params.user.values_mut().iter_mut().chain(params.poi.values_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut gru = Gru::init(d, &mut rng);
    for (_, b) in gru.matrices_mut().into_iter().filter(|(n, _)| n.starts_with('b')) {
        for v in b.values_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let seq: Vec<PoiId> = (0..3).map(|_| PoiId(rng.gen_range(0..q as u32))).collect();
    let user = UserId(rng.gen_range(0..m as u32));

    let mut grads = GradSet::for_model(&Model::Gru(gru.clone()), &params);
    gru.sequence_loss_and_grads(&params, user, &seq, &mut grads)?;

    let mut report = GradCheckReport {
        groups: Vec::new(),
        instances: 1,
    };
    let user_point = params.user.values().to_vec();
    let err = finite_diff_check(
        |x: &[f64]| {
            let mut p = params.clone();
            p.user.values_mut().copy_from_slice(x);
            gru.sequence_loss(&p, user, &seq)
        },
        &dense(&grads.user, m, d),
        &user_point,
        DEFAULT_FD_STEP,
    );
    report.record("W_user", err);

    let poi_point = params.poi.values().to_vec();
    let err = finite_diff_check(
        |x: &[f64]| {
            let mut p = params.clone();
            p.poi.values_mut().copy_from_slice(x);
            gru.sequence_loss(&p, user, &seq)
        },
        &dense(&grads.poi, q, d),
        &poi_point,
        DEFAULT_FD_STEP,
    );
    report.record("W_poi", err);

    for (k, (name, mat)) in gru.matrices().into_iter().enumerate() {
        let point = mat.values().to_vec();
        let analytic = dense(&grads.extra[k], mat.rows(), mat.dim());
        let err = finite_diff_check(
            |x: &[f64]| {
                let mut g = gru.clone();
                g.matrices_mut()[k].1.values_mut().copy_from_slice(x);
                g.sequence_loss(&params, user, &seq)
            },
            &analytic,
            &point,
            DEFAULT_FD_STEP,
        );
        report.record(name, err);
    }
    Ok(report)
}
