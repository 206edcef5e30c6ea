//! Base recommenders. Every trainable model reads and writes the shared user
//! and POI embedding matrices; TOP and U-TOP are count tables.

mod gru;
mod mf;
mod popularity;
mod seqrec;
mod snapshot;
mod softmax;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::{CheckIn, Dataset};
use crate::optim::{AdamConfig, AdamState, EmbeddingMatrix, RowGrads};

pub use gru::{Gru, GRU_MATRIX_NAMES};
pub use popularity::{Popularity, UserPopularity};
pub use seqrec::SeqRec;
pub use snapshot::{load_snapshot, save_snapshot, Snapshot, SnapshotMeta, SNAPSHOT_VERSION};
pub use softmax::softmax_cross_entropy;

/// Score given to candidates a model declines to rank.
pub const ABSTAIN: f64 = f64::NEG_INFINITY;

/// The user and POI embedding matrices shared by the triplet-loss pass and
/// the base model.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedParams {
    pub user: EmbeddingMatrix,
    pub poi: EmbeddingMatrix,
}

impl SharedParams {
    pub fn init<R: Rng + ?Sized>(num_users: usize, num_pois: usize, dim: usize, rng: &mut R) -> Self {
        let user = EmbeddingMatrix::init_embedding(num_users, dim, rng);
        let poi = EmbeddingMatrix::init_embedding(num_pois, dim, rng);
        SharedParams { user, poi }
    }

    pub fn dim(&self) -> usize {
        self.poi.dim()
    }

    pub fn num_users(&self) -> usize {
        self.user.rows()
    }

    pub fn num_pois(&self) -> usize {
        self.poi.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Top,
    UTop,
    Mf,
    SeqRec,
    Gru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Top, ModelKind::UTop, ModelKind::Mf, ModelKind::SeqRec, ModelKind::Gru];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Top => "top",
            ModelKind::UTop => "utop",
            ModelKind::Mf => "mf",
            ModelKind::SeqRec => "seqrec",
            ModelKind::Gru => "gru",
        }
    }

    /// Count-based models are fitted in one pass and have no epochs.
    pub fn is_counting(self) -> bool {
        matches!(self, ModelKind::Top | ModelKind::UTop)
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, ModelKind::SeqRec | ModelKind::Gru)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown model {s:?} (expected top, utop, mf, seqrec or gru)")))
    }
}

/// A scoring request: the user and the check-ins observed so far.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub user: UserId,
    pub history: &'a [CheckIn],
}

/// A base recommender and its model-specific parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Top(Popularity),
    UTop(UserPopularity),
    Mf,
    SeqRec(SeqRec),
    Gru(Gru),
}

impl Model {
    /// Fresh model. Count tables start empty; embedding-based parameters are
    /// drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(kind: ModelKind, num_users: usize, num_pois: usize, dim: usize, rng: &mut R) -> Self {
        match kind {
            ModelKind::Top => Model::Top(Popularity::empty(num_pois)),
            ModelKind::UTop => Model::UTop(UserPopularity::empty(num_users)),
            ModelKind::Mf => Model::Mf,
            ModelKind::SeqRec => Model::SeqRec(SeqRec::init(num_pois, dim, rng)),
            ModelKind::Gru => Model::Gru(Gru::init(dim, rng)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Top(_) => ModelKind::Top,
            Model::UTop(_) => ModelKind::UTop,
            Model::Mf => ModelKind::Mf,
            Model::SeqRec(_) => ModelKind::SeqRec,
            Model::Gru(_) => ModelKind::Gru,
        }
    }

    /// Model-specific matrices in a fixed order, each with a stable name.
    pub fn extra_matrices(&self) -> Vec<(&'static str, &EmbeddingMatrix)> {
        match self {
            Model::SeqRec(s) => vec![("T", &s.transition)],
            Model::Gru(g) => g.matrices(),
            _ => Vec::new(),
        }
    }

    pub fn extra_matrices_mut(&mut self) -> Vec<(&'static str, &mut EmbeddingMatrix)> {
        match self {
            Model::SeqRec(s) => vec![("T", &mut s.transition)],
            Model::Gru(g) => g.matrices_mut(),
            _ => Vec::new(),
        }
    }

    /// Scores `candidates` for `query`. Higher is better; [`ABSTAIN`] marks a
    /// candidate the model cannot rank.
    pub fn score_candidates(&self, params: &SharedParams, query: &Query<'_>, candidates: &[PoiId]) -> Result<Vec<f64>> {
        let by_query_vector = |q: Vec<f64>| -> Vec<f64> {
            candidates
                .iter()
                .map(|c| crate::optim::dot(&q, params.poi.row(c.index())))
                .collect()
        };
        Ok(match self {
            Model::Top(p) => candidates.iter().map(|&c| p.score(c)).collect(),
            Model::UTop(p) => candidates.iter().map(|&c| p.score(query.user, c)).collect(),
            Model::Mf => by_query_vector(params.user.row(query.user.index()).to_vec()),
            Model::SeqRec(s) => {
                let last = query.history.last().ok_or(Error::EmptyHistory)?;
                by_query_vector(s.query_vector(params, query.user, last.poi))
            }
            Model::Gru(g) => {
                if query.history.is_empty() {
                    return Err(Error::EmptyHistory);
                }
                let pois: Vec<PoiId> = query.history.iter().map(|c| c.poi).collect();
                by_query_vector(g.query_vector(params, query.user, &pois))
            }
        })
    }

    /// Fits TOP/U-TOP count tables from the train partitions. No-op for
    /// embedding models.
    pub fn fit_counts(&mut self, dataset: &Dataset) -> Result<()> {
        match self {
            Model::Top(p) => *p = Popularity::fit(dataset)?,
            Model::UTop(p) => *p = UserPopularity::fit(dataset)?,
            _ => {}
        }
        Ok(())
    }
}

/// Hyperparameters of the base-model pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseTrainConfig {
    pub adam: AdamConfig,
    /// MF: positives per batch; SEQREC: transitions per batch; GRU: a batch
    /// closes once its sequences hold at least this many transitions.
    pub batch_size: usize,
    /// Unvisited POIs sampled per positive (MF only).
    pub negatives: usize,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            adam: AdamConfig::default(),
            batch_size: crate::jtll::DEFAULT_BATCH_SIZE,
            negatives: crate::jtll::DEFAULT_NEGATIVES,
        }
    }
}

/// Gradient buffers matching a model's parameters.
#[derive(Debug, Clone)]
pub struct GradSet {
    pub user: RowGrads,
    pub poi: RowGrads,
    pub extra: Vec<RowGrads>,
}

impl GradSet {
    pub fn for_model(model: &Model, params: &SharedParams) -> Self {
        GradSet {
            user: RowGrads::for_matrix(&params.user),
            poi: RowGrads::for_matrix(&params.poi),
            extra: model.extra_matrices().into_iter().map(|(_, m)| RowGrads::for_matrix(m)).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.user.clear();
        self.poi.clear();
        self.extra.iter_mut().for_each(RowGrads::clear);
    }
}

/// Optimiser state of the base-model pass, separate from the triplet-loss
/// pass's state even though both update the same shared matrices.
#[derive(Debug, Clone)]
pub struct BaseTrainer {
    config: BaseTrainConfig,
    user_adam: AdamState,
    poi_adam: AdamState,
    extra_adam: Vec<AdamState>,
    grads: GradSet,
    mf: Option<mf::MfData>,
    transitions: Option<Vec<seqrec::Transition>>,
}

impl BaseTrainer {
    pub fn new(model: &Model, params: &SharedParams, dataset: &Dataset, config: BaseTrainConfig) -> Result<Self> {
        dataset.require_split()?;
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let extra_adam = model
            .extra_matrices()
            .into_iter()
            .map(|(_, m)| AdamState::for_matrix(m, config.adam))
            .collect();
        Ok(BaseTrainer {
            config,
            user_adam: AdamState::for_matrix(&params.user, config.adam),
            poi_adam: AdamState::for_matrix(&params.poi, config.adam),
            extra_adam,
            grads: GradSet::for_model(model, params),
            mf: match model {
                Model::Mf => Some(mf::MfData::build(dataset)?),
                _ => None,
            },
            transitions: match model {
                Model::SeqRec(_) => Some(seqrec::transitions(dataset)),
                _ => None,
            },
        })
    }

    pub fn config(&self) -> &BaseTrainConfig {
        &self.config
    }

    /// One training pass of the base model. Returns the mean loss per
    /// training example (0 for count models).
    pub fn train_epoch<R: Rng + ?Sized>(
        &mut self,
        model: &mut Model,
        params: &mut SharedParams,
        dataset: &Dataset,
        rng: &mut R,
    ) -> Result<f64> {
        match model {
            Model::Top(_) | Model::UTop(_) => {
                model.fit_counts(dataset)?;
                Ok(0.0)
            }
            Model::Mf => {
                let data = self.mf.as_ref().expect("MF data built in new");
                let batches = mf::batches(data, self.config, rng);
                self.run_batches(model, params, batches, |_, params, batch, grads| {
                    mf::batch_loss_and_grads(params, batch, grads)
                })
            }
            Model::SeqRec(_) => {
                let mut order: Vec<seqrec::Transition> = self.transitions.clone().expect("transitions built in new");
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
                let batches: Vec<Vec<seqrec::Transition>> =
                    order.chunks(self.config.batch_size).map(<[_]>::to_vec).collect();
                self.run_batches(model, params, batches, |model, params, batch, grads| {
                    let Model::SeqRec(s) = model else { unreachable!() };
                    s.batch_loss_and_grads(params, batch, grads)
                })
            }
            Model::Gru(_) => {
                let batches = gru::batches(dataset, self.config.batch_size, rng);
                self.run_batches(model, params, batches, |model, params, batch, grads| {
                    let Model::Gru(g) = model else { unreachable!() };
                    let mut total = (0.0, 0usize);
                    for (user, seq) in batch {
                        let (loss, n) = g.sequence_loss_and_grads(params, *user, seq, grads)?;
                        total.0 += loss;
                        total.1 += n;
                    }
                    Ok(total)
                })
            }
        }
    }

    /// Runs `f` per batch (returning summed loss and example count), then
    /// steps every parameter matrix.
    fn run_batches<B, F>(&mut self, model: &mut Model, params: &mut SharedParams, batches: Vec<B>, mut f: F) -> Result<f64>
    where
        F: FnMut(&Model, &SharedParams, &B, &mut GradSet) -> Result<(f64, usize)>,
    {
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            self.grads.clear();
            let (loss, n) = f(model, params, batch, &mut self.grads)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("{} batch {b}", model.kind()),
                });
            }
            total += loss;
            count += n;
            self.user_adam.step(&mut params.user, &self.grads.user, "W_user")?;
            self.poi_adam.step(&mut params.poi, &self.grads.poi, "W_poi")?;
            for ((adam, (name, m)), g) in self.extra_adam.iter_mut().zip(model.extra_matrices_mut()).zip(&self.grads.extra) {
                adam.step(m, g, name)?;
            }
        }
        self.grads.clear();
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}
