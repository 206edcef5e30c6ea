//! Next-new POI recommendation toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`ingest`] parses raw check-in dumps, filters them and splits each user's
//!   sequence chronologically into train and test partitions.
//! * [`sampling`] derives the visited (user, POI) relations and draws users that
//!   never visited a POI.
//! * [`optim`] holds the numerical primitives (sigmoid, Adam, dropout,
//!   finite-difference checking).
//! * [`jtll`] is the joint triplet loss: a POI anchor pulled towards the users
//!   who visited it and pushed away from users who never did.
//! * [`models`] contains the base recommenders that share the user and POI
//!   embedding matrices.
//! * [`joint`] alternates a triplet-loss pass and a base-model pass per epoch.
//! * [`eval`] ranks unvisited candidates and reports Acc@K and MRR.
//! * [`synth`] generates check-in data with planted user/POI groups.

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ids;
pub mod ingest;
pub mod joint;
pub mod jtll;
pub mod models;
pub mod optim;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, DEFAULT_KS};
pub use ids::{PoiId, UserId};
pub use ingest::{CheckIn, ColumnMapping, Dataset, RawCheckIn};
pub use joint::{joint_train, EpochLog, JointConfig, JointOutcome};
pub use models::{Model, ModelKind, Query, SharedParams};
pub use optim::{AdamState, DropoutSpec, EmbeddingMatrix};
pub use sampling::{TrainTuple, VisitorIndex};
pub use synth::SynthConfig;
