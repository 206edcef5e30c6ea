//! Joint training: each epoch runs a triplet-loss pass over the visited
//! relation, then the base model's own pass, both on the same user and POI
//! matrices.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::jtll::{JtllConfig, JtllTrainer, DEFAULT_BATCH_SIZE, DEFAULT_DROPOUT, DEFAULT_NEGATIVES};
use crate::models::{BaseTrainConfig, BaseTrainer, Model, ModelKind, SharedParams, Snapshot, SnapshotMeta};
use crate::optim::{AdamConfig, DropoutSpec};
use crate::sampling::{build_train_tuples, TupleSemantics, VisitorIndex};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_LR: f64 = 0.001;

// Substream ids derived from the master seed.
const STREAM_INIT_SHARED: u64 = 0;
const STREAM_INIT_MODEL: u64 = 1;
const STREAM_JTLL: u64 = 2;
const STREAM_BASE: u64 = 3;

/// Generator for one substream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Overrides `lr` for the base-model pass.
    pub model_lr: Option<f64>,
    /// Overrides `lr` for the triplet-loss pass.
    pub jtll_lr: Option<f64>,
    pub batch_size: usize,
    pub negatives: usize,
    pub dropout: f64,
    pub jtll: bool,
    pub seed: u64,
    /// One training tuple per check-in instead of per distinct pair.
    pub tuple_multiplicity: bool,
    pub fixed_negatives: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            model: ModelKind::Gru,
            dim: DEFAULT_DIM,
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            model_lr: None,
            jtll_lr: None,
            batch_size: DEFAULT_BATCH_SIZE,
            negatives: DEFAULT_NEGATIVES,
            dropout: DEFAULT_DROPOUT,
            jtll: true,
            seed: 0,
            tuple_multiplicity: false,
            fixed_negatives: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

pub fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("invalid value for {key}: {other:?} (expected on|off)"))),
    }
}

fn parse_opt_lr(key: &str, value: &str) -> Result<Option<f64>> {
    match value.trim() {
        "" | "none" | "inherit" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

impl JointConfig {
    /// Applies one `key=value` setting. Keys use the long flag names with
    /// dashes or underscores.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        match key.as_str() {
            "model" => self.model = value.trim().parse()?,
            "dim" => self.dim = parse_num(&key, value)?,
            "epochs" => self.epochs = parse_num(&key, value)?,
            "lr" => self.lr = parse_num(&key, value)?,
            "model-lr" => self.model_lr = parse_opt_lr(&key, value)?,
            "jtll-lr" => self.jtll_lr = parse_opt_lr(&key, value)?,
            "batch" | "batch-size" => self.batch_size = parse_num(&key, value)?,
            "negatives" => self.negatives = parse_num(&key, value)?,
            "dropout" => self.dropout = parse_num(&key, value)?,
            "jtll" => self.jtll = parse_switch(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "tuple-multiplicity" => self.tuple_multiplicity = parse_switch(&key, value)?,
            "fixed-negatives" => self.fixed_negatives = parse_switch(&key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file body. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.apply_kv(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        DropoutSpec::new(self.dropout)?;
        for (name, lr) in [("lr", Some(self.lr)), ("model-lr", self.model_lr), ("jtll-lr", self.jtll_lr)] {
            if let Some(lr) = lr {
                if !(lr.is_finite() && lr >= 0.0) {
                    return Err(Error::Config(format!("{name} must be a finite non-negative number")));
                }
            }
        }
        Ok(())
    }

    pub fn base_lr(&self) -> f64 {
        self.model_lr.unwrap_or(self.lr)
    }

    pub fn jtll_lr(&self) -> f64 {
        self.jtll_lr.unwrap_or(self.lr)
    }

    pub fn base_train_config(&self) -> BaseTrainConfig {
        BaseTrainConfig {
            adam: AdamConfig::with_lr(self.base_lr()),
            batch_size: self.batch_size,
            negatives: self.negatives,
        }
    }

    pub fn jtll_config(&self) -> Result<JtllConfig> {
        Ok(JtllConfig {
            batch_size: self.batch_size,
            negatives: self.negatives,
            dropout: DropoutSpec::new(self.dropout)?,
            fixed_negatives: self.fixed_negatives,
            adam: AdamConfig::with_lr(self.jtll_lr()),
        })
    }

    /// Fully resolved settings, one `key=value` per line, readable back by
    /// [`JointConfig::apply_text`].
    pub fn to_kv_string(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "inherit".to_string(), |x| x.to_string());
        let sw = |b: bool| if b { "on" } else { "off" };
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "model-lr={}", opt(self.model_lr));
        let _ = writeln!(s, "jtll-lr={}", opt(self.jtll_lr));
        let _ = writeln!(s, "batch={}", self.batch_size);
        let _ = writeln!(s, "negatives={}", self.negatives);
        let _ = writeln!(s, "dropout={}", self.dropout);
        let _ = writeln!(s, "jtll={}", sw(self.jtll));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "tuple-multiplicity={}", sw(self.tuple_multiplicity));
        let _ = writeln!(s, "fixed-negatives={}", sw(self.fixed_negatives));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub jtll_loss: Option<f64>,
    pub model_loss: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch\tjtll_loss\tmodel_loss";

pub fn format_epoch_log(log: &[EpochLog]) -> String {
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for e in log {
        let j = e.jtll_loss.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{}\t{}\t{}", e.epoch, j, e.model_loss);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome {
    pub model: Model,
    pub params: SharedParams,
    pub log: Vec<EpochLog>,
}

impl JointOutcome {
    pub fn into_snapshot(self, config: &JointConfig) -> Snapshot {
        Snapshot {
            model: self.model,
            params: self.params,
            meta: SnapshotMeta {
                jtll: config.jtll,
                seed: config.seed,
            },
        }
    }
}

fn initialize(dataset: &Dataset, config: &JointConfig) -> Result<(Model, SharedParams)> {
    config.validate()?;
    dataset.require_split()?;
    let (m, q, d) = (dataset.num_users(), dataset.num_pois(), config.dim);
    let params = SharedParams::init(m, q, d, &mut substream(config.seed, STREAM_INIT_SHARED));
    let model = Model::new(config.model, m, q, d, &mut substream(config.seed, STREAM_INIT_MODEL));
    Ok((model, params))
}

/// Runs `config.epochs` joint epochs. With `config.jtll` off this is exactly
/// [`base_train`].
pub fn joint_train(dataset: &Dataset, config: &JointConfig) -> Result<JointOutcome> {
    let (mut model, mut params) = initialize(dataset, config)?;
    let mut base = BaseTrainer::new(&model, &params, dataset, config.base_train_config())?;
    let mut base_rng = substream(config.seed, STREAM_BASE);

    let mut jtll = if config.jtll {
        let semantics = if config.tuple_multiplicity {
            TupleSemantics::Multiplicity
        } else {
            TupleSemantics::Set
        };
        let tuples = build_train_tuples(dataset, semantics)?;
        let index = VisitorIndex::build(dataset)?;
        let trainer = JtllTrainer::new(&params, config.jtll_config()?)?;
        Some((trainer, tuples, index, substream(config.seed, STREAM_JTLL)))
    } else {
        None
    };

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let jtll_loss = match jtll.as_mut() {
            Some((trainer, tuples, index, rng)) => Some(trainer.epoch(&mut params, tuples, index, rng)?),
            None => None,
        };
        let model_loss = base.train_epoch(&mut model, &mut params, dataset, &mut base_rng)?;
        log.push(EpochLog {
            epoch,
            jtll_loss,
            model_loss,
        });
    }
    Ok(JointOutcome { model, params, log })
}

/// Trains the base model alone, ignoring `config.jtll`.
pub fn base_train(dataset: &Dataset, config: &JointConfig) -> Result<JointOutcome> {
    let (mut model, mut params) = initialize(dataset, config)?;
    let mut trainer = BaseTrainer::new(&model, &params, dataset, config.base_train_config())?;
    let mut rng = substream(config.seed, STREAM_BASE);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let model_loss = trainer.train_epoch(&mut model, &mut params, dataset, &mut rng)?;
        log.push(EpochLog {
            epoch,
            jtll_loss: None,
            model_loss,
        });
    }
    Ok(JointOutcome { model, params, log })
}
