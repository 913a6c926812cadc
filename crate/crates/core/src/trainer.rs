//! Training loop: seeded shuffling, per-session gradients summed over a
//! batch, Adam updates, per-epoch logging, and checkpointing.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{Session, TokenId};
use crate::error::Error;
use crate::model::{AttendScope, Gsn, ModelDims, ModelOptions};
use crate::numcore::{
    Adam, AdamConfig, CheckpointData, CheckpointError, Gradients, Precision, Tensor,
};
use crate::uge::FlowConfig;

pub type EncodedSession = Session<TokenId>;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub alpha: f64,
    pub iterations: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub readout_dim: usize,
    pub layers: usize,
    pub vocab_cap: usize,
    pub max_len: usize,
    pub max_decode_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub speaker_flow: bool,
    pub separate_direction_params: bool,
    pub attend: AttendScope,
    pub clip_norm: f64,
    pub precision: Precision,
    /// Compute per-session gradients of a batch on the rayon pool. The
    /// reduction order is fixed, so results match serial mode.
    pub parallel: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 0.25,
            iterations: 3,
            hidden_dim: 300,
            embed_dim: 300,
            readout_dim: 300,
            layers: 2,
            vocab_cap: 30_000,
            max_len: 30,
            max_decode_len: 30,
            lr: 1e-4,
            batch_size: 32,
            epochs: 25,
            seed: 1,
            speaker_flow: true,
            separate_direction_params: false,
            attend: AttendScope::Parent,
            clip_norm: 5.0,
            precision: Precision::F32,
            parallel: false,
        }
    }
}

/// Keys accepted by [`Hyperparams::set`], in serialization order.
pub const HYPERPARAM_KEYS: &[&str] = &[
    "alpha",
    "iterations",
    "hidden_dim",
    "embed_dim",
    "readout_dim",
    "layers",
    "vocab_cap",
    "max_len",
    "max_decode_len",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "speaker_flow",
    "separate_direction_params",
    "attend",
    "clip_norm",
    "precision",
    "parallel",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        let positive = [
            ("iterations", self.iterations),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("readout_dim", self.readout_dim),
            ("layers", self.layers),
            ("max_len", self.max_len),
            ("max_decode_len", self.max_decode_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_cap < 5 {
            return Err(Error::Config("vocab_cap must leave room for a word".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm {} must be positive",
                self.clip_norm
            )));
        }
        Ok(())
    }

    pub fn model_dims(&self, vocab_size: usize) -> ModelDims {
        ModelDims {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            readout_dim: self.readout_dim,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            flow: FlowConfig {
                alpha: self.alpha,
                iterations: self.iterations,
                speaker_flow: self.speaker_flow,
            },
            separate_direction_params: self.separate_direction_params,
            attend: self.attend,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "readout_dim" => self.readout_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "max_decode_len" => self.max_decode_len = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "speaker_flow" => self.speaker_flow = parse(key, value)?,
            "separate_direction_params" => self.separate_direction_params = parse(key, value)?,
            "attend" => {
                self.attend = match value {
                    "parent" => AttendScope::Parent,
                    "session" => AttendScope::Session,
                    _ => return Err(Error::Config(format!("bad value {value:?} for attend"))),
                }
            }
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::Config(format!("bad value {value:?} for precision"))),
                }
            }
            "parallel" => self.parallel = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs that [`Hyperparams::set`] parses back exactly.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        HYPERPARAM_KEYS
            .iter()
            .map(|&k| {
                let v = match k {
                    "alpha" => format!("{:?}", self.alpha),
                    "iterations" => self.iterations.to_string(),
                    "hidden_dim" => self.hidden_dim.to_string(),
                    "embed_dim" => self.embed_dim.to_string(),
                    "readout_dim" => self.readout_dim.to_string(),
                    "layers" => self.layers.to_string(),
                    "vocab_cap" => self.vocab_cap.to_string(),
                    "max_len" => self.max_len.to_string(),
                    "max_decode_len" => self.max_decode_len.to_string(),
                    "lr" => format!("{:?}", self.lr),
                    "batch_size" => self.batch_size.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "seed" => self.seed.to_string(),
                    "speaker_flow" => self.speaker_flow.to_string(),
                    "separate_direction_params" => self.separate_direction_params.to_string(),
                    "attend" => match self.attend {
                        AttendScope::Parent => "parent".into(),
                        AttendScope::Session => "session".into(),
                    },
                    "clip_norm" => format!("{:?}", self.clip_norm),
                    "precision" => match self.precision {
                        Precision::F32 => "f32".into(),
                        Precision::F64 => "f64".into(),
                    },
                    "parallel" => self.parallel.to_string(),
                    _ => unreachable!(),
                };
                (k, v)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

impl fmt::Display for EpochRecord {
    /// `epoch<TAB>train_loss<TAB>dev_loss`; dev loss is `-` without a dev set.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t", self.epoch, self.train_loss)?;
        match self.dev_loss {
            Some(d) => write!(f, "{d:.6}"),
            None => write!(f, "-"),
        }
    }
}

/// Where the trainer writes checkpoints.
#[derive(Clone, Debug)]
pub struct CheckpointPaths {
    pub last: PathBuf,
    pub best: PathBuf,
}

impl CheckpointPaths {
    pub fn in_dir(dir: &Path) -> Self {
        CheckpointPaths {
            last: dir.join("last.ckpt"),
            best: dir.join("best.ckpt"),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainRun {
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<EpochRecord>,
    pub best_dev: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

impl TrainRun {
    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }
}

/// Optional early exit once the epoch's mean train loss falls below a value.
#[derive(Clone, Copy, Debug, Default)]
pub struct StopRule {
    pub train_loss_below: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub hp: Hyperparams,
    pub model: Gsn,
    pub adam: Adam,
    epoch: usize,
    best_dev: Option<f64>,
}

const META_EPOCH: &str = "epoch";
const META_BEST_DEV: &str = "best_dev";
const META_VOCAB: &str = "vocab_size";
const META_ADAM_STEP: &str = "adam_step";

impl Trainer {
    pub fn new(hp: Hyperparams, vocab_size: usize) -> Result<Self, Error> {
        hp.validate()?;
        let model = Gsn::new(hp.model_dims(vocab_size), hp.model_options(), hp.seed);
        let adam = Adam::new(&model.params, AdamConfig::with_lr(hp.lr));
        Ok(Trainer {
            hp,
            model,
            adam,
            epoch: 0,
            best_dev: None,
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best_dev(&self) -> Option<f64> {
        self.best_dev
    }

    /// Visiting order for an epoch; a pure function of seed and epoch so a
    /// resumed run shuffles exactly as an uninterrupted one.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.hp.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Per-session losses and the summed gradient of a batch.
    fn batch_grads(&self, batch: &[&EncodedSession]) -> Result<(Vec<f64>, Gradients), Error> {
        let results: Vec<_> = if self.hp.parallel {
            batch
                .par_iter()
                .map(|s| self.model.loss_and_grads(s))
                .collect()
        } else {
            batch.iter().map(|s| self.model.loss_and_grads(s)).collect()
        };
        let mut total = Gradients::zeros_like(&self.model.params);
        let mut losses = Vec::with_capacity(batch.len());
        for r in results {
            let (l, g) = r?;
            if !l.is_finite() {
                return Err(Error::Numerical(format!("training loss is {l}")));
            }
            losses.push(l);
            total.accumulate(&g);
        }
        Ok((losses, total))
    }

    /// One pass over `train`; returns the mean per-session loss measured
    /// before each batch's update, summed in corpus order.
    pub fn train_epoch(&mut self, train: &[EncodedSession]) -> Result<f64, Error> {
        if train.is_empty() {
            return Err(Error::Config("empty training corpus".into()));
        }
        let order = self.epoch_order(self.epoch + 1, train.len());
        let mut losses = vec![0.0; train.len()];
        for chunk in order.chunks(self.hp.batch_size) {
            let batch: Vec<&EncodedSession> = chunk.iter().map(|&i| &train[i]).collect();
            let (batch_losses, mut grads) = self.batch_grads(&batch)?;
            if !grads.is_finite() {
                return Err(Error::Numerical("non-finite gradient".into()));
            }
            grads.clip_global_norm(self.hp.clip_norm);
            self.adam.step(&mut self.model.params, &grads)?;
            for (&i, l) in chunk.iter().zip(batch_losses) {
                losses[i] = l;
            }
        }
        self.epoch += 1;
        Ok(losses.iter().sum::<f64>() / train.len() as f64)
    }

    /// Mean per-session loss without updating anything.
    pub fn evaluate_loss(&self, sessions: &[EncodedSession]) -> Result<f64, Error> {
        if sessions.is_empty() {
            return Err(Error::Config("empty evaluation corpus".into()));
        }
        let losses = self.session_losses(sessions)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    pub fn session_losses(&self, sessions: &[EncodedSession]) -> Result<Vec<f64>, Error> {
        let losses: Result<Vec<f64>, _> = sessions.par_iter().map(|s| self.model.loss(s)).collect();
        Ok(losses?)
    }

    /// Trains up to `hp.epochs` total epochs, logging one line per epoch.
    /// Checkpoints are written only after an epoch completes, so a numerical
    /// failure leaves the previous ones in place.
    pub fn fit(
        &mut self,
        train: &[EncodedSession],
        dev: &[EncodedSession],
        checkpoints: Option<&CheckpointPaths>,
        stop: StopRule,
        log: &mut dyn Write,
    ) -> Result<TrainRun, Error> {
        if train.is_empty() {
            return Err(Error::Config("empty training corpus".into()));
        }
        let mut run = TrainRun {
            epoch: self.epoch,
            step: self.adam.steps(),
            best_dev: self.best_dev,
            ..TrainRun::default()
        };
        while self.epoch < self.hp.epochs {
            let train_loss = self.train_epoch(train)?;
            let dev_loss = if dev.is_empty() {
                None
            } else {
                Some(self.evaluate_loss(dev)?)
            };
            let record = EpochRecord {
                epoch: self.epoch,
                train_loss,
                dev_loss,
            };
            writeln!(log, "{record}")?;
            let improved = match (dev_loss, self.best_dev) {
                (Some(d), Some(b)) => d < b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                self.best_dev = dev_loss;
            }
            if let Some(paths) = checkpoints {
                let data = self.to_checkpoint();
                data.save(&paths.last)?;
                run.last_checkpoint = Some(paths.last.clone());
                if improved {
                    data.save(&paths.best)?;
                    run.best_checkpoint = Some(paths.best.clone());
                }
            }
            run.history.push(record);
            run.epoch = self.epoch;
            run.step = self.adam.steps();
            run.best_dev = self.best_dev;
            if stop.train_loss_below.is_some_and(|t| train_loss < t) {
                break;
            }
        }
        Ok(run)
    }

    /// Parameters, optimizer moments, hyperparameters, and counters.
    pub fn to_checkpoint(&self) -> CheckpointData {
        let mut data = CheckpointData {
            precision: self.hp.precision,
            ..CheckpointData::default()
        };
        for (k, v) in self.hp.to_pairs() {
            data.meta.insert(k.to_string(), v);
        }
        data.meta
            .insert(META_VOCAB.into(), self.model.dims.vocab_size.to_string());
        data.meta.insert(META_EPOCH.into(), self.epoch.to_string());
        data.meta
            .insert(META_ADAM_STEP.into(), self.adam.steps().to_string());
        if let Some(b) = self.best_dev {
            data.meta.insert(META_BEST_DEV.into(), format!("{b:?}"));
        }
        for (name, t) in self.model.params.iter() {
            data.tensors.push((name.to_string(), t.clone()));
        }
        let names: Vec<&str> = self.model.params.iter().map(|(n, _)| n).collect();
        for (name, m) in names.iter().zip(self.adam.first_moments()) {
            data.tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(self.adam.second_moments()) {
            data.tensors.push((format!("adam.v.{name}"), v.clone()));
        }
        data
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), Error> {
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Rebuilds a trainer from the hyperparameters recorded in the checkpoint.
    pub fn from_checkpoint(data: &CheckpointData) -> Result<Self, Error> {
        let mut hp = Hyperparams::default();
        for key in HYPERPARAM_KEYS {
            let value = data
                .meta
                .get(*key)
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing meta {key}")))?;
            hp.set(key, value)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        let vocab: usize = data.meta_parse(META_VOCAB)?;
        let mut trainer = Trainer::new(hp, vocab)?;
        trainer.restore(data)?;
        Ok(trainer)
    }

    /// Loads parameters, optimizer state, and counters into this trainer's
    /// model; every tensor must match the registry in name and shape.
    pub fn restore(&mut self, data: &CheckpointData) -> Result<(), Error> {
        let n = self.model.params.len();
        let mut params = Vec::with_capacity(n);
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for (name, t) in self.model.params.iter() {
            let fetch = |key: &str| -> Result<Tensor, CheckpointError> {
                let found = data
                    .tensor(key)
                    .ok_or_else(|| CheckpointError::Mismatch(format!("missing tensor {key}")))?;
                if found.shape() != t.shape() {
                    return Err(CheckpointError::Mismatch(format!(
                        "{key} has shape {:?}, model expects {:?}",
                        found.shape(),
                        t.shape()
                    )));
                }
                Ok(found.clone())
            };
            params.push((name.to_string(), fetch(name)?));
            first.push(fetch(&format!("adam.m.{name}"))?);
            second.push(fetch(&format!("adam.v.{name}"))?);
        }
        if data.tensors.len() != 3 * n {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint has {} tensors, model expects {}",
                data.tensors.len(),
                3 * n
            ))
            .into());
        }
        let step: u64 = data.meta_parse(META_ADAM_STEP)?;
        let epoch: usize = data.meta_parse(META_EPOCH)?;
        let best_dev = match data.meta.get(META_BEST_DEV) {
            Some(_) => Some(data.meta_parse::<f64>(META_BEST_DEV)?),
            None => None,
        };
        self.model.params.assign(&params)?;
        self.adam = Adam::from_state(self.adam.config, step, first, second)?;
        self.epoch = epoch;
        self.best_dev = best_dev;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, Error> {
        Self::from_checkpoint(&CheckpointData::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparams_round_trip_through_pairs() {
        let mut hp = Hyperparams {
            alpha: 0.1,
            lr: 3e-3,
            attend: AttendScope::Session,
            precision: Precision::F64,
            ..Hyperparams::default()
        };
        hp.speaker_flow = false;
        let mut back = Hyperparams::default();
        for (k, v) in hp.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(hp, back);
    }

    #[test]
    fn validation_rejects_bad_alpha_and_unknown_keys() {
        let mut hp = Hyperparams::default();
        hp.alpha = 1.0;
        assert!(matches!(hp.validate(), Err(Error::Config(_))));
        assert!(matches!(hp.set("alpah", "0.2"), Err(Error::Config(_))));
        assert!(matches!(hp.set("layers", "two"), Err(Error::Config(_))));
    }

    #[test]
    fn log_line_format() {
        let r = EpochRecord {
            epoch: 3,
            train_loss: 1.5,
            dev_loss: Some(2.25),
        };
        assert_eq!(r.to_string(), "3\t1.500000\t2.250000");
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let t = Trainer::new(
            Hyperparams {
                hidden_dim: 2,
                embed_dim: 2,
                readout_dim: 2,
                layers: 1,
                ..Hyperparams::default()
            },
            8,
        )
        .unwrap();
        let a = t.epoch_order(1, 10);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(a, t.epoch_order(1, 10));
        assert_ne!(a, t.epoch_order(2, 10));
    }
}
