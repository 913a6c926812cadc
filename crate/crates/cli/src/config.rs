//! Line-based `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsn::trainer::{Hyperparams, HYPERPARAM_KEYS};

use crate::CliError;

/// Keys handled here rather than by [`Hyperparams`].
pub const PIPELINE_KEYS: &[&str] = &[
    "corpus",
    "data_dir",
    "vocab",
    "checkpoint_dir",
    "word_vectors",
    "beam_width",
    "train_ratio",
    "dev_ratio",
    "test_ratio",
    "eval_split",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    Dev,
    #[default]
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown split {s:?}")))
    }

    pub fn file_name(self) -> String {
        format!("{}.sessions", self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub hp: Hyperparams,
    /// Raw chat log read by `prepare`.
    pub corpus: Option<PathBuf>,
    /// Where `prepare` writes splits and `train`/`eval` read them.
    pub data_dir: PathBuf,
    /// Vocabulary file; defaults to `vocab.txt` under `data_dir`.
    pub vocab: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub word_vectors: Option<PathBuf>,
    /// 1 decodes greedily.
    pub beam_width: usize,
    pub train_ratio: f64,
    pub dev_ratio: f64,
    pub test_ratio: f64,
    pub eval_split: Split,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hp: Hyperparams::default(),
            corpus: None,
            data_dir: PathBuf::from("data"),
            vocab: None,
            checkpoint_dir: PathBuf::from("checkpoints"),
            word_vectors: None,
            beam_width: 1,
            train_ratio: 0.9,
            dev_ratio: 0.05,
            test_ratio: 0.05,
            eval_split: Split::Test,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("bad value {value:?} for {key}")))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "corpus" => self.corpus = optional_path(value),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "vocab" => self.vocab = optional_path(value),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "word_vectors" => self.word_vectors = optional_path(value),
            "beam_width" => self.beam_width = parse_num(key, value)?,
            "train_ratio" => self.train_ratio = parse_num(key, value)?,
            "dev_ratio" => self.dev_ratio = parse_num(key, value)?,
            "test_ratio" => self.test_ratio = parse_num(key, value)?,
            "eval_split" => self.eval_split = Split::parse(value)?,
            _ if HYPERPARAM_KEYS.contains(&key) => self
                .hp
                .set(key, value)
                .map_err(|e| CliError::Usage(e.to_string()))?,
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current settings.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut config = Config::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let mut out = String::new();
        for (k, v) in self.hp.to_pairs() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        let pipeline = [
            ("corpus", path(&self.corpus)),
            ("data_dir", self.data_dir.display().to_string()),
            ("vocab", path(&self.vocab)),
            ("checkpoint_dir", self.checkpoint_dir.display().to_string()),
            ("word_vectors", path(&self.word_vectors)),
            ("beam_width", self.beam_width.to_string()),
            ("train_ratio", format!("{:?}", self.train_ratio)),
            ("dev_ratio", format!("{:?}", self.dev_ratio)),
            ("test_ratio", format!("{:?}", self.test_ratio)),
            ("eval_split", self.eval_split.name().to_string()),
        ];
        for (k, v) in pipeline {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.hp
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if self.beam_width == 0 {
            return Err(CliError::Usage("beam_width must be at least 1".into()));
        }
        let ratios = [self.train_ratio, self.dev_ratio, self.test_ratio];
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
            return Err(CliError::Usage(
                "split ratios must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.vocab
            .clone()
            .unwrap_or_else(|| self.data_dir.join("vocab.txt"))
    }

    pub fn split_path(&self, split: Split) -> PathBuf {
        self.data_dir.join(split.file_name())
    }
}
