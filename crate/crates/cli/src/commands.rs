use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use gsn::corpus::{
    build_vocab, encode_session, filter_session, parse_raw_log, read_sessions, write_sessions,
    FilterBounds, Session, TokenId, Utterance, Vocabulary,
};
use gsn::decoder::DecodeMode;
use gsn::metrics::{evaluate, EvalPair, Report, WordVectorTable};
use gsn::numcore::CheckpointData;
use gsn::trainer::{CheckpointPaths, StopRule, TrainRun, Trainer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, Split};
use crate::CliError;

pub const MANIFEST_FILE: &str = "split.manifest";
pub const TRAIN_LOG_FILE: &str = "train.log";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrepareSummary {
    pub sessions_read: usize,
    pub accepted: usize,
    pub unresolved_mentions: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub vocab_size: usize,
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(
            path,
            io::Error::new(io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_session_file(path: &Path) -> Result<Vec<Session>, CliError> {
    read_sessions(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_vocab(config: &Config) -> Result<Vocabulary, CliError> {
    let path = config.vocab_path();
    require_file(&path)?;
    Vocabulary::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn encode_all(sessions: &[Session], vocab: &Vocabulary, max_len: usize) -> Vec<Session<TokenId>> {
    sessions
        .iter()
        .map(|s| encode_session(s, vocab, max_len))
        .collect()
}

fn clip(session: &Session, max_len: usize) -> Session {
    let utterances = session
        .utterances()
        .iter()
        .map(|u| Utterance {
            tokens: u.tokens.iter().take(max_len).cloned().collect(),
            ..u.clone()
        })
        .collect();
    Session::new(utterances).expect("clipping keeps indices and parents")
}

/// Sizes of the train, dev, and test splits for `n` sessions.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let train = ((n as f64) * ratios[0] / total).round() as usize;
    let upto_dev = ((n as f64) * (ratios[0] + ratios[1]) / total).round() as usize;
    let train = train.min(n);
    let dev = upto_dev.min(n) - train;
    [train, dev, n - train - dev]
}

/// Parses and filters a raw log, then writes seeded train/dev/test splits,
/// the training vocabulary, and a manifest naming each session's split.
pub fn prepare(
    config: &Config,
    raw_log: &Path,
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<PrepareSummary, CliError> {
    config.validate()?;
    let text = read_text(raw_log)?;
    let parsed =
        parse_raw_log(&text).map_err(|e| CliError::Data(format!("{}: {e}", raw_log.display())))?;
    let bounds = FilterBounds::default();
    let mut summary = PrepareSummary {
        sessions_read: parsed.len(),
        ..PrepareSummary::default()
    };
    let mut accepted: Vec<(usize, Session)> = Vec::new();
    for (k, p) in parsed.iter().enumerate() {
        let session = clip(&p.session, config.hp.max_len);
        if filter_session(&session, &bounds).accepted() {
            summary.unresolved_mentions += p.unresolved_mentions;
            accepted.push((k + 1, session));
        }
    }
    summary.accepted = accepted.len();
    if accepted.is_empty() {
        return Err(CliError::EmptyCorpus(format!(
            "no session of {} in {} passed the filters",
            parsed.len(),
            raw_log.display()
        )));
    }

    let mut order: Vec<usize> = (0..accepted.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.hp.seed));
    let sizes = split_sizes(
        accepted.len(),
        [config.train_ratio, config.dev_ratio, config.test_ratio],
    );
    [summary.train, summary.dev, summary.test] = sizes;
    if summary.train == 0 {
        return Err(CliError::EmptyCorpus("training split is empty".into()));
    }
    let mut assignment = vec![Split::Train; accepted.len()];
    for (rank, &k) in order.iter().enumerate() {
        assignment[k] = match rank {
            r if r < sizes[0] => Split::Train,
            r if r < sizes[0] + sizes[1] => Split::Dev,
            _ => Split::Test,
        };
    }

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut manifest = format!(
        "seed {}\nratios {:?} {:?} {:?}\n",
        config.hp.seed, config.train_ratio, config.dev_ratio, config.test_ratio
    );
    for ((block, _), split) in accepted.iter().zip(&assignment) {
        writeln!(manifest, "{block}\t{}", split.name()).unwrap();
    }
    let mut splits: Vec<Vec<Session>> = vec![Vec::new(); 3];
    for ((_, s), split) in accepted.into_iter().zip(&assignment) {
        splits[*split as usize].push(s);
    }
    let vocab =
        build_vocab(&splits[0], config.hp.vocab_cap).map_err(|e| CliError::Usage(e.to_string()))?;
    summary.vocab_size = vocab.len();

    for split in Split::ALL {
        write_text(
            &out_dir.join(split.file_name()),
            &write_sessions(&splits[split as usize]),
        )?;
    }
    let vocab_path = out_dir.join("vocab.txt");
    vocab
        .save(&vocab_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", vocab_path.display())))?;
    write_text(&out_dir.join(MANIFEST_FILE), &manifest)?;

    let report = format!(
        "sessions read\t{}\naccepted\t{}\nrejected\t{}\nunresolved mentions\t{}\ntrain\t{}\ndev\t{}\ntest\t{}\nvocab\t{}\n",
        summary.sessions_read,
        summary.accepted,
        summary.sessions_read - summary.accepted,
        summary.unresolved_mentions,
        summary.train,
        summary.dev,
        summary.test,
        summary.vocab_size
    );
    out.write_all(report.as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    Ok(summary)
}

struct Tee<'a> {
    out: &'a mut dyn Write,
    file: File,
}

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.out.write_all(buf)?;
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.file.flush()
    }
}

fn load_checkpoint_into(trainer: &mut Trainer, path: &Path) -> Result<(), CliError> {
    require_file(path)?;
    let data = CheckpointData::load(path).map_err(gsn::Error::from)?;
    trainer.restore(&data)?;
    Ok(())
}

/// Trains on the prepared splits, writing `last.ckpt`, `best.ckpt`, and the
/// epoch log under the checkpoint directory. A checkpoint resumes training.
pub fn train(
    config: &Config,
    resume: Option<&Path>,
    out: &mut dyn Write,
) -> Result<TrainRun, CliError> {
    config.validate()?;
    let (train_path, dev_path) = (
        config.split_path(Split::Train),
        config.split_path(Split::Dev),
    );
    require_file(&train_path)?;
    require_file(&dev_path)?;
    let vocab = load_vocab(config)?;
    let train = encode_all(&read_session_file(&train_path)?, &vocab, config.hp.max_len);
    let dev = encode_all(&read_session_file(&dev_path)?, &vocab, config.hp.max_len);
    if train.is_empty() {
        return Err(CliError::EmptyCorpus(format!(
            "{} has no sessions",
            train_path.display()
        )));
    }

    let mut trainer = Trainer::new(config.hp.clone(), vocab.len())?;
    if let Some(path) = resume {
        load_checkpoint_into(&mut trainer, path)?;
    }
    let dir = &config.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| CliError::io(&log_path, e))?;
    let mut log = Tee { out, file };
    let paths = CheckpointPaths::in_dir(dir);
    let run = trainer.fit(&train, &dev, Some(&paths), StopRule::default(), &mut log)?;
    Ok(run)
}

/// The explicit checkpoint, else `best.ckpt`, else `last.ckpt`.
pub fn resolve_checkpoint(config: &Config, given: Option<&Path>) -> PathBuf {
    if let Some(p) = given {
        return p.to_path_buf();
    }
    let paths = CheckpointPaths::in_dir(&config.checkpoint_dir);
    if paths.best.is_file() {
        paths.best
    } else {
        paths.last
    }
}

fn load_model(config: &Config, checkpoint: &Path, vocab: &Vocabulary) -> Result<Trainer, CliError> {
    require_file(checkpoint)?;
    let mut trainer = Trainer::new(config.hp.clone(), vocab.len())?;
    load_checkpoint_into(&mut trainer, checkpoint)?;
    Ok(trainer)
}

/// Greedy decoding of one split, scored against the reference responses.
pub fn eval(
    config: &Config,
    checkpoint: Option<&Path>,
    split: Split,
    out: &mut dyn Write,
) -> Result<Report, CliError> {
    config.validate()?;
    let checkpoint = resolve_checkpoint(config, checkpoint);
    let split_path = config.split_path(split);
    require_file(&split_path)?;
    if let Some(p) = &config.word_vectors {
        require_file(p)?;
    }
    let vocab = load_vocab(config)?;
    let trainer = load_model(config, &checkpoint, &vocab)?;
    let sessions = read_session_file(&split_path)?;
    if sessions.is_empty() {
        return Err(CliError::EmptyCorpus(format!(
            "{} has no sessions",
            split_path.display()
        )));
    }
    let table = match &config.word_vectors {
        Some(p) => Some(
            WordVectorTable::load(p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };

    let mut pairs = Vec::with_capacity(sessions.len());
    for s in &sessions {
        let encoded = encode_session(s, &vocab, config.hp.max_len);
        let ids = trainer
            .model
            .generate(&encoded, DecodeMode::Greedy, config.hp.max_decode_len)
            .map_err(gsn::Error::from)?;
        let hypothesis = vocab
            .decode(&ids)
            .map_err(|e| CliError::Data(e.to_string()))?;
        pairs.push(EvalPair {
            hypothesis,
            reference: s.target_utterance().tokens.clone(),
        });
    }
    let report = evaluate(&pairs, table.as_ref()).map_err(|e| CliError::Data(e.to_string()))?;
    out.write_all(report.to_text().as_bytes())
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    Ok(report)
}

/// One response line per session in `sessions_path`. The last utterance of
/// each session names the speaker and the addressed parent; its tokens are
/// ignored.
pub fn generate(
    config: &Config,
    checkpoint: Option<&Path>,
    sessions_path: &Path,
    out: &mut dyn Write,
) -> Result<Vec<String>, CliError> {
    config.validate()?;
    let checkpoint = resolve_checkpoint(config, checkpoint);
    require_file(sessions_path)?;
    let vocab = load_vocab(config)?;
    let trainer = load_model(config, &checkpoint, &vocab)?;
    let mode = match config.beam_width {
        1 => DecodeMode::Greedy,
        w => DecodeMode::Beam(w),
    };
    let mut lines = Vec::new();
    for s in read_session_file(sessions_path)? {
        let encoded = encode_session(&s, &vocab, config.hp.max_len);
        let ids = trainer
            .model
            .generate(&encoded, mode, config.hp.max_decode_len)
            .map_err(gsn::Error::from)?;
        let line = vocab
            .decode(&ids)
            .map_err(|e| CliError::Data(e.to_string()))?
            .join(" ");
        writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
        lines.push(line);
    }
    Ok(lines)
}
