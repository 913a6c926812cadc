//! Dialogue sessions, reply graphs, vocabulary, and the on-disk formats.
//!
//! Utterance indices and parent references are 1-based, as they appear in
//! session files. [`DialogueGraph`] matrices are indexed from 0.

mod format;
mod graph;
mod raw;
mod vocab;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

pub use format::{read_sessions, write_sessions};
pub use graph::{build_graph, extract_forward_paths, AdjacencyMatrix, DialogueGraph};
pub use raw::{parse_raw_log, parse_raw_session, RawParse};
pub use vocab::{build_vocab, encode_session, Vocabulary, EOS, PAD, SOS, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed session: {0}")]
    MalformedSession(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("token id {id} outside vocabulary of size {size}")]
    Vocab { id: u32, size: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index into a [`Vocabulary`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance<T = String> {
    /// 1-based position in the session.
    pub index: usize,
    pub speaker: String,
    pub tokens: Vec<T>,
    /// 1-based index of the utterance this one replies to.
    pub parent: Option<usize>,
}

/// Ordered utterances; the last one is the response to generate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session<T = String> {
    utterances: Vec<Utterance<T>>,
}

impl<T> Session<T> {
    /// Validates indices (1..=m in order) and that every parent precedes its child.
    pub fn new(utterances: Vec<Utterance<T>>) -> Result<Self, CorpusError> {
        if utterances.is_empty() {
            return Err(CorpusError::MalformedSession("no utterances".into()));
        }
        for (pos, u) in utterances.iter().enumerate() {
            if u.index != pos + 1 {
                return Err(CorpusError::MalformedSession(format!(
                    "utterance at position {} has index {}",
                    pos + 1,
                    u.index
                )));
            }
            if let Some(p) = u.parent {
                if p == 0 || p >= u.index {
                    return Err(CorpusError::MalformedSession(format!(
                        "utterance {} replies to {p}, which does not precede it",
                        u.index
                    )));
                }
            }
        }
        Ok(Session { utterances })
    }

    pub fn utterances(&self) -> &[Utterance<T>] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// 1-based index of the response utterance (always the last).
    pub fn target(&self) -> usize {
        self.utterances.len()
    }

    pub fn target_utterance(&self) -> &Utterance<T> {
        self.utterances.last().expect("sessions are non-empty")
    }

    pub fn target_parent(&self) -> Option<usize> {
        self.target_utterance().parent
    }

    /// The utterances the model conditions on: all but the target.
    pub fn context(&self) -> &[Utterance<T>] {
        &self.utterances[..self.utterances.len() - 1]
    }

    pub fn speaker_count(&self) -> usize {
        self.utterances
            .iter()
            .map(|u| u.speaker.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn map_tokens<U>(&self, mut f: impl FnMut(&T) -> U) -> Session<U> {
        Session {
            utterances: self
                .utterances
                .iter()
                .map(|u| Utterance {
                    index: u.index,
                    speaker: u.speaker.clone(),
                    tokens: u.tokens.iter().map(&mut f).collect(),
                    parent: u.parent,
                })
                .collect(),
        }
    }
}

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterBounds {
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub min_speakers: usize,
    pub max_speakers: usize,
}

impl Default for FilterBounds {
    fn default() -> Self {
        FilterBounds {
            min_utterances: 3,
            max_utterances: 10,
            min_speakers: 2,
            max_speakers: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FilterDecision {
    Accept,
    Reject(String),
}

impl FilterDecision {
    pub fn accepted(&self) -> bool {
        matches!(self, FilterDecision::Accept)
    }
}

/// Keeps sessions of 3..=10 utterances from 2..=7 speakers whose target has
/// a parent and whose utterances are all non-empty.
pub fn filter_session<T>(session: &Session<T>, bounds: &FilterBounds) -> FilterDecision {
    let m = session.len();
    if m < bounds.min_utterances || m > bounds.max_utterances {
        return FilterDecision::Reject(format!("{m} utterances"));
    }
    let speakers = session.speaker_count();
    if speakers < bounds.min_speakers || speakers > bounds.max_speakers {
        return FilterDecision::Reject(format!("{speakers} speakers"));
    }
    if session.target_parent().is_none() {
        return FilterDecision::Reject("target has no parent".into());
    }
    if let Some(u) = session.utterances().iter().find(|u| u.tokens.is_empty()) {
        return FilterDecision::Reject(format!("utterance {} is empty", u.index));
    }
    FilterDecision::Accept
}
