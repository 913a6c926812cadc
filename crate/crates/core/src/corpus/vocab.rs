use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{CorpusError, Session, TokenId};

pub const PAD: TokenId = TokenId(0);
pub const SOS: TokenId = TokenId(1);
pub const EOS: TokenId = TokenId(2);
pub const UNK: TokenId = TokenId(3);

const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(CorpusError::Config(
                "vocabulary must start with <pad> <sos> <eos> <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(CorpusError::Config(format!(
                    "duplicate vocabulary entry {t}"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `<unk>`.
    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Result<&str, CorpusError> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or(CorpusError::Vocab {
                id: id.0,
                size: self.tokens.len(),
            })
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>, CorpusError> {
        ids.iter()
            .map(|&id| self.token(id).map(String::from))
            .collect()
    }

    /// One token per line; line number minus one is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Reserved tokens followed by the `cap - 4` most frequent tokens, ties
/// broken lexicographically.
pub fn build_vocab(sessions: &[Session], cap: usize) -> Result<Vocabulary, CorpusError> {
    if cap < 5 {
        return Err(CorpusError::Config(format!(
            "vocabulary cap {cap} is below 5"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sessions {
        for u in s.utterances() {
            for t in &u.tokens {
                if !RESERVED.contains(&t.as_str()) {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|t| t.to_string())
        .chain(
            ranked
                .into_iter()
                .take(cap - RESERVED.len())
                .map(|(t, _)| t.to_string()),
        )
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Maps tokens to ids and clips every utterance to `max_len` tokens.
pub fn encode_session(session: &Session, vocab: &Vocabulary, max_len: usize) -> Session<TokenId> {
    let mut encoded = session.map_tokens(|t| vocab.id(t));
    for u in &mut encoded.utterances {
        u.tokens.truncate(max_len);
    }
    encoded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Utterance};

    fn one(text: &str) -> Session {
        Session::new(vec![Utterance {
            index: 1,
            speaker: "a".into(),
            tokens: tokenize(text),
            parent: None,
        }])
        .unwrap()
    }

    #[test]
    fn frequency_order_after_reserved() {
        let v = build_vocab(&[one("a a b")], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(TokenId(4)).unwrap(), "a");
        assert_eq!(v.token(TokenId(5)).unwrap(), "b");
        assert_eq!(v.id("<unk>"), UNK);
    }

    #[test]
    fn ties_are_lexicographic_and_cap_applies() {
        let v = build_vocab(&[one("z y x y z")], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(TokenId(4)).unwrap(), "y");
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let v = build_vocab(&[one("a")], 10).unwrap();
        assert_eq!(v.id("never-seen"), UNK);
    }

    #[test]
    fn small_cap_is_config_error() {
        assert!(matches!(
            build_vocab(&[one("a")], 4),
            Err(CorpusError::Config(_))
        ));
    }

    #[test]
    fn long_utterances_are_clipped() {
        let text: Vec<String> = (0..35).map(|i| format!("w{i}")).collect();
        let s = one(&text.join(" "));
        let v = build_vocab(std::slice::from_ref(&s), 100).unwrap();
        let e = encode_session(&s, &v, 30);
        assert_eq!(e.utterances()[0].tokens.len(), 30);
        assert_eq!(e.utterances()[0].tokens[0], v.id("w0"));
        assert_eq!(e.utterances()[0].tokens[29], v.id("w29"));
    }

    #[test]
    fn text_round_trip() {
        let v = build_vocab(&[one("hello there hello")], 10).unwrap();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}
