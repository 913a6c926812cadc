//! Adapter for raw chat logs: `speaker<TAB>text` lines, where text may open
//! with an `@speaker` address. Sessions are separated by blank lines.

use rayon::prelude::*;

use super::{tokenize, CorpusError, Session, Utterance};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawParse {
    pub session: Session,
    /// `@name` tokens naming no earlier speaker; kept as plain text.
    pub unresolved_mentions: usize,
}

/// Resolves reply parents for one session.
///
/// An utterance addressed with a leading `@name` replies to the most recent
/// earlier utterance by `name`. Without an address it replies to the most
/// recent earlier utterance by a different speaker. The first utterance has
/// no parent.
pub fn parse_raw_session<S: AsRef<str>>(lines: &[S]) -> Result<RawParse, CorpusError> {
    let lines: Vec<&str> = lines
        .iter()
        .map(|l| l.as_ref().trim_end_matches(['\r', '\n']))
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(CorpusError::MalformedSession("empty input".into()));
    }

    let mut utterances: Vec<Utterance> = Vec::with_capacity(lines.len());
    let mut unresolved = 0;
    for (pos, line) in lines.iter().enumerate() {
        let (speaker, text) = line.split_once('\t').ok_or_else(|| {
            CorpusError::MalformedSession(format!("line {} has no tab: {line:?}", pos + 1))
        })?;
        let speaker = speaker.trim();
        if speaker.is_empty() || speaker.contains(char::is_whitespace) {
            return Err(CorpusError::MalformedSession(format!(
                "line {} has an invalid speaker id {speaker:?}",
                pos + 1
            )));
        }

        let mut text = text.trim_start();
        let mut parent = None;
        if let Some(rest) = text.strip_prefix('@') {
            let name_end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let name = &rest[..name_end];
            let addressed = utterances.iter().rev().find(|u| u.speaker == name);
            match addressed {
                Some(u) if !name.is_empty() => {
                    parent = Some(u.index);
                    text = &rest[name_end..];
                }
                _ => unresolved += 1,
            }
        }
        if parent.is_none() {
            parent = utterances
                .iter()
                .rev()
                .find(|u| u.speaker != speaker)
                .map(|u| u.index);
        }

        utterances.push(Utterance {
            index: pos + 1,
            speaker: speaker.to_string(),
            tokens: tokenize(text),
            parent,
        });
    }
    Ok(RawParse {
        session: Session::new(utterances)?,
        unresolved_mentions: unresolved,
    })
}

/// Parses every blank-line separated block of a raw log, in input order.
pub fn parse_raw_log(text: &str) -> Result<Vec<RawParse>, CorpusError> {
    let mut blocks: Vec<Vec<&str>> = vec![Vec::new()];
    for line in text.lines() {
        if line.trim().is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
        } else {
            blocks.last_mut().unwrap().push(line);
        }
    }
    if blocks.last().is_some_and(Vec::is_empty) {
        blocks.pop();
    }
    blocks.par_iter().map(|b| parse_raw_session(b)).collect()
}
