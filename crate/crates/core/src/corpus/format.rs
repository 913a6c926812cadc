//! Canonical session files.
//!
//! Sessions are separated by blank lines. Each utterance is one line,
//! `<speaker>\t<parent index or ->\t<space-separated tokens>`, and the last
//! line of a block is the target response.

use super::{CorpusError, Session, Utterance};

pub fn write_sessions(sessions: &[Session]) -> String {
    let mut out = String::new();
    for (k, s) in sessions.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        for u in s.utterances() {
            let parent = u.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                u.speaker,
                parent,
                u.tokens.join(" ")
            ));
        }
    }
    out
}

pub fn read_sessions(text: &str) -> Result<Vec<Session>, CorpusError> {
    let mut sessions = Vec::new();
    let mut block: Vec<Utterance> = Vec::new();
    let flush = |block: &mut Vec<Utterance>, sessions: &mut Vec<Session>| {
        if !block.is_empty() {
            sessions.push(Session::new(std::mem::take(block))?);
        }
        Ok::<_, CorpusError>(())
    };
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut block, &mut sessions)?;
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let [speaker, parent, tokens] = fields[..] else {
            return Err(CorpusError::MalformedSession(format!(
                "line {}: expected 3 tab-separated fields",
                lineno + 1
            )));
        };
        let parent = match parent {
            "-" => None,
            p => Some(p.parse::<usize>().map_err(|_| {
                CorpusError::MalformedSession(format!("line {}: bad parent {p:?}", lineno + 1))
            })?),
        };
        block.push(Utterance {
            index: block.len() + 1,
            speaker: speaker.to_string(),
            tokens: tokens.split_whitespace().map(str::to_string).collect(),
            parent,
        });
    }
    flush(&mut block, &mut sessions)?;
    Ok(sessions)
}
