#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use gsn::corpus::{build_vocab, encode_session, read_sessions, Session, TokenId, Vocabulary};
use gsn::trainer::Hyperparams;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

pub fn load_sessions(name: &str) -> Vec<Session> {
    read_sessions(&std::fs::read_to_string(data_path(name)).unwrap()).unwrap()
}

pub fn load_encoded(name: &str) -> (Vocabulary, Vec<Session<TokenId>>) {
    let sessions = load_sessions(name);
    let vocab = build_vocab(&sessions, 30_000).unwrap();
    let encoded = sessions
        .iter()
        .map(|s| encode_session(s, &vocab, 30))
        .collect();
    (vocab, encoded)
}

pub fn small_hyperparams(hidden: usize, iterations: usize, lr: f64) -> Hyperparams {
    Hyperparams {
        hidden_dim: hidden,
        embed_dim: hidden,
        readout_dim: hidden,
        layers: 1,
        iterations,
        lr,
        batch_size: 1,
        seed: 7,
        ..Hyperparams::default()
    }
}

/// Session with integer tokens from `(speaker, parent, tokens)` rows.
pub fn session_from_rows(rows: &[(&str, Option<usize>, &[u32])]) -> Session<TokenId> {
    use gsn::corpus::Utterance;
    let utterances = rows
        .iter()
        .enumerate()
        .map(|(i, (speaker, parent, tokens))| Utterance {
            index: i + 1,
            speaker: speaker.to_string(),
            tokens: tokens.iter().map(|&t| TokenId(t)).collect(),
            parent: *parent,
        })
        .collect();
    Session::new(utterances).unwrap()
}

pub fn oracle_session(rows: &[(&str, Option<usize>, &[u32])]) -> oracle::RawSession {
    oracle::RawSession {
        rows: rows
            .iter()
            .map(|(s, p, t)| (s.to_string(), *p, t.to_vec()))
            .collect(),
    }
}

/// Sample forum thread as context (p1, p2, p1, p3) plus a response to 4.
pub const THREAD_SESSION: &[(&str, Option<usize>, &[u32])] = &[
    ("p1", None, &[4, 5, 6]),
    ("p2", Some(1), &[7, 8]),
    ("p1", Some(2), &[9, 10, 4, 11]),
    ("p3", Some(2), &[12, 13]),
    ("p2", Some(4), &[14, 15, 5]),
];

pub fn tiny_model(
    vocab: usize,
    hidden: usize,
    layers: usize,
    iterations: usize,
    seed: u64,
) -> gsn::Gsn {
    use gsn::uge::FlowConfig;
    use gsn::{Gsn, ModelDims, ModelOptions};
    let dims = ModelDims {
        vocab_size: vocab,
        embed_dim: hidden,
        hidden_dim: hidden,
        layers,
        readout_dim: hidden,
    };
    let options = ModelOptions {
        flow: FlowConfig {
            alpha: 0.25,
            iterations,
            speaker_flow: true,
        },
        ..ModelOptions::default()
    };
    let mut model = Gsn::new(dims, options, seed);
    randomize_biases(&mut model.params, seed);
    model
}

/// Replaces zero-initialized vectors with small random values.
pub fn randomize_biases(ps: &mut gsn::numcore::ParamSet, seed: u64) {
    let mut init = gsn::numcore::Initializer::new(seed.wrapping_add(1000));
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        if ps.get(id).shape().len() == 1 {
            let len = ps.get(id).len();
            *ps.get_mut(id) = init.uniform(&[len], 0.2);
        }
    }
}

/// Overwrites every parameter with uniform(-1, 1) draws. Xavier-scale reset
/// gates leave some gradients near 1e-9, below what a symmetric difference
/// resolves in f64; generic unit-scale weights keep every entry measurable.
pub fn generic_weights(ps: &mut gsn::numcore::ParamSet, seed: u64) {
    let mut init = gsn::numcore::Initializer::new(seed);
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let shape = ps.get(id).shape().to_vec();
        *ps.get_mut(id) = init.uniform(&shape, 1.0);
    }
}

pub const FD_STEP: f64 = 1e-4;
