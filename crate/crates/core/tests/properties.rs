mod common;

use std::collections::BTreeSet;

use gsn::corpus::{
    build_graph, build_vocab, extract_forward_paths, parse_raw_session, read_sessions,
    write_sessions, AdjacencyMatrix, DialogueGraph, Session, Utterance, Vocabulary,
};
use gsn::numcore::{CheckpointData, Precision, Tensor};
use gsn::uge::squash;
use proptest::prelude::*;

fn session_strategy() -> impl Strategy<Value = Session> {
    (1usize..=10)
        .prop_flat_map(|m| {
            (
                prop::collection::vec(0usize..4, m),
                prop::collection::vec(any::<prop::sample::Index>(), m),
                prop::collection::vec(prop::collection::vec("[a-z]{1,5}", 1..6), m),
            )
        })
        .prop_map(|(speakers, parents, tokens)| {
            let utterances = (0..speakers.len())
                .map(|j| Utterance {
                    index: j + 1,
                    speaker: format!("s{}", speakers[j]),
                    tokens: tokens[j].clone(),
                    parent: if j == 0 {
                        None
                    } else {
                        Some(parents[j].index(j) + 1)
                    },
                })
                .collect();
            Session::new(utterances).unwrap()
        })
}

/// All root-to-leaf paths by recursive enumeration.
fn brute_paths(e: &AdjacencyMatrix) -> BTreeSet<Vec<usize>> {
    fn walk(e: &AdjacencyMatrix, path: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
        let last = *path.last().unwrap();
        let next: Vec<usize> = (0..e.size()).filter(|&j| e.get(last, j)).collect();
        if next.is_empty() {
            out.insert(path.clone());
        }
        for j in next {
            path.push(j);
            walk(e, path, out);
            path.pop();
        }
    }
    let mut out = BTreeSet::new();
    for r in 0..e.size() {
        if (0..e.size()).all(|i| !e.get(i, r)) {
            walk(e, &mut vec![r], &mut out);
        }
    }
    out
}

proptest! {
    #[test]
    fn squash_stays_in_range_and_grows_with_norm(
        v in prop::collection::vec(-50.0f64..50.0, 1..12),
        alpha in 0.01f64..0.99,
        grow in 1.001f64..4.0,
    ) {
        let s = squash(&v, alpha);
        prop_assert!(s >= alpha && s < 1.0);
        let scaled: Vec<f64> = v.iter().map(|x| x * grow).collect();
        if v.iter().any(|&x| x != 0.0) {
            prop_assert!(squash(&scaled, alpha) > s);
        }
    }

    #[test]
    fn speaker_edges_are_all_same_speaker_pairs(s in session_strategy()) {
        let g = build_graph(&s);
        let u = s.utterances();
        let mut expect = Vec::new();
        for i in 0..u.len() {
            for j in i + 1..u.len() {
                if u[i].speaker == u[j].speaker {
                    expect.push((i, j));
                }
            }
        }
        prop_assert_eq!(g.speaker.edges(), expect);
        prop_assert!(g.is_acyclic());
        prop_assert!(g.reply.edges().iter().all(|&(i, j)| u[j].parent == Some(i + 1)));
    }

    #[test]
    fn forward_paths_cover_every_leaf_of_a_reply_forest(s in session_strategy()) {
        let g = build_graph(&s);
        let paths = extract_forward_paths(&g);
        let leaves = (0..s.len()).filter(|&i| g.reply.successors(i).is_empty()).count();
        prop_assert_eq!(paths.len(), leaves);
        prop_assert_eq!(paths.iter().cloned().collect::<BTreeSet<_>>(), brute_paths(&g.reply));
    }

    #[test]
    fn forward_paths_match_brute_force_on_dags(
        m in 1usize..=9,
        bits in prop::collection::vec(any::<bool>(), 36),
    ) {
        let mut edges = Vec::new();
        let mut k = 0;
        for j in 0..m {
            for i in 0..j {
                if bits[k % bits.len()] { edges.push((i, j)); }
                k += 1;
            }
        }
        let g = DialogueGraph::new(AdjacencyMatrix::from_edges(m, &edges), AdjacencyMatrix::zeros(m));
        let paths = extract_forward_paths(&g);
        prop_assert_eq!(paths.len(), brute_paths(&g.reply).len());
        prop_assert!(paths.iter().all(|p| p.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn canonical_format_round_trips(sessions in prop::collection::vec(session_strategy(), 1..5)) {
        let text = write_sessions(&sessions);
        prop_assert_eq!(read_sessions(&text).unwrap(), sessions.clone());
        let vocab = build_vocab(&sessions, 40).unwrap();
        prop_assert_eq!(Vocabulary::from_text(&vocab.to_text()).unwrap(), vocab);
    }

    #[test]
    fn raw_parse_gives_acyclic_graphs(
        turns in prop::collection::vec((0usize..4, prop::option::of(0usize..5), "[a-z]{1,4}"), 1..10),
    ) {
        let lines: Vec<String> = turns
            .iter()
            .map(|(sp, at, word)| match at {
                Some(a) => format!("p{sp}\t@p{a} {word}"),
                None => format!("p{sp}\t{word}"),
            })
            .collect();
        let parsed = parse_raw_session(&lines).unwrap();
        let s = &parsed.session;
        prop_assert!(build_graph(s).is_acyclic());
        for (j, u) in s.utterances().iter().enumerate() {
            if let Some(p) = u.parent {
                prop_assert!(p <= j);
            }
        }
    }

    #[test]
    fn f64_checkpoints_round_trip_exactly(values in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let n = values.len();
        let data = CheckpointData {
            precision: Precision::F64,
            tensors: vec![("w".into(), Tensor::vector(values))],
            ..CheckpointData::default()
        };
        let back = CheckpointData::from_bytes(&data.to_bytes()).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(back.tensors[0].1.len(), n);
    }
}
