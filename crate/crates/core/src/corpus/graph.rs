use super::Session;

/// Square 0/1 matrix; entry `(i, j)` set means an edge from vertex `i` to `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    m: usize,
    cells: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn zeros(m: usize) -> Self {
        AdjacencyMatrix {
            m,
            cells: vec![false; m * m],
        }
    }

    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Self {
        let mut a = Self::zeros(m);
        for &(i, j) in edges {
            a.set(i, j, true);
        }
        a
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.cells[i * self.m + j] = on;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.m);
        for i in 0..self.m {
            for j in 0..self.m {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Vertices with an edge into `j`, ascending.
    pub fn predecessors(&self, j: usize) -> Vec<usize> {
        (0..self.m).filter(|&i| self.get(i, j)).collect()
    }

    /// Vertices `j` reached by an edge out of `i`, ascending.
    pub fn successors(&self, i: usize) -> Vec<usize> {
        (0..self.m).filter(|&j| self.get(i, j)).collect()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.m)
            .flat_map(|i| (0..self.m).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_zero(&self) -> bool {
        self.edge_count() == 0
    }

    pub fn is_strictly_upper(&self) -> bool {
        self.edges().iter().all(|&(i, j)| i < j)
    }

    /// Restriction to the first `k` vertices.
    pub fn prefix(&self, k: usize) -> Self {
        let mut p = Self::zeros(k);
        for i in 0..k {
            for j in 0..k {
                p.set(i, j, self.get(i, j));
            }
        }
        p
    }
}

/// Reply edges `E` and same-speaker edges `U` over one session.
///
/// `reply.get(i, j)` holds when utterance `j + 1` replies to utterance `i + 1`;
/// `speaker.get(i, j)` when both share a speaker and `i < j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueGraph {
    pub reply: AdjacencyMatrix,
    pub speaker: AdjacencyMatrix,
}

impl DialogueGraph {
    pub fn new(reply: AdjacencyMatrix, speaker: AdjacencyMatrix) -> Self {
        assert_eq!(reply.size(), speaker.size(), "E and U sizes differ");
        DialogueGraph { reply, speaker }
    }

    pub fn vertex_count(&self) -> usize {
        self.reply.size()
    }

    /// Subgraph induced by the first `k` vertices.
    pub fn prefix(&self, k: usize) -> Self {
        DialogueGraph {
            reply: self.reply.prefix(k),
            speaker: self.speaker.prefix(k),
        }
    }

    pub fn is_acyclic(&self) -> bool {
        self.reply.is_strictly_upper() && self.speaker.is_strictly_upper()
    }
}

pub fn build_graph<T>(session: &Session<T>) -> DialogueGraph {
    let m = session.len();
    let utts = session.utterances();
    let mut reply = AdjacencyMatrix::zeros(m);
    let mut speaker = AdjacencyMatrix::zeros(m);
    for (j, u) in utts.iter().enumerate() {
        if let Some(p) = u.parent {
            reply.set(p - 1, j, true);
        }
        for (i, earlier) in utts[..j].iter().enumerate() {
            if earlier.speaker == u.speaker {
                speaker.set(i, j, true);
            }
        }
    }
    DialogueGraph { reply, speaker }
}

/// Every maximal root-to-leaf path along reply edges, 0-based, each in
/// chronological order. Roots are taken ascending, children ascending.
pub fn extract_forward_paths(graph: &DialogueGraph) -> Vec<Vec<usize>> {
    let e = &graph.reply;
    let mut paths = Vec::new();
    let mut stack: Vec<Vec<usize>> = (0..e.size())
        .rev()
        .filter(|&v| e.predecessors(v).is_empty())
        .map(|v| vec![v])
        .collect();
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        let children = e.successors(last);
        if children.is_empty() {
            paths.push(path);
        } else {
            for &c in children.iter().rev() {
                let mut next = path.clone();
                next.push(c);
                stack.push(next);
            }
        }
    }
    paths
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Utterance};

    fn session(specs: &[(&str, Option<usize>)]) -> Session {
        Session::new(
            specs
                .iter()
                .enumerate()
                .map(|(i, (sp, parent))| Utterance {
                    index: i + 1,
                    speaker: sp.to_string(),
                    tokens: tokenize("w"),
                    parent: *parent,
                })
                .collect(),
        )
        .unwrap()
    }

    fn sample_thread() -> Session {
        session(&[
            ("p1", None),
            ("p2", Some(1)),
            ("p1", Some(2)),
            ("p3", Some(2)),
        ])
    }

    #[test]
    fn sample_thread_edges() {
        let g = build_graph(&sample_thread());
        assert_eq!(g.reply.edges(), vec![(0, 1), (1, 2), (1, 3)]);
        assert_eq!(g.speaker.edges(), vec![(0, 2)]);
        assert!(g.is_acyclic());
    }

    #[test]
    fn distinct_speakers_have_no_speaker_edges() {
        let g = build_graph(&session(&[("a", None), ("b", Some(1)), ("c", Some(2))]));
        assert!(g.speaker.is_zero());
    }

    #[test]
    fn speaker_edges_cover_all_ordered_pairs() {
        let g = build_graph(&session(&[
            ("a", None),
            ("b", Some(1)),
            ("a", Some(2)),
            ("b", Some(3)),
            ("a", Some(4)),
        ]));
        assert_eq!(g.speaker.edges(), vec![(0, 2), (0, 4), (1, 3), (2, 4)]);
    }

    #[test]
    fn forward_paths() {
        let g = build_graph(&sample_thread());
        assert_eq!(
            extract_forward_paths(&g),
            vec![vec![0, 1, 2], vec![0, 1, 3]]
        );

        let chain = build_graph(&session(&[("a", None), ("b", Some(1)), ("a", Some(2))]));
        assert_eq!(extract_forward_paths(&chain), vec![vec![0, 1, 2]]);

        let single = build_graph(&session(&[("a", None)]));
        assert_eq!(extract_forward_paths(&single), vec![vec![0]]);
    }

    #[test]
    fn prefix_drops_target() {
        let g = build_graph(&sample_thread()).prefix(3);
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(g.reply.edges(), vec![(0, 1), (1, 2)]);
    }
}
