//! Plain-f64 reimplementation of the network, reading weights by name.
//! Nothing here touches the tape, so it checks the library independently.

use gsn::numcore::{ParamSet, Tensor};
use rand::Rng;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Weights<'a>(pub &'a ParamSet);

impl<'a> Weights<'a> {
    pub fn t(&self, name: &str) -> &'a Tensor {
        let ps = self.0;
        ps.get(ps.id(name).unwrap_or_else(|| panic!("no parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.0.id(name).is_some()
    }

    /// `W·x + b` for named weight and bias.
    pub fn affine(&self, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
        let mut y = matvec(self.t(w), x);
        for (v, bb) in y.iter_mut().zip(self.t(b).data()) {
            *v += bb;
        }
        y
    }
}

pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (w.shape()[0], w.shape()[1]);
    assert_eq!(c, x.len());
    (0..r)
        .map(|i| (0..c).map(|j| w.data()[i * c + j] * x[j]).sum())
        .collect()
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn squash(v: &[f64], alpha: f64) -> f64 {
    let n = norm(v);
    (alpha + n) / (1.0 + n)
}

fn lstm_dir(w: &Weights, prefix: &str, inputs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let d = w.t(&format!("{prefix}.b")).len() / 4;
    let mut h = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut out = vec![Vec::new(); inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let z = w.affine(
            &format!("{prefix}.w"),
            &format!("{prefix}.b"),
            &cat(&[&inputs[t], &h]),
        );
        for k in 0..d {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[d + k]);
            let g = z[2 * d + k].tanh();
            let o = sigmoid(z[3 * d + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        out[t] = h.clone();
    }
    out
}

pub fn embedding(w: &Weights, token: u32) -> Vec<f64> {
    w.t("embed").row(token as usize).to_vec()
}

/// `(word states, utterance vector)`.
pub fn encode_utterance(w: &Weights, tokens: &[u32]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs: Vec<Vec<f64>> = tokens.iter().map(|&t| embedding(w, t)).collect();
    let n = tokens.len();
    let mut l = 0;
    let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
    while w.has(&format!("enc.{l}.fwd.w")) {
        fwd = lstm_dir(w, &format!("enc.{l}.fwd"), &inputs, false);
        bwd = lstm_dir(w, &format!("enc.{l}.bwd"), &inputs, true);
        inputs = fwd.iter().zip(&bwd).map(|(f, b)| cat(&[f, b])).collect();
        l += 1;
    }
    (inputs, cat(&[&fwd[n - 1], &bwd[0]]))
}

/// Contribution of `sp` to `sc` through the gated operator named `prefix`.
pub fn gate_op(w: &Weights, prefix: &str, sp: &[f64], sc: &[f64]) -> Vec<f64> {
    let pair = cat(&[sp, sc]);
    let x: Vec<f64> = w
        .affine(&format!("{prefix}.wx"), &format!("{prefix}.bx"), &pair)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = w
        .affine(&format!("{prefix}.wr"), &format!("{prefix}.br"), &pair)
        .into_iter()
        .map(sigmoid)
        .collect();
    let reset: Vec<f64> = r.iter().zip(sp).map(|(a, b)| a * b).collect();
    let h: Vec<f64> = w
        .affine(
            &format!("{prefix}.wh"),
            &format!("{prefix}.bh"),
            &cat(&[&reset, sc]),
        )
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..sp.len())
        .map(|k| (1.0 - x[k]) * sp[k] + x[k] * h[k])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Forward,
    Backward,
}

/// Edge lists with 0-based `(from, to)` pairs, `from < to`.
#[derive(Clone, Debug, Default)]
pub struct Edges {
    pub m: usize,
    pub reply: Vec<(usize, usize)>,
    pub speaker: Vec<(usize, usize)>,
}

/// Nodes whose state flows into node `i` in one iteration.
fn senders(edges: &[(usize, usize)], i: usize, dir: Dir) -> Vec<usize> {
    edges
        .iter()
        .filter_map(|&(a, b)| match dir {
            Dir::Forward if b == i => Some(a),
            Dir::Backward if a == i => Some(b),
            _ => None,
        })
        .collect()
}

pub struct FlowSettings {
    pub alpha: f64,
    pub speaker_flow: bool,
    pub separate_directions: bool,
}

pub fn flow_step(
    w: &Weights,
    states: &[Vec<f64>],
    g: &Edges,
    dir: Dir,
    s: &FlowSettings,
) -> Vec<Vec<f64>> {
    let suffix = if s.separate_directions && dir == Dir::Backward {
        "_bwd"
    } else {
        ""
    };
    let reply_prefix = format!("flow.reply{suffix}");
    let speaker_prefix = format!("flow.speaker{suffix}");
    (0..states.len())
        .map(|i| {
            let mut next = states[i].clone();
            let mut kinds = vec![(&g.reply, &reply_prefix)];
            if s.speaker_flow {
                kinds.push((&g.speaker, &speaker_prefix));
            }
            for (edges, prefix) in kinds {
                let from = senders(edges, i, dir);
                if from.is_empty() {
                    continue;
                }
                let mut agg = vec![0.0; states[i].len()];
                for p in from {
                    for (a, v) in agg
                        .iter_mut()
                        .zip(gate_op(w, prefix, &states[p], &states[i]))
                    {
                        *a += v;
                    }
                }
                let coef = squash(&agg, s.alpha);
                for (n, a) in next.iter_mut().zip(&agg) {
                    *n += coef * a;
                }
            }
            next
        })
        .collect()
}

pub fn run_schedule(
    w: &Weights,
    initial: &[Vec<f64>],
    g: &Edges,
    schedule: &[Dir],
    s: &FlowSettings,
) -> Vec<Vec<f64>> {
    let mut states = initial.to_vec();
    for &dir in schedule {
        states = flow_step(w, &states, g, dir, s);
    }
    states
}

pub fn standard_schedule(n: usize) -> Vec<Dir> {
    let mut s = vec![Dir::Backward; n];
    s.extend(vec![Dir::Forward; n]);
    s
}

/// `influencers[i]` = nodes whose initial state can reach node `i` under the
/// schedule, by set propagation alone.
pub fn reachability(g: &Edges, schedule: &[Dir], speaker_flow: bool) -> Vec<Vec<bool>> {
    let m = g.m;
    let mut infl: Vec<Vec<bool>> = (0..m).map(|i| (0..m).map(|j| i == j).collect()).collect();
    for &dir in schedule {
        let prev = infl.clone();
        for i in 0..m {
            let mut from = senders(&g.reply, i, dir);
            if speaker_flow {
                from.extend(senders(&g.speaker, i, dir));
            }
            for p in from {
                for j in 0..m {
                    infl[i][j] |= prev[p][j];
                }
            }
        }
    }
    infl
}

fn gru(w: &Weights, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let xh = cat(&[x, h]);
    let z: Vec<f64> = w
        .affine(&format!("{prefix}.wz"), &format!("{prefix}.bz"), &xh)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = w
        .affine(&format!("{prefix}.wr"), &format!("{prefix}.br"), &xh)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let c: Vec<f64> = w
        .affine(
            &format!("{prefix}.wh"),
            &format!("{prefix}.bh"),
            &cat(&[x, &rh]),
        )
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|k| (1.0 - z[k]) * h[k] + z[k] * c[k])
        .collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `(attention weights, context)` for decoder state `h`.
pub fn attend(w: &Weights, h: &[f64], words: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let wa = w.t("dec.attn");
    let scores: Vec<f64> = words
        .iter()
        .map(|s| {
            let ws = matvec(wa, s);
            h.iter().zip(&ws).map(|(a, b)| a * b).sum()
        })
        .collect();
    let a = softmax(&scores);
    let mut ctx = vec![0.0; h.len()];
    for (wt, s) in a.iter().zip(words) {
        for (c, v) in ctx.iter_mut().zip(s) {
            *c += wt * v;
        }
    }
    (a, ctx)
}

/// One decoder step: new per-layer hidden states and the logits.
pub fn decoder_step(
    w: &Weights,
    hidden: &[Vec<f64>],
    prev: u32,
    words: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let emb = embedding(w, prev);
    let mut input = emb.clone();
    let mut next = Vec::new();
    for (l, h) in hidden.iter().enumerate() {
        let h2 = gru(w, &format!("dec.{l}"), &input, h);
        input = h2.clone();
        next.push(h2);
    }
    let (_, ctx) = attend(w, &input, words);
    let f: Vec<f64> = w
        .affine(
            "dec.readout.w",
            "dec.readout.b",
            &cat(&[&input, &ctx, &emb]),
        )
        .into_iter()
        .map(f64::tanh)
        .collect();
    (next, w.affine("dec.out.w", "dec.out.b", &f))
}

pub fn decoder_layers(w: &Weights) -> usize {
    (0..).take_while(|l| w.has(&format!("dec.{l}.wz"))).count()
}

/// Mean cross-entropy of `target` then `<eos>` (id 2), starting from `<sos>` (id 1).
pub fn sequence_loss(w: &Weights, h0: &[f64], words: &[Vec<f64>], target: &[u32]) -> f64 {
    let mut hidden = vec![h0.to_vec(); decoder_layers(w)];
    let mut prev = 1u32;
    let mut total = 0.0;
    let golds: Vec<u32> = target.iter().copied().chain(std::iter::once(2)).collect();
    for &gold in &golds {
        let (next, logits) = decoder_step(w, &hidden, prev, words);
        let p = softmax(&logits);
        total -= p[gold as usize].ln();
        hidden = next;
        prev = gold;
    }
    total / golds.len() as f64
}

/// A session as `(speaker, parent 1-based, tokens)` rows; last row is the target.
pub struct RawSession {
    pub rows: Vec<(String, Option<usize>, Vec<u32>)>,
}

impl RawSession {
    pub fn edges(&self, m: usize) -> Edges {
        let mut g = Edges {
            m,
            ..Edges::default()
        };
        for j in 0..m {
            if let Some(p) = self.rows[j].1 {
                g.reply.push((p - 1, j));
            }
            for i in 0..j {
                if self.rows[i].0 == self.rows[j].0 {
                    g.speaker.push((i, j));
                }
            }
        }
        g
    }
}

/// Full-model loss: encode the context, run the flow schedule, decode the
/// target from its parent's state attending over the parent's words.
pub fn model_loss(w: &Weights, s: &RawSession, iterations: usize, flow: &FlowSettings) -> f64 {
    let m = s.rows.len() - 1;
    let encoded: Vec<_> = s.rows[..m]
        .iter()
        .map(|r| encode_utterance(w, &r.2))
        .collect();
    let initial: Vec<Vec<f64>> = encoded.iter().map(|e| e.1.clone()).collect();
    let g = s.edges(m);
    let states = run_schedule(w, &initial, &g, &standard_schedule(iterations), flow);
    let parent = s.rows[m].1.unwrap() - 1;
    sequence_loss(w, &states[parent], &encoded[parent].0, &s.rows[m].2)
}

pub fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Random upper-triangular reply edges and speaker edges from up to three speakers.
pub fn random_graph<R: Rng>(rng: &mut R, m: usize) -> Edges {
    let mut g = Edges {
        m,
        ..Edges::default()
    };
    let speakers: Vec<u8> = (0..m).map(|_| rng.gen_range(0..3)).collect();
    for j in 0..m {
        for i in 0..j {
            if rng.gen_bool(0.35) {
                g.reply.push((i, j));
            }
            if speakers[i] == speakers[j] {
                g.speaker.push((i, j));
            }
        }
    }
    g
}
