//! GRU decoder with bilinear attention over the addressed utterance.

use std::cmp::Ordering;

use crate::corpus::{TokenId, EOS, PAD, SOS, UNK};
use crate::error::ModelError;
use crate::numcore::{Initializer, NumError, ParamId, ParamSet, Tape, Var};

#[derive(Clone, Debug)]
pub struct GruParams {
    pub wz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn register(
        ps: &mut ParamSet,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let cols = input + hidden;
        GruParams {
            wz: ps.register(format!("{prefix}.wz"), init.xavier(hidden, cols)),
            bz: ps.register(format!("{prefix}.bz"), init.zeros(hidden)),
            wr: ps.register(format!("{prefix}.wr"), init.xavier(hidden, cols)),
            br: ps.register(format!("{prefix}.br"), init.zeros(hidden)),
            wh: ps.register(format!("{prefix}.wh"), init.xavier(hidden, cols)),
            bh: ps.register(format!("{prefix}.bh"), init.zeros(hidden)),
            input,
            hidden,
        }
    }
}

/// `z = σ(Wz[x; h] + bz)`, `r = σ(Wr[x; h] + br)`,
/// `h~ = tanh(Wh[x; r*h] + bh)`, `h' = (1 - z)*h + z*h~`.
pub fn gru_step(tape: &mut Tape, p: &GruParams, x: Var, h: Var) -> Result<Var, NumError> {
    let xh = tape.concat(&[x, h]);
    let affine = |tape: &mut Tape, w: ParamId, b: ParamId, v: Var| -> Result<Var, NumError> {
        let w = tape.param(w);
        let b = tape.param(b);
        let y = tape.matvec(w, v)?;
        tape.add(y, b)
    };
    let z = affine(tape, p.wz, p.bz, xh)?;
    let z = tape.sigmoid(z);
    let r = affine(tape, p.wr, p.br, xh)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let xrh = tape.concat(&[x, rh]);
    let cand = affine(tape, p.wh, p.bh, xrh)?;
    let cand = tape.tanh(cand);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub layers: Vec<GruParams>,
    /// Bilinear attention matrix `W_a`, `[d_s, d_s]`.
    pub attn: ParamId,
    pub readout_w: ParamId,
    pub readout_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl DecoderParams {
    pub fn register(
        ps: &mut ParamSet,
        init: &mut Initializer,
        vocab: usize,
        embed_dim: usize,
        state_dim: usize,
        readout_dim: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { embed_dim } else { state_dim };
                GruParams::register(ps, init, &format!("dec.{l}"), input, state_dim)
            })
            .collect();
        DecoderParams {
            layers,
            attn: ps.register("dec.attn", init.xavier(state_dim, state_dim)),
            readout_w: ps.register(
                "dec.readout.w",
                init.xavier(readout_dim, 2 * state_dim + embed_dim),
            ),
            readout_b: ps.register("dec.readout.b", init.zeros(readout_dim)),
            out_w: ps.register("dec.out.w", init.xavier(vocab, readout_dim)),
            out_b: ps.register("dec.out.b", init.zeros(vocab)),
        }
    }
}

/// What the decoder conditions on: the graph-encoded state of the addressed
/// utterance and the word states it attends over.
#[derive(Clone, Debug)]
pub struct EncodedContext {
    pub h0: Var,
    pub words: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub scores: Var,
    pub weights: Var,
    pub context: Var,
}

/// `e_j = hᵀ W_a s_j`, weights `softmax(e)`, context `Σ_j weight_j s_j`.
pub fn attention(
    tape: &mut Tape,
    h: Var,
    words: &[Var],
    w_a: ParamId,
) -> Result<Attention, ModelError> {
    if words.is_empty() {
        return Err(ModelError::EmptyAttendee);
    }
    let stacked = tape.stack(words)?;
    let w = tape.param(w_a);
    let projected = tape.mattvec(w, h)?;
    let scores = tape.matvec(stacked, projected)?;
    let weights = tape.softmax(scores);
    let context = tape.mattvec(stacked, weights)?;
    Ok(Attention {
        scores,
        weights,
        context,
    })
}

#[derive(Clone, Debug)]
pub struct DecoderState {
    /// One hidden vector per GRU layer; the last is `h_k`.
    pub hidden: Vec<Var>,
    pub step: usize,
    pub prev: TokenId,
}

impl DecoderState {
    /// Every layer starts from the addressed utterance's encoded state.
    pub fn initial(ctx: &EncodedContext, layers: usize) -> Self {
        DecoderState {
            hidden: vec![ctx.h0; layers],
            step: 0,
            prev: SOS,
        }
    }

    pub fn top(&self) -> Var {
        *self.hidden.last().expect("at least one layer")
    }
}

/// Advances the GRU on `prev` and returns vocabulary logits
/// `W_o·tanh(W_f·[h_k; c_k; emb(prev)] + b_f) + b_o`.
pub fn decode_step(
    tape: &mut Tape,
    embed: ParamId,
    params: &DecoderParams,
    state: &DecoderState,
    ctx: &EncodedContext,
) -> Result<(DecoderState, Var), ModelError> {
    let vocab = tape.params().get(embed).rows();
    if state.prev.index() >= vocab {
        return Err(ModelError::Vocab {
            id: state.prev.0,
            size: vocab,
        });
    }
    let emb = tape.embed_row(embed, state.prev.index())?;
    let mut input = emb;
    let mut hidden = Vec::with_capacity(params.layers.len());
    for (layer, &h) in params.layers.iter().zip(&state.hidden) {
        let next = gru_step(tape, layer, input, h)?;
        hidden.push(next);
        input = next;
    }
    let top = input;
    let att = attention(tape, top, &ctx.words, params.attn)?;
    let features = tape.concat(&[top, att.context, emb]);
    let wf = tape.param(params.readout_w);
    let bf = tape.param(params.readout_b);
    let z = tape.matvec(wf, features)?;
    let z = tape.add(z, bf)?;
    let z = tape.tanh(z);
    let wo = tape.param(params.out_w);
    let bo = tape.param(params.out_b);
    let logits = tape.matvec(wo, z)?;
    let logits = tape.add(logits, bo)?;
    Ok((
        DecoderState {
            hidden,
            step: state.step + 1,
            prev: state.prev,
        },
        logits,
    ))
}

/// Mean teacher-forced negative log-likelihood of `target` followed by `<eos>`.
pub fn sequence_loss(
    tape: &mut Tape,
    embed: ParamId,
    params: &DecoderParams,
    ctx: &EncodedContext,
    target: &[TokenId],
) -> Result<Var, ModelError> {
    if target.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    let mut state = DecoderState::initial(ctx, params.layers.len());
    let mut terms = Vec::with_capacity(target.len() + 1);
    for &gold in target.iter().chain(std::iter::once(&EOS)) {
        let (next, logits) = decode_step(tape, embed, params, &state, ctx)?;
        terms.push(tape.cross_entropy(logits, gold.index())?);
        state = DecoderState { prev: gold, ..next };
    }
    Ok(tape.mean(&terms)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

fn emittable(token: usize) -> bool {
    token != PAD.index() && token != SOS.index() && token != UNK.index()
}

/// Highest-scoring emittable token; ties go to the lowest id.
pub fn argmax_token(logits: &[f64]) -> TokenId {
    let mut best = None::<(usize, f64)>;
    for (i, &v) in logits.iter().enumerate() {
        if emittable(i) && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    TokenId(best.map_or(EOS.index(), |(i, _)| i) as u32)
}

fn log_probs(tape: &Tape, logits: Var) -> Vec<f64> {
    let x = tape.value(logits).data();
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|v| v - lse).collect()
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: DecoderState,
}

/// Decodes a response, seeded with `<sos>`, stopping at `<eos>` or after
/// `max_len` steps. The returned sequence excludes `<eos>`.
///
/// Beam search ranks finished hypotheses by log-probability divided by the
/// number of emitted tokens (counting `<eos>`).
pub fn generate(
    tape: &mut Tape,
    embed: ParamId,
    params: &DecoderParams,
    ctx: &EncodedContext,
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<TokenId>, ModelError> {
    let width = match mode {
        DecodeMode::Greedy => return greedy(tape, embed, params, ctx, max_len),
        DecodeMode::Beam(w) => w.max(1),
    };

    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: DecoderState::initial(ctx, params.layers.len()),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(f64, usize, usize, DecoderState)> = Vec::new();
        for (h_idx, hyp) in alive.iter().enumerate() {
            let (next, logits) = decode_step(tape, embed, params, &hyp.state, ctx)?;
            let lp = log_probs(tape, logits);
            for (tok, &l) in lp.iter().enumerate() {
                if emittable(tok) {
                    candidates.push((hyp.log_prob + l, h_idx, tok, next.clone()));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next_alive = Vec::with_capacity(width);
        for (score, h_idx, tok, state) in candidates.into_iter().take(width) {
            let mut tokens = alive[h_idx].tokens.clone();
            let tok = TokenId(tok as u32);
            tokens.push(tok);
            let hyp = Hypothesis {
                tokens,
                log_prob: score,
                state: DecoderState { prev: tok, ..state },
            };
            if tok == EOS {
                finished.push(hyp);
            } else {
                next_alive.push(hyp);
            }
        }
        alive = next_alive;
        if alive.is_empty() || finished.len() >= width {
            break;
        }
    }
    finished.extend(alive);
    let normalized = |h: &Hypothesis| h.log_prob / h.tokens.len().max(1) as f64;
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            normalized(a)
                .partial_cmp(&normalized(b))
                .unwrap_or(Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(_, h)| h.tokens.clone())
        .unwrap_or_default();
    Ok(best.into_iter().filter(|&t| t != EOS).collect())
}

fn greedy(
    tape: &mut Tape,
    embed: ParamId,
    params: &DecoderParams,
    ctx: &EncodedContext,
    max_len: usize,
) -> Result<Vec<TokenId>, ModelError> {
    let mut state = DecoderState::initial(ctx, params.layers.len());
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (next, logits) = decode_step(tape, embed, params, &state, ctx)?;
        let tok = argmax_token(tape.value(logits).data());
        if tok == EOS {
            break;
        }
        out.push(tok);
        state = DecoderState { prev: tok, ..next };
    }
    Ok(out)
}
