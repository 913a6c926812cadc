//! Word-level encoder: shared embeddings feeding a stacked bidirectional LSTM.

use crate::corpus::TokenId;
use crate::error::ModelError;
use crate::numcore::{Initializer, NumError, ParamId, ParamSet, Tape, Var};

/// One LSTM direction. `w` maps `[x; h]` to the stacked gate
/// pre-activations in the order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register(
        ps: &mut ParamSet,
        init: &mut Initializer,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        LstmParams {
            w: ps.register(
                format!("{prefix}.w"),
                init.xavier(4 * hidden, input + hidden),
            ),
            b: ps.register(format!("{prefix}.b"), init.zeros(4 * hidden)),
            input,
            hidden,
        }
    }
}

/// One LSTM step; returns the new `(h, c)`.
pub fn lstm_step(
    tape: &mut Tape,
    p: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NumError> {
    let w = tape.param(p.w);
    let b = tape.param(p.b);
    let xh = tape.concat(&[x, h]);
    let z = tape.matvec(w, xh)?;
    let z = tape.add(z, b)?;
    let d = p.hidden;
    let i = tape.slice(z, 0, d)?;
    let f = tape.slice(z, d, d)?;
    let g = tape.slice(z, 2 * d, d)?;
    let o = tape.slice(z, 3 * d, d)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[derive(Clone, Debug)]
pub struct BiLstmLayer {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub layers: Vec<BiLstmLayer>,
}

impl EncoderParams {
    pub fn register(
        ps: &mut ParamSet,
        init: &mut Initializer,
        embed_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { embed_dim } else { 2 * hidden };
                BiLstmLayer {
                    forward: LstmParams::register(ps, init, &format!("enc.{l}.fwd"), input, hidden),
                    backward: LstmParams::register(
                        ps,
                        init,
                        &format!("enc.{l}.bwd"),
                        input,
                        hidden,
                    ),
                }
            })
            .collect();
        EncoderParams { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].forward.hidden
    }

    /// Width of word and utterance states: both directions concatenated.
    pub fn state_dim(&self) -> usize {
        2 * self.hidden()
    }
}

/// Per-token states and the utterance vector for one utterance.
#[derive(Clone, Debug)]
pub struct EncodedUtterance {
    /// `s_t = [forward h_t; backward h_t]` from the top layer, t = 1..n.
    pub words: Vec<Var>,
    /// `[forward h_n; backward h_1]`: each direction's final state.
    pub utterance: Var,
}

fn run_direction(
    tape: &mut Tape,
    p: &LstmParams,
    inputs: &[Var],
    reverse: bool,
) -> Result<Vec<Var>, NumError> {
    let zero = tape.input(crate::numcore::Tensor::zeros(&[p.hidden]));
    let (mut h, mut c) = (zero, zero);
    let mut out = vec![zero; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        (h, c) = lstm_step(tape, p, inputs[t], h, c)?;
        out[t] = h;
    }
    Ok(out)
}

pub fn encode_utterance(
    tape: &mut Tape,
    embed: ParamId,
    enc: &EncoderParams,
    tokens: &[TokenId],
) -> Result<EncodedUtterance, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyUtterance);
    }
    let vocab = tape.params().get(embed).rows();
    let mut inputs = tokens
        .iter()
        .map(|&t| {
            if t.index() >= vocab {
                return Err(ModelError::Vocab {
                    id: t.0,
                    size: vocab,
                });
            }
            Ok(tape.embed_row(embed, t.index())?)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = tokens.len();
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for layer in &enc.layers {
        fwd = run_direction(tape, &layer.forward, &inputs, false)?;
        bwd = run_direction(tape, &layer.backward, &inputs, true)?;
        inputs = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect();
    }
    let utterance = tape.concat(&[fwd[n - 1], bwd[0]]);
    Ok(EncodedUtterance {
        words: inputs,
        utterance,
    })
}
