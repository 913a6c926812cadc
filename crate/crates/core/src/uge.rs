//! Utterance-level graph encoder.
//!
//! Each iteration updates every node synchronously from the previous
//! iteration's states:
//!
//! ```text
//! s_i <- s_i + sqh(dE_i) * dE_i + sqh(dU_i) * dU_i
//! dE_i = sum over reply predecessors i' of  s_i' (x) s_i
//! dU_i = sum over speaker predecessors i' of s_i' (*) s_i
//! sqh(v) = (alpha + |v|) / (1 + |v|)
//! ```
//!
//! where `(x)` and `(*)` are GRU-style gated update operators with separate
//! parameters. Backward iterations take predecessors from the transposed
//! edge matrices. [`encode_graph`] runs `N` backward then `N` forward
//! iterations.

use crate::corpus::{AdjacencyMatrix, DialogueGraph};
use crate::numcore::{Initializer, NumError, ParamId, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    /// Squash floor, in (0, 1).
    pub alpha: f64,
    /// Iterations per direction.
    pub iterations: usize,
    pub speaker_flow: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            alpha: 0.25,
            iterations: 3,
            speaker_flow: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Parameters of one gated update operator; each matrix maps `2·d → d`.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub wx: ParamId,
    pub bx: ParamId,
    pub wr: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
}

impl GateParams {
    pub fn register(ps: &mut ParamSet, init: &mut Initializer, prefix: &str, dim: usize) -> Self {
        GateParams {
            wx: ps.register(format!("{prefix}.wx"), init.xavier(dim, 2 * dim)),
            bx: ps.register(format!("{prefix}.bx"), init.zeros(dim)),
            wr: ps.register(format!("{prefix}.wr"), init.xavier(dim, 2 * dim)),
            br: ps.register(format!("{prefix}.br"), init.zeros(dim)),
            wh: ps.register(format!("{prefix}.wh"), init.xavier(dim, 2 * dim)),
            bh: ps.register(format!("{prefix}.bh"), init.zeros(dim)),
        }
    }
}

/// Reply-edge and speaker-edge operators. When the `*_backward` sets are
/// present, backward iterations use them instead of the shared ones.
#[derive(Clone, Debug)]
pub struct FlowParams {
    pub reply: GateParams,
    pub speaker: GateParams,
    pub reply_backward: Option<GateParams>,
    pub speaker_backward: Option<GateParams>,
}

impl FlowParams {
    pub fn register(
        ps: &mut ParamSet,
        init: &mut Initializer,
        dim: usize,
        separate_directions: bool,
    ) -> Self {
        let reply = GateParams::register(ps, init, "flow.reply", dim);
        let speaker = GateParams::register(ps, init, "flow.speaker", dim);
        let (reply_backward, speaker_backward) = if separate_directions {
            (
                Some(GateParams::register(ps, init, "flow.reply_bwd", dim)),
                Some(GateParams::register(ps, init, "flow.speaker_bwd", dim)),
            )
        } else {
            (None, None)
        };
        FlowParams {
            reply,
            speaker,
            reply_backward,
            speaker_backward,
        }
    }

    fn gates(&self, direction: Direction) -> (&GateParams, &GateParams) {
        match direction {
            Direction::Forward => (&self.reply, &self.speaker),
            Direction::Backward => (
                self.reply_backward.as_ref().unwrap_or(&self.reply),
                self.speaker_backward.as_ref().unwrap_or(&self.speaker),
            ),
        }
    }
}

/// `(alpha + |delta|) / (1 + |delta|)`.
pub fn squash(delta: &[f64], alpha: f64) -> f64 {
    let n = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    (alpha + n) / (1.0 + n)
}

/// [`squash`] recorded on the tape, as a scalar node.
pub fn squash_var(tape: &mut Tape, delta: Var, alpha: f64) -> Var {
    let n = tape.norm(delta);
    let num = tape.affine(n, 1.0, alpha);
    let den = tape.affine(n, 1.0, 1.0);
    tape.div(num, den).expect("scalar operands")
}

/// Information `s_pred` contributes to `s_cur`:
///
/// ```text
/// x = σ(Wx·[s_pred, s_cur] + bx)
/// r = σ(Wr·[s_pred, s_cur] + br)
/// h = tanh(Wh·[r * s_pred, s_cur] + bh)
/// delta = (1 - x) * s_pred + x * h
/// ```
pub fn update_operator(
    tape: &mut Tape,
    gates: &GateParams,
    s_pred: Var,
    s_cur: Var,
) -> Result<Var, NumError> {
    let (dp, dc) = (tape.value(s_pred).len(), tape.value(s_cur).len());
    if dp != dc {
        return Err(NumError::Shape(format!(
            "update operator on states of width {dp} and {dc}"
        )));
    }
    let pair = tape.concat(&[s_pred, s_cur]);
    let gate = |tape: &mut Tape, w: ParamId, b: ParamId, input: Var| -> Result<Var, NumError> {
        let w = tape.param(w);
        let b = tape.param(b);
        let z = tape.matvec(w, input)?;
        tape.add(z, b)
    };
    let x = gate(tape, gates.wx, gates.bx, pair)?;
    let x = tape.sigmoid(x);
    let r = gate(tape, gates.wr, gates.br, pair)?;
    let r = tape.sigmoid(r);
    let reset = tape.mul(r, s_pred)?;
    let cand_in = tape.concat(&[reset, s_cur]);
    let h = gate(tape, gates.wh, gates.bh, cand_in)?;
    let h = tape.tanh(h);
    let keep = tape.one_minus(x);
    let kept = tape.mul(keep, s_pred)?;
    let fresh = tape.mul(x, h)?;
    tape.add(kept, fresh)
}

fn oriented(a: &AdjacencyMatrix, direction: Direction) -> AdjacencyMatrix {
    match direction {
        Direction::Forward => a.clone(),
        Direction::Backward => a.transpose(),
    }
}

fn apply_update(
    tape: &mut Tape,
    state: Var,
    reply_agg: Option<Var>,
    speaker_agg: Option<Var>,
    alpha: f64,
) -> Result<Var, NumError> {
    let mut next = state;
    for agg in [reply_agg, speaker_agg].into_iter().flatten() {
        let coef = squash_var(tape, agg, alpha);
        let scaled = tape.scale_by(agg, coef)?;
        next = tape.add(next, scaled)?;
    }
    Ok(next)
}

/// Updated state of node `i` (0-based), reading only `states`.
pub fn node_step(
    tape: &mut Tape,
    i: usize,
    states: &[Var],
    graph: &DialogueGraph,
    direction: Direction,
    flow: &FlowParams,
    config: &FlowConfig,
) -> Result<Var, NumError> {
    let (reply_gates, speaker_gates) = flow.gates(direction);
    let reply = oriented(&graph.reply, direction);
    let deltas = reply
        .predecessors(i)
        .into_iter()
        .map(|p| update_operator(tape, reply_gates, states[p], states[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let reply_agg = if deltas.is_empty() {
        None
    } else {
        Some(tape.sum(&deltas)?)
    };

    let speaker_agg = if config.speaker_flow {
        let speaker = oriented(&graph.speaker, direction);
        let deltas = speaker
            .predecessors(i)
            .into_iter()
            .map(|p| update_operator(tape, speaker_gates, states[p], states[i]))
            .collect::<Result<Vec<_>, _>>()?;
        if deltas.is_empty() {
            None
        } else {
            Some(tape.sum(&deltas)?)
        }
    } else {
        None
    };
    apply_update(tape, states[i], reply_agg, speaker_agg, config.alpha)
}

/// Synchronous node-by-node iteration.
pub fn flow_iteration_nodewise(
    tape: &mut Tape,
    states: &StateMatrix,
    graph: &DialogueGraph,
    direction: Direction,
    flow: &FlowParams,
    config: &FlowConfig,
) -> Result<StateMatrix, NumError> {
    let prev = states.diagonal();
    let next = (0..prev.len())
        .map(|i| node_step(tape, i, prev, graph, direction, flow, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(bsm(next))
}

/// Block-diagonal state matrix: node `i`'s state occupies diagonal block
/// `(i, i)`; every off-diagonal block is zero, so only the diagonal is kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateMatrix {
    diag: Vec<Var>,
}

/// Places `states` on the diagonal of a [`StateMatrix`].
pub fn bsm(states: Vec<Var>) -> StateMatrix {
    assert!(!states.is_empty(), "state matrix needs at least one node");
    StateMatrix { diag: states }
}

impl StateMatrix {
    pub fn diagonal(&self) -> &[Var] {
        &self.diag
    }

    pub fn node(&self, i: usize) -> Var {
        self.diag[i]
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Dense `[m·d, m]` matrix: column `j` holds `s_j` in rows `j·d..(j+1)·d`.
    pub fn to_dense(&self, tape: &Tape) -> Tensor {
        let m = self.diag.len();
        let d = tape.value(self.diag[0]).len();
        let mut data = vec![0.0; m * d * m];
        for (j, &s) in self.diag.iter().enumerate() {
            for (k, &v) in tape.value(s).data().iter().enumerate() {
                data[(j * d + k) * m + j] = v;
            }
        }
        Tensor::matrix(m * d, m, data).expect("shape matches")
    }

    /// Values of every node state.
    pub fn values(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.diag
            .iter()
            .map(|&v| tape.value(v).data().to_vec())
            .collect()
    }
}

/// Blocks of `𝕊 · A`, where block `(k, j)` is `Σ_i 𝕊_(k,i) a_(i,j)`; with a
/// block-diagonal `𝕊` that is `s_k` when `a_(k,j)` is set and zero otherwise.
fn state_times_adjacency(
    tape: &mut Tape,
    states: &StateMatrix,
    a: &AdjacencyMatrix,
) -> Result<Vec<Vec<Option<Var>>>, NumError> {
    let m = states.len();
    let mut blocks = vec![vec![None; m]; m];
    for (k, row) in blocks.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let terms: Vec<Var> = (0..m)
                .filter(|&i| i == k && a.get(i, j))
                .map(|_| states.node(k))
                .collect();
            *cell = match terms.len() {
                0 => None,
                1 => Some(terms[0]),
                _ => Some(tape.sum(&terms)?),
            };
        }
    }
    Ok(blocks)
}

/// Aggregated updates per receiving node: blocks of `(𝕊·A) ⊗ 𝕊` summed over
/// each block column.
fn aggregate_updates(
    tape: &mut Tape,
    states: &StateMatrix,
    a: &AdjacencyMatrix,
    gates: &GateParams,
) -> Result<Vec<Option<Var>>, NumError> {
    let product = state_times_adjacency(tape, states, a)?;
    let m = states.len();
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut terms = Vec::new();
        for row in &product {
            if let Some(block) = row[j] {
                terms.push(update_operator(tape, gates, block, states.node(j))?);
            }
        }
        out.push(if terms.is_empty() {
            None
        } else {
            Some(tape.sum(&terms)?)
        });
    }
    Ok(out)
}

/// One iteration in block-matrix form: `𝕊 + BSM(η ⊙ ΔE + λ ⊙ ΔU)`, using
/// `E, U` for forward flow and `Eᵀ, Uᵀ` for backward flow.
pub fn flow_iteration(
    tape: &mut Tape,
    states: &StateMatrix,
    graph: &DialogueGraph,
    direction: Direction,
    flow: &FlowParams,
    config: &FlowConfig,
) -> Result<StateMatrix, NumError> {
    let (reply_gates, speaker_gates) = flow.gates(direction);
    let reply = oriented(&graph.reply, direction);
    let delta_e = aggregate_updates(tape, states, &reply, reply_gates)?;
    let delta_u = if config.speaker_flow {
        let speaker = oriented(&graph.speaker, direction);
        aggregate_updates(tape, states, &speaker, speaker_gates)?
    } else {
        vec![None; states.len()]
    };
    let next = states
        .diagonal()
        .iter()
        .zip(delta_e.into_iter().zip(delta_u))
        .map(|(&s, (de, du))| apply_update(tape, s, de, du, config.alpha))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(bsm(next))
}

/// `N` backward iterations followed by `N` forward iterations.
pub fn encode_graph(
    tape: &mut Tape,
    initial: Vec<Var>,
    graph: &DialogueGraph,
    flow: &FlowParams,
    config: &FlowConfig,
) -> Result<StateMatrix, NumError> {
    if graph.vertex_count() != initial.len() {
        return Err(NumError::Shape(format!(
            "{} initial states for a graph of {} vertices",
            initial.len(),
            graph.vertex_count()
        )));
    }
    let mut states = bsm(initial);
    for direction in [Direction::Backward, Direction::Forward] {
        for _ in 0..config.iterations {
            states = flow_iteration(tape, &states, graph, direction, flow, config)?;
        }
    }
    Ok(states)
}
