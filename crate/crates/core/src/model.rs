//! The full network: word encoder, graph encoder, and decoder over one
//! parameter set.

use crate::corpus::{build_graph, Session, TokenId};
use crate::decoder::{self, DecodeMode, DecoderParams, EncodedContext};
use crate::encoder::{encode_utterance, EncoderParams};
use crate::error::ModelError;
use crate::numcore::{Gradients, Initializer, ParamId, ParamSet, Tape, Var};
use crate::uge::{encode_graph, FlowConfig, FlowParams, StateMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Per-direction LSTM width; utterance states are twice this.
    pub hidden_dim: usize,
    pub layers: usize,
    pub readout_dim: usize,
}

impl ModelDims {
    pub fn state_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

/// Which word states the decoder attends over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttendScope {
    /// Only the utterance the response addresses.
    #[default]
    Parent,
    /// Every context utterance, concatenated in order.
    Session,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    pub flow: FlowConfig,
    /// Separate operator parameters for backward iterations.
    pub separate_direction_params: bool,
    pub attend: AttendScope,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            flow: FlowConfig::default(),
            separate_direction_params: false,
            attend: AttendScope::Parent,
        }
    }
}

/// Graph-structured encoder-decoder.
#[derive(Clone, Debug)]
pub struct Gsn {
    pub dims: ModelDims,
    pub options: ModelOptions,
    pub params: ParamSet,
    pub embed: ParamId,
    pub encoder: EncoderParams,
    pub flow: FlowParams,
    pub decoder: DecoderParams,
}

/// Intermediate results of encoding one session's context.
#[derive(Clone, Debug)]
pub struct EncodedSession {
    pub word_states: Vec<Vec<Var>>,
    pub initial: Vec<Var>,
    pub graph_states: StateMatrix,
    pub context: EncodedContext,
}

impl Gsn {
    pub fn new(dims: ModelDims, options: ModelOptions, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut init = Initializer::new(seed);
        let embed = params.register("embed", init.xavier(dims.vocab_size, dims.embed_dim));
        let encoder = EncoderParams::register(
            &mut params,
            &mut init,
            dims.embed_dim,
            dims.hidden_dim,
            dims.layers,
        );
        let flow = FlowParams::register(
            &mut params,
            &mut init,
            dims.state_dim(),
            options.separate_direction_params,
        );
        let decoder = DecoderParams::register(
            &mut params,
            &mut init,
            dims.vocab_size,
            dims.embed_dim,
            dims.state_dim(),
            dims.readout_dim,
            dims.layers,
        );
        Gsn {
            dims,
            options,
            params,
            embed,
            encoder,
            flow,
            decoder,
        }
    }

    /// Encodes every context utterance, runs the graph encoder over the
    /// context graph, and selects what the decoder conditions on.
    pub fn encode_session(
        &self,
        tape: &mut Tape,
        session: &Session<TokenId>,
    ) -> Result<EncodedSession, ModelError> {
        let parent = session.target_parent().ok_or(ModelError::NoTargetParent)? - 1;
        let context = session.context();
        let mut word_states = Vec::with_capacity(context.len());
        let mut initial = Vec::with_capacity(context.len());
        for u in context {
            let enc = encode_utterance(tape, self.embed, &self.encoder, &u.tokens)?;
            word_states.push(enc.words);
            initial.push(enc.utterance);
        }
        let graph = build_graph(session).prefix(context.len());
        let graph_states = encode_graph(
            tape,
            initial.clone(),
            &graph,
            &self.flow,
            &self.options.flow,
        )?;
        let words = match self.options.attend {
            AttendScope::Parent => word_states[parent].clone(),
            AttendScope::Session => word_states.concat(),
        };
        let context = EncodedContext {
            h0: graph_states.node(parent),
            words,
        };
        Ok(EncodedSession {
            word_states,
            initial,
            graph_states,
            context,
        })
    }

    /// Teacher-forced loss of the session's target response.
    pub fn session_loss(
        &self,
        tape: &mut Tape,
        session: &Session<TokenId>,
    ) -> Result<Var, ModelError> {
        let encoded = self.encode_session(tape, session)?;
        decoder::sequence_loss(
            tape,
            self.embed,
            &self.decoder,
            &encoded.context,
            &session.target_utterance().tokens,
        )
    }

    pub fn loss(&self, session: &Session<TokenId>) -> Result<f64, ModelError> {
        let mut tape = Tape::new(&self.params);
        let loss = self.session_loss(&mut tape, session)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(crate::numcore::NumError::Numerical(format!("loss is {value}")).into());
        }
        Ok(value)
    }

    pub fn loss_and_grads(
        &self,
        session: &Session<TokenId>,
    ) -> Result<(f64, Gradients), ModelError> {
        let mut tape = Tape::new(&self.params);
        let loss = self.session_loss(&mut tape, session)?;
        let grads = tape.backward(loss)?;
        Ok((tape.scalar(loss), grads))
    }

    pub fn generate(
        &self,
        session: &Session<TokenId>,
        mode: DecodeMode,
        max_len: usize,
    ) -> Result<Vec<TokenId>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let encoded = self.encode_session(&mut tape, session)?;
        decoder::generate(
            &mut tape,
            self.embed,
            &self.decoder,
            &encoded.context,
            mode,
            max_len,
        )
    }
}
