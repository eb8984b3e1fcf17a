use super::attention::{AdditiveAttention, AttentionMemory, PreparedMemory};
use crate::encoders::{Affine, LstmCell, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// How the first decoder state is derived from the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    /// Mean of the per-position `[h←; h→]` states.
    SeqAverage,
    /// Mean of the final node states.
    GraphAverage,
    /// `W·[h←_1; h→_N] + b`.
    SeqDense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub memory_dim: usize,
    /// Set for the doubly attentive decoder.
    pub graph_memory_dim: Option<usize>,
    pub attention_dim: usize,
    pub vocab_size: usize,
    pub coverage: bool,
    pub copy: bool,
    /// Input width of the dense initializer (`SeqDense` only).
    pub dense_init_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub s: Var,
    pub cell: Var,
    /// Context over the (sequential or only) memory.
    pub context: Var,
    pub graph_context: Option<Var>,
    pub coverage: Option<Var>,
    pub step: usize,
}

/// Plain values of a [`DecoderState`], detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueState {
    pub s: Vec<f64>,
    pub cell: Vec<f64>,
    pub context: Vec<f64>,
    pub graph_context: Option<Vec<f64>>,
    pub coverage: Option<Vec<f64>>,
    pub step: usize,
}

impl DecoderState {
    pub fn to_values(&self, tape: &Tape) -> ValueState {
        ValueState {
            s: tape.value(self.s),
            cell: tape.value(self.cell),
            context: tape.value(self.context),
            graph_context: self.graph_context.map(|v| tape.value(v)),
            coverage: self.coverage.map(|v| tape.value(v)),
            step: self.step,
        }
    }
}

impl ValueState {
    pub fn to_tape(&self, tape: &Tape) -> DecoderState {
        DecoderState {
            s: tape.constant(self.s.clone()),
            cell: tape.constant(self.cell.clone()),
            context: tape.constant(self.context.clone()),
            graph_context: self
                .graph_context
                .as_ref()
                .map(|v| tape.constant(v.clone())),
            coverage: self.coverage.as_ref().map(|v| tape.constant(v.clone())),
            step: self.step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: DecoderState,
    pub p_vocab: Var,
    /// Attention over the (sequential or only) memory.
    pub alpha: Var,
    pub graph_alpha: Option<Var>,
}

/// Copy switch `θ = σ(w_μ·ζ + w_s·s + w_e·e + b)`.
#[derive(Debug, Clone)]
pub struct CopySwitch {
    w_mu: ParamId,
    w_s: ParamId,
    w_e: ParamId,
    b: ParamId,
}

impl CopySwitch {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        context_dim: usize,
        hidden_dim: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        Ok(CopySwitch {
            w_mu: store.add(&format!("{prefix}.w_mu"), &[context_dim])?,
            w_s: store.add(&format!("{prefix}.w_s"), &[hidden_dim])?,
            w_e: store.add(&format!("{prefix}.w_e"), &[embed_dim])?,
            b: store.add_zeros(&format!("{prefix}.b"), &[1])?,
        })
    }

    pub fn theta(&self, tape: &Tape, context: Var, s: Var, e: Var) -> Result<Var> {
        let parts = [
            tape.dot(tape.param(self.w_mu), context)?,
            tape.dot(tape.param(self.w_s), s)?,
            tape.dot(tape.param(self.w_e), e)?,
            tape.param(self.b),
        ];
        Ok(tape.sigmoid(tape.add_n(&parts)?))
    }
}

/// Source tokens mapped into the extended output space: vocabulary
/// indices first, then source tokens missing from the vocabulary in order
/// of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceMap {
    pub ids: Vec<usize>,
    pub oov: Vec<String>,
    pub vocab_size: usize,
}

impl SourceMap {
    pub fn new(vocab: &Vocab, source_tokens: &[String]) -> Self {
        let mut oov: Vec<String> = Vec::new();
        let ids = source_tokens
            .iter()
            .map(|t| match vocab.find(t) {
                Some(i) => i,
                None => {
                    let k = oov.iter().position(|o| o == t).unwrap_or_else(|| {
                        oov.push(t.clone());
                        oov.len() - 1
                    });
                    vocab.len() + k
                }
            })
            .collect();
        SourceMap {
            ids,
            oov,
            vocab_size: vocab.len(),
        }
    }

    pub fn extended_size(&self) -> usize {
        self.vocab_size + self.oov.len()
    }

    /// Output id of `token`: its vocabulary index, else its copy slot,
    /// else `UNK`.
    pub fn target_id(&self, vocab: &Vocab, token: &str) -> usize {
        vocab
            .find(token)
            .or_else(|| {
                self.oov
                    .iter()
                    .position(|o| o == token)
                    .map(|k| self.vocab_size + k)
            })
            .unwrap_or(0)
    }

    pub fn token<'a>(&'a self, vocab: &'a Vocab, id: usize) -> &'a str {
        if id < self.vocab_size {
            vocab.token(id)
        } else {
            &self.oov[id - self.vocab_size]
        }
    }
}

/// `p_final = θ·p_vocab + (1 − θ)·p_attn` over the extended space, where
/// `p_attn` sums attention by output id.
pub fn copy_distribution(
    tape: &Tape,
    theta: Var,
    p_vocab: Var,
    alpha: Var,
    source: &SourceMap,
) -> Result<Var> {
    let ext = source.extended_size();
    if tape.len(p_vocab) != source.vocab_size {
        return Err(Error::Shape {
            op: "copy vocabulary",
            left: vec![tape.len(p_vocab)],
            right: vec![source.vocab_size],
        });
    }
    let vocab_part = tape.scatter(p_vocab, (0..source.vocab_size).collect(), ext)?;
    let attn_part = tape.scatter(alpha, source.ids.clone(), ext)?;
    tape.add(
        tape.scalar_mul(theta, vocab_part)?,
        tape.scalar_mul(tape.one_minus(theta), attn_part)?,
    )
}

/// The attention LSTM decoder (`decoder.*` by convention).
///
/// Its LSTM reads `[e_m; ζ_{m−1}]`; the output layer reads `[s_m; ζ_m]`,
/// plus `ζ̃_m` when a graph memory is configured.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub lstm: LstmCell,
    pub attention: AdditiveAttention,
    pub graph_attention: Option<AdditiveAttention>,
    pub output: Affine,
    pub copy: Option<CopySwitch>,
    pub dense_init: Option<Affine>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: DecoderConfig) -> Result<Self> {
        let (d, m) = (cfg.hidden_dim, cfg.memory_dim);
        if d == 0 || m == 0 || cfg.vocab_size == 0 || cfg.attention_dim == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        if cfg.graph_memory_dim.is_some() && cfg.copy {
            return Err(Error::Config(
                "copy is not supported with a graph memory".into(),
            ));
        }
        let graph_attention = match cfg.graph_memory_dim {
            Some(g) => Some(AdditiveAttention::new(
                store,
                &format!("{prefix}.graph_att"),
                g,
                d,
                cfg.attention_dim,
                false,
            )?),
            None => None,
        };
        let out_in = d + m + cfg.graph_memory_dim.unwrap_or(0);
        Ok(Decoder {
            lstm: LstmCell::new(store, &format!("{prefix}.lstm"), cfg.embed_dim + m, d)?,
            attention: AdditiveAttention::new(
                store,
                &format!("{prefix}.att"),
                m,
                d,
                cfg.attention_dim,
                cfg.coverage,
            )?,
            graph_attention,
            output: Affine::new(store, &format!("{prefix}.out"), cfg.vocab_size, out_in)?,
            copy: if cfg.copy {
                Some(CopySwitch::new(
                    store,
                    &format!("{prefix}.copy"),
                    m,
                    d,
                    cfg.embed_dim,
                )?)
            } else {
                None
            },
            dense_init: match cfg.dense_init_dim {
                Some(k) => Some(Affine::new(store, &format!("{prefix}.init"), d, k)?),
                None => None,
            },
            cfg,
        })
    }

    pub fn prepare(&self, tape: &Tape, memory: AttentionMemory) -> Result<PreparedMemory> {
        self.attention.prepare(tape, memory)
    }

    pub fn prepare_graph(&self, tape: &Tape, memory: AttentionMemory) -> Result<PreparedMemory> {
        self.graph_attention
            .as_ref()
            .ok_or_else(|| Error::invalid("decoder has no graph attention"))?
            .prepare(tape, memory)
    }

    /// `states` are the vectors to average, or for `SeqDense` exactly the
    /// pair `[h←_1, h→_N]`.
    pub fn init_state(
        &self,
        tape: &Tape,
        kind: InitKind,
        states: &[Var],
        memory_len: usize,
    ) -> Result<DecoderState> {
        if states.is_empty() {
            return Err(Error::invalid(
                "decoder initialization from an empty encoder output",
            ));
        }
        let s = match kind {
            InitKind::SeqAverage | InitKind::GraphAverage => tape.mean(states)?,
            InitKind::SeqDense => {
                let dense = self.dense_init.as_ref().ok_or_else(|| {
                    Error::Config("dense initialization needs dense_init_dim".into())
                })?;
                dense.apply(tape, tape.concat(states)?)?
            }
        };
        if tape.len(s) != self.cfg.hidden_dim {
            return Err(Error::Shape {
                op: "decoder initial state",
                left: vec![tape.len(s)],
                right: vec![self.cfg.hidden_dim],
            });
        }
        Ok(DecoderState {
            s,
            cell: tape.zeros(self.cfg.hidden_dim),
            context: tape.zeros(self.cfg.memory_dim),
            graph_context: self.cfg.graph_memory_dim.map(|g| tape.zeros(g)),
            coverage: if self.cfg.coverage {
                Some(tape.zeros(memory_len))
            } else {
                None
            },
            step: 0,
        })
    }

    /// One step of the single-memory decoder with coverage (when
    /// configured).
    pub fn step(
        &self,
        tape: &Tape,
        prev: &DecoderState,
        e: Var,
        memory: &PreparedMemory,
    ) -> Result<StepOutput> {
        if let Some(g) = prev.coverage {
            if tape.len(g) != memory.len() {
                return Err(Error::Shape {
                    op: "coverage",
                    left: vec![tape.len(g)],
                    right: vec![memory.len()],
                });
            }
        }
        let input = tape.concat(&[e, prev.context])?;
        let (s, cell) = self.lstm.step(tape, input, prev.s, prev.cell)?;
        let (alpha, context) = self.attention.attend(tape, memory, s, prev.coverage)?;
        let coverage = match prev.coverage {
            Some(g) => Some(tape.add(g, alpha)?),
            None => None,
        };
        let logits = self.output.apply(tape, tape.concat(&[s, context])?)?;
        Ok(StepOutput {
            state: DecoderState {
                s,
                cell,
                context,
                graph_context: None,
                coverage,
                step: prev.step + 1,
            },
            p_vocab: tape.softmax(logits)?,
            alpha,
            graph_alpha: None,
        })
    }

    /// One step with separate attentions over a sequential and a graph
    /// memory; only the sequential context feeds the next LSTM input.
    pub fn doubly_step(
        &self,
        tape: &Tape,
        prev: &DecoderState,
        e: Var,
        seq_memory: &PreparedMemory,
        graph_memory: &PreparedMemory,
    ) -> Result<StepOutput> {
        let graph_att = self
            .graph_attention
            .as_ref()
            .ok_or_else(|| Error::invalid("decoder has no graph attention"))?;
        let input = tape.concat(&[e, prev.context])?;
        let (s, cell) = self.lstm.step(tape, input, prev.s, prev.cell)?;
        let (alpha, context) = self.attention.attend(tape, seq_memory, s, None)?;
        let (graph_alpha, graph_context) = graph_att.attend(tape, graph_memory, s, None)?;
        let logits = self
            .output
            .apply(tape, tape.concat(&[s, context, graph_context])?)?;
        Ok(StepOutput {
            state: DecoderState {
                s,
                cell,
                context,
                graph_context: Some(graph_context),
                coverage: None,
                step: prev.step + 1,
            },
            p_vocab: tape.softmax(logits)?,
            alpha,
            graph_alpha: Some(graph_alpha),
        })
    }

    /// Mixes in the copy distribution when copy is enabled; otherwise
    /// returns `p_vocab`.
    pub fn output_distribution(
        &self,
        tape: &Tape,
        out: &StepOutput,
        e: Var,
        source: &SourceMap,
    ) -> Result<Var> {
        match &self.copy {
            Some(sw) => {
                let theta = sw.theta(tape, out.state.context, out.state.s, e)?;
                copy_distribution(tape, theta, out.p_vocab, out.alpha, source)
            }
            None => Ok(out.p_vocab),
        }
    }
}
