use super::{embed_inputs, GraphEncoder};
use crate::config::{EncoderKind, TrainConfig};
use crate::decoders::{
    beam_search, AttentionMemory, BeamConfig, Decoder, DecoderConfig, FrozenMemory, InitKind,
    SourceMap, ValueState,
};
use crate::encoders::{BiLstm, CharEncoder, EmbeddingTable, GnnConfig, Vocab, BOS, EOS};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{linearize_amr, LabeledGraph, TaskInstance};
use crate::tensor::{ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct GenInstance {
    pub graph: LabeledGraph,
    /// Source sentence for the dual encoder.
    pub source: Option<Vec<String>>,
    pub target: Option<Vec<String>>,
    /// Linearized graph for the sequential encoder.
    pub linearized: Option<Vec<String>>,
}

impl GenInstance {
    pub fn from_task(inst: &TaskInstance, linearize: bool) -> Result<Self> {
        let graph = inst.graph()?;
        if graph.is_empty() {
            return Err(Error::invalid(format!(
                "instance `{}` has an empty graph",
                inst.id
            )));
        }
        let linearized = if linearize {
            Some(linearize_amr(&graph)?)
        } else {
            None
        };
        Ok(GenInstance {
            graph,
            source: inst.source.clone(),
            target: inst.target.clone(),
            linearized,
        })
    }
}

/// Encoder output ready for decoding.
pub struct Encoded {
    pub memory: AttentionMemory,
    pub graph_memory: Option<AttentionMemory>,
    pub init_states: Vec<Var>,
    pub init_kind: InitKind,
}

/// What the shared teacher-forcing and search code needs from a model.
pub trait Generator: Sync {
    fn decoder(&self) -> &Decoder;
    fn target_table(&self) -> &EmbeddingTable;
    fn dropout(&self) -> f64;
    fn encode(&self, tape: &Tape, inst: &GenInstance) -> Result<Encoded>;
}

struct Prepared {
    memory: crate::decoders::PreparedMemory,
    graph_memory: Option<crate::decoders::PreparedMemory>,
    source: SourceMap,
}

fn prepare<G: Generator + ?Sized>(
    model: &G,
    tape: &Tape,
    enc: Encoded,
) -> Result<(Prepared, crate::decoders::DecoderState)> {
    let dec = model.decoder();
    let source = SourceMap::new(&model.target_table().vocab, &enc.memory.source_tokens);
    let len = enc.memory.len();
    let state = dec.init_state(tape, enc.init_kind, &enc.init_states, len)?;
    let memory = dec.prepare(tape, enc.memory)?;
    let graph_memory = match enc.graph_memory {
        Some(g) => Some(dec.prepare_graph(tape, g)?),
        None => None,
    };
    Ok((
        Prepared {
            memory,
            graph_memory,
            source,
        },
        state,
    ))
}

/// One decoder step from input embedding `e`; returns the next state and
/// the output distribution.
fn step<G: Generator + ?Sized>(
    model: &G,
    tape: &Tape,
    prep: &Prepared,
    state: &crate::decoders::DecoderState,
    e: Var,
) -> Result<(crate::decoders::DecoderState, Var)> {
    let dec = model.decoder();
    let out = match &prep.graph_memory {
        Some(g) => dec.doubly_step(tape, state, e, &prep.memory, g)?,
        None => dec.step(tape, state, e, &prep.memory)?,
    };
    let p = dec.output_distribution(tape, &out, e, &prep.source)?;
    Ok((out.state, p))
}

/// Per-step output distributions under teacher forcing, and the gold ids
/// they are scored against (the target followed by `</s>`).
pub fn teacher_forced<G: Generator + ?Sized>(
    model: &G,
    tape: &Tape,
    inst: &GenInstance,
) -> Result<(Vec<Var>, Vec<usize>)> {
    let target = inst
        .target
        .as_ref()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::invalid("generation needs a non-empty target"))?;
    let enc = model.encode(tape, inst)?;
    let (prep, mut state) = prepare(model, tape, enc)?;
    let table = model.target_table();
    let copy = model.decoder().copy.is_some();
    let mut dists = Vec::with_capacity(target.len() + 1);
    let mut gold = Vec::with_capacity(target.len() + 1);
    let mut prev = BOS;
    for tok in target
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(EOS))
    {
        let e = tape.dropout(table.lookup(tape, prev)?, model.dropout())?;
        let (next, p) = step(model, tape, &prep, &state, e)?;
        dists.push(p);
        gold.push(if copy {
            prep.source.target_id(&table.vocab, tok)
        } else {
            table.vocab.get(tok)
        });
        state = next;
        prev = tok;
    }
    Ok((dists, gold))
}

/// Search state that lives outside any tape.
#[derive(Debug, Clone)]
struct Frozen {
    memory: FrozenMemory,
    graph_memory: Option<FrozenMemory>,
    source: SourceMap,
}

fn freeze<G: Generator + ?Sized>(
    model: &G,
    store: &ParamStore,
    inst: &GenInstance,
) -> Result<(Frozen, ValueState)> {
    let tape = Tape::new(store);
    let enc = model.encode(&tape, inst)?;
    let (prep, state) = prepare(model, &tape, enc)?;
    Ok((
        Frozen {
            memory: prep.memory.freeze(&tape),
            graph_memory: prep.graph_memory.as_ref().map(|g| g.freeze(&tape)),
            source: prep.source,
        },
        state.to_values(&tape),
    ))
}

/// Log-probabilities of the next output id after `last`, each step on a
/// fresh tape so that hypotheses can expand in parallel.
fn search_step<G: Generator + ?Sized>(
    model: &G,
    store: &ParamStore,
    frozen: &Frozen,
    state: &ValueState,
    last: usize,
) -> Result<(ValueState, Vec<f64>)> {
    let tape = Tape::new(store);
    let table = model.target_table();
    let prep = Prepared {
        memory: frozen.memory.thaw(&tape),
        graph_memory: frozen.graph_memory.as_ref().map(|g| g.thaw(&tape)),
        source: frozen.source.clone(),
    };
    let input = if last < table.vocab.len() { last } else { 0 };
    let e = table.lookup_index(&tape, input)?;
    let (next, p) = step(model, &tape, &prep, &state.to_tape(&tape), e)?;
    let logp = tape.with_value(p, |p| p.iter().map(|x| x.ln()).collect());
    Ok((next.to_values(&tape), logp))
}

fn to_tokens(frozen: &Frozen, vocab: &Vocab, ids: &[usize]) -> Vec<String> {
    ids.iter()
        .map(|&i| frozen.source.token(vocab, i).to_string())
        .collect()
}

/// Beam search with `width` hypotheses, at most `max_len` output tokens.
pub fn beam_decode<G: Generator + ?Sized>(
    model: &G,
    store: &ParamStore,
    inst: &GenInstance,
    exec: &Exec,
    width: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    let (frozen, init) = freeze(model, store, inst)?;
    let vocab = &model.target_table().vocab;
    let cfg = BeamConfig {
        width,
        max_len,
        bos: vocab.get(BOS),
        eos: vocab.get(EOS),
    };
    let best = beam_search(exec, init, &cfg, |s, last| {
        search_step(model, store, &frozen, s, last)
    })?;
    Ok(to_tokens(&frozen, vocab, &best.tokens))
}

/// Repeatedly emits the most probable id (lowest id on ties) until `</s>`
/// or `max_len` tokens.
pub fn greedy_decode<G: Generator + ?Sized>(
    model: &G,
    store: &ParamStore,
    inst: &GenInstance,
    max_len: usize,
) -> Result<Vec<String>> {
    let (frozen, mut state) = freeze(model, store, inst)?;
    let vocab = &model.target_table().vocab;
    let eos = vocab.get(EOS);
    let mut last = vocab.get(BOS);
    let mut out = Vec::new();
    while out.len() < max_len {
        let (next, logp) = search_step(model, store, &frozen, &state, last)?;
        let mut best = 0;
        for (i, &lp) in logp.iter().enumerate() {
            if lp.is_nan() {
                return Err(Error::NonFinite(format!("log-probability of token {i}")));
            }
            if lp > logp[best] {
                best = i;
            }
        }
        if best == eos {
            break;
        }
        out.push(best);
        state = next;
        last = best;
    }
    Ok(to_tokens(&frozen, vocab, &out))
}

#[derive(Debug, Clone)]
enum G2sEncoder {
    Graph(GraphEncoder),
    Linearized(BiLstm),
}

/// Graph-to-text: a graph network over the graph (or a bidirectional LSTM
/// over its linearization), attention memory `[h_j; x_j]`, an attention
/// decoder with optional coverage and copy.
#[derive(Debug, Clone)]
pub struct Graph2SeqModel {
    pub source: EmbeddingTable,
    pub target: EmbeddingTable,
    pub chars: Option<CharEncoder>,
    encoder: G2sEncoder,
    pub decoder: Decoder,
    pub dropout: f64,
}

impl Graph2SeqModel {
    pub fn new(
        store: &mut ParamStore,
        cfg: &TrainConfig,
        source: EmbeddingTable,
        target: EmbeddingTable,
        labels: Vocab,
        chars: Vocab,
    ) -> Result<Self> {
        let (e, d) = (source.dim, cfg.hidden_dim);
        let chars = if cfg.char_dim > 0 {
            Some(CharEncoder::new(
                store,
                "encoder.char",
                chars,
                cfg.char_dim,
                cfg.char_dim,
                cfg.max_chars,
            )?)
        } else {
            None
        };
        let c = chars.as_ref().map(CharEncoder::dim);
        let x_dim = e + c.unwrap_or(0);
        let (encoder, state_dim) = match cfg.encoder {
            EncoderKind::Grn => (
                G2sEncoder::Graph(GraphEncoder::new(
                    store,
                    "encoder",
                    GnnConfig {
                        steps: cfg.steps,
                        aggregator: cfg.aggregator,
                        updater: cfg.updater,
                        attention_heads: cfg.attention_heads,
                        hidden_dim: d,
                        edge_dim: 0,
                        candidate: cfg.candidate_activation,
                    },
                    labels,
                    cfg.label_dim,
                    e,
                    c,
                    false,
                )?),
                d,
            ),
            EncoderKind::Bilstm => (
                G2sEncoder::Linearized(BiLstm::new(store, "encoder.bilstm", x_dim, d)?),
                2 * d,
            ),
            EncoderKind::Dag => return Err(Error::Config("graph2seq has no DAG encoder".into())),
        };
        let decoder = Decoder::new(
            store,
            "decoder",
            DecoderConfig {
                embed_dim: target.dim,
                hidden_dim: state_dim,
                memory_dim: state_dim + x_dim,
                graph_memory_dim: None,
                attention_dim: cfg.attention_dim,
                vocab_size: target.vocab.len(),
                coverage: cfg.coverage,
                copy: cfg.copy,
                dense_init_dim: None,
            },
        )?;
        Ok(Graph2SeqModel {
            source,
            target,
            chars,
            encoder,
            decoder,
            dropout: cfg.dropout,
        })
    }

    pub fn uses_linearization(&self) -> bool {
        matches!(self.encoder, G2sEncoder::Linearized(_))
    }

    /// `x_j`: the word embedding, joined with the character vector when
    /// characters are on.
    fn inputs(
        &self,
        tape: &Tape,
        tokens: &[&str],
        char_sources: &[&str],
    ) -> Result<(Vec<Var>, Option<Vec<Var>>)> {
        let words = embed_inputs(tape, &self.source, tokens, self.dropout)?;
        let chars = match &self.chars {
            Some(ce) => Some(
                char_sources
                    .iter()
                    .map(|t| ce.embed(tape, t))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok((words, chars))
    }
}

fn join(tape: &Tape, words: &[Var], chars: Option<&[Var]>) -> Result<Vec<Var>> {
    match chars {
        Some(cs) => words
            .iter()
            .zip(cs)
            .map(|(&w, &c)| tape.concat(&[w, c]))
            .collect(),
        None => Ok(words.to_vec()),
    }
}

impl Generator for Graph2SeqModel {
    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn target_table(&self) -> &EmbeddingTable {
        &self.target
    }

    fn dropout(&self) -> f64 {
        self.dropout
    }

    fn encode(&self, tape: &Tape, inst: &GenInstance) -> Result<Encoded> {
        match &self.encoder {
            G2sEncoder::Graph(enc) => {
                let g = &inst.graph;
                let tokens = g.tokens();
                let char_src: Vec<&str> = g.nodes().iter().map(|n| n.chars()).collect();
                let (words, chars) = self.inputs(tape, &tokens, &char_src)?;
                let states = enc.encode(tape, g, &words, chars.as_deref(), None)?;
                let last = &states.last().expect("initial state").hidden;
                let x = join(tape, &words, chars.as_deref())?;
                let vectors = last
                    .iter()
                    .zip(&x)
                    .map(|(&h, &x)| tape.concat(&[h, x]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Encoded {
                    memory: AttentionMemory::new(
                        vectors,
                        tokens.iter().map(|t| t.to_string()).collect(),
                    )?,
                    graph_memory: None,
                    init_states: last.clone(),
                    init_kind: InitKind::GraphAverage,
                })
            }
            G2sEncoder::Linearized(bi) => {
                let lin = inst.linearized.as_ref().ok_or_else(|| {
                    Error::invalid("sequential graph2seq needs the linearized graph")
                })?;
                let tokens: Vec<&str> = lin.iter().map(String::as_str).collect();
                let (words, chars) = self.inputs(tape, &tokens, &tokens)?;
                let x = join(tape, &words, chars.as_deref())?;
                let out = bi.encode(tape, &x)?;
                let states = (0..out.len())
                    .map(|i| out.states(tape, i))
                    .collect::<Result<Vec<_>>>()?;
                let vectors = states
                    .iter()
                    .zip(&x)
                    .map(|(&h, &x)| tape.concat(&[h, x]))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Encoded {
                    memory: AttentionMemory::new(vectors, lin.clone())?,
                    graph_memory: None,
                    init_states: states,
                    init_kind: InitKind::SeqAverage,
                })
            }
        }
    }
}

/// Dual encoder: a bidirectional LSTM over the source sentence and a graph
/// network over its graph, read by a doubly attentive decoder initialized
/// from `W·[h←_1; h→_N] + b`.
#[derive(Debug, Clone)]
pub struct Dual2SeqModel {
    pub source: EmbeddingTable,
    pub target: EmbeddingTable,
    pub sentence: BiLstm,
    pub graph: GraphEncoder,
    pub decoder: Decoder,
    pub dropout: f64,
}

impl Dual2SeqModel {
    pub fn new(
        store: &mut ParamStore,
        cfg: &TrainConfig,
        source: EmbeddingTable,
        target: EmbeddingTable,
        labels: Vocab,
    ) -> Result<Self> {
        let (e, d) = (source.dim, cfg.hidden_dim);
        let sentence = BiLstm::new(store, "encoder.bilstm", e, d)?;
        let graph = GraphEncoder::new(
            store,
            "encoder",
            GnnConfig {
                steps: cfg.steps,
                aggregator: cfg.aggregator,
                updater: cfg.updater,
                attention_heads: cfg.attention_heads,
                hidden_dim: d,
                edge_dim: 0,
                candidate: cfg.candidate_activation,
            },
            labels,
            cfg.label_dim,
            e,
            None,
            false,
        )?;
        let decoder = Decoder::new(
            store,
            "decoder",
            DecoderConfig {
                embed_dim: target.dim,
                hidden_dim: d,
                memory_dim: 2 * d,
                graph_memory_dim: Some(d),
                attention_dim: cfg.attention_dim,
                vocab_size: target.vocab.len(),
                coverage: false,
                copy: false,
                dense_init_dim: Some(2 * d),
            },
        )?;
        Ok(Dual2SeqModel {
            source,
            target,
            sentence,
            graph,
            decoder,
            dropout: cfg.dropout,
        })
    }
}

impl Generator for Dual2SeqModel {
    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn target_table(&self) -> &EmbeddingTable {
        &self.target
    }

    fn dropout(&self) -> f64 {
        self.dropout
    }

    fn encode(&self, tape: &Tape, inst: &GenInstance) -> Result<Encoded> {
        let sentence = inst
            .source
            .as_ref()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::invalid("dual encoder needs a non-empty source sentence"))?;
        let words = embed_inputs(tape, &self.source, sentence, self.dropout)?;
        let seq = self.sentence.encode(tape, &words)?;
        let seq_vectors = (0..seq.len())
            .map(|i| seq.states(tape, i))
            .collect::<Result<Vec<_>>>()?;

        let g = &inst.graph;
        let tokens = g.tokens();
        let node_inputs = embed_inputs(tape, &self.source, &tokens, self.dropout)?;
        let states = self.graph.encode(tape, g, &node_inputs, None, None)?;
        let last = states.last().expect("initial state").hidden.clone();
        Ok(Encoded {
            memory: AttentionMemory::new(seq_vectors, sentence.clone())?,
            graph_memory: Some(AttentionMemory::new(
                last,
                tokens.iter().map(|t| t.to_string()).collect(),
            )?),
            init_states: vec![seq.backward[0], seq.forward[seq.len() - 1]],
            init_kind: InitKind::SeqDense,
        })
    }
}
