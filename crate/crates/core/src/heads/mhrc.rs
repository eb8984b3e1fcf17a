use super::{embed_inputs, GraphEncoder};
use crate::config::{EncoderKind, TrainConfig};
use crate::encoders::{Affine, BiDagLstm, BiLstm, EmbeddingTable, EncoderOutput, GnnConfig, Vocab};
use crate::error::{Error, Result};
use crate::graph::{Edge, LabeledGraph, MentionSpan, Node, TaskInstance};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// `W1·[h←_s; h→_s; h←_e; h→_e] + b1` for the mention spanning `start..=end`.
pub fn mention_representation(
    tape: &Tape,
    enc: &EncoderOutput,
    start: usize,
    end: usize,
    w1: &Affine,
) -> Result<Var> {
    if start > end || end >= enc.len() {
        return Err(Error::invalid(format!(
            "mention span {start}..={end} outside a sequence of length {}",
            enc.len()
        )));
    }
    let joined = tape.concat(&[
        enc.backward[start],
        enc.forward[start],
        enc.backward[end],
        enc.forward[end],
    ])?;
    w1.apply(tape, joined)
}

/// `W2·[h←_1; h→_1; h←_M; h→_M] + b2`.
pub fn question_representation(tape: &Tape, enc: &EncoderOutput, w2: &Affine) -> Result<Var> {
    if enc.is_empty() {
        return Err(Error::invalid("empty question"));
    }
    mention_representation(tape, enc, 0, enc.len() - 1, w2)
}

/// `p(c) = Σ_{k∈N_c} α_k`, where `alpha[i]` is the weight of mention
/// `owned[i]` and `owned` is sorted.
pub fn candidate_probabilities(
    tape: &Tape,
    alpha: Var,
    owned: &[usize],
    candidates: &[Vec<usize>],
) -> Result<Var> {
    if tape.len(alpha) != owned.len() {
        return Err(Error::invalid(format!(
            "{} mention weights for {} owned mentions",
            tape.len(alpha),
            owned.len()
        )));
    }
    let probs = candidates
        .iter()
        .map(|mentions| {
            let parts = mentions
                .iter()
                .map(|k| {
                    let i = owned.binary_search(k).map_err(|_| {
                        Error::invalid(format!("mention {k} is not candidate-owned"))
                    })?;
                    tape.pick(alpha, i)
                })
                .collect::<Result<Vec<_>>>()?;
            tape.add_n(&parts)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&probs)
}

/// A reading-comprehension instance over its mention graph.
#[derive(Debug, Clone)]
pub struct MhrcInstance {
    pub graph: LabeledGraph,
    pub passages: Vec<Vec<String>>,
    pub question: Vec<String>,
    /// Where each graph node's mention sits.
    pub spans: Vec<MentionSpan>,
    /// Mention (node) indices owned by each candidate.
    pub candidates: Vec<Vec<usize>>,
    pub answer: Option<usize>,
}

impl MhrcInstance {
    /// Without passages, each node's token (split on whitespace) is read
    /// as a passage of its own.
    pub fn from_task(inst: &TaskInstance) -> Result<Self> {
        let graph = inst.graph()?;
        let question = inst
            .question
            .clone()
            .filter(|q| !q.is_empty())
            .ok_or_else(|| Error::invalid(format!("instance `{}` has no question", inst.id)))?;
        let mut candidates = inst
            .candidates
            .clone()
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::invalid(format!("instance `{}` has no candidates", inst.id)))?;
        for c in &mut candidates {
            c.sort_unstable();
            c.dedup();
        }
        let (passages, spans) = match (&inst.passages, &inst.mentions) {
            (Some(p), Some(m)) => (p.clone(), m.clone()),
            (None, None) => {
                let mut passages = Vec::new();
                let mut spans = Vec::new();
                for (k, node) in graph.nodes().iter().enumerate() {
                    let toks: Vec<String> =
                        node.token.split_whitespace().map(String::from).collect();
                    if toks.is_empty() {
                        return Err(Error::invalid(format!(
                            "instance `{}` node {k} has an empty token",
                            inst.id
                        )));
                    }
                    spans.push(MentionSpan {
                        passage: k,
                        start: 0,
                        end: toks.len() - 1,
                    });
                    passages.push(toks);
                }
                (passages, spans)
            }
            _ => {
                return Err(Error::invalid(format!(
                    "instance `{}` needs both passages and mentions, or neither",
                    inst.id
                )))
            }
        };
        Ok(MhrcInstance {
            graph,
            passages,
            question,
            spans,
            candidates,
            answer: inst.answer,
        })
    }

    /// Token chain of passage `p` with coreference links between mention
    /// starts, in both directions so the forward and backward halves each
    /// see every link.
    pub fn coref_token_graph(&self, p: usize) -> Result<LabeledGraph> {
        let n = self.passages[p].len();
        let nodes = self.passages[p]
            .iter()
            .map(|t| Node::new(t.clone()))
            .collect();
        let mut pairs = std::collections::BTreeSet::new();
        for i in 1..n {
            pairs.insert((i - 1, i, "next"));
        }
        for e in self.graph.edges() {
            let (a, b) = (&self.spans[e.src], &self.spans[e.tgt]);
            if e.label == "coref" && a.passage == p && b.passage == p && a.start != b.start {
                let (lo, hi) = (a.start.min(b.start), a.start.max(b.start));
                if hi != lo + 1 {
                    pairs.insert((lo, hi, "coref"));
                }
            }
        }
        let mut edges = Vec::new();
        for (lo, hi, label) in pairs {
            edges.push(Edge::new(lo, hi, label));
            edges.push(Edge::new(hi, lo, label));
        }
        LabeledGraph::new(nodes, edges)
    }

    /// Candidate-owned mentions, ascending.
    pub fn owned_mentions(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.candidates.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

#[derive(Debug, Clone)]
enum PassageEncoder {
    Sequential(BiLstm),
    Coref(BiDagLstm),
}

/// `v·tanh(W·s + U·h_q + b)`.
#[derive(Debug, Clone)]
pub struct MatchScorer {
    w: ParamId,
    u: ParamId,
    b: ParamId,
    v: ParamId,
}

impl MatchScorer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        state_dim: usize,
        query_dim: usize,
        attention_dim: usize,
    ) -> Result<Self> {
        Ok(MatchScorer {
            w: store.add(&format!("{prefix}.w"), &[attention_dim, state_dim])?,
            u: store.add(&format!("{prefix}.u"), &[attention_dim, query_dim])?,
            b: store.add_zeros(&format!("{prefix}.b"), &[attention_dim])?,
            v: store.add(&format!("{prefix}.v"), &[attention_dim])?,
        })
    }

    pub fn score(&self, tape: &Tape, s: Var, h_q: Var) -> Result<Var> {
        let a = tape.linear(s, tape.param(self.w), tape.param(self.b))?;
        let pre = tape.add(a, tape.matvec(tape.param(self.u), h_q)?)?;
        tape.dot(tape.param(self.v), tape.tanh(pre))
    }
}

/// Mention matching over an evidence graph: mentions and the question are
/// read off bidirectional passage and question encoders, the graph network
/// propagates from `W3·[h_ε; h_q] + b3`, every step's states are matched
/// against the question with their own scorer (step 0 matches the mention
/// vectors themselves), and the per-step scores are combined by a learned
/// dot product.
#[derive(Debug, Clone)]
pub struct MhrcModel {
    pub words: EmbeddingTable,
    passage: PassageEncoder,
    pub question: BiLstm,
    pub mention: Affine,
    pub query: Affine,
    pub init: Affine,
    pub graph: Option<GraphEncoder>,
    pub matchers: Vec<MatchScorer>,
    pub combine_w: ParamId,
    pub dropout: f64,
}

impl MhrcModel {
    pub fn new(
        store: &mut ParamStore,
        cfg: &TrainConfig,
        words: EmbeddingTable,
        labels: Vocab,
    ) -> Result<Self> {
        let (e, d) = (words.dim, cfg.hidden_dim);
        let passage = match cfg.encoder {
            EncoderKind::Dag => {
                PassageEncoder::Coref(BiDagLstm::new(store, "encoder.passage", e, d)?)
            }
            _ => PassageEncoder::Sequential(BiLstm::new(store, "encoder.passage", e, d)?),
        };
        let question = BiLstm::new(store, "encoder.question", e, d)?;
        let mention = Affine::new(store, "head.mention", d, 4 * d)?;
        let query = Affine::new(store, "head.question", d, 4 * d)?;
        let init = Affine::new(store, "head.init", d, 2 * d)?;
        let graph = match cfg.encoder {
            EncoderKind::Grn => Some(GraphEncoder::new(
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
                d,
                None,
                true,
            )?),
            _ => None,
        };
        let steps = graph.as_ref().map_or(0, |g| g.grn.cfg.steps);
        let matchers = (0..=steps)
            .map(|t| MatchScorer::new(store, &format!("head.match{t}"), d, d, cfg.attention_dim))
            .collect::<Result<_>>()?;
        Ok(MhrcModel {
            words,
            passage,
            question,
            mention,
            query,
            init,
            graph,
            matchers,
            combine_w: store.add("head.combine.w", &[steps + 1])?,
            dropout: cfg.dropout,
        })
    }

    pub fn steps(&self) -> usize {
        self.matchers.len() - 1
    }

    fn encode_passage(&self, tape: &Tape, inst: &MhrcInstance, p: usize) -> Result<EncoderOutput> {
        let inputs = embed_inputs(tape, &self.words, &inst.passages[p], self.dropout)?;
        match &self.passage {
            PassageEncoder::Sequential(bi) => bi.encode(tape, &inputs),
            PassageEncoder::Coref(dag) => {
                if inputs.is_empty() {
                    return Err(Error::invalid("empty passage"));
                }
                let g = inst.coref_token_graph(p)?;
                let enc = dag.encode(tape, &g, &inputs, None)?;
                Ok(EncoderOutput {
                    forward: enc.forward.hidden,
                    backward: enc.backward.hidden,
                    inputs,
                })
            }
        }
    }

    /// Per-candidate probabilities `p(c) = Σ_{k∈N_c} α_k`, with `α` the
    /// softmax of combined scores over candidate-owned mentions.
    pub fn forward(&self, tape: &Tape, inst: &MhrcInstance) -> Result<Var> {
        if let Some(c) = inst.candidates.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("candidate {c} has no mentions")));
        }
        let n = inst.graph.len();
        if inst.spans.len() != n {
            return Err(Error::invalid(format!(
                "{} mention spans for {n} nodes",
                inst.spans.len()
            )));
        }
        let mut encoded: Vec<Option<EncoderOutput>> = vec![None; inst.passages.len()];
        let mut h_e = Vec::with_capacity(n);
        for span in &inst.spans {
            let p = span.passage;
            if p >= inst.passages.len() {
                return Err(Error::invalid(format!(
                    "mention refers to missing passage {p}"
                )));
            }
            if encoded[p].is_none() {
                encoded[p] = Some(self.encode_passage(tape, inst, p)?);
            }
            let enc = encoded[p].as_ref().expect("just encoded");
            h_e.push(mention_representation(
                tape,
                enc,
                span.start,
                span.end,
                &self.mention,
            )?);
        }
        let q_inputs = embed_inputs(tape, &self.words, &inst.question, self.dropout)?;
        let h_q =
            question_representation(tape, &self.question.encode(tape, &q_inputs)?, &self.query)?;

        let hidden_by_step: Vec<Vec<Var>> = match &self.graph {
            Some(graph) => {
                let s0 = h_e
                    .iter()
                    .map(|&h| self.init.apply(tape, tape.concat(&[h, h_q])?))
                    .collect::<Result<Vec<_>>>()?;
                graph
                    .encode(tape, &inst.graph, &h_e, None, Some(&s0))?
                    .into_iter()
                    .skip(1)
                    .map(|s| s.hidden)
                    .collect()
            }
            None => Vec::new(),
        };

        let owned = inst.owned_mentions();
        let w_c = tape.param(self.combine_w);
        let mut scores = Vec::with_capacity(owned.len());
        for &k in &owned {
            if k >= n {
                return Err(Error::invalid(format!(
                    "candidate mention {k} out of range"
                )));
            }
            let mut per_step = vec![self.matchers[0].score(tape, h_e[k], h_q)?];
            for (t, hidden) in hidden_by_step.iter().enumerate() {
                per_step.push(self.matchers[t + 1].score(tape, hidden[k], h_q)?);
            }
            scores.push(tape.dot(w_c, tape.concat(&per_step)?)?);
        }
        let alpha = tape.softmax(tape.concat(&scores)?)?;
        candidate_probabilities(tape, alpha, &owned, &inst.candidates)
    }
}
