//! The four end-task models and the glue that turns dataset records into
//! their inputs.

mod generation;
mod graph_encoder;
mod mhrc;
mod relation;
#[cfg(test)]
mod tests;

pub use generation::{
    beam_decode, greedy_decode, teacher_forced, Dual2SeqModel, Encoded, GenInstance, Generator,
    Graph2SeqModel,
};
pub use graph_encoder::GraphEncoder;
pub use mhrc::{
    candidate_probabilities, mention_representation, question_representation, MatchScorer,
    MhrcInstance, MhrcModel,
};
pub use relation::{binarize, relation_classify, RelationInstance, RelationModel};

use serde::{Deserialize, Serialize};

use crate::config::{EncoderKind, Task, TrainConfig};
use crate::encoders::{CharEncoder, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{linearize_amr, truncate_neighbors, TaskInstance};
use crate::tensor::{ParamStore, Tape, Var};
use crate::train::{classification_loss, sequence_loss};

/// Embeds `tokens` (unknown ones as `UNK`) with input dropout.
pub fn embed_inputs(
    tape: &Tape,
    table: &EmbeddingTable,
    tokens: &[impl AsRef<str>],
    dropout: f64,
) -> Result<Vec<Var>> {
    tokens
        .iter()
        .map(|t| tape.dropout(table.lookup(tape, t.as_ref())?, dropout))
        .collect()
}

/// Every vocabulary a model is built from, derived from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabs {
    /// Source-side words: node tokens, passages, questions, sentences.
    pub words: Vocab,
    pub labels: Vocab,
    pub chars: Vocab,
    /// Output words, with `<s>` and `</s>`.
    pub target: Vocab,
    pub classes: Vec<String>,
    pub num_entities: usize,
}

impl Vocabs {
    pub fn build(cfg: &TrainConfig, data: &[TaskInstance]) -> Result<Self> {
        let mut words: Vec<String> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        let mut chars: Vec<String> = Vec::new();
        let mut target: Vec<String> = Vec::new();
        let mut classes: Vec<String> = Vec::new();
        let mut num_entities = None;
        let linearize = cfg.task == Task::Graph2Seq && cfg.encoder == EncoderKind::Bilstm;
        for inst in data {
            for n in &inst.nodes {
                words.push(n.token.clone());
                chars.push(n.chars().to_string());
            }
            labels.extend(inst.edges.iter().map(|e| e.2.clone()));
            words.extend(inst.question.iter().flatten().cloned());
            words.extend(inst.source.iter().flatten().cloned());
            target.extend(inst.target.iter().flatten().cloned());
            for p in inst.passages.iter().flatten() {
                words.extend(p.iter().cloned());
            }
            if linearize {
                let lin = linearize_amr(&inst.graph()?)?;
                chars.extend(lin.iter().cloned());
                words.extend(lin);
            }
            if cfg.task == Task::Relation {
                let label = inst.label.clone().ok_or_else(|| {
                    Error::invalid(format!("instance `{}` has no label", inst.id))
                })?;
                classes.push(label);
                let k = inst.entities.as_ref().map_or(0, Vec::len);
                match num_entities {
                    None => num_entities = Some(k),
                    Some(m) if m != k => {
                        return Err(Error::invalid(format!(
                            "instance `{}` has {k} entities, earlier instances have {m}",
                            inst.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        classes.sort();
        classes.dedup();
        Ok(Vocabs {
            words: Vocab::from_tokens(
                Vocab::new(),
                words.iter().map(String::as_str),
                cfg.min_count,
            ),
            labels: Vocab::from_tokens(Vocab::new(), labels.iter().map(String::as_str), 1),
            chars: CharEncoder::vocab_for(chars.iter().map(String::as_str)),
            target: Vocab::from_tokens(
                Vocab::with_specials(),
                target.iter().map(String::as_str),
                cfg.min_count,
            ),
            classes,
            num_entities: num_entities.unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone)]
pub enum ExampleKind {
    Mhrc(MhrcInstance),
    Relation(RelationInstance),
    Gen(GenInstance),
}

/// A dataset record converted for one task.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub kind: ExampleKind,
}

impl Example {
    /// Applies the configured neighbor cap (except to reading-comprehension
    /// graphs, which are capped when built) and checks task fields.
    pub fn from_task(cfg: &TrainConfig, inst: &TaskInstance) -> Result<Self> {
        let mut inst = inst.clone();
        if cfg.max_neighbors > 0 && cfg.task != Task::Mhrc {
            let g = truncate_neighbors(&inst.graph()?, cfg.max_neighbors, &[])?;
            inst.edges = g
                .edges()
                .iter()
                .map(|e| (e.src, e.tgt, e.label.clone()))
                .collect();
        }
        let kind = match cfg.task {
            Task::Mhrc => ExampleKind::Mhrc(MhrcInstance::from_task(&inst)?),
            Task::Relation => ExampleKind::Relation(RelationInstance::from_task(&inst)?),
            Task::Graph2Seq => ExampleKind::Gen(GenInstance::from_task(
                &inst,
                cfg.encoder == EncoderKind::Bilstm,
            )?),
            Task::Dual2Seq => ExampleKind::Gen(GenInstance::from_task(&inst, false)?),
        };
        Ok(Example { id: inst.id, kind })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class {
        index: usize,
        label: String,
        probs: Vec<f64>,
    },
    Text(Vec<String>),
}

impl Prediction {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Prediction::Class { label, .. } => serde_json::Value::String(label.clone()),
            Prediction::Text(t) => serde_json::Value::String(t.join(" ")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam: usize,
    pub max_len: usize,
}

impl DecodeOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        DecodeOptions {
            beam: cfg.beam,
            max_len: cfg.max_decode_len,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Mhrc(MhrcModel),
    Relation(RelationModel),
    Graph2Seq(Graph2SeqModel),
    Dual2Seq(Dual2SeqModel),
}

impl Model {
    /// Registers every parameter of the configured task model.
    pub fn build(store: &mut ParamStore, cfg: &TrainConfig, vocabs: &Vocabs) -> Result<Self> {
        cfg.validate()?;
        let table = |store: &mut ParamStore, name: &str, vocab: &Vocab| -> Result<EmbeddingTable> {
            let mut t = EmbeddingTable::new(store, name, vocab.clone(), cfg.embed_dim)?;
            t.trainable = !cfg.freeze_embeddings;
            Ok(t)
        };
        Ok(match cfg.task {
            Task::Mhrc => {
                let words = table(store, "embed.words", &vocabs.words)?;
                Model::Mhrc(MhrcModel::new(store, cfg, words, vocabs.labels.clone())?)
            }
            Task::Relation => {
                let words = table(store, "embed.words", &vocabs.words)?;
                Model::Relation(RelationModel::new(
                    store,
                    cfg,
                    words,
                    vocabs.labels.clone(),
                    vocabs.classes.clone(),
                    vocabs.num_entities,
                )?)
            }
            Task::Graph2Seq => {
                let source = table(store, "embed.words", &vocabs.words)?;
                let target = EmbeddingTable::new(
                    store,
                    "embed.target",
                    vocabs.target.clone(),
                    cfg.embed_dim,
                )?;
                Model::Graph2Seq(Graph2SeqModel::new(
                    store,
                    cfg,
                    source,
                    target,
                    vocabs.labels.clone(),
                    vocabs.chars.clone(),
                )?)
            }
            Task::Dual2Seq => {
                let source = table(store, "embed.words", &vocabs.words)?;
                let target = EmbeddingTable::new(
                    store,
                    "embed.target",
                    vocabs.target.clone(),
                    cfg.embed_dim,
                )?;
                Model::Dual2Seq(Dual2SeqModel::new(
                    store,
                    cfg,
                    source,
                    target,
                    vocabs.labels.clone(),
                )?)
            }
        })
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Mhrc(_) => Task::Mhrc,
            Model::Relation(_) => Task::Relation,
            Model::Graph2Seq(_) => Task::Graph2Seq,
            Model::Dual2Seq(_) => Task::Dual2Seq,
        }
    }

    /// The source-side word table, where pretrained vectors go.
    pub fn words(&self) -> &EmbeddingTable {
        match self {
            Model::Mhrc(m) => &m.words,
            Model::Relation(m) => &m.words,
            Model::Graph2Seq(m) => &m.source,
            Model::Dual2Seq(m) => &m.source,
        }
    }

    fn generator(&self) -> Option<&dyn Generator> {
        match self {
            Model::Graph2Seq(m) => Some(m),
            Model::Dual2Seq(m) => Some(m),
            _ => None,
        }
    }

    fn mismatch(&self) -> Error {
        Error::invalid(format!("example does not belong to task `{}`", self.task()))
    }

    /// Class distribution for the classification tasks.
    pub fn distribution(&self, tape: &Tape, ex: &Example) -> Result<Var> {
        match (self, &ex.kind) {
            (Model::Mhrc(m), ExampleKind::Mhrc(i)) => m.forward(tape, i),
            (Model::Relation(m), ExampleKind::Relation(i)) => m.forward(tape, i),
            _ => Err(self.mismatch()),
        }
    }

    /// Gold class index, when the example carries one.
    pub fn gold_class(&self, ex: &Example) -> Result<Option<usize>> {
        match (self, &ex.kind) {
            (Model::Mhrc(_), ExampleKind::Mhrc(i)) => Ok(i.answer),
            (Model::Relation(m), ExampleKind::Relation(i)) => {
                i.label.as_deref().map(|l| m.class_index(l)).transpose()
            }
            (Model::Graph2Seq(_) | Model::Dual2Seq(_), ExampleKind::Gen(_)) => Ok(None),
            _ => Err(self.mismatch()),
        }
    }

    /// Training loss of one example, without the l2 term.
    pub fn loss(&self, tape: &Tape, ex: &Example) -> Result<Var> {
        match (self.generator(), &ex.kind) {
            (Some(g), ExampleKind::Gen(inst)) => {
                let (dists, gold) = teacher_forced(g, tape, inst)?;
                sequence_loss(tape, &dists, &gold)
            }
            (None, _) => {
                let p = self.distribution(tape, ex)?;
                let gold = self.gold_class(ex)?.ok_or_else(|| {
                    Error::invalid(format!("example `{}` has no gold answer", ex.id))
                })?;
                classification_loss(tape, p, gold)
            }
            _ => Err(self.mismatch()),
        }
    }

    pub fn predict(
        &self,
        store: &ParamStore,
        ex: &Example,
        exec: &Exec,
        opts: DecodeOptions,
    ) -> Result<Prediction> {
        match (self.generator(), &ex.kind) {
            (Some(g), ExampleKind::Gen(inst)) => {
                let toks = if opts.beam == 1 {
                    greedy_decode(g, store, inst, opts.max_len)?
                } else {
                    beam_decode(g, store, inst, exec, opts.beam, opts.max_len)?
                };
                Ok(Prediction::Text(toks))
            }
            (None, _) => {
                let tape = Tape::new(store);
                let probs = tape.value(self.distribution(&tape, ex)?);
                let mut index = 0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[index] {
                        index = i;
                    }
                }
                let label = match self {
                    Model::Relation(m) => m.classes[index].clone(),
                    _ => index.to_string(),
                };
                Ok(Prediction::Class {
                    index,
                    label,
                    probs,
                })
            }
            _ => Err(self.mismatch()),
        }
    }
}
