use super::{embed_inputs, GraphEncoder};
use crate::config::{EncoderKind, TrainConfig};
use crate::encoders::{
    Affine, BiDagLstm, BiLstm, EdgeRepresentation, EmbeddingTable, GnnConfig, Vocab,
};
use crate::error::{Error, Result};
use crate::graph::{LabeledGraph, TaskInstance};
use crate::tensor::{ParamStore, Tape, Var};

/// `softmax(W0·[h_ε1; …; h_εN] + b0)` where each `h_εj` is the mean of the
/// states of entity `j`'s nodes.
pub fn relation_classify(
    tape: &Tape,
    node_states: &[Var],
    entities: &[Vec<usize>],
    classifier: &Affine,
) -> Result<Var> {
    if entities.is_empty() {
        return Err(Error::invalid(
            "relation classification needs at least one entity",
        ));
    }
    let mut pooled = Vec::with_capacity(entities.len());
    for (j, nodes) in entities.iter().enumerate() {
        if nodes.is_empty() {
            return Err(Error::invalid(format!("entity {j} has an empty span")));
        }
        let states = nodes
            .iter()
            .map(|&i| {
                node_states
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("entity {j} refers to missing node {i}")))
            })
            .collect::<Result<Vec<_>>>()?;
        pooled.push(tape.mean(&states)?);
    }
    tape.softmax(classifier.apply(tape, tape.concat(&pooled)?)?)
}

/// Collapses every class except `none_label` into `"Yes"`.
pub fn binarize(label: &str, none_label: &str) -> String {
    if label == none_label {
        none_label.to_string()
    } else {
        "Yes".to_string()
    }
}

#[derive(Debug, Clone)]
pub struct RelationInstance {
    pub graph: LabeledGraph,
    pub entities: Vec<Vec<usize>>,
    pub label: Option<String>,
}

impl RelationInstance {
    pub fn from_task(inst: &TaskInstance) -> Result<Self> {
        let entities = inst
            .entities
            .clone()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| Error::invalid(format!("instance `{}` has no entities", inst.id)))?;
        Ok(RelationInstance {
            graph: inst.graph()?,
            entities,
            label: inst.label.clone(),
        })
    }
}

#[derive(Debug, Clone)]
enum RelationEncoder {
    Graph(GraphEncoder),
    Dag {
        edge: EdgeRepresentation,
        dag: BiDagLstm,
    },
    Sequence(BiLstm),
}

/// Word embeddings, a graph (or DAG, or sequence) encoder over the
/// document graph, then [`relation_classify`].
#[derive(Debug, Clone)]
pub struct RelationModel {
    pub words: EmbeddingTable,
    encoder: RelationEncoder,
    pub classifier: Affine,
    pub classes: Vec<String>,
    pub num_entities: usize,
    pub dropout: f64,
}

impl RelationModel {
    pub fn new(
        store: &mut ParamStore,
        cfg: &TrainConfig,
        words: EmbeddingTable,
        labels: Vocab,
        classes: Vec<String>,
        num_entities: usize,
    ) -> Result<Self> {
        if classes.is_empty() || num_entities == 0 {
            return Err(Error::Config(
                "relation model needs classes and entities".into(),
            ));
        }
        let (e, d) = (words.dim, cfg.hidden_dim);
        let (encoder, state_dim) = match cfg.encoder {
            EncoderKind::Grn => (
                RelationEncoder::Graph(GraphEncoder::new(
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
                )?),
                d,
            ),
            EncoderKind::Dag => (
                RelationEncoder::Dag {
                    edge: EdgeRepresentation::new(
                        store,
                        "encoder.edge",
                        labels,
                        cfg.label_dim,
                        e,
                        None,
                        d,
                    )?,
                    dag: BiDagLstm::new(store, "encoder.dag", d, d)?,
                },
                2 * d,
            ),
            EncoderKind::Bilstm => (
                RelationEncoder::Sequence(BiLstm::new(store, "encoder.bilstm", e, d)?),
                2 * d,
            ),
        };
        Ok(RelationModel {
            words,
            encoder,
            classifier: Affine::new(
                store,
                "head.classifier",
                classes.len(),
                num_entities * state_dim,
            )?,
            classes,
            num_entities,
            dropout: cfg.dropout,
        })
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::invalid(format!("unknown relation label `{label}`")))
    }

    pub fn node_states(&self, tape: &Tape, inst: &RelationInstance) -> Result<Vec<Var>> {
        let g = &inst.graph;
        if g.is_empty() {
            return Err(Error::invalid("empty relation graph"));
        }
        let tokens = g.tokens();
        let inputs = embed_inputs(tape, &self.words, &tokens, self.dropout)?;
        match &self.encoder {
            RelationEncoder::Graph(enc) => {
                let mut states = enc.encode(tape, g, &inputs, None, None)?;
                Ok(states.pop().expect("initial state").hidden)
            }
            RelationEncoder::Dag { edge, dag } => {
                let edges = edge.encode_edges(tape, g, &inputs, None)?;
                let enc = dag.encode(tape, g, &inputs, Some(&edges))?;
                (0..g.len()).map(|j| enc.state(tape, j)).collect()
            }
            RelationEncoder::Sequence(bi) => {
                let enc = bi.encode(tape, &inputs)?;
                (0..g.len()).map(|j| enc.states(tape, j)).collect()
            }
        }
    }

    pub fn forward(&self, tape: &Tape, inst: &RelationInstance) -> Result<Var> {
        if inst.entities.len() != self.num_entities {
            return Err(Error::invalid(format!(
                "model expects {} entities, instance has {}",
                self.num_entities,
                inst.entities.len()
            )));
        }
        let states = self.node_states(tape, inst)?;
        relation_classify(tape, &states, &inst.entities, &self.classifier)
    }
}
