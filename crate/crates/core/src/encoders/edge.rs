use super::embed::{Affine, EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::tensor::{ParamStore, Tape, Var};

/// `x_{i,j}^l = W·[e_l; e_i] + b`, or `W·[e_l; e_i; h_i^c] + b` when a
/// character vector of the source node is supplied.
#[derive(Debug, Clone)]
pub struct EdgeRepresentation {
    pub labels: EmbeddingTable,
    pub affine: Affine,
    pub node_dim: usize,
    pub char_dim: Option<usize>,
}

impl EdgeRepresentation {
    /// Registers `{p}.label_emb` and `{p}.proj.{w,b}`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        labels: Vocab,
        label_dim: usize,
        node_dim: usize,
        char_dim: Option<usize>,
        out_dim: usize,
    ) -> Result<Self> {
        let in_dim = label_dim + node_dim + char_dim.unwrap_or(0);
        Ok(EdgeRepresentation {
            labels: EmbeddingTable::new(store, &format!("{prefix}.label_emb"), labels, label_dim)?,
            affine: Affine::new(store, &format!("{prefix}.proj"), out_dim, in_dim)?,
            node_dim,
            char_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.affine.out_dim
    }

    pub fn forward(
        &self,
        tape: &Tape,
        label: &str,
        source: Var,
        chars: Option<Var>,
    ) -> Result<Var> {
        let e_l = self.labels.lookup(tape, label)?;
        let joined = match (self.char_dim, chars) {
            (Some(_), Some(h)) => tape.concat(&[e_l, source, h])?,
            (None, None) => tape.concat(&[e_l, source])?,
            (Some(_), None) => {
                return Err(Error::invalid(
                    "edge representation expects a character vector",
                ))
            }
            (None, Some(_)) => {
                return Err(Error::invalid(
                    "edge representation was built without characters",
                ))
            }
        };
        self.affine.apply(tape, joined)
    }

    /// One vector per edge of `g`, in edge order. `node_inputs[i]` is
    /// `e_i`; `node_chars[i]` the character vector of node `i`.
    pub fn encode_edges(
        &self,
        tape: &Tape,
        g: &LabeledGraph,
        node_inputs: &[Var],
        node_chars: Option<&[Var]>,
    ) -> Result<Vec<Var>> {
        g.edges()
            .iter()
            .map(|e| {
                self.forward(
                    tape,
                    &e.label,
                    node_inputs[e.src],
                    node_chars.map(|c| c[e.src]),
                )
            })
            .collect()
    }
}

/// Per-node sums of incoming and outgoing edge vectors, computed once and
/// reused at every graph step.
#[derive(Debug, Clone)]
pub struct EdgeInputs {
    pub x_in: Vec<Var>,
    pub x_out: Vec<Var>,
    pub dim: usize,
}

impl EdgeInputs {
    pub fn from_edges(
        tape: &Tape,
        g: &LabeledGraph,
        edge_vectors: &[Var],
        dim: usize,
    ) -> Result<Self> {
        if edge_vectors.len() != g.edges().len() {
            return Err(Error::invalid(format!(
                "{} edge vectors for {} edges",
                edge_vectors.len(),
                g.edges().len()
            )));
        }
        let sum = |lists: Vec<Vec<usize>>| -> Result<Vec<Var>> {
            lists
                .into_iter()
                .map(|ks| {
                    if ks.is_empty() {
                        Ok(tape.zeros(dim))
                    } else {
                        tape.add_n(&ks.iter().map(|&k| edge_vectors[k]).collect::<Vec<_>>())
                    }
                })
                .collect()
        };
        Ok(EdgeInputs {
            x_in: sum(g.incoming())?,
            x_out: sum(g.outgoing())?,
            dim,
        })
    }
}
