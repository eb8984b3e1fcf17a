use super::cells::{LstmCell, Predecessor};
use crate::error::{Error, Result};
use crate::graph::{split_dags, topological_order, LabeledGraph};
use crate::tensor::{ParamStore, Tape, Var};

/// What a DAG node reads besides its predecessors' states.
#[derive(Debug, Clone, Copy)]
pub enum DagInputs<'a> {
    /// One vector per node; every forget gate of node `j` reads `x_j`.
    Nodes(&'a [Var]),
    /// One vector per edge (indexed like `edges()`); node `j` reads the sum
    /// over its incoming edges and each forget gate reads its own edge.
    Edges(&'a [Var]),
}

#[derive(Debug, Clone)]
pub struct DagEncoding {
    pub hidden: Vec<Var>,
    pub cells: Vec<Var>,
    /// Sequential stages run: one per topological level, every node of a
    /// level depending only on earlier levels.
    pub stages: usize,
}

/// Topological levels: a node's level is one more than its deepest
/// predecessor's.
fn levels(dag: &LabeledGraph) -> Result<Vec<Vec<usize>>> {
    let order = topological_order(dag)?;
    let mut level = vec![0usize; dag.len()];
    let out = dag.outgoing();
    for &u in &order {
        for &k in &out[u] {
            let v = dag.edges()[k].tgt;
            level[v] = level[v].max(level[u] + 1);
        }
    }
    let depth = level.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); depth];
    for (j, &l) in level.iter().enumerate() {
        groups[l].push(j);
    }
    Ok(groups)
}

/// Runs `cell` over `dag` level by level.
pub fn dag_lstm_encode(
    tape: &Tape,
    cell: &LstmCell,
    dag: &LabeledGraph,
    inputs: DagInputs,
) -> Result<DagEncoding> {
    let n = dag.len();
    match inputs {
        DagInputs::Nodes(xs) if xs.len() != n => {
            return Err(Error::invalid(format!(
                "{} node inputs for {n} nodes",
                xs.len()
            )))
        }
        DagInputs::Edges(xs) if xs.len() != dag.edges().len() => {
            return Err(Error::invalid(format!(
                "{} edge inputs for {} edges",
                xs.len(),
                dag.edges().len()
            )))
        }
        _ => {}
    }
    let groups = levels(dag)?;
    let incoming = dag.incoming();
    let mut hidden: Vec<Option<Var>> = vec![None; n];
    let mut cells: Vec<Option<Var>> = vec![None; n];
    for group in &groups {
        for &j in group {
            let x = match inputs {
                DagInputs::Nodes(xs) => xs[j],
                DagInputs::Edges(xs) => {
                    let parts: Vec<Var> = incoming[j].iter().map(|&k| xs[k]).collect();
                    if parts.is_empty() {
                        tape.zeros(cell.input_dim)
                    } else {
                        tape.add_n(&parts)?
                    }
                }
            };
            let preds: Vec<Predecessor> = incoming[j]
                .iter()
                .map(|&k| {
                    let src = dag.edges()[k].src;
                    Predecessor {
                        input: match inputs {
                            DagInputs::Nodes(_) => x,
                            DagInputs::Edges(xs) => xs[k],
                        },
                        h: hidden[src].expect("predecessor in an earlier level"),
                        c: cells[src].expect("predecessor in an earlier level"),
                    }
                })
                .collect();
            let (h, c) = cell.dag_step(tape, x, &preds)?;
            hidden[j] = Some(h);
            cells[j] = Some(c);
        }
    }
    Ok(DagEncoding {
        hidden: hidden
            .into_iter()
            .map(|h| h.expect("every node visited"))
            .collect(),
        cells: cells
            .into_iter()
            .map(|c| c.expect("every node visited"))
            .collect(),
        stages: groups.len(),
    })
}

/// A graph split into its left-to-right and right-to-left halves, each
/// encoded by its own DAG LSTM (`{p}.fwd.*`, `{p}.bwd.*`).
#[derive(Debug, Clone)]
pub struct BiDagLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiDagEncoding {
    pub forward: DagEncoding,
    pub backward: DagEncoding,
}

impl BiDagEncoding {
    /// `[h_fwd; h_bwd]` for node `j`.
    pub fn state(&self, tape: &Tape, j: usize) -> Result<Var> {
        tape.concat(&[self.forward.hidden[j], self.backward.hidden[j]])
    }
}

impl BiDagLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        Ok(BiDagLstm {
            fwd: LstmCell::new(store, &format!("{prefix}.fwd"), input_dim, hidden_dim)?,
            bwd: LstmCell::new(store, &format!("{prefix}.bwd"), input_dim, hidden_dim)?,
        })
    }

    /// With edge inputs, `edge_inputs[k]` belongs to `g.edges()[k]`.
    pub fn encode(
        &self,
        tape: &Tape,
        g: &LabeledGraph,
        node_inputs: &[Var],
        edge_inputs: Option<&[Var]>,
    ) -> Result<BiDagEncoding> {
        let (fwd_g, bwd_g) = split_dags(g);
        let (fwd_e, bwd_e): (Vec<Var>, Vec<Var>) = match edge_inputs {
            Some(xs) => {
                if xs.len() != g.edges().len() {
                    return Err(Error::invalid(format!(
                        "{} edge inputs for {} edges",
                        xs.len(),
                        g.edges().len()
                    )));
                }
                let mut f = Vec::new();
                let mut b = Vec::new();
                for (e, &x) in g.edges().iter().zip(xs) {
                    if e.src < e.tgt {
                        f.push(x);
                    } else {
                        b.push(x);
                    }
                }
                (f, b)
            }
            None => (Vec::new(), Vec::new()),
        };
        // split_dags keeps edge order, so the partitioned inputs line up
        let (fwd_in, bwd_in) = match edge_inputs {
            Some(_) => (DagInputs::Edges(&fwd_e), DagInputs::Edges(&bwd_e)),
            None => (DagInputs::Nodes(node_inputs), DagInputs::Nodes(node_inputs)),
        };
        let forward = dag_lstm_encode(tape, &self.fwd, &fwd_g, fwd_in)?;
        let backward = dag_lstm_encode(tape, &self.bwd, &bwd_g, bwd_in)?;
        Ok(BiDagEncoding { forward, backward })
    }
}
