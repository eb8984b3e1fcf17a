use super::cells::{CandidateActivation, GruCell, MessageLstmCell};
use super::edge::EdgeInputs;
use super::embed::Affine;
use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// How a node gathers its neighbors into a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    /// Sum of in-neighbor states.
    UndirectedSum,
    /// `[x_in; x_out; h_in; h_out]` with states summed per direction.
    DirectedLabeled,
    Mean,
    Max,
}

/// How a node turns its message into a new state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Updater {
    Lstm,
    Gru,
    /// `ReLU(W_t·m + b_t)` with per-step weights.
    LinearRelu,
    /// Multi-head scaled dot-product attention over neighbors with
    /// per-step weights; the new state is `σ` of the weighted combination.
    Attention,
}

named_enum!(Aggregator {
    UndirectedSum => "undirected_sum",
    DirectedLabeled => "directed_labeled",
    Mean => "mean",
    Max => "max",
});

named_enum!(Updater {
    Lstm => "lstm",
    Gru => "gru",
    LinearRelu => "linear_relu",
    Attention => "attention",
});

#[derive(Debug, Clone, PartialEq)]
pub struct GnnConfig {
    pub steps: usize,
    pub aggregator: Aggregator,
    pub updater: Updater,
    pub attention_heads: usize,
    pub hidden_dim: usize,
    /// Width of the edge sums read by the directed aggregator.
    pub edge_dim: usize,
    pub candidate: CandidateActivation,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            steps: 3,
            aggregator: Aggregator::UndirectedSum,
            updater: Updater::Lstm,
            attention_heads: 1,
            hidden_dim: 300,
            edge_dim: 0,
            candidate: CandidateActivation::default(),
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.updater == Updater::Attention && self.attention_heads == 0 {
            return Err(Error::Config("attention_heads must be at least 1".into()));
        }
        if self.aggregator == Aggregator::DirectedLabeled {
            if self.edge_dim == 0 {
                return Err(Error::Config("directed_labeled needs edge_dim ≥ 1".into()));
            }
            if self.updater == Updater::Attention {
                return Err(Error::Config(
                    "the attention updater attends over neighbor states and cannot take directed_labeled messages"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    pub fn message_dim(&self) -> usize {
        match self.aggregator {
            Aggregator::DirectedLabeled => 2 * self.edge_dim + 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }
}

/// Node states after `step` transitions. Updaters without a cell carry
/// zero cells.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub step: usize,
    pub hidden: Vec<Var>,
    pub cell: Vec<Var>,
}

#[derive(Debug, Clone)]
struct AttentionHead {
    wq: ParamId,
    wk: ParamId,
}

#[derive(Debug, Clone)]
enum UpdaterParams {
    Lstm(MessageLstmCell),
    Gru(GruCell),
    LinearRelu(Vec<Affine>),
    Attention(Vec<Vec<AttentionHead>>),
}

/// Graph recurrent network: `T` synchronous transitions, every node
/// reading only the previous graph state.
#[derive(Debug, Clone)]
pub struct Grn {
    pub cfg: GnnConfig,
    params: UpdaterParams,
}

impl Grn {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: GnnConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, m) = (cfg.hidden_dim, cfg.message_dim());
        let params = match cfg.updater {
            Updater::Lstm => UpdaterParams::Lstm(
                MessageLstmCell::new(store, &format!("{prefix}.lstm"), m, d)?
                    .with_candidate(cfg.candidate),
            ),
            Updater::Gru => {
                UpdaterParams::Gru(GruCell::new(store, &format!("{prefix}.gru"), m, d)?)
            }
            Updater::LinearRelu => UpdaterParams::LinearRelu(
                (0..cfg.steps)
                    .map(|t| Affine::new(store, &format!("{prefix}.step{t}"), d, m))
                    .collect::<Result<_>>()?,
            ),
            Updater::Attention => UpdaterParams::Attention(
                (0..cfg.steps)
                    .map(|t| {
                        (0..cfg.attention_heads)
                            .map(|k| {
                                Ok(AttentionHead {
                                    wq: store
                                        .add(&format!("{prefix}.step{t}.head{k}.wq"), &[d, d])?,
                                    wk: store
                                        .add(&format!("{prefix}.step{t}.head{k}.wk"), &[d, d])?,
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Grn { cfg, params })
    }

    /// States for `t = 0..=T`. `init` defaults to zeros; `edge_inputs` is
    /// required by the directed aggregator.
    pub fn encode(
        &self,
        tape: &Tape,
        g: &LabeledGraph,
        init: Option<&[Var]>,
        edge_inputs: Option<&EdgeInputs>,
    ) -> Result<Vec<GraphState>> {
        let order: Vec<usize> = (0..g.len()).collect();
        self.encode_in_order(tape, g, init, edge_inputs, &order)
    }

    /// Like [`Grn::encode`] but visits nodes within each step in `order`.
    /// Every node reads the previous state only, so the order cannot
    /// change any value.
    pub fn encode_in_order(
        &self,
        tape: &Tape,
        g: &LabeledGraph,
        init: Option<&[Var]>,
        edge_inputs: Option<&EdgeInputs>,
        order: &[usize],
    ) -> Result<Vec<GraphState>> {
        let n = g.len();
        let d = self.cfg.hidden_dim;
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::invalid(
                "update order is not a permutation of the nodes",
            ));
        }
        let hidden = match init {
            Some(xs) => {
                if xs.len() != n {
                    return Err(Error::invalid(format!(
                        "{} initial states for {n} nodes",
                        xs.len()
                    )));
                }
                for &x in xs {
                    if tape.shape(x) != [d] {
                        return Err(Error::Shape {
                            op: "graph initial state",
                            left: vec![d],
                            right: tape.shape(x),
                        });
                    }
                }
                xs.to_vec()
            }
            None => vec![tape.zeros(d); n],
        };
        if self.cfg.aggregator == Aggregator::DirectedLabeled {
            match edge_inputs {
                None => {
                    return Err(Error::invalid(
                        "directed_labeled aggregation needs edge inputs",
                    ))
                }
                Some(ei)
                    if ei.x_in.len() != n || ei.x_out.len() != n || ei.dim != self.cfg.edge_dim =>
                {
                    return Err(Error::invalid(
                        "edge inputs do not match the graph or edge_dim",
                    ))
                }
                _ => {}
            }
        }

        let zero = tape.zeros(d);
        let topo = Topology::new(g);
        let mut states = vec![GraphState {
            step: 0,
            hidden,
            cell: vec![zero; n],
        }];
        for t in 0..self.cfg.steps {
            let prev = states.last().expect("initial state");
            let mut hidden = vec![zero; n];
            let mut cell = vec![zero; n];
            for &j in order {
                let (h, c) = self.update_node(tape, &topo, prev, edge_inputs, t, j)?;
                hidden[j] = h;
                cell[j] = c;
            }
            states.push(GraphState {
                step: t + 1,
                hidden,
                cell,
            });
        }
        Ok(states)
    }

    fn update_node(
        &self,
        tape: &Tape,
        topo: &Topology,
        prev: &GraphState,
        edge_inputs: Option<&EdgeInputs>,
        t: usize,
        j: usize,
    ) -> Result<(Var, Var)> {
        if let UpdaterParams::Attention(steps) = &self.params {
            let h = self.attend(tape, topo, prev, &steps[t], j)?;
            return Ok((h, prev.cell[j]));
        }
        let m = self.message(tape, topo, prev, edge_inputs, j)?;
        match &self.params {
            UpdaterParams::Lstm(cell) => cell.step(tape, m, prev.cell[j]),
            UpdaterParams::Gru(cell) => Ok((cell.step(tape, m, prev.hidden[j])?, prev.cell[j])),
            UpdaterParams::LinearRelu(steps) => {
                Ok((tape.relu(steps[t].apply(tape, m)?), prev.cell[j]))
            }
            UpdaterParams::Attention(_) => unreachable!("handled above"),
        }
    }

    fn message(
        &self,
        tape: &Tape,
        topo: &Topology,
        prev: &GraphState,
        edge_inputs: Option<&EdgeInputs>,
        j: usize,
    ) -> Result<Var> {
        let d = self.cfg.hidden_dim;
        let gather = |idx: &[usize]| -> Vec<Var> { idx.iter().map(|&i| prev.hidden[i]).collect() };
        let sum_or_zero = |vs: Vec<Var>| -> Result<Var> {
            if vs.is_empty() {
                Ok(tape.zeros(d))
            } else {
                tape.add_n(&vs)
            }
        };
        match self.cfg.aggregator {
            Aggregator::UndirectedSum => sum_or_zero(gather(&topo.neighbors[j])),
            Aggregator::Mean => {
                let nb = gather(&topo.neighbors[j]);
                if nb.is_empty() {
                    Ok(tape.zeros(d))
                } else {
                    tape.mean(&nb)
                }
            }
            Aggregator::Max => {
                let nb = gather(&topo.neighbors[j]);
                if nb.is_empty() {
                    Ok(tape.zeros(d))
                } else {
                    tape.max_n(&nb)
                }
            }
            Aggregator::DirectedLabeled => {
                let ei = edge_inputs.expect("checked before the first step");
                let h_in = sum_or_zero(gather(&topo.in_sources[j]))?;
                let h_out = sum_or_zero(gather(&topo.out_targets[j]))?;
                tape.concat(&[ei.x_in[j], ei.x_out[j], h_in, h_out])
            }
        }
    }

    fn attend(
        &self,
        tape: &Tape,
        topo: &Topology,
        prev: &GraphState,
        heads: &[AttentionHead],
        j: usize,
    ) -> Result<Var> {
        let d = self.cfg.hidden_dim;
        let nb = &topo.neighbors[j];
        if nb.is_empty() {
            return Ok(tape.sigmoid(tape.zeros(d)));
        }
        let rows: Vec<Var> = nb.iter().map(|&i| prev.hidden[i]).collect();
        let scale = 1.0 / (d as f64).sqrt();
        let mut per_head = Vec::with_capacity(heads.len());
        for head in heads {
            let q = tape.matvec(tape.param(head.wq), prev.hidden[j])?;
            let scores = rows
                .iter()
                .map(|&h| tape.dot(q, tape.matvec(tape.param(head.wk), h)?))
                .collect::<Result<Vec<_>>>()?;
            let alpha = tape.softmax(tape.scale(tape.concat(&scores)?, scale))?;
            let combined = match self.cfg.aggregator {
                Aggregator::UndirectedSum => tape.weighted_sum(alpha, &rows)?,
                Aggregator::Mean => {
                    tape.scale(tape.weighted_sum(alpha, &rows)?, 1.0 / rows.len() as f64)
                }
                Aggregator::Max => {
                    let weighted = rows
                        .iter()
                        .enumerate()
                        .map(|(k, &h)| tape.scalar_mul(tape.pick(alpha, k)?, h))
                        .collect::<Result<Vec<_>>>()?;
                    tape.max_n(&weighted)?
                }
                Aggregator::DirectedLabeled => unreachable!("rejected by validate"),
            };
            per_head.push(combined);
        }
        Ok(tape.sigmoid(tape.mean(&per_head)?))
    }
}

/// Neighbor lists read at every step, in ascending source order.
struct Topology {
    /// Distinct in-neighbors.
    neighbors: Vec<Vec<usize>>,
    /// Source of each incoming edge.
    in_sources: Vec<Vec<usize>>,
    /// Target of each outgoing edge.
    out_targets: Vec<Vec<usize>>,
}

impl Topology {
    fn new(g: &LabeledGraph) -> Self {
        let edges = g.edges();
        Topology {
            neighbors: g.in_neighbors(),
            in_sources: g
                .incoming()
                .into_iter()
                .map(|ks| ks.iter().map(|&k| edges[k].src).collect())
                .collect(),
            out_targets: g
                .outgoing()
                .into_iter()
                .map(|ks| ks.iter().map(|&k| edges[k].tgt).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(aggregator: Aggregator, updater: Updater, steps: usize) -> GnnConfig {
        GnnConfig {
            steps,
            aggregator,
            updater,
            attention_heads: 2,
            hidden_dim: 3,
            edge_dim: 2,
            candidate: CandidateActivation::Sigmoid,
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(Aggregator::DirectedLabeled, Updater::Attention, 1)
            .validate()
            .is_err());
        let mut c = cfg(Aggregator::Mean, Updater::Gru, 1);
        c.hidden_dim = 0;
        assert!(c.validate().is_err());
        assert_eq!(
            "linear_relu".parse::<Updater>().unwrap(),
            Updater::LinearRelu
        );
        assert_eq!(Aggregator::DirectedLabeled.to_string(), "directed_labeled");
        assert!("sum".parse::<Aggregator>().is_err());
    }

    #[test]
    fn zero_steps_return_init() {
        let mut store = ParamStore::new(1);
        let grn = Grn::new(
            &mut store,
            "g",
            cfg(Aggregator::UndirectedSum, Updater::Lstm, 0),
        )
        .unwrap();
        let g = LabeledGraph::from_parts(&["a", "b"], &[(0, 1, "x"), (1, 0, "x")]).unwrap();
        let tape = Tape::new(&store);
        let init = vec![
            tape.constant(vec![1.0, 2.0, 3.0]),
            tape.constant(vec![4.0, 5.0, 6.0]),
        ];
        let states = grn.encode(&tape, &g, Some(&init), None).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].hidden, init);
    }

    #[test]
    fn directed_needs_edge_inputs() {
        let mut store = ParamStore::new(1);
        let grn = Grn::new(
            &mut store,
            "g",
            cfg(Aggregator::DirectedLabeled, Updater::Lstm, 1),
        )
        .unwrap();
        let g = LabeledGraph::from_parts(&["a"], &[]).unwrap();
        let tape = Tape::new(&store);
        assert!(grn.encode(&tape, &g, None, None).is_err());
    }

    #[test]
    fn every_combination_runs() {
        let g = LabeledGraph::from_parts(
            &["a", "b", "c", "d"],
            &[(0, 1, "x"), (1, 0, "x"), (1, 2, "y"), (2, 1, "y")],
        )
        .unwrap();
        for agg in [
            Aggregator::UndirectedSum,
            Aggregator::Mean,
            Aggregator::Max,
            Aggregator::DirectedLabeled,
        ] {
            for upd in [
                Updater::Lstm,
                Updater::Gru,
                Updater::LinearRelu,
                Updater::Attention,
            ] {
                let c = cfg(agg, upd, 2);
                if c.validate().is_err() {
                    continue;
                }
                let mut store = ParamStore::new(5);
                let grn = Grn::new(&mut store, "g", c).unwrap();
                let tape = Tape::new(&store);
                let init: Vec<Var> = (0..4)
                    .map(|i| tape.constant(vec![0.1 * i as f64, 0.2, -0.3]))
                    .collect();
                let ev: Vec<Var> = (0..4).map(|k| tape.constant(vec![k as f64, 1.0])).collect();
                let ei = EdgeInputs::from_edges(&tape, &g, &ev, 2).unwrap();
                let states = grn.encode(&tape, &g, Some(&init), Some(&ei)).unwrap();
                assert_eq!(states.len(), 3);
                for s in &states {
                    assert!(s.hidden.iter().all(|h| tape.len(*h) == 3), "{agg} {upd}");
                }
                // node 3 is isolated
                if upd == Updater::Attention {
                    assert_eq!(tape.value(states[2].hidden[3]), [0.5; 3]);
                }
            }
        }
    }
}
