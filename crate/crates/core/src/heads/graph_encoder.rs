use crate::encoders::{
    Affine, Aggregator, EdgeInputs, EdgeRepresentation, GnnConfig, GraphState, Grn, Vocab,
};
use crate::error::Result;
use crate::graph::LabeledGraph;
use crate::tensor::{ParamStore, Tape, Var};

/// A graph recurrent network plus whatever turns node inputs into its
/// starting point: edge representations for the directed aggregator, or a
/// projection of the node inputs into initial states for the others.
#[derive(Debug, Clone)]
pub struct GraphEncoder {
    pub grn: Grn,
    pub edge: Option<EdgeRepresentation>,
    pub init: Option<Affine>,
}

impl GraphEncoder {
    /// Registers `{p}.grn.*`, and `{p}.edge.*` or `{p}.init.*`. With
    /// `explicit_init` the caller supplies initial states and no projection
    /// is built.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        mut gnn: GnnConfig,
        labels: Vocab,
        label_dim: usize,
        node_dim: usize,
        char_dim: Option<usize>,
        explicit_init: bool,
    ) -> Result<Self> {
        let directed = gnn.aggregator == Aggregator::DirectedLabeled;
        if directed {
            gnn.edge_dim = gnn.hidden_dim;
        }
        let d = gnn.hidden_dim;
        let edge = if directed {
            Some(EdgeRepresentation::new(
                store,
                &format!("{prefix}.edge"),
                labels,
                label_dim,
                node_dim,
                char_dim,
                d,
            )?)
        } else {
            None
        };
        let init = if directed || explicit_init {
            None
        } else {
            Some(Affine::new(store, &format!("{prefix}.init"), d, node_dim)?)
        };
        Ok(GraphEncoder {
            grn: Grn::new(store, &format!("{prefix}.grn"), gnn)?,
            edge,
            init,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.grn.cfg.hidden_dim
    }

    /// Runs every step. `init` overrides the starting states; otherwise
    /// directed graphs start from zeros and the rest from projected inputs.
    pub fn encode(
        &self,
        tape: &Tape,
        g: &LabeledGraph,
        node_inputs: &[Var],
        node_chars: Option<&[Var]>,
        init: Option<&[Var]>,
    ) -> Result<Vec<GraphState>> {
        let edge_inputs = match &self.edge {
            Some(rep) => {
                let vectors = rep.encode_edges(tape, g, node_inputs, node_chars)?;
                Some(EdgeInputs::from_edges(tape, g, &vectors, rep.out_dim())?)
            }
            None => None,
        };
        let projected;
        let start = match (init, &self.init) {
            (Some(xs), _) => Some(xs),
            (None, Some(proj)) => {
                projected = node_inputs
                    .iter()
                    .map(|&x| proj.apply(tape, x))
                    .collect::<Result<Vec<_>>>()?;
                Some(projected.as_slice())
            }
            (None, None) => None,
        };
        self.grn.encode(tape, g, start, edge_inputs.as_ref())
    }
}
