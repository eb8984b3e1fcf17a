//! Labeled directed graphs and the procedures that build them: AMR
//! parsing and linearization, evidence graphs over entity mentions, and
//! DAG splitting.

mod amr;
mod dag;
mod evidence;
mod jsonl;

pub use amr::{linearize_amr, parse_amr, parse_amr_blocks, pretty_print_amr, strip_sense};
pub use dag::{longest_path_nodes, split_dags, topological_order};
pub use evidence::{
    build_evidence_graph, truncate_neighbors, EdgeKind, EvidenceGraphConfig, EvidenceRecord,
    Mention, MentionAnnotation,
};
pub use jsonl::{
    parse_instance_line, read_graph_jsonl, read_jsonl, write_graph_jsonl, write_jsonl, MentionSpan,
    TaskInstance,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characters: Option<String>,
}

impl Node {
    pub fn new(token: impl Into<String>) -> Self {
        Node {
            token: token.into(),
            characters: None,
        }
    }

    /// Characters fed to the character encoder; the token itself unless
    /// overridden.
    pub fn chars(&self) -> &str {
        self.characters.as_deref().unwrap_or(&self.token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: usize,
    pub tgt: usize,
    pub label: String,
}

impl Edge {
    pub fn new(src: usize, tgt: usize, label: impl Into<String>) -> Self {
        Edge {
            src,
            tgt,
            label: label.into(),
        }
    }
}

/// Nodes carrying tokens plus directed `(src, tgt, label)` edges.
///
/// Edge order is insertion order. Neighbor queries return ascending node
/// indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl LabeledGraph {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let g = LabeledGraph { nodes, edges };
        g.validate()?;
        Ok(g)
    }

    /// Convenience constructor from bare tokens and `(src, tgt, label)`.
    pub fn from_parts(tokens: &[&str], edges: &[(usize, usize, &str)]) -> Result<Self> {
        LabeledGraph::new(
            tokens.iter().map(|t| Node::new(*t)).collect(),
            edges
                .iter()
                .map(|(s, t, l)| Edge::new(*s, *t, *l))
                .collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (k, e) in self.edges.iter().enumerate() {
            if e.src >= n || e.tgt >= n {
                return Err(Error::Graph(format!(
                    "edge {k} ({}, {}) out of range for {n} nodes",
                    e.src, e.tgt
                )));
            }
            if e.src == e.tgt {
                return Err(Error::Graph(format!(
                    "edge {k} is a self-loop on node {}",
                    e.src
                )));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.nodes[i].token
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.token.as_str()).collect()
    }

    pub(crate) fn push_node(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub(crate) fn push_edge(&mut self, e: Edge) -> Result<()> {
        if e.src >= self.nodes.len() || e.tgt >= self.nodes.len() || e.src == e.tgt {
            return Err(Error::Graph(format!("invalid edge ({}, {})", e.src, e.tgt)));
        }
        self.edges.push(e);
        Ok(())
    }

    /// Indices into `edges()` of the edges entering each node, ordered by
    /// source index then insertion order.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            inc[e.tgt].push(k);
        }
        for list in &mut inc {
            list.sort_by_key(|&k| self.edges[k].src);
        }
        inc
    }

    /// Indices into `edges()` of the edges leaving each node, ordered by
    /// target index then insertion order.
    pub fn outgoing(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            out[e.src].push(k);
        }
        for list in &mut out {
            list.sort_by_key(|&k| self.edges[k].tgt);
        }
        out
    }

    /// Distinct sources of incoming edges per node, ascending. These are
    /// the nodes a node hears from in undirected message passing; graphs
    /// meant to be undirected carry both edge directions.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            nb[e.tgt].push(e.src);
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }

    /// Adds the reverse of every edge that lacks one, with the same label.
    pub fn symmetrized(&self) -> LabeledGraph {
        let mut seen: std::collections::HashSet<(usize, usize)> =
            self.edges.iter().map(|e| (e.src, e.tgt)).collect();
        let mut edges = self.edges.clone();
        for e in &self.edges {
            if seen.insert((e.tgt, e.src)) {
                edges.push(Edge::new(e.tgt, e.src, e.label.clone()));
            }
        }
        LabeledGraph {
            nodes: self.nodes.clone(),
            edges,
        }
    }

    /// Undirected hop distances from `from` (`usize::MAX` if unreachable).
    pub fn undirected_distances(&self, from: usize) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.src].push(e.tgt);
            adj[e.tgt].push(e.src);
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[from] = 0;
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Renumbers nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<LabeledGraph> {
        let n = self.nodes.len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::Graph("not a permutation".into()));
        }
        let mut nodes = vec![Node::new(""); n];
        for (i, node) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = node.clone();
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge::new(perm[e.src], perm[e.tgt], e.label.clone()))
            .collect();
        LabeledGraph::new(nodes, edges)
    }
}
