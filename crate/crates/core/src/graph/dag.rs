use super::LabeledGraph;
use crate::error::{Error, Result};

/// Splits edges by direction of travel through the node order: `i < j`
/// goes forward, `i > j` goes backward. Both halves keep every node.
pub fn split_dags(g: &LabeledGraph) -> (LabeledGraph, LabeledGraph) {
    let (fwd, bwd): (Vec<_>, Vec<_>) = g.edges().iter().cloned().partition(|e| e.src < e.tgt);
    // self-loops are impossible, so every edge lands in exactly one half
    let forward = LabeledGraph {
        nodes: g.nodes().to_vec(),
        edges: fwd,
    };
    let backward = LabeledGraph {
        nodes: g.nodes().to_vec(),
        edges: bwd,
    };
    (forward, backward)
}

/// Kahn's algorithm, smallest ready index first.
pub fn topological_order(g: &LabeledGraph) -> Result<Vec<usize>> {
    let n = g.len();
    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for e in g.edges() {
        indeg[e.tgt] += 1;
        succ[e.src].push(e.tgt);
    }
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(std::cmp::Reverse)
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(u)) = ready.pop() {
        order.push(u);
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(std::cmp::Reverse(v));
            }
        }
    }
    if order.len() < n {
        let member = (0..n).find(|&i| indeg[i] > 0).expect("some node left");
        return Err(Error::Cycle(member));
    }
    Ok(order)
}

/// Number of nodes on the longest directed path (0 for an empty graph).
pub fn longest_path_nodes(g: &LabeledGraph) -> Result<usize> {
    let order = topological_order(g)?;
    let mut depth = vec![1usize; g.len()];
    let out = g.outgoing();
    for &u in &order {
        for &k in &out[u] {
            let v = g.edges()[k].tgt;
            depth[v] = depth[v].max(depth[u] + 1);
        }
    }
    Ok(depth.into_iter().max().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    #[test]
    fn split_by_direction() {
        let g = LabeledGraph::from_parts(&["a", "b", "c"], &[(0, 1, "a"), (2, 1, "b")]).unwrap();
        let (f, b) = split_dags(&g);
        assert_eq!(f.edges(), [Edge::new(0, 1, "a")]);
        assert_eq!(b.edges(), [Edge::new(2, 1, "b")]);
        assert_eq!(f.nodes(), g.nodes());

        let chain =
            LabeledGraph::from_parts(&["a", "b", "c"], &[(0, 1, "n"), (1, 2, "n")]).unwrap();
        let (f, b) = split_dags(&chain);
        assert_eq!(f.edges().len(), 2);
        assert!(b.edges().is_empty());
    }

    #[test]
    fn cycles_are_reported() {
        let g =
            LabeledGraph::from_parts(&["a", "b", "c"], &[(0, 1, "x"), (1, 2, "x"), (2, 1, "x")])
                .unwrap();
        assert!(matches!(topological_order(&g), Err(Error::Cycle(1 | 2))));
    }

    #[test]
    fn longest_path() {
        let g = LabeledGraph::from_parts(
            &["a", "b", "c", "d"],
            &[(0, 1, "x"), (1, 3, "x"), (0, 2, "x")],
        )
        .unwrap();
        assert_eq!(longest_path_nodes(&g).unwrap(), 3);
        assert_eq!(longest_path_nodes(&LabeledGraph::default()).unwrap(), 0);
    }
}
