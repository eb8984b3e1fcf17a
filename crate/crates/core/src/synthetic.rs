//! Seeded toy datasets with known structure, for overfitting checks,
//! benchmarks and smoke tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{
    EvidenceGraphConfig, EvidenceRecord, LabeledGraph, Mention, MentionAnnotation, Node,
    TaskInstance,
};

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Chains of 3 to 5 distinct concepts linked by `next` edges; the target
/// reads the concepts off in chain order.
pub fn label_sequence_graphs(n: usize, seed: u64) -> Vec<TaskInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = words("c", 8);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(3..=5);
            let toks: Vec<String> = pool.choose_multiple(&mut rng, len).cloned().collect();
            let mut inst = TaskInstance::from_graph(format!("g{i}"), &chain(&toks));
            inst.target = Some(toks);
            inst
        })
        .collect()
}

fn chain(tokens: &[String]) -> LabeledGraph {
    let nodes = tokens.iter().map(|t| Node::new(t.clone())).collect();
    let edges = (1..tokens.len())
        .map(|j| crate::graph::Edge::new(j - 1, j, "next"))
        .collect();
    LabeledGraph::new(nodes, edges).expect("chain is valid")
}

/// A sentence, a chain graph over the same tokens, and the sentence as
/// target.
pub fn dual_copy_instances(n: usize, seed: u64) -> Vec<TaskInstance> {
    label_sequence_graphs(n, seed)
        .into_iter()
        .map(|mut inst| {
            inst.source = inst.target.clone();
            inst
        })
        .collect()
}

pub const RELATION_CLASSES: [&str; 3] = ["None", "agent_of", "patient_of"];

/// Six-word documents linked by `next` edges with two single-node
/// entities. The class is fixed by a planted two-edge path from the first
/// entity to the second: `nsubj` then `dobj` gives `agent_of`, `dobj` then
/// `nsubj` gives `patient_of`; `None` instances carry only a dangling
/// first edge.
pub fn planted_path_relations(n: usize, seed: u64) -> Vec<TaskInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = words("w", 10);
    (0..n)
        .map(|i| {
            let len = 6;
            let toks: Vec<String> = (0..len)
                .map(|_| pool.choose(&mut rng).expect("pool").clone())
                .collect();
            let mut edges: Vec<(usize, usize, String)> =
                (1..len).map(|j| (j - 1, j, "next".to_string())).collect();
            let mut ids: Vec<usize> = (0..len).collect();
            ids.shuffle(&mut rng);
            let (a, x, b) = (ids[0], ids[1], ids[2]);
            let class = i % RELATION_CLASSES.len();
            match class {
                1 => {
                    edges.push((a, x, "nsubj".into()));
                    edges.push((x, b, "dobj".into()));
                }
                2 => {
                    edges.push((a, x, "dobj".into()));
                    edges.push((x, b, "nsubj".into()));
                }
                _ => {
                    let l = if rng.gen_bool(0.5) { "nsubj" } else { "dobj" };
                    edges.push((a, x, l.into()));
                }
            }
            let mut inst = TaskInstance::from_graph(
                format!("r{i}"),
                &LabeledGraph::from_parts(
                    &toks.iter().map(String::as_str).collect::<Vec<_>>(),
                    &[],
                )
                .expect("nodes only"),
            );
            inst.edges = edges;
            inst.entities = Some(vec![vec![a], vec![b]]);
            inst.label = Some(RELATION_CLASSES[class].to_string());
            inst
        })
        .collect()
}

/// Two-hop reading comprehension. The question names an entity `Q`; one
/// passage pairs `Q` with a bridge `B`, another pairs `B` with the answer
/// `A`, and a third pairs an unrelated `C` with the distractor `D`. The two
/// candidate passages look alike, so only evidence reaching `A` from `Q`
/// through `B` separates them.
pub fn two_hop_mhrc(n: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = words("e", 24);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ents: Vec<String> = pool.choose_multiple(&mut rng, 5).cloned().collect();
        let (q, b, a, c, d) = (0, 1, 2, 3, 4);
        let mut passages = [(q, "and", b), (b, "with", a), (c, "with", d)];
        passages.shuffle(&mut rng);
        let annotations: Vec<MentionAnnotation> = passages
            .iter()
            .map(|&(x, link, y)| MentionAnnotation {
                tokens: vec![ents[x].clone(), link.to_string(), ents[y].clone()],
                mentions: vec![
                    Mention {
                        start: 0,
                        end: 0,
                        entity: x,
                        is_pronoun: false,
                        is_candidate: x == a || x == d,
                    },
                    Mention {
                        start: 2,
                        end: 2,
                        entity: y,
                        is_pronoun: false,
                        is_candidate: y == a || y == d,
                    },
                ],
                coref_pairs: vec![],
            })
            .collect();
        let answer_first = rng.gen_bool(0.5);
        let record = EvidenceRecord {
            id: format!("q{i}"),
            passages: annotations,
            question: vec!["where".into(), "is".into(), ents[q].clone()],
            candidates: if answer_first { vec![a, d] } else { vec![d, a] },
            answer: Some(if answer_first { 0 } else { 1 }),
        };
        let inst = record.to_instance(&EvidenceGraphConfig::default())?;
        out.push(inst);
    }
    Ok(out)
}
