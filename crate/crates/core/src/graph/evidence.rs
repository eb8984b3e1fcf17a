use serde::{Deserialize, Serialize};

use super::{Edge, LabeledGraph, MentionSpan, Node, TaskInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    /// Inclusive token offsets.
    pub start: usize,
    pub end: usize,
    pub entity: usize,
    #[serde(default)]
    pub is_pronoun: bool,
    #[serde(default)]
    pub is_candidate: bool,
}

/// One passage with its entity mentions and coreference links
/// (pairs of indices into `mentions`).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MentionAnnotation {
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
    #[serde(default)]
    pub coref_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Same,
    Coref,
    Window,
}

impl EdgeKind {
    pub fn label(self) -> &'static str {
        match self {
            EdgeKind::Same => "same",
            EdgeKind::Coref => "coref",
            EdgeKind::Window => "window",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceGraphConfig {
    /// Same-entity mentions inside one passage are linked only beyond this
    /// token distance.
    pub tau_l: usize,
    /// Different-entity mentions inside one passage are linked within this
    /// token distance.
    pub tau_s: usize,
    pub max_neighbors: usize,
    pub priority: Vec<EdgeKind>,
}

impl Default for EvidenceGraphConfig {
    fn default() -> Self {
        EvidenceGraphConfig {
            tau_l: 200,
            tau_s: 20,
            max_neighbors: 200,
            priority: vec![EdgeKind::Same, EdgeKind::Coref, EdgeKind::Window],
        }
    }
}

impl EvidenceGraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_s >= self.tau_l {
            return Err(Error::Config(format!(
                "tau_s ({}) must be below tau_l ({})",
                self.tau_s, self.tau_l
            )));
        }
        if self.max_neighbors == 0 {
            return Err(Error::Config("max_neighbors must be at least 1".into()));
        }
        Ok(())
    }

    pub fn priority_labels(&self) -> Vec<&'static str> {
        self.priority.iter().map(|k| k.label()).collect()
    }
}

fn validate_passages(passages: &[MentionAnnotation]) -> Result<()> {
    let mut entities = Vec::new();
    for (p, ann) in passages.iter().enumerate() {
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for (m, men) in ann.mentions.iter().enumerate() {
            if men.start > men.end || men.end >= ann.tokens.len() {
                return Err(Error::Graph(format!(
                    "passage {p} mention {m}: span [{}, {}] out of range for {} tokens",
                    men.start,
                    men.end,
                    ann.tokens.len()
                )));
            }
            if spans.iter().any(|&(s, e)| men.start <= e && s <= men.end) {
                return Err(Error::Graph(format!(
                    "passage {p} mention {m} overlaps another mention"
                )));
            }
            spans.push((men.start, men.end));
            entities.push(men.entity);
        }
        for &(a, b) in &ann.coref_pairs {
            if a >= ann.mentions.len() || b >= ann.mentions.len() || a == b {
                return Err(Error::Graph(format!(
                    "passage {p}: bad coreference pair ({a}, {b})"
                )));
            }
        }
    }
    entities.sort_unstable();
    entities.dedup();
    if entities.iter().enumerate().any(|(i, &e)| i != e) {
        return Err(Error::Graph("entity ids must be dense from 0".into()));
    }
    Ok(())
}

/// One node per mention (passage order), two opposite edges per linked
/// pair. When several rules fire for a pair the label is the strongest of
/// same, coref, window, in that order.
pub fn build_evidence_graph(
    passages: &[MentionAnnotation],
    cfg: &EvidenceGraphConfig,
) -> Result<LabeledGraph> {
    cfg.validate()?;
    validate_passages(passages)?;

    struct Flat {
        passage: usize,
        local: usize,
        mention: Mention,
    }
    let mut flat = Vec::new();
    let mut graph = LabeledGraph::default();
    for (p, ann) in passages.iter().enumerate() {
        for (local, m) in ann.mentions.iter().enumerate() {
            flat.push(Flat {
                passage: p,
                local,
                mention: *m,
            });
            graph.push_node(Node::new(ann.tokens[m.start..=m.end].join(" ")));
        }
    }

    for a in 0..flat.len() {
        for b in a + 1..flat.len() {
            let (x, y) = (&flat[a], &flat[b]);
            let same_passage = x.passage == y.passage;
            let dist = x.mention.start.abs_diff(y.mention.start);
            let kind = if x.mention.entity == y.mention.entity
                && (!same_passage || dist > cfg.tau_l)
            {
                Some(EdgeKind::Same)
            } else if same_passage
                && passages[x.passage]
                    .coref_pairs
                    .iter()
                    .any(|&(i, j)| (i, j) == (x.local, y.local) || (j, i) == (x.local, y.local))
            {
                Some(EdgeKind::Coref)
            } else if same_passage && x.mention.entity != y.mention.entity && dist <= cfg.tau_s {
                Some(EdgeKind::Window)
            } else {
                None
            };
            if let Some(kind) = kind {
                graph.push_edge(Edge::new(a, b, kind.label()))?;
                graph.push_edge(Edge::new(b, a, kind.label()))?;
            }
        }
    }
    Ok(graph)
}

/// A raw reading-comprehension item: annotated passages, a question, and
/// candidate answers given as entity ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceRecord {
    pub id: String,
    pub passages: Vec<MentionAnnotation>,
    pub question: Vec<String>,
    pub candidates: Vec<usize>,
    /// Index into `candidates`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
}

impl EvidenceRecord {
    /// Builds and truncates the evidence graph and maps each candidate
    /// entity to the nodes of its mentions.
    pub fn to_instance(&self, cfg: &EvidenceGraphConfig) -> Result<TaskInstance> {
        let full = build_evidence_graph(&self.passages, cfg)?;
        let graph = truncate_neighbors(&full, cfg.max_neighbors, &cfg.priority_labels())?;
        let mut spans = Vec::new();
        let mut entity_of = Vec::new();
        for (p, ann) in self.passages.iter().enumerate() {
            for m in &ann.mentions {
                spans.push(MentionSpan {
                    passage: p,
                    start: m.start,
                    end: m.end,
                });
                entity_of.push(m.entity);
            }
        }
        let candidates = self
            .candidates
            .iter()
            .map(|&e| {
                let owned: Vec<usize> = (0..entity_of.len())
                    .filter(|&k| entity_of[k] == e)
                    .collect();
                if owned.is_empty() {
                    Err(Error::Graph(format!(
                        "{}: candidate entity {e} has no mentions",
                        self.id
                    )))
                } else {
                    Ok(owned)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(a) = self.answer {
            if a >= candidates.len() {
                return Err(Error::Graph(format!(
                    "{}: answer {a} out of range",
                    self.id
                )));
            }
        }
        let mut inst = TaskInstance::from_graph(self.id.clone(), &graph);
        inst.question = Some(self.question.clone());
        inst.passages = Some(self.passages.iter().map(|a| a.tokens.clone()).collect());
        inst.mentions = Some(spans);
        inst.candidates = Some(candidates);
        inst.answer = self.answer;
        Ok(inst)
    }
}

/// Caps every node at `k` incoming neighbors, preferring neighbors whose
/// best edge label comes earliest in `priority`, then lower indices. An
/// empty `priority` ranks every label equally. An edge survives when its
/// target kept its source, so a pair stays symmetric only if both ends
/// kept each other.
pub fn truncate_neighbors(g: &LabeledGraph, k: usize, priority: &[&str]) -> Result<LabeledGraph> {
    if k == 0 {
        return Err(Error::Config("neighbor cap must be at least 1".into()));
    }
    let rank = |label: &str| -> Result<usize> {
        if priority.is_empty() {
            return Ok(0);
        }
        priority
            .iter()
            .position(|p| *p == label)
            .ok_or_else(|| Error::Graph(format!("label `{label}` missing from priority list")))
    };
    let mut best: Vec<std::collections::BTreeMap<usize, usize>> = vec![Default::default(); g.len()];
    for e in g.edges() {
        let r = rank(&e.label)?;
        let slot = best[e.tgt].entry(e.src).or_insert(r);
        *slot = (*slot).min(r);
    }
    let kept: Vec<std::collections::HashSet<usize>> = best
        .iter()
        .map(|m| {
            let mut v: Vec<(usize, usize)> = m.iter().map(|(&src, &r)| (r, src)).collect();
            v.sort_unstable();
            v.into_iter().take(k).map(|(_, src)| src).collect()
        })
        .collect();
    let edges = g
        .edges()
        .iter()
        .filter(|e| kept[e.tgt].contains(&e.src))
        .cloned()
        .collect();
    LabeledGraph::new(g.nodes().to_vec(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(n: usize, mentions: &[(usize, usize)]) -> MentionAnnotation {
        MentionAnnotation {
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            mentions: mentions
                .iter()
                .map(|&(start, entity)| Mention {
                    start,
                    end: start,
                    entity,
                    is_pronoun: false,
                    is_candidate: false,
                })
                .collect(),
            coref_pairs: vec![],
        }
    }

    #[test]
    fn same_entity_across_passages() {
        let g = build_evidence_graph(
            &[passage(3, &[(1, 0)]), passage(3, &[(0, 0)])],
            &Default::default(),
        )
        .unwrap();
        assert_eq!(
            g.edges(),
            [Edge::new(0, 1, "same"), Edge::new(1, 0, "same")]
        );
    }

    #[test]
    fn window_edges() {
        let g =
            build_evidence_graph(&[passage(10, &[(2, 0), (7, 1)])], &Default::default()).unwrap();
        assert_eq!(
            g.edges(),
            [Edge::new(0, 1, "window"), Edge::new(1, 0, "window")]
        );
    }

    #[test]
    fn near_same_entity_in_one_passage_is_omitted() {
        let cfg = EvidenceGraphConfig {
            tau_l: 5,
            tau_s: 2,
            ..Default::default()
        };
        let g = build_evidence_graph(&[passage(20, &[(0, 0), (3, 0), (10, 0)])], &cfg).unwrap();
        // 0-1 at distance 3 ≤ τ_L: nothing; 0-2 and 1-2 beyond τ_L: same
        assert_eq!(g.edges().len(), 4);
        assert!(g
            .edges()
            .iter()
            .all(|e| e.label == "same" && (e.src == 2 || e.tgt == 2)));
    }

    #[test]
    fn bad_input() {
        assert!(build_evidence_graph(&[passage(2, &[(2, 0)])], &Default::default()).is_err());
        assert!(build_evidence_graph(&[passage(4, &[(0, 1)])], &Default::default()).is_err());
        let cfg = EvidenceGraphConfig {
            tau_l: 10,
            tau_s: 10,
            ..Default::default()
        };
        assert!(build_evidence_graph(&[], &cfg).is_err());
    }

    #[test]
    fn truncation() {
        let g = LabeledGraph::from_parts(
            &["c", "a", "b", "d"],
            &[(1, 0, "window"), (2, 0, "window"), (3, 0, "same")],
        )
        .unwrap();
        let pri = ["same", "coref", "window"];
        assert_eq!(truncate_neighbors(&g, 5, &pri).unwrap(), g);
        let t = truncate_neighbors(&g, 1, &pri).unwrap();
        assert_eq!(t.edges(), [Edge::new(3, 0, "same")]);
        assert!(truncate_neighbors(&g, 1, &["same"]).is_err());
    }

    #[test]
    fn record_maps_candidates_to_mention_nodes() {
        let rec = EvidenceRecord {
            id: "q".into(),
            passages: vec![passage(4, &[(0, 0), (2, 1)]), passage(3, &[(1, 1)])],
            question: vec!["who".into()],
            candidates: vec![1, 0],
            answer: Some(0),
        };
        let inst = rec.to_instance(&EvidenceGraphConfig::default()).unwrap();
        assert_eq!(inst.candidates, Some(vec![vec![1, 2], vec![0]]));
        assert_eq!(inst.nodes.len(), 3);
        assert_eq!(
            inst.mentions.as_ref().unwrap()[2],
            MentionSpan {
                passage: 1,
                start: 1,
                end: 1
            }
        );
        inst.graph().unwrap();
        let bad = EvidenceRecord {
            candidates: vec![2],
            ..rec
        };
        assert!(bad.to_instance(&EvidenceGraphConfig::default()).is_err());
    }
}
