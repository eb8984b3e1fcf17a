use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Edge, LabeledGraph, Node};
use crate::error::{Error, Result};

/// Where a graph node sits in the raw passages (inclusive token span),
/// used by sequence baselines that read the passages directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionSpan {
    pub passage: usize,
    pub start: usize,
    pub end: usize,
}

/// One line of a graph dataset. Which optional fields are present depends
/// on the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub id: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<usize>,
    /// Source sentence for models that read text alongside the graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passages: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<Vec<MentionSpan>>,
}

impl TaskInstance {
    pub fn from_graph(id: impl Into<String>, g: &LabeledGraph) -> Self {
        TaskInstance {
            id: id.into(),
            nodes: g.nodes().to_vec(),
            edges: g
                .edges()
                .iter()
                .map(|e| (e.src, e.tgt, e.label.clone()))
                .collect(),
            target: None,
            label: None,
            entities: None,
            question: None,
            candidates: None,
            answer: None,
            source: None,
            passages: None,
            mentions: None,
        }
    }

    pub fn graph(&self) -> Result<LabeledGraph> {
        LabeledGraph::new(
            self.nodes.clone(),
            self.edges
                .iter()
                .map(|(s, t, l)| Edge::new(*s, *t, l.clone()))
                .collect(),
        )
    }

    /// Checks cross-field consistency; returns the offending field name.
    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let n = self.nodes.len();
        self.graph().map_err(|e| ("edges", e.to_string()))?;
        let in_range = |lists: &Vec<Vec<usize>>| lists.iter().flatten().all(|&i| i < n);
        if let Some(ents) = &self.entities {
            if !in_range(ents) || ents.iter().any(Vec::is_empty) {
                return Err((
                    "entities",
                    format!("entity node lists must be non-empty and below {n}"),
                ));
            }
        }
        if let Some(cands) = &self.candidates {
            if !in_range(cands) {
                return Err((
                    "candidates",
                    format!("mention index out of range for {n} nodes"),
                ));
            }
        }
        if let Some(a) = self.answer {
            let k = self.candidates.as_ref().map_or(0, Vec::len);
            if a >= k {
                return Err((
                    "answer",
                    format!("answer {a} out of range for {k} candidates"),
                ));
            }
        }
        if let Some(spans) = &self.mentions {
            if spans.len() != n {
                return Err(("mentions", format!("{} spans for {n} nodes", spans.len())));
            }
            let passages = self.passages.as_deref().unwrap_or(&[]);
            for s in spans {
                let ok = passages
                    .get(s.passage)
                    .is_some_and(|p| s.start <= s.end && s.end < p.len());
                if !ok {
                    return Err(("mentions", format!("span {s:?} does not fit the passages")));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates one dataset line (`line` is 1-based, for errors).
pub fn parse_instance_line(text: &str, path: &Path, line: usize) -> Result<TaskInstance> {
    let inst: TaskInstance = serde_json::from_str(text).map_err(|e| Error::Jsonl {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })?;
    inst.check().map_err(|(field, message)| Error::Jsonl {
        path: path.to_path_buf(),
        line,
        message: format!("field `{field}`: {message}"),
    })?;
    Ok(inst)
}

fn read_lines<T>(path: &Path, mut parse: impl FnMut(&str, usize) -> Result<T>) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_graph_jsonl(path: impl AsRef<Path>) -> Result<Vec<TaskInstance>> {
    let path = path.as_ref();
    read_lines(path, |text, line| parse_instance_line(text, path, line))
}

pub fn write_graph_jsonl(instances: &[TaskInstance], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(instances, path)
}

/// Reads any JSON-lines file of `T`, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    read_lines(path, |text, line| {
        serde_json::from_str(text).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })
    })
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
