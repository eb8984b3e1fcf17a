use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

pub const UNK: &str = "UNK";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// String to index map. Index 0 is always `UNK`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn new() -> Self {
        Vocab {
            tokens: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        }
    }

    /// `UNK`, `<s>`, `</s>` at indices 0, 1, 2.
    pub fn with_specials() -> Self {
        let mut v = Vocab::new();
        v.insert(BOS);
        v.insert(EOS);
        v
    }

    /// Builds from token occurrences, most frequent first (ties
    /// alphabetical), keeping tokens seen at least `min_count` times.
    pub fn from_tokens<'a>(
        base: Vocab,
        tokens: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = base;
        for (t, _) in ranked {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    /// Index of `token`, or 0 (`UNK`) when absent.
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn find(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One row per vocabulary entry. A frozen table is read as constants, so
/// no gradient reaches it.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    pub matrix: ParamId,
    pub dim: usize,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, name: &str, vocab: Vocab, dim: usize) -> Result<Self> {
        let matrix = store.add(name, &[vocab.len(), dim])?;
        Ok(EmbeddingTable {
            vocab,
            matrix,
            dim,
            trainable: true,
        })
    }

    /// Overwrites the rows of tokens found in `vectors`.
    pub fn load_vectors(
        &self,
        store: &mut ParamStore,
        vectors: &HashMap<String, Vec<f64>>,
    ) -> Result<usize> {
        let dim = self.dim;
        let mut hits = 0;
        let t = store.get_mut(self.matrix);
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.get(tok) {
                if v.len() != dim {
                    return Err(Error::invalid(format!(
                        "pretrained vector for `{tok}` has {} dims, table has {dim}",
                        v.len()
                    )));
                }
                t.values[i * dim..(i + 1) * dim].copy_from_slice(v);
                hits += 1;
            }
        }
        Ok(hits)
    }

    pub fn index(&self, token: &str) -> usize {
        self.vocab.get(token)
    }

    pub fn lookup(&self, tape: &Tape, token: &str) -> Result<Var> {
        self.lookup_index(tape, self.index(token))
    }

    pub fn lookup_index(&self, tape: &Tape, idx: usize) -> Result<Var> {
        if self.trainable {
            tape.row(tape.param(self.matrix), idx)
        } else {
            let values = &tape.store().get(self.matrix).values;
            if idx >= self.vocab.len() {
                return Err(Error::invalid(format!(
                    "row {idx} out of range for {} rows",
                    self.vocab.len()
                )));
            }
            Ok(tape.constant(values[idx * self.dim..(idx + 1) * self.dim].to_vec()))
        }
    }
}

/// Reads whitespace-separated `word v1 … vd` lines (GloVe text format),
/// keeping only words in `vocab` and rows of width `dim`.
pub fn read_word_vectors(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
) -> Result<HashMap<String, Vec<f64>>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = HashMap::new();
    for line in reader.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if !vocab.contains(word) {
            continue;
        }
        let values: Vec<f64> = parts.filter_map(|p| p.parse().ok()).collect();
        if values.len() == dim {
            out.insert(word.to_string(), values);
        }
    }
    Ok(out)
}

/// `W·x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
    pub out_dim: usize,
    pub in_dim: usize,
}

impl Affine {
    /// Registers `{name}.w` (random) and `{name}.b` (zeros).
    pub fn new(store: &mut ParamStore, name: &str, out_dim: usize, in_dim: usize) -> Result<Self> {
        Ok(Affine {
            w: store.add(&format!("{name}.w"), &[out_dim, in_dim])?,
            b: store.add_zeros(&format!("{name}.b"), &[out_dim])?,
            out_dim,
            in_dim,
        })
    }

    pub fn apply(&self, tape: &Tape, x: Var) -> Result<Var> {
        tape.linear(x, tape.param(self.w), tape.param(self.b))
    }
}

/// Looks every token up; with `compress` each row goes through the affine
/// map.
pub fn embed_tokens(
    tape: &Tape,
    tokens: &[impl AsRef<str>],
    table: &EmbeddingTable,
    compress: Option<&Affine>,
) -> Result<Vec<Var>> {
    tokens
        .iter()
        .map(|t| {
            let e = table.lookup(tape, t.as_ref())?;
            match compress {
                Some(a) => a.apply(tape, e),
                None => Ok(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(store: &mut ParamStore) -> EmbeddingTable {
        let vocab = Vocab::from(vec!["a".to_string(), "b".to_string()]);
        EmbeddingTable::new(store, "emb", vocab, 2).unwrap()
    }

    #[test]
    fn vocab_layout() {
        let v = Vocab::with_specials();
        assert_eq!(
            (v.get(UNK), v.get(BOS), v.get(EOS), v.get("zzz")),
            (0, 1, 2, 0)
        );
        let v = Vocab::from_tokens(Vocab::new(), ["b", "a", "b", "c"], 1);
        assert_eq!(v.tokens(), ["UNK", "b", "a", "c"]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn unseen_token_reads_unk_row() {
        let mut store = ParamStore::new(1);
        let t = table(&mut store);
        let tape = Tape::new(&store);
        let unk = tape.value(t.lookup(&tape, "nope").unwrap());
        assert_eq!(unk, store.get(t.matrix).values[0..2]);
    }

    #[test]
    fn constant_compress() {
        let mut store = ParamStore::new(1);
        let t = table(&mut store);
        let c = Affine::new(&mut store, "c", 3, 2).unwrap();
        store.fill_with(|name, i, v| match name {
            "c.w" => 0.0,
            "c.b" => i as f64 + 1.0,
            _ => v,
        });
        let tape = Tape::new(&store);
        for x in embed_tokens(&tape, &["a", "b", "q"], &t, Some(&c)).unwrap() {
            assert_eq!(tape.value(x), [1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn identity_compress_returns_rows() {
        let mut store = ParamStore::new(4);
        let t = table(&mut store);
        let c = Affine::new(&mut store, "c", 2, 2).unwrap();
        store.set_values("c.w", &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = store.get(t.matrix).values.clone();
        let tape = Tape::new(&store);
        let xs = embed_tokens(&tape, &["b", "a", "b"], &t, Some(&c)).unwrap();
        let want = [&m[4..6], &m[2..4], &m[4..6]];
        for (x, w) in xs.iter().zip(want) {
            assert_eq!(tape.value(*x), w);
        }
    }

    #[test]
    fn frozen_table_gets_no_gradient() {
        let mut store = ParamStore::new(2);
        let mut t = table(&mut store);
        t.trainable = false;
        let tape = Tape::new(&store);
        let loss = tape.sum(t.lookup(&tape, "a").unwrap());
        let g = tape.gradients(loss).unwrap();
        assert!(g.get(t.matrix).is_none());
    }

    #[test]
    fn pretrained_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        std::fs::write(&p, "a 0.5 -1\nzz 1 1\nb 1\n").unwrap();
        let mut store = ParamStore::new(3);
        let t = table(&mut store);
        let vecs = read_word_vectors(&p, &t.vocab, 2).unwrap();
        assert_eq!(t.load_vectors(&mut store, &vecs).unwrap(), 1);
        assert_eq!(store.get(t.matrix).values[2..4], [0.5, -1.0]);
    }
}
