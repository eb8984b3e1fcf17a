use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Vectors the decoder attends over, with the source token each one
/// stands for (used by the copy mechanism).
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    pub vectors: Vec<Var>,
    pub source_tokens: Vec<String>,
}

impl AttentionMemory {
    pub fn new(vectors: Vec<Var>, source_tokens: Vec<String>) -> Result<Self> {
        if vectors.len() != source_tokens.len() {
            return Err(Error::invalid(format!(
                "{} memory vectors but {} source tokens",
                vectors.len(),
                source_tokens.len()
            )));
        }
        if vectors.is_empty() {
            return Err(Error::invalid("empty attention memory"));
        }
        Ok(AttentionMemory {
            vectors,
            source_tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// A memory with `W_a·a_i` precomputed, since it does not change across
/// decoding steps.
#[derive(Debug, Clone)]
pub struct PreparedMemory {
    pub memory: AttentionMemory,
    pub keys: Vec<Var>,
}

impl PreparedMemory {
    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }

    /// Copies the values out so that later steps can run on fresh tapes.
    pub fn freeze(&self, tape: &Tape) -> FrozenMemory {
        FrozenMemory {
            vectors: self.memory.vectors.iter().map(|v| tape.value(*v)).collect(),
            keys: self.keys.iter().map(|v| tape.value(*v)).collect(),
            source_tokens: self.memory.source_tokens.clone(),
        }
    }
}

/// Plain-value copy of a [`PreparedMemory`].
#[derive(Debug, Clone)]
pub struct FrozenMemory {
    pub vectors: Vec<Vec<f64>>,
    pub keys: Vec<Vec<f64>>,
    pub source_tokens: Vec<String>,
}

impl FrozenMemory {
    pub fn thaw(&self, tape: &Tape) -> PreparedMemory {
        PreparedMemory {
            memory: AttentionMemory {
                vectors: self
                    .vectors
                    .iter()
                    .map(|v| tape.constant(v.clone()))
                    .collect(),
                source_tokens: self.source_tokens.clone(),
            },
            keys: self.keys.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }
}

/// `ε_i = v·tanh(W_a·a_i + W_s·s + w_γ·γ_i + b)`, `α = softmax(ε)`,
/// context `Σ α_i a_i`. Parameters `{p}.w_a`, `{p}.w_s`, `{p}.b`, `{p}.v`
/// and, with coverage, `{p}.w_cov`.
#[derive(Debug, Clone)]
pub struct AdditiveAttention {
    w_a: ParamId,
    w_s: ParamId,
    b: ParamId,
    v: ParamId,
    w_cov: Option<ParamId>,
    pub memory_dim: usize,
    pub query_dim: usize,
}

impl AdditiveAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        memory_dim: usize,
        query_dim: usize,
        attention_dim: usize,
        coverage: bool,
    ) -> Result<Self> {
        let k = attention_dim;
        Ok(AdditiveAttention {
            w_a: store.add(&format!("{prefix}.w_a"), &[k, memory_dim])?,
            w_s: store.add(&format!("{prefix}.w_s"), &[k, query_dim])?,
            b: store.add_zeros(&format!("{prefix}.b"), &[k])?,
            v: store.add(&format!("{prefix}.v"), &[k])?,
            w_cov: if coverage {
                Some(store.add(&format!("{prefix}.w_cov"), &[k])?)
            } else {
                None
            },
            memory_dim,
            query_dim,
        })
    }

    pub fn has_coverage(&self) -> bool {
        self.w_cov.is_some()
    }

    pub fn prepare(&self, tape: &Tape, memory: AttentionMemory) -> Result<PreparedMemory> {
        if memory.is_empty() {
            return Err(Error::invalid("empty attention memory"));
        }
        let w_a = tape.param(self.w_a);
        let keys = memory
            .vectors
            .iter()
            .map(|&a| tape.matvec(w_a, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedMemory { memory, keys })
    }

    /// Returns `(α, context)`. `coverage` is ignored when the attention was
    /// built without a coverage weight.
    pub fn attend(
        &self,
        tape: &Tape,
        memory: &PreparedMemory,
        s: Var,
        coverage: Option<Var>,
    ) -> Result<(Var, Var)> {
        let n = memory.len();
        if n == 0 {
            return Err(Error::invalid("empty attention memory"));
        }
        let cov = match (self.w_cov, coverage) {
            (Some(w), Some(g)) => {
                if tape.len(g) != n {
                    return Err(Error::Shape {
                        op: "coverage",
                        left: vec![tape.len(g)],
                        right: vec![n],
                    });
                }
                Some((tape.param(w), g))
            }
            _ => None,
        };
        let q = tape.linear(s, tape.param(self.w_s), tape.param(self.b))?;
        let v = tape.param(self.v);
        let mut scores = Vec::with_capacity(n);
        for (i, &key) in memory.keys.iter().enumerate() {
            let mut pre = tape.add(key, q)?;
            if let Some((w, g)) = cov {
                pre = tape.add(pre, tape.scalar_mul(tape.pick(g, i)?, w)?)?;
            }
            scores.push(tape.dot(v, tape.tanh(pre))?);
        }
        let alpha = tape.softmax(tape.concat(&scores)?)?;
        let context = tape.weighted_sum(alpha, &memory.memory.vectors)?;
        Ok((alpha, context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn memory(tape: &Tape, rows: &[&[f64]]) -> AttentionMemory {
        AttentionMemory::new(
            rows.iter().map(|r| tape.constant(r.to_vec())).collect(),
            (0..rows.len()).map(|i| format!("t{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_projections_average_the_memory() {
        let mut store = ParamStore::new(3);
        let att = AdditiveAttention::new(&mut store, "att", 2, 3, 4, false).unwrap();
        store.fill_with(|name, _, v| {
            if name.ends_with("w_a") || name.ends_with("w_s") {
                0.0
            } else {
                v
            }
        });
        let tape = Tape::new(&store);
        let mem = att
            .prepare(
                &tape,
                memory(&tape, &[&[1.0, 2.0], &[3.0, 6.0], &[5.0, 1.0]]),
            )
            .unwrap();
        let (a, ctx) = att
            .attend(&tape, &mem, tape.constant(vec![1.0, 1.0, 1.0]), None)
            .unwrap();
        for x in tape.value(a) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = tape.value(ctx);
        assert!((c[0] - 3.0).abs() < 1e-12 && (c[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_entry() {
        let mut store = ParamStore::new(3);
        let att = AdditiveAttention::new(&mut store, "att", 2, 2, 2, true).unwrap();
        let tape = Tape::new(&store);
        let mem = att.prepare(&tape, memory(&tape, &[&[0.5, -0.5]])).unwrap();
        let (a, ctx) = att
            .attend(
                &tape,
                &mem,
                tape.constant(vec![1.0, 0.0]),
                Some(tape.constant(vec![2.0])),
            )
            .unwrap();
        assert_eq!(tape.value(a), [1.0]);
        assert_eq!(tape.value(ctx), [0.5, -0.5]);
        assert!(att
            .attend(&tape, &mem, tape.zeros(2), Some(tape.zeros(3)))
            .is_err());
    }

    #[test]
    fn empty_memory_is_an_error() {
        assert!(AttentionMemory::new(vec![], vec![]).is_err());
    }
}
