use super::cells::LstmCell;
use super::embed::{EmbeddingTable, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Var};

/// Per-position states of a bidirectional pass. `backward[i]` is the
/// right-to-left state after reading position `i`.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    pub inputs: Vec<Var>,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `[h←_i; h→_i]`.
    pub fn states(&self, tape: &Tape, i: usize) -> Result<Var> {
        tape.concat(&[self.backward[i], self.forward[i]])
    }
}

/// Runs `cell` over `inputs` from zero states, returning every hidden
/// state.
pub fn run_lstm(tape: &Tape, cell: &LstmCell, inputs: &[Var]) -> Result<Vec<Var>> {
    let d = cell.hidden_dim;
    let (mut h, mut c) = (tape.zeros(d), tape.zeros(d));
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        (h, c) = cell.step(tape, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}

/// Two LSTMs reading left to right (`{p}.fwd.*`) and right to left
/// (`{p}.bwd.*`).
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        Ok(BiLstm {
            fwd: LstmCell::new(store, &format!("{prefix}.fwd"), input_dim, hidden_dim)?,
            bwd: LstmCell::new(store, &format!("{prefix}.bwd"), input_dim, hidden_dim)?,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.fwd.hidden_dim
    }

    pub fn encode(&self, tape: &Tape, inputs: &[Var]) -> Result<EncoderOutput> {
        if inputs.is_empty() {
            return Err(Error::invalid("bidirectional LSTM over an empty sequence"));
        }
        let forward = run_lstm(tape, &self.fwd, inputs)?;
        let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut backward = run_lstm(tape, &self.bwd, &reversed)?;
        backward.reverse();
        Ok(EncoderOutput {
            forward,
            backward,
            inputs: inputs.to_vec(),
        })
    }
}

/// Forward LSTM over (at most `max_chars`) characters of a token; the
/// last hidden state is the token's vector.
#[derive(Debug, Clone)]
pub struct CharEncoder {
    pub table: EmbeddingTable,
    pub cell: LstmCell,
    pub max_chars: usize,
}

impl CharEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        chars: Vocab,
        char_dim: usize,
        hidden_dim: usize,
        max_chars: usize,
    ) -> Result<Self> {
        if max_chars == 0 {
            return Err(Error::Config("max_chars must be at least 1".into()));
        }
        Ok(CharEncoder {
            table: EmbeddingTable::new(store, &format!("{prefix}.emb"), chars, char_dim)?,
            cell: LstmCell::new(store, &format!("{prefix}.lstm"), char_dim, hidden_dim)?,
            max_chars,
        })
    }

    /// Character vocabulary over every char of `tokens`.
    pub fn vocab_for<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut chars: Vec<String> = tokens
            .into_iter()
            .flat_map(|t| t.chars())
            .map(String::from)
            .collect();
        chars.sort();
        chars.dedup();
        Vocab::from(chars)
    }

    pub fn dim(&self) -> usize {
        self.cell.hidden_dim
    }

    pub fn embed(&self, tape: &Tape, token: &str) -> Result<Var> {
        let mut buf = [0u8; 4];
        let inputs = token
            .chars()
            .take(self.max_chars)
            .map(|ch| self.table.lookup(tape, ch.encode_utf8(&mut buf)))
            .collect::<Result<Vec<_>>>()?;
        match run_lstm(tape, &self.cell, &inputs)?.last() {
            Some(&h) => Ok(h),
            None => Ok(tape.zeros(self.dim())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_position_directions_agree_when_cells_match() {
        let mut store = ParamStore::new(7);
        let bi = BiLstm::new(&mut store, "b", 3, 2).unwrap();
        let fwd: Vec<f64> = store.by_name("b.fwd.w_iou").unwrap().values.clone();
        // copy the forward weights into the backward cell
        for suffix in ["w_iou", "u_iou", "b_iou", "w_f", "u_f", "b_f"] {
            let v = store
                .by_name(&format!("b.fwd.{suffix}"))
                .unwrap()
                .values
                .clone();
            store.set_values(&format!("b.bwd.{suffix}"), &v).unwrap();
        }
        assert_eq!(store.by_name("b.bwd.w_iou").unwrap().values, fwd);
        let tape = Tape::new(&store);
        let out = bi
            .encode(&tape, &[tape.constant(vec![0.1, 0.2, 0.3])])
            .unwrap();
        assert_eq!(tape.value(out.forward[0]), tape.value(out.backward[0]));
    }

    #[test]
    fn zero_params_two_positions() {
        let mut store = ParamStore::with_init_scale(0, 0.0);
        let bi = BiLstm::new(&mut store, "b", 1, 2).unwrap();
        let tape = Tape::new(&store);
        let x = tape.constant(vec![1.0]);
        let out = bi.encode(&tape, &[x, x]).unwrap();
        assert!((tape.value(out.forward[0])[0] - 0.122_459).abs() < 1e-6);
        assert!((tape.value(out.forward[1])[1] - 0.179_179).abs() < 1e-6);
        assert_eq!(tape.value(out.backward[0]), tape.value(out.forward[1]));
        assert!(bi.encode(&tape, &[]).is_err());
    }

    #[test]
    fn char_encoder() {
        let mut store = ParamStore::with_init_scale(0, 0.0);
        let vocab = CharEncoder::vocab_for(["ab"]);
        let ce = CharEncoder::new(&mut store, "ch", vocab.clone(), 2, 3, 20).unwrap();
        let tape = Tape::new(&store);
        assert_eq!(tape.value(ce.embed(&tape, "").unwrap()), [0.0; 3]);
        let one = tape.value(ce.embed(&tape, "a").unwrap());
        assert!((one[0] - 0.5 * 0.25f64.tanh()).abs() < 1e-15);

        let mut store = ParamStore::new(11);
        let ce = CharEncoder::new(&mut store, "ch", vocab, 2, 3, 20).unwrap();
        let tape = Tape::new(&store);
        assert_ne!(
            tape.value(ce.embed(&tape, "ab").unwrap()),
            tape.value(ce.embed(&tape, "ba").unwrap())
        );
    }

    #[test]
    fn char_encoder_truncates() {
        let mut store = ParamStore::new(5);
        let ce =
            CharEncoder::new(&mut store, "ch", CharEncoder::vocab_for(["abcd"]), 2, 2, 2).unwrap();
        let tape = Tape::new(&store);
        assert_eq!(
            tape.value(ce.embed(&tape, "abcd").unwrap()),
            tape.value(ce.embed(&tape, "ab").unwrap())
        );
    }
}
