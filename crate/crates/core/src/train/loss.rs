use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−Σ_m log p_m[gold_m]` over one output sequence.
pub fn sequence_loss(tape: &Tape, dists: &[Var], gold: &[usize]) -> Result<Var> {
    if dists.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} output distributions for {} gold tokens",
            dists.len(),
            gold.len()
        )));
    }
    if dists.is_empty() {
        return Err(Error::invalid("empty output sequence"));
    }
    let terms = dists
        .iter()
        .zip(gold)
        .map(|(&p, &g)| tape.nll(p, g))
        .collect::<Result<Vec<_>>>()?;
    tape.add_n(&terms)
}

/// `−log p[gold]`, clamped at [`PROB_FLOOR`] with a logged warning.
pub fn classification_loss(tape: &Tape, p: Var, gold: usize) -> Result<Var> {
    let n = tape.len(p);
    if gold >= n {
        return Err(Error::invalid(format!(
            "gold class {gold} out of range for {n} classes"
        )));
    }
    let pg = tape.with_value(p, |v| v[gold]);
    if pg < PROB_FLOOR {
        log::warn!("gold probability {pg:e} clamped at {PROB_FLOOR:e}");
    }
    tape.nll(p, gold)
}

/// `weight · Σ‖θ‖²` over every parameter of the tape's store.
pub fn l2_penalty(tape: &Tape, weight: f64) -> Result<Var> {
    let store = tape.store();
    let terms = store
        .ids()
        .map(|id| {
            let p = tape.param(id);
            tape.dot(p, p)
        })
        .collect::<Result<Vec<_>>>()?;
    if terms.is_empty() {
        return Ok(tape.scalar_constant(0.0));
    }
    Ok(tape.scale(tape.add_n(&terms)?, weight))
}
