use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Nonlinearity of the LSTM candidate `u`. The default is the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateActivation {
    #[default]
    Sigmoid,
    Tanh,
}

impl CandidateActivation {
    fn apply(self, tape: &Tape, x: Var) -> Var {
        match self {
            CandidateActivation::Sigmoid => tape.sigmoid(x),
            CandidateActivation::Tanh => tape.tanh(x),
        }
    }
}

impl std::fmt::Display for CandidateActivation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CandidateActivation::Sigmoid => "sigmoid",
            CandidateActivation::Tanh => "tanh",
        })
    }
}

impl std::str::FromStr for CandidateActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(CandidateActivation::Sigmoid),
            "tanh" => Ok(CandidateActivation::Tanh),
            _ => Err(Error::Config(format!("unknown candidate activation `{s}`"))),
        }
    }
}

fn check_dim(tape: &Tape, v: Var, want: usize, what: &'static str) -> Result<()> {
    let got = tape.shape(v);
    if got != [want] {
        return Err(Error::Shape {
            op: what,
            left: vec![want],
            right: got,
        });
    }
    Ok(())
}

fn split3(tape: &Tape, v: Var, d: usize) -> Result<(Var, Var, Var)> {
    Ok((
        tape.slice(v, 0, d)?,
        tape.slice(v, d, d)?,
        tape.slice(v, 2 * d, d)?,
    ))
}

/// LSTM with input, output and candidate computed jointly and the forget
/// gate kept separate, so the same weights serve a sequence (one
/// predecessor) and a DAG (one forget gate per predecessor).
///
/// Parameters: `{p}.w_iou [3d×n]`, `{p}.u_iou [3d×d]`, `{p}.b_iou`,
/// `{p}.w_f [d×n]`, `{p}.u_f [d×d]`, `{p}.b_f`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    w_iou: ParamId,
    u_iou: ParamId,
    b_iou: ParamId,
    w_f: ParamId,
    u_f: ParamId,
    b_f: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub candidate: CandidateActivation,
}

/// One predecessor of a DAG node: the input its forget gate reads plus its
/// hidden and cell states.
#[derive(Debug, Clone, Copy)]
pub struct Predecessor {
    pub input: Var,
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        let d = hidden_dim;
        Ok(LstmCell {
            w_iou: store.add(&format!("{prefix}.w_iou"), &[3 * d, input_dim])?,
            u_iou: store.add(&format!("{prefix}.u_iou"), &[3 * d, d])?,
            b_iou: store.add_zeros(&format!("{prefix}.b_iou"), &[3 * d])?,
            w_f: store.add(&format!("{prefix}.w_f"), &[d, input_dim])?,
            u_f: store.add(&format!("{prefix}.u_f"), &[d, d])?,
            b_f: store.add_zeros(&format!("{prefix}.b_f"), &[d])?,
            input_dim,
            hidden_dim,
            candidate: CandidateActivation::default(),
        })
    }

    pub fn with_candidate(mut self, candidate: CandidateActivation) -> Self {
        self.candidate = candidate;
        self
    }

    /// One sequential step.
    pub fn step(&self, tape: &Tape, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        self.dag_step(
            tape,
            x,
            &[Predecessor {
                input: x,
                h: h_prev,
                c: c_prev,
            }],
        )
    }

    /// `i, o, u` from `x` and the summed predecessor states; one forget
    /// gate per predecessor. No predecessors means zero sums.
    pub fn dag_step(&self, tape: &Tape, x: Var, preds: &[Predecessor]) -> Result<(Var, Var)> {
        let d = self.hidden_dim;
        check_dim(tape, x, self.input_dim, "lstm input")?;
        for p in preds {
            check_dim(tape, p.input, self.input_dim, "lstm forget input")?;
            check_dim(tape, p.h, d, "lstm hidden")?;
            check_dim(tape, p.c, d, "lstm cell")?;
        }
        let wx = tape.linear(x, tape.param(self.w_iou), tape.param(self.b_iou))?;
        let pre = if preds.is_empty() {
            wx
        } else {
            let hs: Vec<Var> = preds.iter().map(|p| p.h).collect();
            let h_sum = tape.add_n(&hs)?;
            tape.add(wx, tape.matvec(tape.param(self.u_iou), h_sum)?)?
        };
        let (i, o, u) = split3(tape, pre, d)?;
        let (i, o, u) = (
            tape.sigmoid(i),
            tape.sigmoid(o),
            self.candidate.apply(tape, u),
        );
        let mut terms = vec![tape.mul(i, u)?];
        for p in preds {
            let f = tape.add(
                tape.linear(p.input, tape.param(self.w_f), tape.param(self.b_f))?,
                tape.matvec(tape.param(self.u_f), p.h)?,
            )?;
            terms.push(tape.mul(tape.sigmoid(f), p.c)?);
        }
        let c = tape.add_n(&terms)?;
        let h = tape.mul(o, tape.tanh(c))?;
        Ok((h, c))
    }
}

/// The graph-state LSTM: every gate reads only the incoming message,
/// `i, o, f, u = σ(W·m + b)`, and the node's history enters through the
/// previous cell. Parameters `{p}.w [4d×n]`, `{p}.b`.
#[derive(Debug, Clone)]
pub struct MessageLstmCell {
    w: ParamId,
    b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub candidate: CandidateActivation,
}

impl MessageLstmCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        Ok(MessageLstmCell {
            w: store.add(&format!("{prefix}.w"), &[4 * hidden_dim, input_dim])?,
            b: store.add_zeros(&format!("{prefix}.b"), &[4 * hidden_dim])?,
            input_dim,
            hidden_dim,
            candidate: CandidateActivation::default(),
        })
    }

    pub fn with_candidate(mut self, candidate: CandidateActivation) -> Self {
        self.candidate = candidate;
        self
    }

    pub fn step(&self, tape: &Tape, m: Var, c_prev: Var) -> Result<(Var, Var)> {
        let d = self.hidden_dim;
        check_dim(tape, m, self.input_dim, "message lstm input")?;
        check_dim(tape, c_prev, d, "message lstm cell")?;
        let pre = tape.linear(m, tape.param(self.w), tape.param(self.b))?;
        let i = tape.sigmoid(tape.slice(pre, 0, d)?);
        let o = tape.sigmoid(tape.slice(pre, d, d)?);
        let f = tape.sigmoid(tape.slice(pre, 2 * d, d)?);
        let u = self.candidate.apply(tape, tape.slice(pre, 3 * d, d)?);
        let c = tape.add(tape.mul(f, c_prev)?, tape.mul(i, u)?)?;
        let h = tape.mul(o, tape.tanh(c))?;
        Ok((h, c))
    }
}

/// `z, r = σ(W·m + U·h + b)`, `n = tanh(W_n·m + U_n·(r⊙h) + b_n)`,
/// `h' = (1 − z)⊙h + z⊙n`.
#[derive(Debug, Clone)]
pub struct GruCell {
    w_zr: ParamId,
    u_zr: ParamId,
    b_zr: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        let d = hidden_dim;
        Ok(GruCell {
            w_zr: store.add(&format!("{prefix}.w_zr"), &[2 * d, input_dim])?,
            u_zr: store.add(&format!("{prefix}.u_zr"), &[2 * d, d])?,
            b_zr: store.add_zeros(&format!("{prefix}.b_zr"), &[2 * d])?,
            w_n: store.add(&format!("{prefix}.w_n"), &[d, input_dim])?,
            u_n: store.add(&format!("{prefix}.u_n"), &[d, d])?,
            b_n: store.add_zeros(&format!("{prefix}.b_n"), &[d])?,
            input_dim,
            hidden_dim,
        })
    }

    pub fn step(&self, tape: &Tape, m: Var, h_prev: Var) -> Result<Var> {
        let d = self.hidden_dim;
        check_dim(tape, m, self.input_dim, "gru input")?;
        check_dim(tape, h_prev, d, "gru hidden")?;
        let zr = tape.add(
            tape.linear(m, tape.param(self.w_zr), tape.param(self.b_zr))?,
            tape.matvec(tape.param(self.u_zr), h_prev)?,
        )?;
        let z = tape.sigmoid(tape.slice(zr, 0, d)?);
        let r = tape.sigmoid(tape.slice(zr, d, d)?);
        let n = tape.tanh(tape.add(
            tape.linear(m, tape.param(self.w_n), tape.param(self.b_n))?,
            tape.matvec(tape.param(self.u_n), tape.mul(r, h_prev)?)?,
        )?);
        tape.add(tape.mul(tape.one_minus(z), h_prev)?, tape.mul(z, n)?)
    }
}
