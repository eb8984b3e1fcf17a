use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Smallest probability `nll` will take the log of.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Relu,
    Hadamard,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Vector(usize),
    Matrix(usize, usize),
}

impl Dims {
    fn to_vec(self) -> Vec<usize> {
        match self {
            Dims::Vector(n) => vec![n],
            Dims::Matrix(r, c) => vec![r, c],
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { w: Var, x: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Dot(Var, Var),
    Sum(Var),
    AddN(Vec<Var>),
    Softmax(Var),
    Nll { p: Var, idx: usize },
    WeightedSum { w: Var, rows: Vec<Var> },
    MaxN { rows: Vec<Var>, argmax: Vec<usize> },
    Row { m: Var, idx: usize },
    MulConst { a: Var, mask: Vec<f64> },
    Scatter { a: Var, idx: Vec<usize> },
    Pick { a: Var, idx: usize },
    ScalarMul { s: Var, v: Var },
    Normalize(Var),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    dims: Dims,
    op: Op,
    needs_grad: bool,
}

/// A single recorded computation bound to one parameter snapshot.
///
/// A tape is confined to the thread that created it. Independent instances
/// get independent tapes and their [`Gradients`] are summed afterwards.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
    dropout_rng: RefCell<Option<ChaCha8Rng>>,
}

impl<'p> Tape<'p> {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: RefCell::new(Vec::with_capacity(256)),
            params: RefCell::new(HashMap::new()),
            dropout_rng: RefCell::new(None),
        }
    }

    /// Training-mode tape whose dropout masks come from `seed`.
    pub fn training(store: &'p ParamStore, seed: u64) -> Self {
        let tape = Tape::new(store);
        *tape.dropout_rng.borrow_mut() = Some(ChaCha8Rng::seed_from_u64(seed));
        tape
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.borrow().is_some()
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, value: Vec<f64>, dims: Dims, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            dims,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> Dims {
        self.nodes.borrow()[v.0].dims
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].needs_grad)
    }

    fn vector_len(&self, v: Var, op: &'static str) -> Result<usize> {
        match self.dims(v) {
            Dims::Vector(n) => Ok(n),
            d => Err(Error::Shape {
                op,
                left: d.to_vec(),
                right: vec![],
            }),
        }
    }

    // ----- leaves -------------------------------------------------------

    pub fn constant(&self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(values, Dims::Vector(n), Op::Leaf, false)
    }

    pub fn zeros(&self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    pub fn scalar_constant(&self, v: f64) -> Var {
        self.constant(vec![v])
    }

    /// Records a rank-1 or rank-2 constant tensor.
    pub fn tensor(&self, t: &Tensor) -> Result<Var> {
        let dims = match t.shape.as_slice() {
            [n] => Dims::Vector(*n),
            [r, c] => Dims::Matrix(*r, *c),
            s => {
                return Err(Error::invalid(format!(
                    "tape supports rank 1 and 2, got {s:?}"
                )))
            }
        };
        Ok(self.push(t.values.clone(), dims, Op::Leaf, false))
    }

    /// The parameter `id` as a differentiable leaf. Repeated calls within
    /// one tape return the same handle.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.params.borrow().get(&id) {
            return *v;
        }
        let t = self.store.get(id);
        let dims = match t.shape.as_slice() {
            [n] => Dims::Vector(*n),
            [r, c] => Dims::Matrix(*r, *c),
            s => panic!(
                "parameter `{}` has unsupported rank {}",
                self.store.name(id),
                s.len()
            ),
        };
        let v = self.push(t.values.clone(), dims, Op::Param(id), true);
        self.params.borrow_mut().insert(id, v);
        v
    }

    // ----- inspection ---------------------------------------------------

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.len()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.dims(v).to_vec()
    }

    // ----- affine -------------------------------------------------------

    /// `W·x + b` for `W: [m×n]`, `x: [n]`, `b: [m]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.affine_impl(x, w, Some(b))
    }

    /// `W·x`.
    pub fn matvec(&self, w: Var, x: Var) -> Result<Var> {
        self.affine_impl(x, w, None)
    }

    fn affine_impl(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (wd, xd) = (self.dims(w), self.dims(x));
        let (m, n) = match (wd, xd) {
            (Dims::Matrix(m, n), Dims::Vector(k)) if n == k => (m, n),
            _ => {
                return Err(Error::Shape {
                    op: "linear",
                    left: wd.to_vec(),
                    right: xd.to_vec(),
                })
            }
        };
        if let Some(b) = b {
            let bd = self.dims(b);
            if bd != Dims::Vector(m) {
                return Err(Error::Shape {
                    op: "linear bias",
                    left: wd.to_vec(),
                    right: bd.to_vec(),
                });
            }
        }
        let value = {
            let nodes = self.nodes.borrow();
            let wv = &nodes[w.0].value;
            let xv = &nodes[x.0].value;
            let mut out = match b {
                Some(b) => nodes[b.0].value.clone(),
                None => vec![0.0; m],
            };
            for (r, o) in out.iter_mut().enumerate() {
                let row = &wv[r * n..(r + 1) * n];
                *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
            }
            out
        };
        let mut inputs = vec![w, x];
        inputs.extend(b);
        let needs = self.needs(&inputs);
        Ok(self.push(value, Dims::Vector(m), Op::Linear { w, x, b }, needs))
    }

    // ----- elementwise --------------------------------------------------

    pub fn elementwise(&self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Sigmoid, None) => Ok(self.sigmoid(a)),
            (Elementwise::Tanh, None) => Ok(self.tanh(a)),
            (Elementwise::Relu, None) => Ok(self.relu(a)),
            (Elementwise::Hadamard, Some(b)) => self.mul(a, b),
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (k, _) => Err(Error::invalid(format!("{k:?} called with wrong arity"))),
        }
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        let nodes = self.nodes.borrow();
        let (na, nb) = (&nodes[a.0], &nodes[b.0]);
        if na.dims != nb.dims {
            return Err(Error::Shape {
                op,
                left: na.dims.to_vec(),
                right: nb.dims.to_vec(),
            });
        }
        Ok(na
            .value
            .iter()
            .zip(&nb.value)
            .map(|(x, y)| f(*x, *y))
            .collect())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        let d = self.dims(a);
        Ok(self.push(v, d, Op::Add(a, b), self.needs(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        let d = self.dims(a);
        Ok(self.push(v, d, Op::Sub(a, b), self.needs(&[a, b])))
    }

    /// Hadamard product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "hadamard", |x, y| x * y)?;
        let d = self.dims(a);
        Ok(self.push(v, d, Op::Mul(a, b), self.needs(&[a, b])))
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> (Vec<f64>, Dims) {
        let nodes = self.nodes.borrow();
        (
            nodes[a.0].value.iter().map(|x| f(*x)).collect(),
            nodes[a.0].dims,
        )
    }

    /// `scale · a`.
    pub fn scale(&self, a: Var, scale: f64) -> Var {
        let (v, d) = self.unary(a, |x| x * scale);
        self.push(v, d, Op::Affine(a, scale), self.needs(&[a]))
    }

    /// `1 - a`.
    pub fn one_minus(&self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.shift(neg, 1.0)
    }

    /// `a + c` for a constant `c`; the derivative is the identity.
    pub fn shift(&self, a: Var, c: f64) -> Var {
        let (v, d) = self.unary(a, |x| x + c);
        self.push(v, d, Op::Affine(a, 1.0), self.needs(&[a]))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let (v, d) = self.unary(a, sigmoid);
        self.push(v, d, Op::Sigmoid(a), self.needs(&[a]))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let (v, d) = self.unary(a, f64::tanh);
        self.push(v, d, Op::Tanh(a), self.needs(&[a]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let (v, d) = self.unary(a, |x| x.max(0.0));
        self.push(v, d, Op::Relu(a), self.needs(&[a]))
    }

    // ----- structure ----------------------------------------------------

    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero parts"));
        }
        let mut value = Vec::new();
        {
            let nodes = self.nodes.borrow();
            for p in parts {
                match nodes[p.0].dims {
                    Dims::Vector(_) => value.extend_from_slice(&nodes[p.0].value),
                    d => {
                        return Err(Error::Shape {
                            op: "concat",
                            left: d.to_vec(),
                            right: vec![],
                        })
                    }
                }
            }
        }
        let n = value.len();
        Ok(self.push(
            value,
            Dims::Vector(n),
            Op::Concat(parts.to_vec()),
            self.needs(parts),
        ))
    }

    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.vector_len(a, "slice")?;
        if start + len > n {
            return Err(Error::Shape {
                op: "slice",
                left: vec![n],
                right: vec![start, len],
            });
        }
        let value = self.nodes.borrow()[a.0].value[start..start + len].to_vec();
        Ok(self.push(
            value,
            Dims::Vector(len),
            Op::Slice { a, start },
            self.needs(&[a]),
        ))
    }

    pub fn dot(&self, a: Var, b: Var) -> Result<Var> {
        let v: f64 = self.binary(a, b, "dot", |x, y| x * y)?.iter().sum();
        Ok(self.push(vec![v], Dims::Vector(1), Op::Dot(a, b), self.needs(&[a, b])))
    }

    /// Sum of all entries, as a length-1 vector.
    pub fn sum(&self, a: Var) -> Var {
        let v: f64 = self.nodes.borrow()[a.0].value.iter().sum();
        self.push(vec![v], Dims::Vector(1), Op::Sum(a), self.needs(&[a]))
    }

    /// Elementwise sum of equally shaped values, accumulated left to right.
    pub fn add_n(&self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("add_n of zero parts"))?;
        let dims = self.dims(first);
        let mut value = self.nodes.borrow()[first.0].value.clone();
        {
            let nodes = self.nodes.borrow();
            for p in &parts[1..] {
                if nodes[p.0].dims != dims {
                    return Err(Error::Shape {
                        op: "add_n",
                        left: dims.to_vec(),
                        right: nodes[p.0].dims.to_vec(),
                    });
                }
                value
                    .iter_mut()
                    .zip(&nodes[p.0].value)
                    .for_each(|(a, b)| *a += b);
            }
        }
        Ok(self.push(value, dims, Op::AddN(parts.to_vec()), self.needs(parts)))
    }

    pub fn mean(&self, parts: &[Var]) -> Result<Var> {
        let s = self.add_n(parts)?;
        Ok(self.scale(s, 1.0 / parts.len() as f64))
    }

    /// Softmax with max-subtraction.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let n = self.vector_len(a, "softmax")?;
        if n == 0 {
            return Err(Error::invalid("softmax of an empty vector"));
        }
        let value = softmax(&self.nodes.borrow()[a.0].value);
        Ok(self.push(value, Dims::Vector(n), Op::Softmax(a), self.needs(&[a])))
    }

    /// `-ln max(p[idx], 1e-12)` as a scalar.
    pub fn nll(&self, p: Var, idx: usize) -> Result<Var> {
        let n = self.vector_len(p, "nll")?;
        if idx >= n {
            return Err(Error::invalid(format!(
                "nll index {idx} out of range for length {n}"
            )));
        }
        let pv = self.nodes.borrow()[p.0].value[idx];
        let v = -pv.max(PROB_FLOOR).ln();
        Ok(self.push(
            vec![v],
            Dims::Vector(1),
            Op::Nll { p, idx },
            self.needs(&[p]),
        ))
    }

    /// `Σ_i w[i] · rows[i]`.
    pub fn weighted_sum(&self, w: Var, rows: &[Var]) -> Result<Var> {
        let k = self.vector_len(w, "weighted_sum")?;
        if k != rows.len() || rows.is_empty() {
            return Err(Error::Shape {
                op: "weighted_sum",
                left: vec![k],
                right: vec![rows.len()],
            });
        }
        let value = {
            let nodes = self.nodes.borrow();
            let dims = nodes[rows[0].0].dims;
            let wv = &nodes[w.0].value;
            let mut out = vec![0.0; nodes[rows[0].0].value.len()];
            for (wi, r) in wv.iter().zip(rows) {
                if nodes[r.0].dims != dims {
                    return Err(Error::Shape {
                        op: "weighted_sum",
                        left: dims.to_vec(),
                        right: nodes[r.0].dims.to_vec(),
                    });
                }
                out.iter_mut()
                    .zip(&nodes[r.0].value)
                    .for_each(|(o, x)| *o += wi * x);
            }
            out
        };
        let n = value.len();
        let mut inputs = rows.to_vec();
        inputs.push(w);
        let needs = self.needs(&inputs);
        Ok(self.push(
            value,
            Dims::Vector(n),
            Op::WeightedSum {
                w,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Elementwise maximum; ties go to the earliest row.
    pub fn max_n(&self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::invalid("max_n of zero rows"))?;
        let dims = self.dims(first);
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let mut value = nodes[first.0].value.clone();
            let mut argmax = vec![0usize; value.len()];
            for (ri, r) in rows.iter().enumerate().skip(1) {
                if nodes[r.0].dims != dims {
                    return Err(Error::Shape {
                        op: "max_n",
                        left: dims.to_vec(),
                        right: nodes[r.0].dims.to_vec(),
                    });
                }
                for (d, x) in nodes[r.0].value.iter().enumerate() {
                    if *x > value[d] {
                        value[d] = *x;
                        argmax[d] = ri;
                    }
                }
            }
            (value, argmax)
        };
        Ok(self.push(
            value,
            dims,
            Op::MaxN {
                rows: rows.to_vec(),
                argmax,
            },
            self.needs(rows),
        ))
    }

    /// Row `idx` of a matrix (embedding lookup).
    pub fn row(&self, m: Var, idx: usize) -> Result<Var> {
        let (r, c) = match self.dims(m) {
            Dims::Matrix(r, c) => (r, c),
            d => {
                return Err(Error::Shape {
                    op: "row",
                    left: d.to_vec(),
                    right: vec![idx],
                })
            }
        };
        if idx >= r {
            return Err(Error::invalid(format!(
                "row {idx} out of range for {r} rows"
            )));
        }
        let value = self.nodes.borrow()[m.0].value[idx * c..(idx + 1) * c].to_vec();
        Ok(self.push(value, Dims::Vector(c), Op::Row { m, idx }, self.needs(&[m])))
    }

    /// Hadamard product with a constant mask.
    pub fn mul_const(&self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            if nodes[a.0].value.len() != mask.len() {
                return Err(Error::Shape {
                    op: "mul_const",
                    left: nodes[a.0].dims.to_vec(),
                    right: vec![mask.len()],
                });
            }
            nodes[a.0]
                .value
                .iter()
                .zip(&mask)
                .map(|(x, m)| x * m)
                .collect()
        };
        let d = self.dims(a);
        Ok(self.push(value, d, Op::MulConst { a, mask }, self.needs(&[a])))
    }

    /// `out[idx[i]] += a[i]` into a zero vector of length `out_len`.
    pub fn scatter(&self, a: Var, idx: Vec<usize>, out_len: usize) -> Result<Var> {
        let n = self.vector_len(a, "scatter")?;
        if n != idx.len() || idx.iter().any(|&i| i >= out_len) {
            return Err(Error::Shape {
                op: "scatter",
                left: vec![n],
                right: vec![idx.len(), out_len],
            });
        }
        let mut value = vec![0.0; out_len];
        self.with_value(a, |av| {
            for (x, &i) in av.iter().zip(&idx) {
                value[i] += x;
            }
        });
        Ok(self.push(
            value,
            Dims::Vector(out_len),
            Op::Scatter { a, idx },
            self.needs(&[a]),
        ))
    }

    pub fn pick(&self, a: Var, idx: usize) -> Result<Var> {
        let n = self.vector_len(a, "pick")?;
        if idx >= n {
            return Err(Error::invalid(format!(
                "pick index {idx} out of range for length {n}"
            )));
        }
        let v = self.nodes.borrow()[a.0].value[idx];
        Ok(self.push(
            vec![v],
            Dims::Vector(1),
            Op::Pick { a, idx },
            self.needs(&[a]),
        ))
    }

    /// Scales vector `v` by the length-1 value `s`.
    pub fn scalar_mul(&self, s: Var, v: Var) -> Result<Var> {
        let sl = self.vector_len(s, "scalar_mul")?;
        if sl != 1 {
            return Err(Error::Shape {
                op: "scalar_mul",
                left: vec![sl],
                right: self.shape(v),
            });
        }
        let (value, d) = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.0].value[0];
            (
                nodes[v.0].value.iter().map(|x| sv * x).collect(),
                nodes[v.0].dims,
            )
        };
        Ok(self.push(value, d, Op::ScalarMul { s, v }, self.needs(&[s, v])))
    }

    /// `a / Σ a`.
    pub fn normalize(&self, a: Var) -> Result<Var> {
        let n = self.vector_len(a, "normalize")?;
        let total: f64 = self.with_value(a, |v| v.iter().sum());
        if n == 0 || total == 0.0 {
            return Err(Error::invalid("normalize of a zero-sum vector"));
        }
        let (value, _) = self.unary(a, |x| x / total);
        Ok(self.push(value, Dims::Vector(n), Op::Normalize(a), self.needs(&[a])))
    }

    // ----- dropout ------------------------------------------------------

    /// Inverted dropout driven by the tape's own generator; the identity on
    /// evaluation tapes.
    pub fn dropout(&self, a: Var, rate: f64) -> Result<Var> {
        let mut rng = self.dropout_rng.borrow_mut();
        match rng.as_mut() {
            Some(rng) => self.dropout_with(a, rate, true, rng),
            None => self.dropout_with(a, rate, false, &mut NoRng),
        }
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout_with(
        &self,
        a: Var,
        rate: f64,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.len(a))
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(a, mask)
    }

    // ----- reverse pass -------------------------------------------------

    /// ∂loss/∂θ for every parameter the loss reaches.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(nodes[loss.0].dims.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            backprop(&nodes, &mut grads, node, &g, &mut out);
        }
        Ok(out)
    }

    /// Writes ∂loss/∂θ into each parameter's `grad`; unreached parameters
    /// get zeros.
    pub fn backward(&self, loss: Var, params: &mut ParamStore) -> Result<()> {
        let g = self.gradients(loss)?;
        params.set_grads(&g);
        Ok(())
    }
}

struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation dropout draws no randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation dropout draws no randomness")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation dropout draws no randomness")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("evaluation dropout draws no randomness")
    }
}

fn grad_slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    node: &Node,
    g: &[f64],
    out: &mut Gradients,
) {
    let val = |v: Var| -> &[f64] { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::Param(id) => out.accumulate(*id, g),
        Op::Linear { w, x, b } => {
            let n = nodes[x.0].value.len();
            if let Some(gx) = grad_slot(nodes, grads, *x) {
                let wv = val(*w);
                for (r, gr) in g.iter().enumerate() {
                    if *gr == 0.0 {
                        continue;
                    }
                    let row = &wv[r * n..(r + 1) * n];
                    gx.iter_mut().zip(row).for_each(|(a, w)| *a += gr * w);
                }
            }
            if let Some(gw) = grad_slot(nodes, grads, *w) {
                let xv = val(*x);
                for (r, gr) in g.iter().enumerate() {
                    if *gr == 0.0 {
                        continue;
                    }
                    gw[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(xv)
                        .for_each(|(a, x)| *a += gr * x);
                }
            }
            if let Some(b) = b {
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    add_into(gb, g);
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                add_into(gb, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
        }
        Op::Mul(a, b) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut()
                    .zip(g)
                    .zip(val(*b))
                    .for_each(|((x, gi), bi)| *x += gi * bi);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                gb.iter_mut()
                    .zip(g)
                    .zip(val(*a))
                    .for_each(|((x, gi), ai)| *x += gi * ai);
            }
        }
        Op::Affine(a, scale) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += scale * gi);
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut()
                    .zip(g)
                    .zip(&node.value)
                    .for_each(|((x, gi), y)| *x += gi * y * (1.0 - y));
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut()
                    .zip(g)
                    .zip(&node.value)
                    .for_each(|((x, gi), y)| *x += gi * (1.0 - y * y));
            }
        }
        Op::Relu(a) => {
            let av = val(*a);
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut().zip(g).zip(av).for_each(|((x, gi), ai)| {
                    if *ai > 0.0 {
                        *x += gi
                    }
                });
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = nodes[p.0].value.len();
                if let Some(gp) = grad_slot(nodes, grads, *p) {
                    add_into(gp, &g[offset..offset + n]);
                }
                offset += n;
            }
        }
        Op::Slice { a, start } => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                add_into(&mut ga[*start..*start + g.len()], g);
            }
        }
        Op::Dot(a, b) => {
            let s = g[0];
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut().zip(val(*b)).for_each(|(x, bi)| *x += s * bi);
            }
            if let Some(gb) = grad_slot(nodes, grads, *b) {
                gb.iter_mut().zip(val(*a)).for_each(|(x, ai)| *x += s * ai);
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::AddN(parts) => {
            for p in parts {
                if let Some(gp) = grad_slot(nodes, grads, *p) {
                    add_into(gp, g);
                }
            }
        }
        Op::Softmax(a) => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                let y = &node.value;
                let gy: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                ga.iter_mut()
                    .zip(g)
                    .zip(y)
                    .for_each(|((x, gi), yi)| *x += yi * (gi - gy));
            }
        }
        Op::Nll { p, idx } => {
            let pv = val(*p)[*idx];
            if let Some(gp) = grad_slot(nodes, grads, *p) {
                if pv > PROB_FLOOR {
                    gp[*idx] -= g[0] / pv;
                }
            }
        }
        Op::WeightedSum { w, rows } => {
            if let Some(gw) = grad_slot(nodes, grads, *w) {
                for (gwi, r) in gw.iter_mut().zip(rows) {
                    *gwi += val(*r).iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let wv = val(*w).to_vec();
            for (wi, r) in wv.iter().zip(rows) {
                if let Some(gr) = grad_slot(nodes, grads, *r) {
                    gr.iter_mut().zip(g).for_each(|(x, gi)| *x += wi * gi);
                }
            }
        }
        Op::MaxN { rows, argmax } => {
            for (ri, r) in rows.iter().enumerate() {
                if let Some(gr) = grad_slot(nodes, grads, *r) {
                    for (d, am) in argmax.iter().enumerate() {
                        if *am == ri {
                            gr[d] += g[d];
                        }
                    }
                }
            }
        }
        Op::Row { m, idx } => {
            let c = g.len();
            if let Some(gm) = grad_slot(nodes, grads, *m) {
                add_into(&mut gm[idx * c..(idx + 1) * c], g);
            }
        }
        Op::MulConst { a, mask } => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut()
                    .zip(g)
                    .zip(mask)
                    .for_each(|((x, gi), m)| *x += gi * m);
            }
        }
        Op::Scatter { a, idx } => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga.iter_mut().zip(idx).for_each(|(x, &i)| *x += g[i]);
            }
        }
        Op::Pick { a, idx } => {
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                ga[*idx] += g[0];
            }
        }
        Op::ScalarMul { s, v } => {
            let sv = val(*s)[0];
            if let Some(gs) = grad_slot(nodes, grads, *s) {
                gs[0] += val(*v).iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(gv) = grad_slot(nodes, grads, *v) {
                gv.iter_mut().zip(g).for_each(|(x, gi)| *x += sv * gi);
            }
        }
        Op::Normalize(a) => {
            let total: f64 = val(*a).iter().sum();
            if let Some(ga) = grad_slot(nodes, grads, *a) {
                let gy: f64 = g.iter().zip(&node.value).map(|(gi, yi)| gi * yi).sum();
                ga.iter_mut()
                    .zip(g)
                    .for_each(|(x, gi)| *x += (gi - gy) / total);
            }
        }
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
