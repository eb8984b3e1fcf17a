//! Dense f64 tensors, the parameter store and a tape-based reverse-mode
//! differentiator.
//!
//! Every model in the crate is written against [`Tape`]: a forward pass
//! records operations, [`Tape::gradients`] replays them in reverse, and the
//! resulting [`Gradients`] are folded into a [`ParamStore`] for an
//! [`adam_step`].

mod checkpoint;
mod gradcheck;
mod optim;
mod store;
mod tape;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use optim::{adam_step, AdamConfig};
pub use store::{Gradients, ParamId, ParamStore, INIT_RANGE};
pub use tape::{Elementwise, Tape, Var};

use crate::error::{Error, Result};

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
