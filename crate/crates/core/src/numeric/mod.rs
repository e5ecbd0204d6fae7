//! Dense f64 arrays with reverse-mode gradient propagation.
//!
//! Everything differentiable in the crate is built from the ops on [`Tape`]:
//! the tape records each forward op, `backward` replays it in reverse to fill
//! gradients, and [`SgdOptimizer`] consumes them. Tensors are row-major and
//! at most two-dimensional; vectors are stored as `(n, 1)` columns.

mod checkpoint;
mod gradcheck;
mod optim;
mod tape;

pub use checkpoint::{
    checkpoint_bytes, fnv1a_strings, load_checkpoint, read_checkpoint, save_checkpoint,
    write_checkpoint, VocabHashes,
};
pub use gradcheck::{central_diff_param, grads_close, rel_close, DEFAULT_EPSILON};
pub use optim::SgdOptimizer;
pub use tape::{NodeId, Tape};

use rand::Rng;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Dense row-major float64 buffer with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    pub values: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, values: vec![0.0; rows * cols], requires_grad: false, grad: None }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Argument(format!(
                "tensor data length {} does not match shape {}x{}",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, values, requires_grad: false, grad: None })
    }

    /// Xavier-uniform initialization: U[-sqrt(6/(fan_in+fan_out)), +..].
    pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(rows, cols, -limit, limit, rng)
    }

    pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let values = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { rows, cols, values, requires_grad: false, grad: None }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }
}

/// Index of a registered parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named, trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Ordered collection of model parameters. Registration order is stable,
/// which keeps optimizer traversal and checkpoint layout deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, mut tensor: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "parameter {name:?} registered twice"
        );
        tensor.requires_grad = true;
        tensor.grad = Some(vec![0.0; tensor.len()]);
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id);
        self.params.push(Parameter { name: name.to_string(), value: tensor });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.value.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Global L2 norm over every parameter gradient.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        for p in &self.params {
            if let Some(g) = p.value.grad.as_ref() {
                sq += g.iter().map(|x| x * x).sum::<f64>();
            }
        }
        sq.sqrt()
    }
}
