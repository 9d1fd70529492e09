//! Dense tensor storage and named parameter collections.
//!
//! Everything in this crate is a row-major matrix; vectors are `1 × n`.
//! `Tensor` is plain storage — differentiable computation happens on the
//! [`crate::tape::Tape`], which borrows tensor data for the duration of one
//! forward/backward pass and hands gradients back afterwards.

use crate::rng::Prng;
use crate::scalar::Scalar;
use std::collections::HashMap;

/// Row-major dense matrix with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
    pub grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols], grad: None }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data length mismatch");
        Tensor { rows, cols, data, grad: None }
    }

    /// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)].
    pub fn uniform_fan_in(rows: usize, cols: usize, fan_in: usize, rng: &mut Prng) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor { rows, cols, data, grad: None }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Casts element type; used to lift trained f32 weights into f64 checks.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| T::from_f64(x.to_f64())).collect(),
            grad: None,
        }
    }
}

/// One named trainable tensor. `decay` marks weight matrices that receive
/// L2 regularization; biases and embedding tables do not.
#[derive(Clone, Debug)]
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub decay: bool,
}

/// Ordered, name-addressable set of trainable tensors.
///
/// Iteration order is construction order and is the canonical order for
/// serialization, optimizer state and gradient checking.
#[derive(Clone, Debug, Default)]
pub struct Params<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Self {
        Params { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<S>, decay: bool) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), tensor, decay });
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        &self.entries[self.index[name]].tensor
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        let i = self.index[name];
        &mut self.entries[i].tensor
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<S>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry<S>> {
        self.entries.iter_mut()
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Params<T> {
        let mut out = Params::new();
        for e in self.iter() {
            out.insert(&e.name, e.tensor.cast(), e.decay);
        }
        out
    }
}
