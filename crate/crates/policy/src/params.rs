//! Named parameter tensors and initializers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Put every tensor on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t.clone()))
            .collect()
    }

    /// Put every tensor on the tape as a constant (inference only).
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Semi-orthogonal matrix scaled by `gain` (rows or columns orthonormal).
pub fn orthogonal<R: Rng>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Tensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            out.set(i, j, gain * v);
        }
    }
    out
}
