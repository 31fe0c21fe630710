use rand::Rng;

use crate::error::{Error, Result};

/// Dense 64-bit parameter tensor. Carries its own gradient accumulator and
/// Adam moment buffers so optimizer state travels with the weights through
/// checkpoints. All buffers always have the same length as `values`.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        ParamTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn uniform(name: &str, shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(name, shape);
        for x in t.values.iter_mut() {
            *x = rng.gen_range(lo..hi);
        }
        t
    }

    pub fn from_values(name: &str, shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        let mut t = Self::zeros(name, shape);
        t.values = values;
        Ok(t)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub(crate) fn buffers_mut(&mut self) -> (&mut [f64], &[f64], &mut [f64], &mut [f64]) {
        (&mut self.values, &self.grad, &mut self.m, &mut self.v)
    }

    pub(crate) fn set_moments(&mut self, m: Vec<f64>, v: Vec<f64>) -> Result<()> {
        if m.len() != self.values.len() || v.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "tensor {}: moment buffers do not match value count",
                self.name
            )));
        }
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.row_len();
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.row_len();
        &mut self.values[i * cols..(i + 1) * cols]
    }

    pub fn grad_row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.row_len();
        &mut self.grad[i * cols..(i + 1) * cols]
    }

    fn row_len(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2, "row access requires a 2-D tensor");
        self.shape[1]
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("tensor {} values", self.name)));
        }
        Ok(())
    }
}

/// Anything that exposes its trainable tensors to the optimizer and the
/// gradient checker.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&ParamTensor>;
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Plain bag of tensors; handy for gradient-checking free-standing losses.
pub struct TensorSet(pub Vec<ParamTensor>);

impl Parameterized for TensorSet {
    fn tensors(&self) -> Vec<&ParamTensor> {
        self.0.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.0.iter_mut().collect()
    }
}
