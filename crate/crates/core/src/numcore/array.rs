use indexmap::IndexMap;
use rand::Rng;

use crate::{Error, Result};

/// Dense row-major f64 array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl DiffArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim("DiffArray::new", &shape, &[values.len()]));
        }
        Ok(DiffArray {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        DiffArray {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        DiffArray {
            shape,
            values: vec![value; n],
            grad: None,
        }
    }

    /// Uniform on ±√(1/fan_in).
    pub fn uniform_init<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        DiffArray {
            shape,
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[f64]) {
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    #[cfg(test)]
    pub(crate) fn grad_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.grad.as_mut()
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(buf) => buf.iter_mut().for_each(|g| *g = 0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Named, ordered collection of learnable arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: IndexMap<String, DiffArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: DiffArray) {
        self.params.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> Option<&DiffArray> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DiffArray> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&DiffArray> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffArray)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DiffArray)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn by_index(&self, i: usize) -> &DiffArray {
        &self.params[i]
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut DiffArray {
        &mut self.params[i]
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(DiffArray::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(DiffArray::clear_grad);
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(DiffArray::len).sum()
    }
}
