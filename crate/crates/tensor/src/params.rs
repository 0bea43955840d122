use std::collections::BTreeMap;

use rand::Rng;

use crate::{Element, Gradients, Result, Tape, Tensor, TensorError, Var};

/// Named tensors iterated in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterSet<T: Element = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Tape handles for every parameter of a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::MissingParameter(name.to_string()))
    }
}

impl<T: Element> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// A set with the same names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Errors unless `other` has exactly the same names and shapes.
    pub fn ensure_aligned<U: Element>(&self, other: &ParameterSet<U>) -> Result<()> {
        let mut a = self.tensors.iter();
        let mut b = other.tensors.iter();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ok(()),
                (Some((na, ta)), Some((nb, tb))) if na == nb && ta.shape() == tb.shape() => {}
                (x, y) => {
                    return Err(TensorError::Misaligned(format!(
                        "{:?} vs {:?}",
                        x.map(|(n, t)| (n, t.shape())),
                        y.map(|(n, t)| (n, t.shape()))
                    )))
                }
            }
        }
    }

    /// Puts every parameter on `tape`, as gradient-receiving leaves when
    /// `trainable`, as constants otherwise.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Result<BoundParams> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            let v = if trainable {
                tape.param(t.clone())?
            } else {
                tape.constant(t.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(BoundParams { vars })
    }

    /// Gathers the gradient of every bound parameter; parameters the loss
    /// does not reach get zeros.
    pub fn gradients_from(&self, grads: &Gradients<T>, bound: &BoundParams) -> Result<Self> {
        let mut out = ParameterSet::new();
        for (name, t) in &self.tensors {
            let var = bound.get(name)?;
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    /// Elementwise `self += scale * other`; sets must be aligned.
    pub fn axpy(&mut self, scale: T, other: &ParameterSet<T>) -> Result<()> {
        self.ensure_aligned(other)?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            a.axpy(scale, b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, s: T) {
        for t in self.tensors.values_mut() {
            t.scale_in_place(s);
        }
    }

    pub fn cast<U: Element>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Kaiming-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape and data length agree")
}
