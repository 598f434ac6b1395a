use std::collections::BTreeMap;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Adds every tensor of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: Params) {
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v);
        }
    }

    /// Records every parameter as a trainable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Like [`Params::bind`] but nothing receives gradients.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }

    /// Pairs already-recorded variables with parameter names, in iteration
    /// order.
    pub fn bind_vars<'t>(&self, vars: &[Var<'t>]) -> Bound<'t> {
        assert_eq!(vars.len(), self.tensors.len(), "one var per parameter");
        Bound {
            vars: self.tensors.keys().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn glorot(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        self.insert(name, glorot_uniform(fan_in, fan_out, rng));
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::full(shape, 1.0));
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Gradients produced by the last `backward`; parameters the loss does not
    /// depend on are absent.
    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(k, v)| v.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}

/// Uniform(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))) as `[fan_in, fan_out]`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_within_bounds_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = glorot_uniform(30, 20, &mut rng);
        let b = (6.0f64 / 50.0).sqrt();
        assert!(w.data().iter().all(|x| x.abs() <= b));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(w, glorot_uniform(30, 20, &mut rng2));
    }

    #[test]
    fn missing_param_is_an_error() {
        let p = Params::new();
        assert!(matches!(p.get("w"), Err(Error::MissingParam(_))));
    }
}
