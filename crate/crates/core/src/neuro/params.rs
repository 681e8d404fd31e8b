use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shape_error, NeuroError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in ±1/√fan_in.
    Uniform {
        fan_in: usize,
    },
    Constant(f64),
}

/// Named parameters with paired gradient buffers. Parameters are created in
/// a fixed order by model constructors, so a freshly built model and a
/// loaded checkpoint line up by index.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NeuroError> {
        if self.names.iter().any(|n| n == name) {
            return Err(NeuroError::Duplicate(name.to_string()));
        }
        let mut value = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Constant(c) => value.fill(c),
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for x in value.data_mut() {
                    *x = self.rng.random_range(-bound..bound);
                }
            }
        }
        self.insert(name, value)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, NeuroError> {
        if self.names.iter().any(|n| n == name) {
            return Err(NeuroError::Duplicate(name.to_string()));
        }
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Read a parameter while accumulating into its gradient.
    pub fn value_and_grad(&mut self, id: ParamId) -> (&Tensor, &mut Tensor) {
        (&self.values[id.0], &mut self.grads[id.0])
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub(crate) fn parts_mut(&mut self) -> (&[String], &mut [Tensor], &mut [Tensor]) {
        (&self.names, &mut self.values, &mut self.grads)
    }

    /// Copy values from `other`, which must hold the same names and shapes
    /// in the same order.
    pub fn assign(&mut self, other: &ParamStore) -> Result<(), NeuroError> {
        if self.names != other.names {
            let missing = self
                .names
                .iter()
                .find(|n| !other.names.contains(n))
                .or_else(|| other.names.iter().find(|n| !self.names.contains(n)))
                .cloned()
                .unwrap_or_else(|| "<order>".to_string());
            return Err(NeuroError::Unknown(missing));
        }
        for (i, v) in other.values.iter().enumerate() {
            if v.shape() != self.values[i].shape() {
                return Err(shape_error(
                    self.names[i].clone(),
                    self.values[i].shape(),
                    v.shape(),
                ));
            }
        }
        self.values.clone_from(&other.values);
        self.seed = other.seed;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_respects_bound() {
        let mut s = ParamStore::new(1);
        let w = s.add("w", &[10, 25], Init::Uniform { fan_in: 25 }).unwrap();
        assert!(s.value(w).data().iter().all(|x| x.abs() <= 0.2));
        assert!(s.add("w", &[1], Init::Zeros).is_err());
        let b = s.add("b", &[3], Init::Constant(1.0)).unwrap();
        assert_eq!(s.value(b).data(), &[1.0; 3]);
    }

    #[test]
    fn same_seed_same_values() {
        let build = || {
            let mut s = ParamStore::new(7);
            s.add("a", &[4, 4], Init::Uniform { fan_in: 4 }).unwrap();
            s
        };
        assert_eq!(build().values, build().values);
    }
}
