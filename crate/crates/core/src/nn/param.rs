use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            first_moment: Tensor::zeros(shape.clone()),
            second_moment: Tensor::zeros(shape),
            value,
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered registry of every parameter of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    /// `(name, shape)` of every parameter in registration order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect()
    }

    /// Copy of the parameter values only (no optimizer state).
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor<T>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Dimension {
                op: "restore",
                lhs: vec![self.params.len()],
                rhs: vec![values.len()],
            });
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Dimension {
                    op: "restore",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.value.clear_grad();
        }
    }

    /// Values converted to another precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
        }
    }
}

/// Seeded scaled-uniform initializer that registers parameters as it goes.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        ParamBuilder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: Vec<usize>, limit: f64) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-limit..limit) as f32)
            .collect();
        Tensor::new(shape, data).expect("shape/data agree")
    }

    /// Weight `[fan_in, fan_out]`, uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn dense_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = self.uniform(vec![fan_in, fan_out], limit);
        self.store.add(name, w)
    }

    /// Weight `[out_channels, in_channels, kernel]`, uniform in
    /// ±sqrt(6 / (in·kernel + out·kernel)).
    pub fn conv_weight(
        &mut self,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> ParamId {
        let limit = (6.0 / ((in_channels + out_channels) * kernel) as f64).sqrt();
        let w = self.uniform(vec![out_channels, in_channels, kernel], limit);
        self.store.add(name, w)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        self.store.add(name, Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_start_at_zero() {
        let mut store = ParamStore::<f32>::new();
        let id = ParamBuilder::new(&mut store, 3).dense_weight("w", 4, 5);
        let p = store.get(id);
        assert_eq!(p.first_moment.shape(), &[4, 5]);
        assert!(p.first_moment.data().iter().all(|&x| x == 0.0));
        assert!(p.second_moment.data().iter().all(|&x| x == 0.0));
        assert_eq!(p.step_count, 0);
    }

    #[test]
    fn init_respects_limit_and_seed() {
        let mut a = ParamStore::<f32>::new();
        let mut b = ParamStore::<f32>::new();
        ParamBuilder::new(&mut a, 11).conv_weight("c", 2, 8, 3);
        ParamBuilder::new(&mut b, 11).conv_weight("c", 2, 8, 3);
        assert_eq!(a, b);
        let limit = (6.0f64 / 30.0).sqrt() as f32;
        assert!(a.iter().next().unwrap().value.data().iter().all(|x| x.abs() <= limit));
    }

    #[test]
    fn restore_checks_shapes() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::zeros(vec![2]));
        assert!(store.restore(&[Tensor::zeros(vec![3])]).is_err());
        store.restore(&[Tensor::full(vec![2], 1.0)]).unwrap();
        assert_eq!(store.value(ParamId(0)).data(), &[1.0, 1.0]);
    }
}
