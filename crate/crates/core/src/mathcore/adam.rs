use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
    steps: u64,
}

impl Param {
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Named parameters in insertion order, each with its gradient and Adam moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter; returns its slot index. Panics on a duplicate name.
    pub fn insert(&mut self, name: &str, value: Tensor) -> usize {
        assert!(
            self.index_of(name).is_none(),
            "duplicate parameter `{name}`"
        );
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.to_string(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            steps: 0,
        });
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.params[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.params[slot].value
    }

    pub fn grad(&self, slot: usize) -> &Tensor {
        &self.params[slot].grad
    }

    /// Adds `delta` into the gradient of `slot`.
    pub fn accumulate(&mut self, slot: usize, delta: &Tensor) {
        let g = self.params[slot].grad.data_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (a, d) in g.iter_mut().zip(delta.data()) {
            *a += d;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.scale(factor);
        }
    }

    /// True when every value tensor matches `other` bit for bit.
    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One bias-corrected Adam update over every parameter, then zeroes gradients.
///
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    for p in store.iter() {
        if let Some(index) = p.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: p.name.clone(),
                index,
            });
        }
    }
    for p in store.iter_mut() {
        p.steps += 1;
        let t = p.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let w = p.value.data_mut();
        let g = p.grad.data();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    store.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let slot = s.insert("w", Tensor::filled(&[1], value));
        s.accumulate(slot, &Tensor::filled(&[1], grad));
        s
    }

    #[test]
    fn first_step_unit_gradient() {
        let mut s = single(0.5, 1.0);
        let cfg = AdamConfig {
            learning_rate: 0.001,
            ..AdamConfig::default()
        };
        adam_step(&mut s, &cfg).unwrap();
        let expected = 0.5 - 0.001 / (1.0 + 1e-8);
        assert!((s.value(0).data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.grad(0).data(), &[0.0]);
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut s = single(0.5, 0.0);
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(0).data(), &[0.5]);
    }

    #[test]
    fn deterministic() {
        let mut a = single(0.5, 0.3);
        let mut b = a.clone();
        adam_step(&mut a, &AdamConfig::default()).unwrap();
        adam_step(&mut b, &AdamConfig::default()).unwrap();
        assert!(a.values_equal(&b));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = single(0.5, 1.0);
        let slot = s.insert("bad", Tensor::zeros(&[3]));
        let mut g = Tensor::zeros(&[3]);
        g.data_mut()[2] = f64::INFINITY;
        s.accumulate(slot, &g);
        let before = s.clone();
        let err = adam_step(&mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref name, index: 2 } if name == "bad"));
        assert_eq!(s, before);
    }

    #[test]
    fn preserves_shapes_and_zeroes_grads() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::filled(&[2, 3], 1.0));
        let b = s.insert("b", Tensor::filled(&[4], 1.0));
        s.accumulate(a, &Tensor::filled(&[2, 3], 0.2));
        s.accumulate(b, &Tensor::filled(&[4], -0.1));
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        assert_eq!(s.value(a).shape(), &[2, 3]);
        assert_eq!(s.value(b).shape(), &[4]);
        assert_eq!(s.grad_norm(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig {
            beta2: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
