use std::collections::BTreeMap;

use super::dense::{Tensor, TensorError, TensorResult};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers and step count for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub tensor: Tensor,
    pub adam: AdamState,
}

/// Gradients collected from one graph, keyed by parameter path.
pub type ParamGrads = Vec<(String, Vec<f64>)>;

/// Named trainable tensors with their optimizer state. Iteration order is
/// the lexicographic order of parameter paths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; a gradient buffer is attached if missing.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> TensorResult<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::Contract(format!(
                "parameter {name} registered twice"
            )));
        }
        let tensor = if tensor.requires_grad() {
            tensor
        } else {
            tensor.with_grad()
        };
        let adam = AdamState::zeros(tensor.len());
        self.params.insert(name, Parameter { tensor, adam });
        Ok(())
    }

    pub(crate) fn insert_with_state(
        &mut self,
        name: String,
        tensor: Tensor,
        adam: AdamState,
    ) -> TensorResult<()> {
        if adam.m.len() != tensor.len() || adam.v.len() != tensor.len() {
            return Err(TensorError::Dimension {
                op: "insert_with_state",
                left: tensor.shape().to_vec(),
                right: vec![adam.m.len(), adam.v.len()],
            });
        }
        self.insert(name.clone(), tensor)?;
        self.params.get_mut(&name).expect("just inserted").adam = adam;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> TensorResult<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> TensorResult<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter {name}")))
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }

    /// Adds gradients produced by a graph into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &ParamGrads) -> TensorResult<()> {
        for (name, g) in grads {
            let t = self.get_mut(name)?;
            if g.len() != t.len() {
                return Err(TensorError::Dimension {
                    op: "accumulate",
                    left: t.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
            let buf = t
                .grad_mut()
                .ok_or_else(|| TensorError::Contract(format!("parameter {name} has no grad")))?;
            for (a, b) in buf.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.tensor.zero_grad();
        }
    }

    /// One bias-corrected Adam update on every parameter, then zeroes grads.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> TensorResult<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, p)| !p.tensor.requires_grad()) {
            return Err(TensorError::Contract(format!(
                "parameter {name} has no gradient buffer"
            )));
        }
        for p in self.params.values_mut() {
            let state = &mut p.adam;
            state.step += 1;
            let t = state.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let (values, grad) = p.tensor.values_and_grad_mut();
            let grad = grad.expect("checked above");
            for i in 0..values.len() {
                let g = grad[i];
                state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
                state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
