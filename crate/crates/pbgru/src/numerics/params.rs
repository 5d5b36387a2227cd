//! Named, ordered collection of trainable tensors.
//!
//! Insertion order is the optimizer's iteration order and is part of the
//! determinism contract; checkpoint files sort by name instead.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    /// Registers a tracked tensor under a unique name and returns a handle.
    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<Tensor> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        if !tensor.requires_grad() {
            return Err(Error::config(format!("parameter {name} is not tracked")));
        }
        self.entries.push((name.to_string(), tensor.clone()));
        Ok(tensor)
    }

    /// Convenience: creates a tracked tensor with uniform init in
    /// `±1/sqrt(fan_in)` and registers it.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let values = rng.fill_uniform(numel, -bound, bound);
        self.add(name, Tensor::param(shape, values)?)
    }

    /// Creates a tracked all-zero tensor (biases) and registers it.
    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        self.add(name, Tensor::param(shape, vec![0.0; numel])?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Exact number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copies out all values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<(String, Vec<f64>)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.values()))
            .collect()
    }

    pub fn restore(&self, snapshot: &[(String, Vec<f64>)]) -> Result<()> {
        if snapshot.len() != self.entries.len() {
            return Err(Error::config("snapshot does not match parameter set"));
        }
        for ((name, values), (have, tensor)) in snapshot.iter().zip(&self.entries) {
            if name != have {
                return Err(Error::config(format!(
                    "snapshot parameter {name} does not match {have}"
                )));
            }
            tensor.set_values(values.clone())?;
        }
        Ok(())
    }

    /// Loads values from a checkpoint map; names and shapes must match the
    /// set exactly.
    pub fn load_values(&self, map: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        if map.len() != self.entries.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, model expects {}",
                map.len(),
                self.entries.len()
            )));
        }
        for (name, tensor) in self.iter() {
            let (shape, values) = map
                .get(name)
                .ok_or_else(|| Error::config(format!("checkpoint is missing parameter {name}")))?;
            if *shape != tensor.shape() {
                return Err(Error::config(format!(
                    "checkpoint parameter {name} has shape {:?}, model expects {:?}",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.set_values(values.clone())?;
        }
        Ok(())
    }
}
