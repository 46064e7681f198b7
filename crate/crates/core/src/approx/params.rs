use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::sync::atomic::{AtomicU64, Ordering};

use super::TensorBuf;
use crate::{Error, Result};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

fn next_uid() -> u64 {
    NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: TensorBuf,
    pub grad: Vec<f64>,
    /// Adam first and second moments.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Frozen parameters never receive gradients and are skipped by the optimizer.
    pub frozen: bool,
}

/// Named collection of trainable tensors with gradient and optimizer buffers.
///
/// Every store carries a process-unique id; gradients computed on a graph are
/// only accepted by the store whose parameters were bound into that graph.
#[derive(Debug)]
pub struct ParameterStore {
    uid: u64,
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
    /// Number of optimizer steps applied.
    pub step: u64,
}

impl Clone for ParameterStore {
    fn clone(&self) -> Self {
        Self {
            uid: next_uid(),
            params: self.params.clone(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self {
            uid: next_uid(),
            params: Vec::new(),
            index: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn insert(&mut self, name: &str, value: TensorBuf) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite {
                name: name.to_string(),
                detail: "initial value".into(),
            });
        }
        let n = value.len();
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            frozen: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &TensorBuf {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut TensorBuf {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Result<&TensorBuf> {
        Ok(self.value(self.id(name)?))
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        crate::math::sqrt(self.params.iter().flat_map(|p| p.grad.iter()).map(|g| g * g).sum())
    }

    /// Adds `grads` (computed on a graph bound to this store) into the gradient buffers.
    pub fn accumulate(&mut self, grads: &super::Gradients) -> Result<()> {
        for (uid, id, g) in grads.param_grads() {
            if uid != self.uid {
                return Err(Error::usage(
                    "gradients were computed against a different parameter store",
                ));
            }
            let p = &mut self.params[id.0];
            if p.frozen {
                continue;
            }
            for (a, b) in p.grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Copies values (not optimizer state) from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// `self = tau * online + (1 - tau) * self`, elementwise.
    pub fn polyak_from(&mut self, online: &ParameterStore, tau: f64) -> Result<()> {
        self.check_layout(online)?;
        for (a, b) in self.params.iter_mut().zip(&online.params) {
            for (x, y) in a.value.data_mut().iter_mut().zip(b.value.data()) {
                *x = tau * y + (1.0 - tau) * *x;
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &ParameterStore) -> Result<()> {
        if self.params.len() != other.params.len()
            || self
                .params
                .iter()
                .zip(&other.params)
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::shape("parameter stores have different layouts"));
        }
        Ok(())
    }

    /// Copies the parameters whose names start with any of `prefixes` into a new store.
    pub fn subset(&self, prefixes: &[&str]) -> ParameterStore {
        let mut out = ParameterStore::new();
        for p in self
            .params
            .iter()
            .filter(|p| prefixes.iter().any(|x| p.name.starts_with(x)))
        {
            out.insert(&p.name, p.value.clone()).expect("names unique");
        }
        out
    }

    /// Parameters as `(name, shape, f32 values)`, in insertion order.
    pub fn export_f32(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    p.value.shape().to_vec(),
                    p.value.data().iter().map(|&x| x as f32).collect(),
                )
            })
            .collect()
    }

    /// Builds a store from exported `f32` arrays.
    pub fn from_f32(entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<ParameterStore> {
        let mut out = ParameterStore::new();
        for (name, shape, values) in entries {
            let data = values.iter().map(|&x| x as f64).collect();
            out.insert(name, TensorBuf::new(shape.clone(), data)?)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_clones_get_new_uid() {
        let mut s = ParameterStore::new();
        s.insert("w", TensorBuf::zeros(&[2, 2])).unwrap();
        assert!(s.insert("w", TensorBuf::zeros(&[1])).is_err());
        let c = s.clone();
        assert_ne!(c.uid(), s.uid());
        assert_eq!(c.by_name("w").unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn polyak_is_elementwise_blend() {
        let mut online = ParameterStore::new();
        online.insert("w", TensorBuf::matrix(1, 2, vec![1.0, 3.0])).unwrap();
        let mut target = ParameterStore::new();
        target.insert("w", TensorBuf::matrix(1, 2, vec![0.0, 1.0])).unwrap();
        target.polyak_from(&online, 0.25).unwrap();
        assert_eq!(target.by_name("w").unwrap().data(), &[0.25, 1.5]);
    }
}
