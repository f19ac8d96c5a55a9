use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Index of an entry in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    trainable: bool,
}

/// Named parameters and non-trainable buffers (batchnorm running statistics).
///
/// Entries are addressed by dotted paths such as `f.block3.conv.weight`.
/// Removal is not supported, so a [`ParamId`] stays valid for the life of the store;
/// use [`ParamStore::without_prefix`] to build a pruned copy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry. Replacing keeps the id and clears the gradient.
    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        if let Some(&i) = self.index.get(name) {
            let e = &mut self.entries[i];
            e.value = value;
            e.grad = None;
            e.trainable = trainable;
            return ParamId(i);
        }
        let id = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: None,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value(self.id(name)?))
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids in lexicographic name order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.index.values().map(|&i| ParamId(i))
    }

    /// Trainable ids whose name starts with `prefix`, in name order.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.index
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(_, &i)| ParamId(i))
            .filter(|&id| self.entries[id.0].trainable)
            .collect()
    }

    /// Number of trainable scalars under `prefix`.
    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.trainable_with_prefix(prefix)
            .into_iter()
            .map(|id| self.value(id).len())
            .sum()
    }

    /// Sets every trainable gradient to zeros.
    pub fn zero_grad(&mut self) {
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            match &mut e.grad {
                Some(g) => g.data_mut().iter_mut().for_each(|v| *v = 0.0),
                None => e.grad = Some(Tensor::zeros(e.value.shape())),
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let e = &mut self.entries[id.0];
        let g = e.grad.get_or_insert_with(|| Tensor::zeros(e.value.shape()));
        for (a, b) in g.data_mut().iter_mut().zip(grad) {
            *a += b;
        }
    }

    /// Copies every entry under `prefix` from `other`, bit-exactly.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, &i) in other.index.range(prefix.to_string()..) {
            if !name.starts_with(prefix) {
                break;
            }
            let src = &other.entries[i];
            self.insert(name, src.value.clone(), src.trainable);
            n += 1;
        }
        Ok(n)
    }

    /// A copy of this store with all entries under `prefix` dropped.
    pub fn without_prefix(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for e in &self.entries {
            if !e.name.starts_with(prefix) {
                out.insert(&e.name, e.value.clone(), e.trainable);
            }
        }
        out
    }

    pub(crate) fn iter_entries(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.index.iter().map(move |(k, &i)| {
            let e = &self.entries[i];
            (k.as_str(), &e.value, e.trainable)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_queries_respect_boundaries() {
        let mut s = ParamStore::new();
        s.insert("f.a", Tensor::zeros(&[2]), true);
        s.insert("f.b", Tensor::zeros(&[3]), true);
        s.insert("f.b.running", Tensor::zeros(&[3]), false);
        s.insert("g.a", Tensor::zeros(&[4]), true);
        assert_eq!(s.trainable_with_prefix("f.").len(), 2);
        assert_eq!(s.count_trainable("f."), 5);
        assert_eq!(s.without_prefix("f.").len(), 1);
    }

    #[test]
    fn reinsert_keeps_id() {
        let mut s = ParamStore::new();
        let a = s.insert("x", Tensor::zeros(&[1]), true);
        let b = s.insert("x", Tensor::scalar(2.0), true);
        assert_eq!(a, b);
        assert_eq!(s.value(a).item(), 2.0);
    }
}
