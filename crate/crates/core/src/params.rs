//! Named parameter arrays with group and trainability metadata.

use std::collections::BTreeMap;

use avsr_autograd::{Gradients, Graph, Tensor, Var};
use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub tensor: Tensor,
    pub group: String,
    pub trainable: bool,
}

/// Insertion-ordered parameter table. Order is part of the determinism
/// contract: initialization and serialization both follow it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, group: &str, trainable: bool) {
        let name = name.into();
        let prev = self.entries.insert(
            name.clone(),
            ParamEntry {
                tensor,
                group: group.to_string(),
                trainable,
            },
        );
        assert!(prev.is_none(), "parameter '{name}' registered twice");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn set_trainable(&mut self, group: &str, trainable: bool) {
        for e in self.entries.values_mut().filter(|e| e.group == group) {
            e.trainable = trainable;
        }
    }

    /// Scalar count per group.
    pub fn count_by_group(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in self.entries.values() {
            *out.entry(e.group.clone()).or_default() += e.tensor.numel();
        }
        out
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    /// SHA-256 over names and little-endian values of the selected entries.
    pub fn hash_where(&self, mut keep: impl FnMut(&ParamEntry) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, e) in self.entries.iter().filter(|(_, e)| keep(e)) {
            h.update(name.as_bytes());
            for v in e.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Hash of all non-trainable entries.
    pub fn frozen_hash(&self) -> String {
        self.hash_where(|e| !e.trainable)
    }

    /// Places every entry on `graph`. Trainable entries receive gradients
    /// only when `with_grad` is set.
    pub fn bind<'g>(&self, graph: &'g Graph, with_grad: bool) -> Bound<'g> {
        let vars = self
            .entries
            .iter()
            .map(|(name, e)| (name.clone(), graph.leaf(e.tensor.clone(), with_grad && e.trainable)))
            .collect();
        Bound { vars }
    }

    /// Copies every entry whose name starts with `from` under the prefix `to`.
    pub fn copy_prefixed(&mut self, src: &ParamStore, from: &str, to: &str, group: &str, trainable: bool) {
        for (name, e) in src.iter().filter(|(n, _)| n.starts_with(from)) {
            self.insert(format!("{to}{}", &name[from.len()..]), e.tensor.clone(), group, trainable);
        }
    }
}

/// Graph handles for the entries of a [`ParamStore`].
pub struct Bound<'g> {
    vars: IndexMap<String, Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, name: &str) -> Var<'g> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' is not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var<'g>> {
        self.vars.get(name).copied()
    }

    /// Gradients of the bound parameters that received one.
    pub fn gradients(&self, grads: &Gradients) -> IndexMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(n, v)| grads.get(*v).map(|g| (n.clone(), g.clone())))
            .collect()
    }
}

/// Parameter initialization helpers sharing one RNG stream.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub group: String,
    pub trainable: bool,
}

impl Init<'_> {
    pub fn with_group(&mut self, group: &str, trainable: bool) -> Init<'_> {
        Init {
            store: self.store,
            rng: self.rng,
            group: group.to_string(),
            trainable,
        }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect())
    }

    fn put(&mut self, name: String, t: Tensor) {
        let group = self.group.clone();
        self.store.insert(name, t, &group, self.trainable);
    }

    /// 2D conv `name.w: [c_out, c_in, k, k]` and `name.b: [c_out]`, He-uniform
    /// weights and zero bias.
    pub fn conv2d(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        let bound = (6.0 / (c_in * k * k) as f64).sqrt();
        let w = self.uniform(&[c_out, c_in, k, k], bound);
        self.put(format!("{name}.w"), w);
        self.put(format!("{name}.b"), Tensor::zeros([c_out]));
    }

    /// 1D temporal conv `name.w: [c_out, c_in, k]`; `zero` leaves it all-zero.
    pub fn conv1d(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, zero: bool) {
        let w = if zero {
            Tensor::zeros([c_out, c_in, k])
        } else {
            self.uniform(&[c_out, c_in, k], (6.0 / (c_in * k) as f64).sqrt())
        };
        self.put(format!("{name}.w"), w);
        self.put(format!("{name}.b"), Tensor::zeros([c_out]));
    }

    /// 2D conv with all-zero weights and bias.
    pub fn zero_conv2d(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) {
        self.put(format!("{name}.w"), Tensor::zeros([c_out, c_in, k, k]));
        self.put(format!("{name}.b"), Tensor::zeros([c_out]));
    }

    pub fn group_norm(&mut self, name: &str, c: usize) {
        self.put(format!("{name}.g"), Tensor::full([c], 1.0));
        self.put(format!("{name}.b"), Tensor::zeros([c]));
    }
}
