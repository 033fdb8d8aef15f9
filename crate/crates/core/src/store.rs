//! Named tensor container and the import/export plumbing built on it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::conv::ConvWeights;
use crate::error::{Error, Result};
use crate::norm::Affine;
use crate::tensor::Tensor;

/// Ordered map from unique names to tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub const VERSION: u32 = 1;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u32 {
        Self::VERSION
    }

    /// Inserts a new entry; a name that is already present is an error.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::invalid("weight_store", format!("duplicate name `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    /// Inserts or replaces an entry.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.set(name, Tensor::full(&[1], v));
    }

    pub fn put_conv(&mut self, prefix: &str, w: &ConvWeights) {
        self.set(join(prefix, "weight"), w.kernel.clone());
        if let Some(b) = &w.bias {
            self.set(join(prefix, "bias"), b.clone());
        }
    }

    pub fn put_affine(&mut self, prefix: &str, a: &Affine) {
        self.set(join(prefix, "gamma"), a.gamma.clone());
        self.set(join(prefix, "beta"), a.beta.clone());
    }

    pub fn reader(&self) -> StoreReader<'_> {
        StoreReader {
            store: self,
            missing: Vec::new(),
            used: BTreeSet::new(),
        }
    }
}

/// Reads structured weights out of a store, collecting every missing name
/// instead of stopping at the first one. Entries never read are reported by
/// [`StoreReader::finish`] as well.
pub struct StoreReader<'a> {
    store: &'a WeightStore,
    missing: Vec<String>,
    used: BTreeSet<&'a str>,
}

impl<'a> StoreReader<'a> {
    fn lookup(&mut self, name: &str) -> Option<Tensor> {
        let (key, t) = self.store.entries.get_key_value(name)?;
        self.used.insert(key.as_str());
        Some(t.clone())
    }

    /// The named tensor, or an empty placeholder that is recorded as missing.
    pub fn tensor(&mut self, name: &str) -> Tensor {
        match self.lookup(name) {
            Some(t) => t,
            None => {
                self.missing.push(name.to_string());
                Tensor::zeros(&[0])
            }
        }
    }

    pub fn optional(&mut self, name: &str) -> Option<Tensor> {
        self.lookup(name)
    }

    pub fn scalar(&mut self, name: &str) -> f64 {
        self.tensor(name).data().first().copied().unwrap_or(0.0)
    }

    pub fn conv(&mut self, prefix: &str, groups: usize) -> ConvWeights {
        let kernel = self.tensor(&join(prefix, "weight"));
        let bias = self.optional(&join(prefix, "bias"));
        let padding = kernel.shape().get(2).map_or(0, |k| k / 2);
        ConvWeights {
            kernel,
            bias,
            groups,
            padding,
        }
    }

    /// Depthwise convolution; the group count is the kernel's `C_out`.
    pub fn depthwise(&mut self, prefix: &str) -> ConvWeights {
        let mut w = self.conv(prefix, 1);
        w.groups = w.kernel.shape()[0].max(1);
        w
    }

    pub fn affine(&mut self, prefix: &str) -> Affine {
        Affine {
            gamma: self.tensor(&join(prefix, "gamma")),
            beta: self.tensor(&join(prefix, "beta")),
        }
    }

    fn unused(&self) -> Vec<String> {
        self.store.names().filter(|n| !self.used.contains(n)).map(String::from).collect()
    }

    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.unused().is_empty()
    }

    pub fn finish(self) -> Result<()> {
        if !self.missing.is_empty() {
            return Err(Error::MissingWeights(self.missing));
        }
        let unused = self.unused();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::UnusedWeights(unused))
        }
    }
}

/// Structured weights that can round-trip through a [`WeightStore`].
pub trait Params: Sized {
    fn export(&self, prefix: &str, store: &mut WeightStore);
    fn import(prefix: &str, reader: &mut StoreReader<'_>) -> Self;

    fn to_store(&self) -> WeightStore {
        let mut s = WeightStore::new();
        self.export("", &mut s);
        s
    }

    fn from_store(store: &WeightStore) -> Result<Self> {
        let mut r = store.reader();
        let v = Self::import("", &mut r);
        r.finish()?;
        Ok(v)
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn codes_tensor(codes: &[usize]) -> Tensor {
    Tensor::new(vec![codes.len().max(1)], {
        let mut v: Vec<f64> = codes.iter().map(|&c| c as f64).collect();
        if v.is_empty() {
            v.push(-1.0);
        }
        v
    })
    .expect("codes tensor")
}

pub(crate) fn tensor_codes(t: &Tensor) -> Vec<usize> {
    t.data()
        .iter()
        .filter(|v| **v >= 0.0)
        .map(|&v| v as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_rejected() {
        let mut s = WeightStore::new();
        s.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn reader_collects_every_missing_name() {
        let mut s = WeightStore::new();
        s.set("present.weight", Tensor::zeros(&[1, 1, 1, 1]));
        let mut r = s.reader();
        let _ = r.conv("present", 1);
        let _ = r.tensor("x");
        let _ = r.affine("ln");
        match r.finish() {
            Err(Error::MissingWeights(names)) => {
                assert_eq!(names, ["x", "ln.gamma", "ln.beta"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reader_rejects_leftover_entries() {
        let mut s = WeightStore::new();
        s.set("a", Tensor::zeros(&[1]));
        s.set("stale.bias", Tensor::zeros(&[1]));
        let mut r = s.reader();
        let _ = r.tensor("a");
        assert!(!r.is_clean());
        assert_eq!(r.finish(), Err(Error::UnusedWeights(vec!["stale.bias".into()])));
    }
}
