use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Precision, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    tensor: Tensor,
    requires_grad: bool,
}

/// How a re-initialized parameter is refilled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReinitMode {
    /// Uniform in ±1/√fan_in, the same draw used at construction.
    #[default]
    Initializer,
    Zeros,
}

/// One line of a store diff: a canonical entry whose values changed.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffEntry {
    pub name: String,
    pub l2_delta: f64,
}

/// Derives the RNG stream for one parameter from the run seed and the
/// parameter name, so initialization does not depend on declaration order.
pub fn init_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Named parameters with aliasing.
///
/// An alias is another name for a canonical entry; both resolve to the
/// same storage, so weight sharing is a naming relation rather than a
/// copy. Iteration order is the sorted canonical name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Entry>,
    aliases: BTreeMap<String, String>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        self.insert_with(name, tensor, true)
    }

    pub fn insert_with(&mut self, name: impl Into<String>, tensor: Tensor, requires_grad: bool) -> Result<()> {
        let name = name.into();
        if self.aliases.contains_key(&name) {
            return Err(Error::Config(format!("`{name}` is already an alias")));
        }
        self.entries.insert(name, Entry { tensor, requires_grad });
        Ok(())
    }

    /// Uniform in ±1/√fan_in from the per-parameter stream of `seed`.
    pub fn insert_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, seed: u64) -> Result<()> {
        let t = uniform_tensor(shape, fan_in, init_seed(seed, name));
        self.insert(name, t)
    }

    /// Makes `alias` another name for `target`. Chains resolve to the final
    /// canonical entry.
    pub fn alias(&mut self, alias: impl Into<String>, target: &str) -> Result<()> {
        let alias = alias.into();
        let canonical = self.resolve(target)?.to_string();
        if self.entries.contains_key(&alias) {
            return Err(Error::Config(format!("`{alias}` is already a parameter")));
        }
        self.aliases.insert(alias, canonical);
        Ok(())
    }

    pub fn resolve<'a>(&'a self, name: &'a str) -> Result<&'a str> {
        if self.entries.contains_key(name) {
            return Ok(name);
        }
        match self.aliases.get(name) {
            Some(target) => Ok(target.as_str()),
            None => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.resolve(name).is_ok()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        let c = self.resolve(name)?;
        Ok(&self.entries[c].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let c = self.resolve(name)?.to_string();
        Ok(&mut self.entries.get_mut(&c).expect("resolved").tensor)
    }

    pub fn requires_grad(&self, name: &str) -> Result<bool> {
        let c = self.resolve(name)?;
        Ok(self.entries[c].requires_grad)
    }

    pub fn set_requires_grad(&mut self, name: &str, flag: bool) -> Result<()> {
        let c = self.resolve(name)?.to_string();
        self.entries.get_mut(&c).expect("resolved").requires_grad = flag;
        Ok(())
    }

    /// Overwrites the values of an entry, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != tensor.shape() {
            return Err(Error::ParameterShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
        Ok(())
    }

    /// Canonical names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(a, t)| (a.as_str(), t.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar count over canonical entries; aliases add nothing.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Scalar count over canonical entries whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, e)| e.tensor.len())
            .sum()
    }

    /// Refills one entry (and thereby all of its aliases). The uniform
    /// bound is 1/√fan_in; the stream is derived from `seed` and the
    /// canonical name, so equal seeds give equal values.
    pub fn reinit(&mut self, name: &str, fan_in: usize, mode: ReinitMode, seed: u64) -> Result<()> {
        let canonical = self.resolve(name)?.to_string();
        let shape = self.entries[&canonical].tensor.shape().to_vec();
        let fresh = match mode {
            ReinitMode::Initializer => uniform_tensor(shape, fan_in, init_seed(seed, &canonical)),
            ReinitMode::Zeros => Tensor::zeros(shape),
        };
        self.entries.get_mut(&canonical).expect("resolved").tensor = fresh;
        Ok(())
    }

    /// Canonical entries whose values differ from `before`, with the L2
    /// distance. Entries present in only one store are an error.
    pub fn diff(&self, before: &ParameterStore) -> Result<Vec<DiffEntry>> {
        let mut out = Vec::new();
        for (name, e) in &self.entries {
            let old = before
                .entries
                .get(name)
                .ok_or_else(|| Error::StoreMismatch(name.clone()))?;
            if !e.tensor.bitwise_eq(&old.tensor) {
                out.push(DiffEntry {
                    name: name.clone(),
                    l2_delta: e.tensor.l2_distance(&old.tensor)?,
                });
            }
        }
        if let Some(extra) = before.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(Error::StoreMismatch(extra.clone()));
        }
        Ok(out)
    }

    pub fn round_to(&mut self, precision: Precision) {
        if precision == Precision::F64 {
            return;
        }
        for e in self.entries.values_mut() {
            for v in e.tensor.data_mut() {
                *v = precision.round(*v);
            }
        }
    }

    /// Checks that every entry of `template` exists here with the same
    /// shape. Used when loading a checkpoint into a configured model.
    pub fn check_compatible(&self, template: &ParameterStore) -> Result<()> {
        for (name, e) in &template.entries {
            let mine = self.get(name)?;
            if mine.shape() != e.tensor.shape() {
                return Err(Error::ParameterShape {
                    name: name.clone(),
                    expected: e.tensor.shape().to_vec(),
                    found: mine.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn bitwise_eq(&self, other: &ParameterStore) -> bool {
        self.aliases == other.aliases
            && self.entries.len() == other.entries.len()
            && self.entries.iter().all(|(k, e)| {
                other
                    .entries
                    .get(k)
                    .is_some_and(|o| o.tensor.bitwise_eq(&e.tensor))
            })
    }
}

fn uniform_tensor(shape: Vec<usize>, fan_in: usize, stream: u64) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert_uniform("a", vec![3, 2], 2, 7).unwrap();
        s.insert_uniform("b", vec![4], 4, 7).unwrap();
        s.alias("layer.0.a", "a").unwrap();
        s.alias("layer.1.a", "layer.0.a").unwrap();
        s
    }

    #[test]
    fn aliases_observe_mutation() {
        let mut s = store();
        s.get_mut("layer.1.a").unwrap().data_mut()[0] = 42.0;
        assert_eq!(s.get("a").unwrap().data()[0], 42.0);
        assert_eq!(s.get("layer.0.a").unwrap().data()[0], 42.0);
        assert_eq!(s.resolve("layer.1.a").unwrap(), "a");
    }

    #[test]
    fn initializer_bound_and_determinism() {
        let s = store();
        let bound = 1.0 / 2f64.sqrt();
        assert!(s.get("a").unwrap().data().iter().all(|v| v.abs() < bound));
        assert!(s.bitwise_eq(&store()));
    }

    #[test]
    fn reinit_touches_only_the_target() {
        let before = store();
        let mut after = before.clone();
        after.reinit("layer.0.a", 2, ReinitMode::Initializer, 99).unwrap();
        let diff = after.diff(&before).unwrap();
        assert_eq!(diff.len(), 1);
        assert_eq!(diff[0].name, "a");
        assert!(diff[0].l2_delta > 0.0);
        assert!(after.get("b").unwrap().bitwise_eq(before.get("b").unwrap()));

        after.reinit("a", 2, ReinitMode::Zeros, 0).unwrap();
        assert!(after.get("layer.1.a").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_names_error() {
        let mut s = store();
        assert!(matches!(s.get("nope"), Err(Error::UnknownParameter(_))));
        assert!(s.reinit("nope", 1, ReinitMode::Zeros, 0).is_err());
        assert!(s.alias("x", "nope").is_err());
    }

    #[test]
    fn param_count_ignores_aliases() {
        assert_eq!(store().param_count(), 10);
    }
}
