//! Named model parameters and their binary serialization.
//!
//! Parameters live in an insertion-ordered map so that every walk over them
//! (injection into a tape, optimizer updates, serialization) visits the same
//! order on every run — a precondition for bit-identical training.

use std::io::{Read, Write};

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// An insertion-ordered collection of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name: every parameter is
    /// created exactly once, so a collision is a wiring bug.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), value);
        assert!(prev.is_none(), "params: duplicate parameter {:?}", name);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("params: unknown parameter {:?}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("params: unknown parameter {:?}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Like [`get`](Self::get) but yields `None` for unknown names, for
    /// callers validating untrusted containers.
    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Puts every parameter onto a tape as a leaf, returning the handles in
    /// store order. With `requires_grad` false the tape skips gradient work,
    /// which is what evaluation and prediction want.
    pub fn inject(&self, tape: &Tape, requires_grad: bool) -> IndexMap<String, Var> {
        self.params
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone(), requires_grad)))
            .collect()
    }

    /// Writes the container: entry count, then each entry as name, shape, and
    /// little-endian `f64` values.
    pub fn write_into(&self, w: &mut impl Write) -> Result<()> {
        write_u32(w, self.params.len() as u32)?;
        for (name, tensor) in &self.params {
            write_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            write_u32(w, tensor.shape().len() as u32)?;
            for &dim in tensor.shape() {
                write_u64(w, dim as u64)?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a container written by [`ParamStore::write_into`].
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let count = read_u32(r)?;
        let mut params = IndexMap::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return Err(Error::Format(format!(
                    "parameter name length {} exceeds the 4096-byte limit",
                    name_len
                )));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("parameter name is not valid UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            if rank > 8 {
                return Err(Error::Format(format!(
                    "parameter {:?} has rank {}, expected at most 8",
                    name, rank
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            if params.insert(name.clone(), Tensor::new(shape, data)).is_some() {
                return Err(Error::Format(format!("duplicate parameter {:?}", name)));
            }
        }
        Ok(Self { params })
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Samples a tensor from a normal distribution truncated at two standard
/// deviations: draws outside the band are redrawn.
pub fn truncated_normal(rng: &mut impl Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let numel = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let v: f64 = rng.sample::<f64, _>(StandardNormal) * std;
        if v.abs() <= 2.0 * std {
            data.push(v);
        }
    }
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn container_round_trips_exactly() {
        let mut store = ParamStore::new();
        store.insert("embed.token", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-300, 7.25]));
        store.insert("head.bias", Tensor::vector(vec![0.5, -0.5]));

        let mut buf = Vec::new();
        store.write_into(&mut buf).unwrap();
        let loaded = ParamStore::read_from(&mut buf.as_slice()).unwrap();

        assert_eq!(loaded.len(), 2);
        let names: Vec<&String> = loaded.names().collect();
        assert_eq!(names, ["embed.token", "head.bias"]);
        for (name, tensor) in store.iter() {
            assert_eq!(loaded.get(name), tensor, "mismatch for {}", name);
        }
    }

    #[test]
    fn truncated_read_reports_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut buf = Vec::new();
        store.write_into(&mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(ParamStore::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_insert_panics() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        store.insert("w", Tensor::scalar(2.0));
    }

    #[test]
    fn truncated_normal_respects_bounds_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = truncated_normal(&mut rng, vec![64, 16], 0.02);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04));
        // Same seed, same draw.
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let t2 = truncated_normal(&mut rng2, vec![64, 16], 0.02);
        assert_eq!(t, t2);
        // The sample should look roughly centered.
        let mean: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!(mean.abs() < 0.005, "mean {}", mean);
    }

    #[test]
    fn inject_preserves_store_order() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::scalar(1.0));
        store.insert("a", Tensor::scalar(2.0));
        let tape = Tape::new();
        let vars = store.inject(&tape, true);
        let names: Vec<&String> = vars.keys().collect();
        assert_eq!(names, ["b", "a"]);
    }
}
