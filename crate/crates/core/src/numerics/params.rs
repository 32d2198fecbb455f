//! Named trainable parameters and their on-disk format.
//!
//! The binary layout is little-endian throughout:
//!
//! ```text
//! magic    8 bytes   "ELANDPRM"
//! version  u32       1
//! seed     u64
//! count    u32
//! count × { name_len u32, name utf-8, ndim u32, dims u64 × ndim, values f64 × numel }
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ELANDPRM";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.rng_seed == other.rng_seed
    }
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a `fan_in × fan_out` weight drawn from the Glorot uniform
    /// range `±sqrt(6 / (fan_in + fan_out))`.
    pub fn init_glorot(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, values)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn insert(&mut self, name: &str, mut tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate parameter name '{name}'")));
        }
        tensor.set_requires_grad(true);
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Parameter(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Sets every parameter (and clears gradients) to zero.
    pub fn zero_all(&mut self) {
        for t in self.entries.values_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
            t.clear_grad();
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a parameter file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported parameter file version {version}")));
        }
        let seed = read_u64(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new(seed);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            store.insert(&name, Tensor::new(shape, values)?)?;
        }
        Ok(store)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
