use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Named trainable parameters, ordered by name.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: device.clone(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    /// Overwrites a parameter in place; every module holding it sees the new value.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Copies all values from `other`; both stores must hold the same names and shapes.
    pub fn load_from(&self, other: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in self.vars.keys() {
            if !other.contains_key(name) {
                return Err(Error::Checkpoint(format!("missing parameter {name}")));
            }
        }
        for (name, t) in other {
            self.set(name, t)?;
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a hash over names and raw values.
    pub fn checksum(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, var) in &self.vars {
            feed(name.as_bytes());
            let vals = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in vals {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        Ok(h)
    }
}

/// Scoped parameter constructor: prefixes names and draws initial values from a seeded RNG.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn pp(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.store.device)?;
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.insert(full, t)
    }

    /// Registers a parameter with an explicit initial value.
    pub fn get_from(&mut self, name: &str, value: Tensor) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.insert(full, value)
    }

    /// Fresh generator for sub-components that need their own stream.
    pub fn fork_rng(&mut self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng.random())
    }
}
