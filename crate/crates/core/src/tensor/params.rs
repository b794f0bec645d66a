//! Named parameter storage with seeded, order-independent initialization.

use std::collections::BTreeMap;
use std::io::Cursor;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::array::Array;
use crate::tensor::snapshot::{read_snapshot, snapshot_len, write_snapshot};

/// How a parameter is filled on first registration.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zero,
    One,
    Const(f64),
    /// Uniform in (−bound, bound).
    Uniform(f64),
    /// Uniform with bound 1/√fan_in.
    FanIn(usize),
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Array,
    /// Trainable parameters receive optimizer updates; buffers (e.g. running
    /// statistics) do not.
    pub trainable: bool,
}

/// Map from dotted path (e.g. `"flow.conv1.weight"`) to tensor.
///
/// Initialization of each entry is a pure function of (name, shape,
/// rng_seed), so neither registration order nor the presence of other
/// parameters affects values.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    pub rng_seed: u64,
    entries: BTreeMap<String, Param>,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        ParameterStore {
            rng_seed,
            entries: BTreeMap::new(),
        }
    }

    /// Register `name` if absent and return its current value.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> &Array {
        if !self.entries.contains_key(name) {
            let mut rng = Rng::derive(self.rng_seed, name);
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Zero => vec![0.0; numel],
                Init::One => vec![1.0; numel],
                Init::Const(c) => vec![c; numel],
                Init::Uniform(b) => (0..numel).map(|_| rng.range(-b, b)).collect(),
                Init::FanIn(fan) => {
                    let b = 1.0 / (fan as f64).sqrt();
                    (0..numel).map(|_| rng.range(-b, b)).collect()
                }
            };
            self.entries.insert(
                name.to_string(),
                Param {
                    value: Array::from_vec(shape, data).expect("init shape"),
                    trainable,
                },
            );
        }
        &self.entries[name].value
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    /// Insert a fully formed parameter (checkpoint restore path).
    pub fn insert_param(&mut self, name: &str, param: Param) {
        self.entries.insert(name.to_string(), param);
    }

    pub fn set(&mut self, name: &str, value: Array) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(p) => {
                if p.value.shape() != value.shape() {
                    return Err(Error::shape(
                        "param_set",
                        format!(
                            "{name}: stored {:?} vs new {:?}",
                            p.value.shape(),
                            value.shape()
                        ),
                    ));
                }
                p.value = value;
                Ok(())
            }
            None => {
                self.entries.insert(name.to_string(), Param { value, trainable: true });
                Ok(())
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Deterministic name-ordered iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn total_parameters(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Serialize all entries: a JSON index `{name → {offset, shape,
    /// trainable}}` followed by concatenated tensor snapshots.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut index = serde_json::Map::new();
        let mut offset = 0usize;
        for (name, p) in &self.entries {
            let mut entry = serde_json::Map::new();
            entry.insert("offset".into(), serde_json::json!(offset));
            entry.insert("shape".into(), serde_json::json!(p.value.shape()));
            entry.insert("trainable".into(), serde_json::json!(p.trainable));
            index.insert(name.clone(), serde_json::Value::Object(entry));
            offset += snapshot_len(p.value.shape());
        }
        let header = serde_json::to_vec(&serde_json::json!({
            "rng_seed": self.rng_seed,
            "params": index,
        }))?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.entries.values() {
            write_snapshot(&mut out, &p.value)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParameterStore> {
        if bytes.len() < 8 {
            return Err(Error::Checkpoint("store blob too short".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + header_len])?;
        let rng_seed = header["rng_seed"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing rng_seed".into()))?;
        let params = header["params"]
            .as_object()
            .ok_or_else(|| Error::Checkpoint("missing params index".into()))?;
        let blob = &bytes[8 + header_len..];
        let mut store = ParameterStore::new(rng_seed);
        for (name, meta) in params {
            let offset = meta["offset"]
                .as_u64()
                .ok_or_else(|| Error::Checkpoint(format!("{name}: missing offset")))? as usize;
            let trainable = meta["trainable"].as_bool().unwrap_or(true);
            if offset >= blob.len() {
                return Err(Error::Checkpoint(format!("{name}: offset out of range")));
            }
            let mut cur = Cursor::new(&blob[offset..]);
            let value = read_snapshot(&mut cur)?;
            store.entries.insert(name.clone(), Param { value, trainable });
        }
        Ok(store)
    }
}
