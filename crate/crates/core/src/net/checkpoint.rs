//! Single-file checkpoint: JSON header (config, step, index) followed by
//! concatenated tensor snapshots for parameters and optimizer state.
//!
//! ```text
//! u64 header_len | header JSON | snapshot blob
//! ```

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::config::NetConfig;
use crate::tensor::params::Param;
use crate::tensor::snapshot::{read_snapshot, snapshot_len, write_snapshot};
use crate::tensor::{Array, ParameterStore};
use crate::train::adam::AdamState;

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    offset: usize,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    step: u64,
    adam_t: u64,
    rng_seed: u64,
    entries: BTreeMap<String, EntryMeta>,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub step: u64,
    pub store: ParameterStore,
    pub adam: AdamState,
}

pub fn save_checkpoint(
    path: &Path,
    config: &NetConfig,
    store: &ParameterStore,
    adam: &AdamState,
    step: u64,
) -> Result<()> {
    let mut entries = BTreeMap::new();
    let mut ordered: Vec<(String, &Array, bool)> = Vec::new();
    for (name, p) in store.iter() {
        ordered.push((format!("param/{name}"), &p.value, p.trainable));
    }
    for (name, a) in adam.m.iter() {
        ordered.push((format!("adam_m/{name}"), a, false));
    }
    for (name, a) in adam.v.iter() {
        ordered.push((format!("adam_v/{name}"), a, false));
    }
    let mut offset = 0usize;
    for (name, arr, trainable) in &ordered {
        entries.insert(
            name.clone(),
            EntryMeta {
                offset,
                shape: arr.shape().to_vec(),
                trainable: *trainable,
            },
        );
        offset += snapshot_len(arr.shape());
    }
    let header = serde_json::to_vec(&Header {
        config: config.clone(),
        step,
        adam_t: adam.t,
        rng_seed: store.rng_seed,
        entries,
    })?;
    let mut bytes = Vec::with_capacity(8 + header.len() + offset);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, arr, _) in &ordered {
        write_snapshot(&mut bytes, arr)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if bytes.len() < 8 {
        return Err(Error::Checkpoint(format!("{}: too short", path.display())));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(Error::Checkpoint(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    let blob = &bytes[8 + header_len..];

    let mut store = ParameterStore::new(header.rng_seed);
    let mut adam = AdamState::new();
    adam.t = header.adam_t;
    for (full_name, meta) in &header.entries {
        if meta.offset >= blob.len() {
            return Err(Error::Checkpoint(format!(
                "{full_name}: offset out of range"
            )));
        }
        let mut cur = Cursor::new(&blob[meta.offset..]);
        let value = read_snapshot(&mut cur)?;
        if value.shape() != meta.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{full_name}: shape {:?} vs index {:?}",
                value.shape(),
                meta.shape
            )));
        }
        if let Some(name) = full_name.strip_prefix("param/") {
            store.insert_param(name, Param { value, trainable: meta.trainable });
        } else if let Some(name) = full_name.strip_prefix("adam_m/") {
            adam.m.insert(name.to_string(), value);
        } else if let Some(name) = full_name.strip_prefix("adam_v/") {
            adam.v.insert(name.to_string(), value);
        } else {
            return Err(Error::Checkpoint(format!("unknown entry {full_name}")));
        }
    }
    Ok(Checkpoint {
        config: header.config,
        step: header.step,
        store,
        adam,
    })
}
