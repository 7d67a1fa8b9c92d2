//! Binary checkpoint: `AVSRCKP1`, a little-endian `u32` header length, a
//! JSON header describing every array, then the raw little-endian arrays.

use std::fs;
use std::path::Path;

use avsr_autograd::Tensor;
use indexmap::IndexMap;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{format_err, AvsrError, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"AVSRCKP1";
pub const METADATA_KEY: &str = "__metadata__";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Tensor),
    I64 { shape: Vec<usize>, data: Vec<i64> },
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::I64 { .. } => "i64",
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F64(t) => t.shape(),
            ArrayData::I64 { shape, .. } => shape,
        }
    }

    fn byte_len(&self) -> usize {
        8 * match self {
            ArrayData::F64(t) => t.numel(),
            ArrayData::I64 { data, .. } => data.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub data: ArrayData,
    pub trainable: bool,
    pub group: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
    trainable: bool,
    frozen_group: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: IndexMap<String, Entry>,
    pub metadata: Value,
}

fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}/{name}")
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Self {
            entries: IndexMap::new(),
            metadata,
        }
    }

    pub fn put_tensor(&mut self, name: String, t: Tensor, trainable: bool, group: &str) {
        self.entries.insert(
            name,
            Entry {
                data: ArrayData::F64(t),
                trainable,
                group: group.into(),
            },
        );
    }

    pub fn put_i64(&mut self, name: String, shape: Vec<usize>, data: Vec<i64>) {
        self.entries.insert(
            name,
            Entry {
                data: ArrayData::I64 { shape, data },
                trainable: false,
                group: "state".into(),
            },
        );
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.entries.get(name).map(|e| &e.data) {
            Some(ArrayData::F64(t)) => Ok(t),
            Some(_) => Err(format_err!("checkpoint array '{name}' is not f64")),
            None => Err(format_err!("checkpoint has no array '{name}'")),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<&[i64]> {
        match self.entries.get(name).map(|e| &e.data) {
            Some(ArrayData::I64 { data, .. }) => Ok(data),
            Some(_) => Err(format_err!("checkpoint array '{name}' is not i64")),
            None => Err(format_err!("checkpoint has no array '{name}'")),
        }
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.entries.keys().any(|k| k.starts_with(&p))
    }

    pub fn put_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, e) in store.iter() {
            self.put_tensor(join(prefix, name), e.tensor.clone(), e.trainable, &e.group);
        }
    }

    /// Rebuilds a parameter store saved under `prefix`, in saved order.
    pub fn store(&self, prefix: &str) -> Result<ParamStore> {
        let p = format!("{prefix}/");
        let mut out = ParamStore::new();
        for (k, e) in self.entries.iter().filter(|(k, _)| k.starts_with(&p)) {
            let ArrayData::F64(t) = &e.data else {
                return Err(format_err!("parameter '{k}' is not f64"));
            };
            out.insert(&k[p.len()..], t.clone(), &e.group, e.trainable);
        }
        Ok(out)
    }

    /// Replaces the values of `store` with the arrays saved under `prefix`,
    /// checking names and shapes.
    pub fn restore_into(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let saved = self.store(prefix)?;
        if saved.len() != store.len() {
            return Err(format_err!(
                "checkpoint holds {} arrays under '{prefix}', model has {}",
                saved.len(),
                store.len()
            ));
        }
        for (name, e) in saved.iter() {
            let dst = store
                .get(name)
                .ok_or_else(|| format_err!("checkpoint array '{prefix}/{name}' has no model counterpart"))?;
            if dst.shape() != e.tensor.shape() {
                return Err(format_err!(
                    "'{prefix}/{name}' has shape {:?}, model expects {:?}",
                    e.tensor.shape(),
                    dst.shape()
                ));
            }
        }
        for (name, e) in saved.iter() {
            *store.get_mut(name).expect("checked above") = e.tensor.clone();
        }
        Ok(())
    }

    pub fn put_adam(&mut self, prefix: &str, state: &AdamState) {
        self.put_i64(join(prefix, "step"), vec![1], vec![state.step as i64]);
        for (n, t) in &state.m {
            self.put_tensor(join(prefix, &format!("m/{n}")), t.clone(), false, "optimizer");
        }
        for (n, t) in &state.v {
            self.put_tensor(join(prefix, &format!("v/{n}")), t.clone(), false, "optimizer");
        }
    }

    pub fn adam(&self, prefix: &str) -> Result<AdamState> {
        let step = self.i64s(&join(prefix, "step"))?[0] as u64;
        let mut state = AdamState {
            step,
            ..AdamState::default()
        };
        let (pm, pv) = (join(prefix, "m/"), join(prefix, "v/"));
        for (k, e) in &self.entries {
            let ArrayData::F64(t) = &e.data else { continue };
            if let Some(n) = k.strip_prefix(&pm) {
                state.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = k.strip_prefix(&pv) {
                state.v.insert(n.to_string(), t.clone());
            }
        }
        Ok(state)
    }

    pub fn put_rng(&mut self, prefix: &str, rng: &ChaCha8Rng) {
        let seed = rng.get_seed();
        let words: Vec<i64> = seed
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.put_i64(join(prefix, "seed"), vec![4], words);
        self.put_i64(join(prefix, "stream"), vec![1], vec![rng.get_stream() as i64]);
        let pos = rng.get_word_pos();
        self.put_i64(join(prefix, "word_pos"), vec![2], vec![(pos >> 64) as i64, pos as u64 as i64]);
    }

    pub fn rng(&self, prefix: &str) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let words = self.i64s(&join(prefix, "seed"))?;
        if words.len() != 4 {
            return Err(format_err!("rng seed must hold 4 words"));
        }
        let mut seed = [0u8; 32];
        for (i, w) in words.iter().enumerate() {
            seed[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.i64s(&join(prefix, "stream"))?[0] as u64);
        let pos = self.i64s(&join(prefix, "word_pos"))?;
        if pos.len() != 2 {
            return Err(format_err!("rng word position must hold 2 words"));
        }
        rng.set_word_pos(((pos[0] as u64 as u128) << 64) | pos[1] as u64 as u128);
        Ok(rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        let mut offset = 0;
        for (name, e) in &self.entries {
            let h = HeaderEntry {
                shape: e.data.shape().to_vec(),
                dtype: e.data.dtype().into(),
                byte_offset: offset,
                trainable: e.trainable,
                frozen_group: e.group.clone(),
            };
            offset += e.data.byte_len();
            header.insert(name.clone(), serde_json::to_value(h).expect("header entry serializes"));
        }
        header.insert(METADATA_KEY.into(), self.metadata.clone());
        let header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for e in self.entries.values() {
            match &e.data {
                ArrayData::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                ArrayData::I64 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(format_err!("not a checkpoint (bad magic or version)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body_start = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err!("checkpoint header is truncated"))?;
        let header: serde_json::Map<String, Value> =
            serde_json::from_slice(&bytes[12..body_start]).map_err(|e| format_err!("checkpoint header: {e}"))?;
        let payload = &bytes[body_start..];
        let mut ckpt = Checkpoint::new(Value::Null);
        for (name, v) in header {
            if name == METADATA_KEY {
                ckpt.metadata = v;
                continue;
            }
            let h: HeaderEntry =
                serde_json::from_value(v).map_err(|e| format_err!("checkpoint entry '{name}': {e}"))?;
            let n: usize = h.shape.iter().product();
            let end = h
                .byte_offset
                .checked_add(8 * n)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| format_err!("checkpoint array '{name}' runs past the end of the file"))?;
            let raw = &payload[h.byte_offset..end];
            let data = match h.dtype.as_str() {
                "f64" => ArrayData::F64(Tensor::new(
                    h.shape,
                    raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )),
                "i64" => ArrayData::I64 {
                    shape: h.shape,
                    data: raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect(),
                },
                other => return Err(format_err!("checkpoint array '{name}' has unsupported dtype '{other}'")),
            };
            ckpt.entries.insert(
                name,
                Entry {
                    data,
                    trainable: h.trainable,
                    group: h.frozen_group,
                },
            );
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| AvsrError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| AvsrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| AvsrError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| format_err!("{}: {e}", path.display()))
    }
}
