//! Checkpoint file: a text manifest, a `---` line, then every tensor's data
//! as little-endian `f64`, back to back in manifest order.
//!
//! ```text
//! streamnav-checkpoint 1
//! model_hash <hex>
//! tensors <count>
//! <name> <dim>x<dim>... <offset>
//! ---
//! <payload>
//! ```

use std::sync::Arc;

use thiserror::Error;

use crate::encoders::Teachers;
use crate::numerics::{ParamStore, Tensor};
use crate::policy::StreamPolicy;

use super::config::RunConfig;

const MAGIC: &str = "streamnav-checkpoint 1";
const SEPARATOR: &[u8] = b"\n---\n";
const POLICY_PREFIX: &str = "policy/";
const TEACHER_PREFIX: &str = "teacher/";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("corrupt checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint payload holds {found} bytes, manifest needs {expected}")]
    Payload { expected: usize, found: usize },
    #[error("checkpoint was written for model {found}, config describes {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("checkpoint does not fit the configured model: {0}")]
    Incompatible(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_hash: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Manifest(msg.into())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut head = format!("{MAGIC}\nmodel_hash {}\ntensors {}\n", ck.model_hash, ck.tensors.len());
    let mut offset = 0usize;
    for (name, t) in &ck.tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        head.push_str(&format!("{name} {} {offset}\n", dims.join("x")));
        offset += t.len();
    }
    let mut out = head.into_bytes();
    out.pop();
    out.extend_from_slice(SEPARATOR);
    for (_, t) in &ck.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let split = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| corrupt("missing separator"))?;
    let head = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("manifest is not UTF-8"))?;
    let payload = &bytes[split + SEPARATOR.len()..];
    let mut lines = head.split('\n');
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("bad magic line"));
    }
    let model_hash = lines
        .next()
        .and_then(|l| l.strip_prefix("model_hash "))
        .filter(|h| !h.is_empty() && h.chars().all(|c| c.is_ascii_hexdigit()))
        .ok_or_else(|| corrupt("bad model_hash line"))?
        .to_string();
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("tensors "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| corrupt("bad tensors line"))?;
    let mut entries = Vec::new();
    let mut next_offset = 0usize;
    for line in lines {
        let fields: Vec<&str> = line.split(' ').collect();
        let [name, dims, offset] = fields[..] else {
            return Err(corrupt(format!("bad tensor line {line:?}")));
        };
        if name.is_empty() {
            return Err(corrupt("empty tensor name"));
        }
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| corrupt(format!("bad shape {dims:?}")))?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("shape overflows"))?;
        let offset: usize = offset.parse().map_err(|_| corrupt(format!("bad offset {offset:?}")))?;
        if offset != next_offset {
            return Err(corrupt(format!("tensor {name} is not contiguous")));
        }
        next_offset = offset.checked_add(len).ok_or_else(|| corrupt("offset overflows"))?;
        entries.push((name.to_string(), shape, offset, len));
    }
    if entries.len() != count {
        return Err(corrupt(format!("manifest lists {} tensors, header says {count}", entries.len())));
    }
    let expected = next_offset.checked_mul(8).ok_or_else(|| corrupt("payload size overflows"))?;
    if payload.len() != expected {
        return Err(CheckpointError::Payload {
            expected,
            found: payload.len(),
        });
    }
    let mut tensors = Vec::with_capacity(entries.len());
    for (name, shape, offset, len) in entries {
        let data = payload[offset * 8..(offset + len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
        tensors.push((name, t));
    }
    Ok(Checkpoint { model_hash, tensors })
}

/// Policy weights and the frozen teacher weights, keyed by the config's
/// model hash.
pub fn checkpoint_of(policy: &StreamPolicy, cfg: &RunConfig) -> Checkpoint {
    let mut tensors = Vec::new();
    for (prefix, store) in [(POLICY_PREFIX, policy.store()), (TEACHER_PREFIX, policy.teachers().store())] {
        for id in store.ids() {
            tensors.push((format!("{prefix}{}", store.name(id)), (**store.get(id)).clone()));
        }
    }
    Checkpoint {
        model_hash: cfg.model_hash(),
        tensors,
    }
}

/// Rebuild the policy a checkpoint describes, refusing one written for a
/// different model.
pub fn policy_from_checkpoint(ck: &Checkpoint, cfg: &RunConfig) -> Result<StreamPolicy, CheckpointError> {
    let expected = cfg.model_hash();
    if ck.model_hash != expected {
        return Err(CheckpointError::HashMismatch {
            expected,
            found: ck.model_hash.clone(),
        });
    }
    let incompatible = |e: &dyn std::fmt::Display| CheckpointError::Incompatible(e.to_string());
    let pcfg = cfg.policy_config().map_err(|e| incompatible(&e))?;
    let (mut policy_store, mut teacher_store) = (ParamStore::new(), ParamStore::new());
    for (name, t) in &ck.tensors {
        if let Some(n) = name.strip_prefix(POLICY_PREFIX) {
            policy_store.insert(n, t.clone(), true);
        } else if let Some(n) = name.strip_prefix(TEACHER_PREFIX) {
            teacher_store.insert(n, t.clone(), false);
        } else {
            return Err(CheckpointError::Incompatible(format!("unknown tensor {name}")));
        }
    }
    let teachers = Teachers::from_store(pcfg.encoder, teacher_store).map_err(|e| incompatible(&e))?;
    StreamPolicy::from_store(pcfg, Arc::new(teachers), policy_store).map_err(|e| incompatible(&e))
}
