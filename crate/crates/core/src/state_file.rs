//! Versioned JSON serialization of [`ModelState`].
//!
//! The encoder is stored as its config and rebuilt on load; all floats use
//! shortest round-trip formatting, so `load(save(s)) == s` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::AdamSlot;
use crate::class_id::ClassId;
use crate::encoder::{EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::ncm::Prototype;
use crate::prompt_pool::PromptEntry;
use crate::trainer::{ModelState, TrainConfig};

pub const MAGIC: &str = "F2OCL-STATE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerRecord {
    class_id: ClassId,
    #[serde(flatten)]
    slot: AdamSlot,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDocument {
    magic: String,
    version: u32,
    encoder: EncoderConfig,
    train: TrainConfig,
    batches_seen: u64,
    prompts: Vec<PromptEntry>,
    prototypes: Vec<Prototype>,
    query_prototypes: Vec<Prototype>,
    optimizer: Vec<OptimizerRecord>,
}

pub fn to_string(state: &ModelState) -> Result<String> {
    let doc = StateDocument {
        magic: MAGIC.into(),
        version: FORMAT_VERSION,
        encoder: state.encoder.config().clone(),
        train: state.config.clone(),
        batches_seen: state.batches_seen,
        prompts: state.pool.entries().cloned().collect(),
        prototypes: state.prototypes.iter().cloned().collect(),
        query_prototypes: state.query_prototypes.iter().cloned().collect(),
        optimizer: state
            .adam
            .iter()
            .map(|(&class_id, slot)| OptimizerRecord {
                class_id,
                slot: slot.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).map_err(|e| Error::Format(format!("cannot encode state: {e}")))
}

pub fn from_str(text: &str) -> Result<ModelState> {
    #[derive(Deserialize)]
    struct Header {
        magic: String,
        version: u32,
    }
    let header: Header = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("not a state file: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", header.magic)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported state version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let doc: StateDocument =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("corrupt state: {e}")))?;

    let encoder = EncoderState::build(&doc.encoder)?;
    doc.train.validate()?;
    let mut state = ModelState::from_parts(encoder, doc.train);
    state.batches_seen = doc.batches_seen;
    let d = state.encoder.token_dim();
    for entry in doc.prompts {
        state.pool.insert_entry(entry)?;
    }
    for (store, records) in [
        (&mut state.prototypes, doc.prototypes),
        (&mut state.query_prototypes, doc.query_prototypes),
    ] {
        for p in records {
            if p.mu.len() != d {
                return Err(Error::Format(format!("prototype {} has wrong dimension", p.class_id)));
            }
            store.insert(p)?;
        }
    }
    let slot_len = state.config.prompt_length * d;
    for rec in doc.optimizer {
        if rec.slot.m.len() != slot_len || rec.slot.v.len() != slot_len {
            return Err(Error::Format(format!(
                "optimizer slot {} has wrong size",
                rec.class_id
            )));
        }
        state.adam.insert(rec.class_id, rec.slot);
    }
    let pool_classes: Vec<ClassId> = state.pool.entries().map(|e| e.class_id).collect();
    let proto_classes: Vec<ClassId> = state.prototypes.iter().map(|p| p.class_id).collect();
    let query_classes: Vec<ClassId> = state.query_prototypes.iter().map(|p| p.class_id).collect();
    let slot_classes: Vec<ClassId> = state.adam.keys().copied().collect();
    if pool_classes != proto_classes || pool_classes != query_classes || pool_classes != slot_classes {
        return Err(Error::Format(
            "prompt pool, prototypes and optimizer slots disagree on classes".into(),
        ));
    }
    Ok(state)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_string(state)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
