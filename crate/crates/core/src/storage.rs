//! Blob store sink. A blob's creation time is the `t3` of every message in it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hub::Enqueued;
use crate::model::{MessageId, Millis};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("duplicate blob name `{0}`")]
    DuplicateBlobName(String),
    #[error("writing blob mirror {path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRecord {
    pub name: String,
    pub created_at: Millis,
    pub message_ids: Vec<MessageId>,
    pub size_bytes: u64,
}

/// One message as stored inside a blob file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredMessage {
    pub id: MessageId,
    pub t1: Millis,
    pub t2: Millis,
    pub body: String,
}

/// On-disk mirror layout of one blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobFile {
    pub name: String,
    pub created_at: Millis,
    pub messages: Vec<StoredMessage>,
}

/// Deterministic blob key: `<route>/<flush-ordinal>-<first-message-id>.json`.
pub fn blob_name(route: &str, ordinal: u64, first_id: Option<MessageId>) -> String {
    match first_id {
        Some(id) => format!("{route}/{ordinal:08}-{id:08}.json"),
        None => format!("{route}/{ordinal:08}-empty.json"),
    }
}

#[derive(Debug, Default)]
pub struct BlobStore {
    envelope_bytes: u64,
    blobs: Vec<BlobRecord>,
    files: Vec<BlobFile>,
    names: BTreeSet<String>,
    ordinals: BTreeMap<String, u64>,
}

impl BlobStore {
    /// `envelope_bytes` is added to every blob's size on top of its payloads.
    pub fn new(envelope_bytes: u64) -> Self {
        Self {
            envelope_bytes,
            ..Self::default()
        }
    }

    pub fn create_blob(
        &mut self,
        name: &str,
        contents: &[Enqueued],
        created_at: Millis,
    ) -> Result<&BlobRecord, StorageError> {
        if !self.names.insert(name.to_string()) {
            return Err(StorageError::DuplicateBlobName(name.to_string()));
        }
        let size_bytes = self.envelope_bytes
            + contents
                .iter()
                .map(|e| e.message.payload_bytes)
                .sum::<u64>();
        self.files.push(BlobFile {
            name: name.to_string(),
            created_at,
            messages: contents
                .iter()
                .map(|e| StoredMessage {
                    id: e.message.id,
                    t1: e.message.t1,
                    t2: e.t2,
                    body: e.message.body.clone(),
                })
                .collect(),
        });
        self.blobs.push(BlobRecord {
            name: name.to_string(),
            created_at,
            message_ids: contents.iter().map(|e| e.message.id).collect(),
            size_bytes,
        });
        Ok(self.blobs.last().expect("just pushed"))
    }

    /// Creates the next blob on `route`, naming it by flush ordinal.
    pub fn append_to_route(
        &mut self,
        route: &str,
        contents: &[Enqueued],
        created_at: Millis,
    ) -> Result<&BlobRecord, StorageError> {
        let ordinal = self.ordinals.entry(route.to_string()).or_insert(0);
        let name = blob_name(route, *ordinal, contents.first().map(|e| e.message.id));
        *ordinal += 1;
        self.create_blob(&name, contents, created_at)
    }

    /// Blobs whose name starts with `prefix`, by creation time then name.
    pub fn list_blobs(&self, prefix: &str) -> Vec<&BlobRecord> {
        let mut out: Vec<&BlobRecord> = self
            .blobs
            .iter()
            .filter(|b| b.name.starts_with(prefix))
            .collect();
        out.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.name.cmp(&b.name))
        });
        out
    }

    /// Blobs in insertion order.
    pub fn blobs(&self) -> &[BlobRecord] {
        &self.blobs
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Mirrors every blob to `dir` as one JSON file per blob.
    pub fn persist_to(&self, dir: &Path) -> Result<(), StorageError> {
        for file in &self.files {
            let path = dir.join(&file.name);
            let io_err = |source| StorageError::Io {
                path: path.display().to_string(),
                source,
            };
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
            let json = serde_json::to_vec_pretty(file).expect("blob file serializes");
            fs::write(&path, json).map_err(io_err)?;
        }
        Ok(())
    }
}
