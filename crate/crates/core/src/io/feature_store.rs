//! `.acfb` feature container.
//!
//! Layout, all little-endian: magic `ACFB`, `u8` version, `u32` record count
//! `N`, `u32` dim `d`, then `N` records of `(u64 record_id, d x f32)` in
//! ascending record-id order. The manifest is a sibling JSON document
//! (`<stem>.manifest.json`) mapping each record to its role.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotations::DatasetAnnotations;
use crate::bbox::BBox;
use crate::error::{Error, Result};

pub const ACFB_MAGIC: &[u8; 4] = b"ACFB";
pub const ACFB_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Human,
    Object,
    Union,
    /// Per-verb text embedding; `index` is the verb.
    Semantic,
    /// Per-HOI text embedding; `index` is the HOI class.
    SemanticHoi,
    /// Object-class text embedding used by prior tokens; `index` is the class.
    ObjectText,
    /// Raw `channels x H x W` pixel grid.
    Image,
    /// Named parameter chunk of an encoder weights file.
    Param,
}

impl Role {
    fn tag(self) -> &'static str {
        match self {
            Role::Human => "human",
            Role::Object => "object",
            Role::Union => "union",
            Role::Semantic => "semantic",
            Role::SemanticHoi => "semantic_hoi",
            Role::ObjectText => "object_text",
            Role::Image => "image",
            Role::Param => "param",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: u64,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<u64>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl ManifestEntry {
    pub fn for_box(image_id: u64, role: Role, bbox: BBox) -> Self {
        ManifestEntry {
            record_id: record_id_for_box(image_id, role, &bbox),
            role,
            image_id: Some(image_id),
            bbox: Some(bbox),
            index: None,
            name: None,
        }
    }

    pub fn for_index(role: Role, index: usize) -> Self {
        ManifestEntry {
            record_id: record_id_for_index(role, index),
            role,
            image_id: None,
            bbox: None,
            index: Some(index),
            name: None,
        }
    }

    /// Named record, such as a parameter chunk of a weights file.
    pub fn for_name(role: Role, name: &str) -> Self {
        ManifestEntry {
            record_id: record_id_for_name(role, name),
            role,
            image_id: None,
            bbox: None,
            index: None,
            name: Some(name.to_string()),
        }
    }

    pub fn for_image(image_id: u64) -> Self {
        ManifestEntry {
            record_id: record_id_for_index(Role::Image, image_id as usize),
            role: Role::Image,
            image_id: Some(image_id),
            bbox: None,
            index: None,
            name: None,
        }
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic record id for a box-anchored feature.
pub fn record_id_for_box(image_id: u64, role: Role, bbox: &BBox) -> u64 {
    let mut buf = Vec::with_capacity(40);
    buf.extend_from_slice(role.tag().as_bytes());
    buf.push(0);
    buf.extend_from_slice(&image_id.to_le_bytes());
    for v in bbox.bits() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fnv1a(buf)
}

/// Deterministic record id for an index-anchored feature (verb, class, image).
pub fn record_id_for_index(role: Role, index: usize) -> u64 {
    let mut buf = Vec::with_capacity(24);
    buf.extend_from_slice(role.tag().as_bytes());
    buf.push(1);
    buf.extend_from_slice(&(index as u64).to_le_bytes());
    fnv1a(buf)
}

pub fn record_id_for_name(role: Role, name: &str) -> u64 {
    let mut buf = Vec::with_capacity(16 + name.len());
    buf.extend_from_slice(role.tag().as_bytes());
    buf.push(2);
    buf.extend_from_slice(name.as_bytes());
    fnv1a(buf)
}

type BoxKey = (u64, Role, [u32; 4]);

pub type Record = (u64, Vec<f32>);

#[derive(Clone, Debug, Default)]
pub struct FeatureStore {
    dim: usize,
    records: BTreeMap<u64, Vec<f32>>,
    manifest: BTreeMap<u64, ManifestEntry>,
    by_box: HashMap<BoxKey, u64>,
    by_index: HashMap<(Role, usize), u64>,
}

impl PartialEq for FeatureStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.records == other.records && self.manifest == other.manifest
    }
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore { dim, ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, entry: ManifestEntry, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("feature_store.insert", &[self.dim], &[vector.len()]));
        }
        let id = entry.record_id;
        if self.records.contains_key(&id) {
            return Err(Error::format("ACFB", format!("duplicate record id {id:#018x}")));
        }
        self.index_entry(&entry);
        self.records.insert(id, vector);
        self.manifest.insert(id, entry);
        Ok(())
    }

    /// Inserts unless a record with the same id exists already.
    pub fn insert_if_absent(&mut self, entry: ManifestEntry, vector: Vec<f32>) -> Result<bool> {
        if self.records.contains_key(&entry.record_id) {
            return Ok(false);
        }
        self.insert(entry, vector)?;
        Ok(true)
    }

    fn index_entry(&mut self, entry: &ManifestEntry) {
        let id = entry.record_id;
        if let (Some(img), Some(b)) = (entry.image_id, entry.bbox) {
            self.by_box.insert((img, entry.role, b.bits()), id);
        }
        if let Some(i) = entry.index {
            self.by_index.insert((entry.role, i), id);
        }
        if entry.role == Role::Image {
            if let Some(img) = entry.image_id {
                self.by_index.insert((Role::Image, img as usize), id);
            }
        }
    }

    pub fn get(&self, record_id: u64) -> Option<&[f32]> {
        self.records.get(&record_id).map(Vec::as_slice)
    }

    pub fn entry(&self, record_id: u64) -> Option<&ManifestEntry> {
        self.manifest.get(&record_id)
    }

    pub fn lookup_box(&self, image_id: u64, role: Role, bbox: &BBox) -> Option<&[f32]> {
        self.by_box.get(&(image_id, role, bbox.bits())).and_then(|id| self.get(*id))
    }

    pub fn lookup_index(&self, role: Role, index: usize) -> Option<&[f32]> {
        self.by_index.get(&(role, index)).and_then(|id| self.get(*id))
    }

    pub fn lookup_image(&self, image_id: u64) -> Option<&[f32]> {
        self.lookup_index(Role::Image, image_id as usize)
    }

    pub fn records(&self) -> impl Iterator<Item = (u64, &[f32])> {
        self.records.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn manifest(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.values()
    }

    /// Serializes the binary part of the container.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(ACFB_MAGIC);
        out.push(ACFB_VERSION);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, v) in &self.records {
            out.extend_from_slice(&id.to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses the binary part; returns dim and `(record_id, vector)` records
    /// in file order.
    pub fn decode(bytes: &[u8]) -> Result<(usize, Vec<Record>)> {
        let err = |m: String| Error::format("ACFB", m);
        if bytes.len() < HEADER_LEN {
            return Err(err(format!("file of {} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != ACFB_MAGIC {
            return Err(err(format!("bad magic {:?}", &bytes[..4])));
        }
        if bytes[4] != ACFB_VERSION {
            return Err(err(format!("unsupported version {}", bytes[4])));
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(err("declared dim is zero".into()));
        }
        let rec_len = 8 + 4 * dim;
        let expected = n
            .checked_mul(rec_len)
            .and_then(|p| p.checked_add(HEADER_LEN))
            .ok_or_else(|| err("record count overflows".into()))?;
        if bytes.len() < expected {
            return Err(err(format!("truncated payload: {} bytes, expected {expected}", bytes.len())));
        }
        if bytes.len() > expected {
            return Err(err(format!("payload overrun: {} trailing bytes", bytes.len() - expected)));
        }
        let mut out = Vec::with_capacity(n);
        for rec in bytes[HEADER_LEN..].chunks_exact(rec_len) {
            let id = u64::from_le_bytes(rec[..8].try_into().unwrap());
            let v = rec[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            out.push((id, v));
        }
        Ok((dim, out))
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    dim: usize,
    entries: Vec<ManifestEntry>,
}

/// `train.acfb` -> `train.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn write_feature_store(store: &FeatureStore, path: &Path) -> Result<()> {
    std::fs::write(path, store.encode()).map_err(|e| Error::io(path, e))?;
    let doc = ManifestDoc { dim: store.dim, entries: store.manifest.values().cloned().collect() };
    super::write_json(&manifest_path(path), &doc)
}

pub fn read_feature_store(path: &Path) -> Result<FeatureStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dim, records) = FeatureStore::decode(&bytes)?;
    let doc: ManifestDoc = super::read_json(&manifest_path(path))?;
    if doc.dim != dim {
        return Err(Error::format("ACFB", format!("header dim {dim} disagrees with manifest dim {}", doc.dim)));
    }
    let mut entries: HashMap<u64, ManifestEntry> = HashMap::with_capacity(doc.entries.len());
    for e in doc.entries {
        if entries.insert(e.record_id, e).is_some() {
            return Err(Error::format("ACFB", "manifest lists a record id twice"));
        }
    }
    if entries.len() != records.len() {
        return Err(Error::format(
            "ACFB",
            format!("manifest covers {} records, container holds {}", entries.len(), records.len()),
        ));
    }
    let mut store = FeatureStore::new(dim);
    for (id, v) in records {
        let entry = entries
            .remove(&id)
            .ok_or_else(|| Error::format("ACFB", format!("record {id:#018x} missing from manifest")))?;
        store.insert(entry, v)?;
    }
    Ok(store)
}

/// Lists every ground-truth pair whose human, object or union record is absent.
pub fn check_pair_records(annotations: &DatasetAnnotations, store: &FeatureStore) -> Vec<String> {
    let mut missing = Vec::new();
    for img in &annotations.images {
        for (pi, gt) in img.gt_pairs.iter().enumerate() {
            let union = gt.human_box.union(&gt.object_box);
            for (role, b) in [(Role::Human, gt.human_box), (Role::Object, gt.object_box), (Role::Union, union)] {
                if store.lookup_box(img.image_id, role, &b).is_none() {
                    missing.push(format!("image {} pair {pi} role {}", img.image_id, role.tag()));
                }
            }
        }
    }
    missing
}
