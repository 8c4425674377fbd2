//! Per-backbone feature files (FSF) and multi-backbone joining.
//!
//! An FSF file carries one backbone's pooled embeddings. All integers are
//! little-endian:
//!
//! ```text
//! "FSF1" | u32 version=1 | u16 len + backbone name
//! u32 n_classes | n_classes x (u16 len + class name)
//! u32 dim | u32 n_records | n_records x (u32 class, u32 image, dim x f32)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub const FSF_MAGIC: [u8; 4] = *b"FSF1";
pub const FSF_VERSION: u32 = 1;

/// Identifies one image across stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemKey {
    pub class_index: u32,
    pub image_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub class_index: u32,
    pub image_id: u32,
    pub features: Vec<f32>,
}

impl FeatureRecord {
    pub fn key(&self) -> ItemKey {
        ItemKey {
            class_index: self.class_index,
            image_id: self.image_id,
        }
    }
}

/// One backbone's embeddings for a labelled image collection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub backbone_name: String,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub records: Vec<FeatureRecord>,
}

impl FeatureStore {
    /// Checks every store invariant.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidStore("feature dimension is zero".into()));
        }
        if self.backbone_name.len() > u16::MAX as usize {
            return Err(Error::InvalidStore("backbone name too long".into()));
        }
        if let Some(name) = self.class_names.iter().find(|n| n.len() > u16::MAX as usize) {
            return Err(Error::InvalidStore(format!(
                "class name of {} bytes is too long",
                name.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for (i, rec) in self.records.iter().enumerate() {
            if rec.features.len() != self.dim {
                return Err(Error::InvalidStore(format!(
                    "record {i} has {} features, store dimension is {}",
                    rec.features.len(),
                    self.dim
                )));
            }
            if rec.class_index as usize >= self.class_names.len() {
                return Err(Error::InvalidStore(format!(
                    "record {i} has class index {} but only {} classes are declared",
                    rec.class_index,
                    self.class_names.len()
                )));
            }
            if let Some(index) = rec.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { record: i, index });
            }
            if !seen.insert(rec.key()) {
                return Err(Error::InvalidStore(format!(
                    "duplicate key (class {}, image {})",
                    rec.class_index, rec.image_id
                )));
            }
        }
        Ok(())
    }

    /// Number of records per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for rec in &self.records {
            if let Some(c) = counts.get_mut(rec.class_index as usize) {
                *c += 1;
            }
        }
        counts
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let payload = self.records.len() * (8 + 4 * self.dim);
        let mut out = Vec::with_capacity(64 + payload);
        out.extend_from_slice(&FSF_MAGIC);
        out.extend_from_slice(&FSF_VERSION.to_le_bytes());
        put_str(&mut out, &self.backbone_name);
        out.extend_from_slice(&(self.class_names.len() as u32).to_le_bytes());
        for name in &self.class_names {
            put_str(&mut out, name);
        }
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(&rec.class_index.to_le_bytes());
            out.extend_from_slice(&rec.image_id.to_le_bytes());
            for v in &rec.features {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != FSF_MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = r.u32("version")?;
        if version != FSF_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let backbone_name = r.string("backbone name")?;
        let n_classes = r.u32("class count")? as usize;
        let mut class_names = Vec::with_capacity(n_classes.min(1 << 16));
        for i in 0..n_classes {
            class_names.push(r.string(&format!("class name {i}"))?);
        }
        let dim = r.u32("feature dimension")? as usize;
        let n_records = r.u32("record count")? as usize;
        let record_bytes = 8 + 4 * dim;
        let available = r.remaining() / record_bytes.max(1);
        if available < n_records {
            return Err(Error::Truncated(format!(
                "header declares {n_records} records but the payload holds {available}"
            )));
        }
        let mut records = Vec::with_capacity(n_records);
        for i in 0..n_records {
            let class_index = r.u32("class index")?;
            let image_id = r.u32("image id")?;
            let raw = r.take(4 * dim, "features")?;
            let features: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(index) = features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { record: i, index });
            }
            records.push(FeatureRecord {
                class_index,
                image_id,
                features,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes after the last record",
                r.remaining()
            )));
        }
        let store = FeatureStore {
            backbone_name,
            dim,
            class_names,
            records,
        };
        store.validate()?;
        Ok(store)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Malformed(format!("{what} is not valid UTF-8")))
    }
}

pub fn write_fsf(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    let bytes = store.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_fsf(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let bytes = fs::read(path)?;
    FeatureStore::from_bytes(&bytes)
}

/// How [`join`] treats keys missing from some stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JoinMode {
    #[default]
    Strict,
    /// Drop partial keys with a warning.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedItem {
    pub key: ItemKey,
    pub features: Vec<f32>,
}

/// Several stores concatenated per key, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinedDataset {
    pub backbone_names: Vec<String>,
    pub dims: Vec<usize>,
    pub class_names: Vec<String>,
    /// Sorted by key.
    pub items: Vec<JoinedItem>,
}

impl JoinedDataset {
    pub fn dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Item indices per class, each list ordered by image id.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, item) in self.items.iter().enumerate() {
            out[item.key.class_index as usize].push(i);
        }
        out
    }
}

pub fn join(stores: &[FeatureStore], mode: JoinMode) -> Result<JoinedDataset> {
    let first = stores
        .first()
        .ok_or_else(|| Error::Config("join needs at least one store".into()))?;
    for store in stores {
        store.validate()?;
        if store.class_names != first.class_names {
            return Err(Error::ClassMismatch {
                reference: first.backbone_name.clone(),
                store: store.backbone_name.clone(),
            });
        }
    }

    let lookups: Vec<BTreeMap<ItemKey, &[f32]>> = stores
        .iter()
        .map(|s| {
            s.records
                .iter()
                .map(|r| (r.key(), r.features.as_slice()))
                .collect()
        })
        .collect();
    let all_keys: BTreeSet<ItemKey> = lookups.iter().flat_map(|m| m.keys().copied()).collect();

    let total: usize = stores.iter().map(|s| s.dim).sum();
    let mut items = Vec::new();
    let mut dropped = 0usize;
    for key in all_keys {
        if let Some(missing) = lookups.iter().position(|m| !m.contains_key(&key)) {
            match mode {
                JoinMode::Strict => {
                    return Err(Error::MissingKey {
                        class_index: key.class_index,
                        image_id: key.image_id,
                        store: stores[missing].backbone_name.clone(),
                    })
                }
                JoinMode::Lenient => {
                    dropped += 1;
                    continue;
                }
            }
        }
        let mut features = Vec::with_capacity(total);
        for m in &lookups {
            features.extend_from_slice(m[&key]);
        }
        items.push(JoinedItem { key, features });
    }
    if dropped > 0 {
        warn!("join dropped {dropped} keys not present in every store");
    }
    if items.is_empty() {
        return Err(Error::EmptyJoin);
    }
    Ok(JoinedDataset {
        backbone_names: stores.iter().map(|s| s.backbone_name.clone()).collect(),
        dims: stores.iter().map(|s| s.dim).collect(),
        class_names: first.class_names.clone(),
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(name: &str, dim: usize, keys: &[(u32, u32)], fill: f32) -> FeatureStore {
        FeatureStore {
            backbone_name: name.into(),
            dim,
            class_names: vec!["bolt".into(), "nest".into()],
            records: keys
                .iter()
                .map(|&(c, i)| FeatureRecord {
                    class_index: c,
                    image_id: i,
                    features: (0..dim).map(|j| fill + j as f32 + i as f32 * 0.5).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn minimal_store_layout() {
        let s = FeatureStore {
            backbone_name: "rn".into(),
            dim: 4,
            class_names: vec!["a".into()],
            records: vec![FeatureRecord {
                class_index: 0,
                image_id: 7,
                features: vec![1.0, 2.0, 3.0, 4.0],
            }],
        };
        let bytes = s.to_bytes().unwrap();
        // magic, version, name, class count, class name, dim, count, key, payload
        assert_eq!(bytes.len(), 4 + 4 + (2 + 2) + 4 + (2 + 1) + 4 + 4 + 8 + 16);
        assert_eq!(&bytes[..4], b"FSF1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[bytes.len() - 16..bytes.len() - 12], &1.0f32.to_le_bytes());
        assert_eq!(FeatureStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn refuses_mismatched_record_length() {
        let mut s = store("rn", 3, &[(0, 0)], 0.0);
        s.records[0].features.pop();
        assert!(matches!(s.to_bytes(), Err(Error::InvalidStore(_))));
    }

    #[test]
    fn read_errors_are_distinct() {
        let good = store("rn", 3, &[(0, 0), (1, 0)], 0.0).to_bytes().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            FeatureStore::from_bytes(&bad_magic),
            Err(Error::BadMagic { found }) if &found == b"XXXX"
        ));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(
            FeatureStore::from_bytes(&bad_version),
            Err(Error::UnsupportedVersion(2))
        ));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(
            FeatureStore::from_bytes(truncated),
            Err(Error::Truncated(_))
        ));

        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureStore::from_bytes(&nan),
            Err(Error::NonFinite { record: 1, index: 2 })
        ));
    }

    #[test]
    fn declared_ten_records_but_nine_present() {
        let keys: Vec<(u32, u32)> = (0..10).map(|i| (0, i)).collect();
        let bytes = store("rn", 2, &keys, 0.0).to_bytes().unwrap();
        let nine = &bytes[..bytes.len() - (8 + 8)];
        match FeatureStore::from_bytes(nine) {
            Err(Error::Truncated(msg)) => assert!(msg.contains("10 records"), "{msg}"),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn join_concatenates_in_order() {
        let a = store("a", 2, &[(0, 0), (1, 3)], 0.0);
        let b = store("b", 3, &[(1, 3), (0, 0)], 100.0);
        let joined = join(&[a.clone(), b.clone()], JoinMode::Strict).unwrap();
        assert_eq!(joined.dim(), 5);
        assert_eq!(joined.items.len(), 2);
        let item = &joined.items[1];
        assert_eq!(item.key, ItemKey { class_index: 1, image_id: 3 });
        assert_eq!(&item.features[..2], a.records[1].features.as_slice());
        assert_eq!(&item.features[2..], b.records[0].features.as_slice());
    }

    #[test]
    fn single_store_join_is_identity() {
        let a = store("a", 4, &[(0, 0), (0, 1), (1, 0)], 1.0);
        let joined = join(std::slice::from_ref(&a), JoinMode::Strict).unwrap();
        assert_eq!(joined.dim(), 4);
        for (item, rec) in joined.items.iter().zip(&a.records) {
            assert_eq!(item.features, rec.features);
        }
    }

    #[test]
    fn disjoint_keys() {
        let a = store("a", 2, &[(0, 0), (0, 1)], 0.0);
        let b = store("b", 2, &[(0, 2), (0, 3)], 0.0);
        assert!(matches!(
            join(&[a.clone(), b.clone()], JoinMode::Strict),
            Err(Error::MissingKey { .. })
        ));
        assert!(matches!(
            join(&[a, b], JoinMode::Lenient),
            Err(Error::EmptyJoin)
        ));
    }

    #[test]
    fn lenient_join_drops_partial_keys() {
        let a = store("a", 2, &[(0, 0), (0, 1)], 0.0);
        let b = store("b", 2, &[(0, 1)], 0.0);
        let joined = join(&[a, b], JoinMode::Lenient).unwrap();
        assert_eq!(joined.items.len(), 1);
        assert_eq!(joined.items[0].key.image_id, 1);
    }

    #[test]
    fn class_name_mismatch() {
        let a = store("a", 2, &[(0, 0)], 0.0);
        let mut b = store("b", 2, &[(0, 0)], 0.0);
        b.class_names[1] = "spacer".into();
        assert!(matches!(
            join(&[a, b], JoinMode::Strict),
            Err(Error::ClassMismatch { .. })
        ));
    }

    #[test]
    fn three_backbone_dims_join_to_6016() {
        let keys = [(0, 0), (1, 0)];
        let stores = [
            store("resnet50", 2048, &keys, 0.0),
            store("efficientnet-b5", 2048, &keys, 0.0),
            store("densenet201", 1920, &keys, 0.0),
        ];
        assert_eq!(join(&stores, JoinMode::Strict).unwrap().dim(), 6016);
    }
}
