//! JSONL triplet manifests and id-indexed embedding stores.
//!
//! Manifest record, one per line:
//! `{"image": "<id>", "text": "<id>", "concepts": [{"cui": "...", "tokens": [v1, ...]}], "label": <int, optional>}`
//! Token indices are 1-based into the referenced text's token rows.

use crate::ccem::CcemRecord;
use crate::error::{Error, Result};
use crate::types::{ConceptSpan, ImageEmbedding, TextEmbedding, Triplet};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Id-indexed image store; insertion order preserved.
#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    items: Vec<ImageEmbedding>,
    index: HashMap<String, usize>,
}

/// Id-indexed text store; insertion order preserved.
#[derive(Debug, Clone, Default)]
pub struct TextStore {
    items: Vec<TextEmbedding>,
    index: HashMap<String, usize>,
}

macro_rules! impl_store {
    ($store:ident, $item:ty, $convert:ident) => {
        impl $store {
            pub fn from_records(records: &[CcemRecord]) -> Result<Self> {
                let mut store = Self::default();
                for r in records {
                    store.push(r.$convert()?)?;
                }
                Ok(store)
            }

            pub fn push(&mut self, item: $item) -> Result<()> {
                if self.index.contains_key(&item.id) {
                    return Err(Error::MalformedLine {
                        line: self.items.len() + 1,
                        msg: format!("duplicate id {:?}", item.id),
                    });
                }
                self.index.insert(item.id.clone(), self.items.len());
                self.items.push(item);
                Ok(())
            }

            pub fn get(&self, id: &str) -> Option<&$item> {
                self.index.get(id).map(|&i| &self.items[i])
            }

            pub fn items(&self) -> &[$item] {
                &self.items
            }

            pub fn len(&self) -> usize {
                self.items.len()
            }

            pub fn is_empty(&self) -> bool {
                self.items.is_empty()
            }
        }
    };
}

impl_store!(ImageStore, ImageEmbedding, to_image);
impl_store!(TextStore, TextEmbedding, to_text);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestConcept {
    pub cui: String,
    /// 1-based token indices.
    pub tokens: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub text: String,
    #[serde(default)]
    pub concepts: Vec<ManifestConcept>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
}

/// Triplets resolved against their stores, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub triplets: Vec<Triplet>,
    pub labels: Vec<Option<i64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

pub fn parse_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                msg: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok(records)
}

/// Load a manifest and resolve every id against the supplied stores.
pub fn load_manifest<P: AsRef<Path>>(
    path: P,
    images: &ImageStore,
    texts: &TextStore,
) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let records = parse_manifest(BufReader::new(file))?;
    resolve(&records, images, texts)
}

pub fn resolve(
    records: &[ManifestRecord],
    images: &ImageStore,
    texts: &TextStore,
) -> Result<Dataset> {
    let mut triplets = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for rec in records {
        let image = images
            .get(&rec.image)
            .ok_or_else(|| Error::UnknownId(rec.image.clone()))?;
        let text = texts
            .get(&rec.text)
            .ok_or_else(|| Error::UnknownId(rec.text.clone()))?;
        let mut spans = Vec::with_capacity(rec.concepts.len());
        for c in &rec.concepts {
            let span = ConceptSpan::new(c.cui.clone(), c.tokens.clone())?;
            span.validate_against(text)?;
            spans.push(span);
        }
        triplets.push(Triplet::new(image.clone(), text.clone(), spans)?);
        labels.push(rec.label);
    }
    Ok(Dataset { triplets, labels })
}

pub fn write_manifest<P: AsRef<Path>>(records: &[ManifestRecord], path: P) -> Result<()> {
    let mut out = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
