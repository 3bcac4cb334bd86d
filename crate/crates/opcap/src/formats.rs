//! Newline-delimited JSON exchange files and the small text formats.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use opcap_core::attributes::AttributeSpace;
use opcap_core::detection::{BBox, DetectedObject, FixtureDetector, RawDetection};
use opcap_core::evaluation::{extract_mentioned_objects, EvalRecord, SynonymMap};
use opcap_core::Vocabulary;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coco::CocoDataset;
use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};

/// One generated caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generation {
    pub image_id: String,
    pub caption: String,
    /// Rendered prompt the caption was conditioned on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

/// Cached detector output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detector: String,
    pub detections: Vec<DetectedObject>,
}

/// Attribute labels for one annotated region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRecord {
    pub image_id: String,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub attributes: Vec<String>,
}

/// Precomputed similarity of one model's caption for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub image_id: String,
    pub model: String,
    pub score: f64,
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let item = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::parse(path, format!("line {}: at `{}`: {}", n + 1, e.path(), e.inner())))?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_text(path)?, path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(items).as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::from_tsv(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

pub fn read_attribute_space(path: &Path) -> Result<AttributeSpace> {
    AttributeSpace::from_lines(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

/// The built-in COCO table, extended by `path` when given.
pub fn read_synonyms(path: Option<&Path>) -> Result<SynonymMap> {
    match path {
        None => Ok(SynonymMap::coco()),
        Some(p) => {
            let extra = SynonymMap::from_tsv(&read_text(p)?).map_err(|e| Error::parse(p, e))?;
            let base = SynonymMap::coco();
            let pairs = base.iter().chain(extra.iter()).map(|(s, l)| (s.to_string(), l.to_string()));
            SynonymMap::new(pairs.collect::<Vec<_>>()).map_err(|e| Error::parse(p, e))
        }
    }
}

/// Replays a detect cache. Every image queried must be in the cache.
pub fn cache_detector(records: &[DetectionRecord]) -> FixtureDetector {
    let name = records.first().map(|r| r.detector.clone()).unwrap_or_else(|| "cache".into());
    let mut fx = FixtureDetector::new(name).strict(true);
    for r in records {
        let raw = r
            .detections
            .iter()
            .map(|d| RawDetection {
                label: d.label.clone(),
                bbox: d.bbox.to_array(),
                score: d.score,
            })
            .collect();
        fx.insert(r.image_id.clone(), raw);
    }
    fx
}

/// Ground-truth objects for CHAIR: instance labels plus objects mentioned
/// in the reference captions.
pub fn gt_objects(ds: &CocoDataset, image_id: &str, syn: &SynonymMap) -> BTreeSet<String> {
    let mut gt = ds.instances.get(image_id).cloned().unwrap_or_default();
    for c in ds.captions.get(image_id).into_iter().flatten() {
        gt.extend(extract_mentioned_objects(c, syn));
    }
    gt
}

/// Joins generations with references and ground truth, ordered by image
/// id. Every generation must name a dataset image and every dataset image
/// needs a generation.
pub fn build_eval_records(ds: &CocoDataset, generations: &[Generation], syn: &SynonymMap) -> Result<Vec<EvalRecord>> {
    let mut by_id: BTreeMap<&str, &Generation> = BTreeMap::new();
    for g in generations {
        if !ds.images.contains_key(&g.image_id) {
            return Err(Error::Data(format!("generation for unknown image id {}", g.image_id)));
        }
        if by_id.insert(&g.image_id, g).is_some() {
            return Err(Error::Data(format!("duplicate generation for image id {}", g.image_id)));
        }
    }
    let missing: Vec<&str> = ds.images.keys().map(String::as_str).filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("no generation for image ids: {}", missing.join(", "))));
    }
    Ok(by_id
        .into_iter()
        .map(|(id, g)| EvalRecord {
            image_id: id.to_string(),
            caption: g.caption.clone(),
            references: ds.captions[id].clone(),
            gt_objects: gt_objects(ds, id, syn),
        })
        .collect())
}
