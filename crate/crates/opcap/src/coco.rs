//! COCO annotation ingestion (captions and instances files).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use opcap_core::evaluation::COCO_LABELS;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::read_text;

/// Numeric or string COCO image id, kept as its decimal string form.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(u64),
    Str(String),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Int(n) => n.to_string(),
            RawId::Str(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawImage {
    id: RawId,
    file_name: String,
}

#[derive(Debug, Deserialize)]
struct RawCaption {
    id: u64,
    image_id: RawId,
    caption: String,
}

#[derive(Debug, Deserialize)]
struct CaptionsFile {
    images: Vec<RawImage>,
    annotations: Vec<RawCaption>,
}

#[derive(Debug, Deserialize)]
struct RawInstance {
    image_id: RawId,
    category_id: u64,
}

#[derive(Debug, Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Deserialize)]
struct InstancesFile {
    annotations: Vec<RawInstance>,
    categories: Vec<RawCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CocoDataset {
    /// Image id to file path.
    pub images: BTreeMap<String, PathBuf>,
    /// Captions per image, in annotation-id order.
    pub captions: BTreeMap<String, Vec<String>>,
    /// Instance category labels per image.
    pub instances: BTreeMap<String, BTreeSet<String>>,
    pub categories: BTreeMap<u64, String>,
}

impl CocoDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn caption_count(&self) -> usize {
        self.captions.values().map(Vec::len).sum()
    }
}

fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::parse(path, format!("at `{}`: {}", e.path(), e.inner())))
}

/// Parses annotation documents already in memory. `captions_path` and
/// `instances_path` are used for error messages only.
pub fn parse_coco(
    captions_json: &str,
    captions_path: &Path,
    instances: Option<(&str, &Path)>,
    image_dir: &Path,
) -> Result<CocoDataset> {
    let caps: CaptionsFile = parse_json(captions_json, captions_path)?;
    let mut ds = CocoDataset::default();
    for img in caps.images {
        let id = img.id.into_string();
        let path = image_dir.join(&img.file_name);
        if let Some(prev) = ds.images.insert(id.clone(), path) {
            if prev != image_dir.join(&img.file_name) {
                return Err(Error::parse(captions_path, format!("image id {id} listed twice with different files")));
            }
        }
    }
    let mut annotations = caps.annotations;
    annotations.sort_by_key(|a| a.id);
    for ann in annotations {
        let id = ann.image_id.into_string();
        if !ds.images.contains_key(&id) {
            return Err(Error::parse(
                captions_path,
                format!("caption {} refers to unknown image id {id}", ann.id),
            ));
        }
        ds.captions.entry(id).or_default().push(ann.caption);
    }
    if let Some((text, path)) = instances {
        let inst: InstancesFile = parse_json(text, path)?;
        for c in inst.categories {
            if !COCO_LABELS.contains(&c.name.as_str()) {
                return Err(Error::parse(path, format!("category `{}` is not a COCO label", c.name)));
            }
            ds.categories.insert(c.id, c.name);
        }
        for ann in inst.annotations {
            let id = ann.image_id.into_string();
            if !ds.images.contains_key(&id) {
                return Err(Error::parse(path, format!("instance refers to unknown image id {id}")));
            }
            let label = ds
                .categories
                .get(&ann.category_id)
                .ok_or_else(|| Error::parse(path, format!("unknown category id {}", ann.category_id)))?;
            ds.instances.entry(id).or_default().insert(label.clone());
        }
    }
    let before = ds.images.len();
    ds.images.retain(|id, _| ds.captions.contains_key(id));
    ds.instances.retain(|id, _| ds.images.contains_key(id));
    let dropped = before - ds.images.len();
    if dropped > 0 {
        log::info!("dropped {dropped} images without captions");
    }
    Ok(ds)
}

/// Loads a COCO captions file and, optionally, the matching instances
/// file. Images without captions are dropped.
pub fn load_coco(captions: &Path, instances: Option<&Path>, image_dir: &Path) -> Result<CocoDataset> {
    let caps = read_text(captions)?;
    let inst = instances.map(|p| read_text(p).map(|t| (t, p))).transpose()?;
    parse_coco(&caps, captions, inst.as_ref().map(|(t, p)| (t.as_str(), *p)), image_dir)
}
