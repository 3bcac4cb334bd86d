//! Detector adapters, detection post-processing and region cropping.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;

/// Axis-aligned box in normalized `xyxy` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "[f64; 4]", into = "[f64; 4]"))]
pub struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BBox {
    pub const FULL: BBox = BBox {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(x0) && in_unit(y0) && in_unit(x1) && in_unit(y1)) {
            return Err(Error::InvalidBox(format!(
                "[{x0}, {y0}, {x1}, {y1}] leaves the unit square"
            )));
        }
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::InvalidBox(format!(
                "[{x0}, {y0}, {x1}, {y1}] has no area"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Detector output before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub label: String,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectedObject {
    pub label: String,
    #[cfg_attr(feature = "serde", serde(rename = "box"))]
    pub bbox: BBox,
    pub score: f64,
}

impl DetectedObject {
    pub fn new(label: impl Into<String>, bbox: BBox, score: f64) -> Result<Self> {
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::InvalidBox("detection has an empty label".into()));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!(
                "score {score} for `{label}` outside [0, 1]"
            )));
        }
        Ok(Self { label, bbox, score })
    }

    pub fn from_raw(raw: RawDetection) -> Result<Self> {
        let bbox = BBox::try_from(raw.bbox)?;
        Self::new(raw.label, bbox, raw.score)
    }
}

/// An object detector. Implementations must be deterministic for a given
/// input and may return detections in any order.
pub trait DetectorAdapter {
    fn name(&self) -> &str;

    fn detect(&self, image_id: &str, image: &Image) -> core::result::Result<Vec<RawDetection>, String>;
}

/// Runs `adapter`, validates every box and returns detections sorted by
/// score, highest first. Equal scores keep the adapter's order.
pub fn detect(
    image_id: &str,
    image: &Image,
    adapter: &dyn DetectorAdapter,
) -> Result<Vec<DetectedObject>> {
    if image.is_empty() {
        return Err(Error::InvalidImage(format!("image {image_id} is empty")));
    }
    let raw = adapter.detect(image_id, image).map_err(|message| Error::Adapter {
        adapter: adapter.name().to_string(),
        message,
    })?;
    let mut dets = raw
        .into_iter()
        .map(DetectedObject::from_raw)
        .collect::<Result<Vec<_>>>()?;
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(dets)
}

/// Drops detections scoring below `threshold`, optionally keeps only the
/// best instance of each label, then truncates to `o_max`. Input must be
/// sorted by score.
pub fn filter_detections(
    dets: &[DetectedObject],
    threshold: f64,
    o_max: usize,
    dedupe: bool,
) -> Vec<DetectedObject> {
    let mut seen: Vec<&str> = Vec::new();
    let mut out = Vec::new();
    for d in dets {
        if out.len() == o_max {
            break;
        }
        if d.score < threshold {
            continue;
        }
        if dedupe {
            if seen.contains(&d.label.as_str()) {
                continue;
            }
            seen.push(&d.label);
        }
        out.push(d.clone());
    }
    out
}

const EDGE_EPS: f64 = 1e-9;

/// Pixel span covered by `[lo, hi]` in a dimension of `size` pixels.
fn pixel_span(lo: f64, hi: f64, size: usize) -> (usize, usize) {
    let size_f = size as f64;
    let lo = (lo * size_f).clamp(0.0, size_f);
    let hi = (hi * size_f).clamp(0.0, size_f);
    let start = math::floor(lo + EDGE_EPS).max(0.0) as usize;
    let end = (math::ceil(hi - EDGE_EPS).max(0.0) as usize).min(size);
    (start, end)
}

/// Crops the region of `bbox` grown by `pad` (a fraction of the image
/// size) on every side and clipped to the image.
pub fn crop(image: &Image, bbox: &BBox, pad: f64) -> Result<Image> {
    let [x0, y0, x1, y1] = bbox.to_array();
    let (xs, xe) = pixel_span(x0 - pad, x1 + pad, image.width());
    let (ys, ye) = pixel_span(y0 - pad, y1 + pad, image.height());
    if xe <= xs || ye <= ys {
        return Err(Error::DegenerateCrop);
    }
    Ok(image.sub_image(xs, ys, xe, ye))
}

/// Replays detections recorded per image id. Also serves as the
/// detect-cache so training never re-runs a detector.
#[derive(Debug, Clone, Default)]
pub struct FixtureDetector {
    name: String,
    entries: BTreeMap<String, Vec<RawDetection>>,
    strict: bool,
}

impl FixtureDetector {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: BTreeMap::new(),
            strict: false,
        }
    }

    /// In strict mode an image without an entry is an adapter failure
    /// instead of an empty detection list.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn insert(&mut self, image_id: impl Into<String>, dets: Vec<RawDetection>) {
        self.entries.insert(image_id.into(), dets);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl DetectorAdapter for FixtureDetector {
    fn name(&self) -> &str {
        &self.name
    }

    fn detect(&self, image_id: &str, _image: &Image) -> core::result::Result<Vec<RawDetection>, String> {
        match self.entries.get(image_id) {
            Some(d) => Ok(d.clone()),
            None if self.strict => Err(format!("no cached detections for image {image_id}")),
            None => Ok(Vec::new()),
        }
    }
}

/// Toy detector for synthetic scenes: each label is drawn with an exact
/// marker color, and a detection is the bounding box of that color's
/// pixels. Larger objects score higher.
#[derive(Debug, Clone)]
pub struct PaletteDetector {
    palette: Vec<(String, [u8; 3])>,
}

impl PaletteDetector {
    pub fn new(palette: Vec<(String, [u8; 3])>) -> Self {
        Self { palette }
    }

    pub fn palette(&self) -> &[(String, [u8; 3])] {
        &self.palette
    }
}

impl DetectorAdapter for PaletteDetector {
    fn name(&self) -> &str {
        "palette"
    }

    fn detect(&self, _image_id: &str, image: &Image) -> core::result::Result<Vec<RawDetection>, String> {
        let (w, h) = (image.width(), image.height());
        let mut bounds: Vec<Option<(usize, usize, usize, usize)>> = alloc::vec![None; self.palette.len()];
        for y in 0..h {
            for x in 0..w {
                let px = image.pixel(x, y);
                if let Some(i) = self.palette.iter().position(|(_, c)| *c == px) {
                    let b = bounds[i].get_or_insert((x, y, x, y));
                    b.0 = b.0.min(x);
                    b.1 = b.1.min(y);
                    b.2 = b.2.max(x);
                    b.3 = b.3.max(y);
                }
            }
        }
        let mut out = Vec::new();
        for ((label, _), b) in self.palette.iter().zip(bounds) {
            if let Some((bx0, by0, bx1, by1)) = b {
                let bbox = [
                    bx0 as f64 / w as f64,
                    by0 as f64 / h as f64,
                    (bx1 + 1) as f64 / w as f64,
                    (by1 + 1) as f64 / h as f64,
                ];
                let area = (bbox[2] - bbox[0]) * (bbox[3] - bbox[1]);
                out.push(RawDetection {
                    label: label.clone(),
                    bbox,
                    score: 0.9 + 0.09 * area,
                });
            }
        }
        Ok(out)
    }
}
