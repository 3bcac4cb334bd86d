//! Synthetic captioning world used by the tests, the acceptance suite and
//! the `make_toy` example.
//!
//! Each 64x64 image holds one or two rectangles. A rectangle's 1-pixel
//! outline uses an exact marker color that identifies its label (so
//! [`PaletteDetector`] finds it), and its interior is filled with one of
//! eight colors, optionally striped. Captions name the color and label of
//! each object, largest object first.

use std::path::{Path, PathBuf};

use opcap_core::detection::{BBox, PaletteDetector};
use opcap_core::rng::{stream, Stream};
use opcap_core::{Image, PipelineConfig};
use rand::Rng;
use serde_json::json;

use crate::config::to_toml;
use crate::error::Result;
use crate::formats::{write_jsonl, AttributeRecord};
use crate::io::{save_png, write_atomic};

pub const SIZE: usize = 64;
const BACKGROUND: [u8; 3] = [70, 100, 70];

/// Label, COCO category id and marker color.
pub const LABELS: [(&str, u64, [u8; 3]); 6] = [
    ("person", 1, [128, 0, 255]),
    ("cat", 17, [255, 0, 255]),
    ("dog", 18, [0, 255, 255]),
    ("tie", 32, [255, 128, 0]),
    ("sports ball", 37, [255, 255, 0]),
    ("kite", 38, [0, 255, 128]),
];

pub const FILLS: [(&str, [u8; 3]); 8] = [
    ("red", [200, 40, 40]),
    ("green", [40, 170, 60]),
    ("blue", [40, 60, 200]),
    ("yellow", [220, 200, 30]),
    ("white", [235, 235, 235]),
    ("gray", [128, 128, 128]),
    ("brown", [130, 80, 30]),
    ("black", [20, 20, 20]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyObject {
    pub label: &'static str,
    pub color: &'static str,
    pub striped: bool,
    /// Pixel bounds, end-exclusive.
    pub rect: (usize, usize, usize, usize),
}

impl ToyObject {
    pub fn area(&self) -> usize {
        let (x0, y0, x1, y1) = self.rect;
        (x1 - x0) * (y1 - y0)
    }

    pub fn bbox(&self) -> BBox {
        let (x0, y0, x1, y1) = self.rect;
        let s = SIZE as f64;
        BBox::new(x0 as f64 / s, y0 as f64 / s, x1 as f64 / s, y1 as f64 / s).expect("rect inside image")
    }

    pub fn attributes(&self) -> Vec<String> {
        let mut a = vec![self.color.to_string()];
        if self.striped {
            a.push("striped".into());
        }
        a
    }

    fn phrase(&self) -> String {
        if self.striped {
            format!("a striped {} {}", self.color, self.label)
        } else {
            format!("a {} {}", self.color, self.label)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub id: String,
    pub image: Image,
    /// Largest first, which is also detection order.
    pub objects: Vec<ToyObject>,
}

impl ToyImage {
    pub fn file_name(&self) -> String {
        format!("{:06}.png", self.id.parse::<u64>().expect("numeric toy id"))
    }

    /// Two reference captions.
    pub fn references(&self) -> [String; 2] {
        let p: Vec<String> = self.objects.iter().map(ToyObject::phrase).collect();
        match p.as_slice() {
            [a] => [a.clone(), format!("there is {a}")],
            [a, rest @ ..] => [
                format!("{a} and {}", rest.join(" and ")),
                format!("there is {a} next to {}", rest.join(" and ")),
            ],
            [] => ["an empty field".into(), "there is nothing here".into()],
        }
    }
}

pub fn palette() -> Vec<(String, [u8; 3])> {
    LABELS.iter().map(|(l, _, c)| (l.to_string(), *c)).collect()
}

pub fn detector() -> PaletteDetector {
    PaletteDetector::new(palette())
}

/// Settings sized for the toy world.
pub fn config() -> PipelineConfig {
    PipelineConfig {
        d_model: 64,
        m: 16,
        feature_dim: 32,
        k: 2,
        attr_min_prob: 0.5,
        attr_hidden: 32,
        n_layers: 2,
        n_heads: 4,
        ffn_dim: 128,
        max_caption_len: 16,
        learning_rate: 3e-3,
        min_freq: 1,
        ..PipelineConfig::default()
    }
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize), margin: usize) -> bool {
    a.0 < b.2 + margin && b.0 < a.2 + margin && a.1 < b.3 + margin && b.1 < a.3 + margin
}

fn draw(img: &mut Image, o: &ToyObject, marker: [u8; 3], fill: [u8; 3]) {
    let (x0, y0, x1, y1) = o.rect;
    let shade = [fill[0] / 2, fill[1] / 2, fill[2] / 2];
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x == x0 || y == y0 || x == x1 - 1 || y == y1 - 1;
            let px = if edge {
                marker
            } else if o.striped && (y - y0) % 4 >= 2 {
                shade
            } else {
                fill
            };
            img.put_pixel(x, y, px);
        }
    }
}

/// `n` images with ids `0`, `1`, ... stored as `000000.png`, ...
pub fn generate(n: usize, seed: u64) -> Vec<ToyImage> {
    let mut rng = stream(seed, Stream::Synthetic);
    (0..n)
        .map(|i| {
            let count = rng.random_range(1..=2);
            let mut objects: Vec<ToyObject> = Vec::new();
            while objects.len() < count {
                let (li, _, _) = LABELS[rng.random_range(0..LABELS.len())];
                if objects.iter().any(|o| o.label == li) {
                    continue;
                }
                let w = rng.random_range(14..=28);
                let h = rng.random_range(14..=28);
                let x0 = rng.random_range(0..=SIZE - w);
                let y0 = rng.random_range(0..=SIZE - h);
                let rect = (x0, y0, x0 + w, y0 + h);
                if objects.iter().any(|o| overlaps(o.rect, rect, 2) || o.area() == w * h) {
                    continue;
                }
                objects.push(ToyObject {
                    label: li,
                    color: FILLS[rng.random_range(0..FILLS.len())].0,
                    striped: rng.random_bool(0.25),
                    rect,
                });
            }
            objects.sort_by_key(|o| std::cmp::Reverse(o.area()));
            let mut image = Image::filled(SIZE, SIZE, BACKGROUND);
            for o in &objects {
                let marker = LABELS.iter().find(|l| l.0 == o.label).expect("known label").2;
                let fill = FILLS.iter().find(|f| f.0 == o.color).expect("known color").1;
                draw(&mut image, o, marker, fill);
            }
            ToyImage {
                id: i.to_string(),
                image,
                objects,
            }
        })
        .collect()
}

/// Paths written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct ToyPaths {
    pub root: PathBuf,
    pub images: PathBuf,
    pub captions: PathBuf,
    pub instances: PathBuf,
    pub attributes: PathBuf,
    pub config: PathBuf,
}

/// Writes images and COCO-style annotation files under `dir`.
pub fn write_dataset(dir: &Path, images: &[ToyImage]) -> Result<ToyPaths> {
    let paths = ToyPaths {
        root: dir.to_path_buf(),
        images: dir.join("images"),
        captions: dir.join("captions.json"),
        instances: dir.join("instances.json"),
        attributes: dir.join("attributes.jsonl"),
        config: dir.join("toy.toml"),
    };
    let mut image_entries = Vec::new();
    let mut captions = Vec::new();
    let mut instances = Vec::new();
    let mut attributes = Vec::new();
    for (i, t) in images.iter().enumerate() {
        save_png(&paths.images.join(t.file_name()), &t.image)?;
        let id: u64 = t.id.parse().expect("numeric toy id");
        image_entries.push(json!({"id": id, "file_name": t.file_name(), "width": SIZE, "height": SIZE}));
        for (j, r) in t.references().iter().enumerate() {
            captions.push(json!({"id": i * 10 + j, "image_id": id, "caption": r}));
        }
        for (j, o) in t.objects.iter().enumerate() {
            let (x0, y0, x1, y1) = o.rect;
            let cat = LABELS.iter().find(|l| l.0 == o.label).expect("known label").1;
            instances.push(json!({
                "id": i * 10 + j,
                "image_id": id,
                "category_id": cat,
                "bbox": [x0, y0, x1 - x0, y1 - y0],
                "area": o.area(),
                "iscrowd": 0,
            }));
            attributes.push(AttributeRecord {
                image_id: t.id.clone(),
                label: o.label.to_string(),
                bbox: o.bbox(),
                attributes: o.attributes(),
            });
        }
    }
    let categories: Vec<_> = LABELS
        .iter()
        .map(|(name, id, _)| json!({"id": id, "name": name, "supercategory": "toy"}))
        .collect();
    let pretty = |v: serde_json::Value| serde_json::to_string_pretty(&v).expect("json") + "\n";
    write_atomic(
        &paths.captions,
        pretty(json!({"images": image_entries, "annotations": captions})).as_bytes(),
    )?;
    write_atomic(
        &paths.instances,
        pretty(json!({"images": image_entries, "annotations": instances, "categories": categories})).as_bytes(),
    )?;
    write_jsonl(&paths.attributes, &attributes)?;
    write_atomic(&paths.config, to_toml(&config()).as_bytes())?;
    Ok(paths)
}
