//! Hallucination metrics (CHAIR), the similarity-vote comparison and
//! corpus BLEU-4.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::vocab::tokenize;

/// The 80 COCO detection categories.
pub const COCO_LABELS: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat", "traffic light",
    "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "tie", "suitcase", "frisbee",
    "skis", "snowboard", "sports ball", "kite", "baseball bat", "baseball glove", "skateboard", "surfboard",
    "tennis racket", "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
    "potted plant", "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard",
    "cell phone", "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
];

/// Surface forms beyond the labels themselves.
const COCO_SYNONYMS: &[(&str, &[&str])] = &[
    (
        "person",
        &[
            "people", "man", "men", "woman", "women", "boy", "girl", "child", "children", "kid", "guy", "lady",
            "ladies", "baby", "adult", "player", "skier", "surfer", "skateboarder", "snowboarder", "rider",
            "pedestrian", "toddler", "teenager",
        ],
    ),
    ("bicycle", &["bike", "cycle"]),
    ("car", &["automobile", "taxi", "sedan", "suv", "van"]),
    ("motorcycle", &["motorbike", "motor bike", "scooter"]),
    ("airplane", &["plane", "jet", "aircraft", "airliner"]),
    ("train", &["locomotive", "tram"]),
    ("truck", &["pickup", "lorry"]),
    ("boat", &["ship", "kayak", "canoe", "sailboat", "yacht"]),
    ("traffic light", &["stoplight", "traffic signal"]),
    ("fire hydrant", &["hydrant"]),
    ("bird", &["pigeon", "seagull", "gull", "duck", "parrot", "geese", "goose", "swan", "eagle"]),
    ("cat", &["kitten", "kitty"]),
    ("dog", &["puppy", "pup"]),
    ("horse", &["pony", "foal"]),
    ("sheep", &["lamb", "ram"]),
    ("cow", &["cattle", "bull", "calf", "oxen", "ox"]),
    ("backpack", &["knapsack"]),
    ("umbrella", &["parasol"]),
    ("handbag", &["purse"]),
    ("tie", &["necktie"]),
    ("suitcase", &["luggage", "suit case"]),
    ("skis", &["ski"]),
    ("sports ball", &["ball", "football", "soccer ball", "tennis ball", "basketball"]),
    ("baseball glove", &["mitt", "glove"]),
    ("skateboard", &["skate board"]),
    ("surfboard", &["surf board"]),
    ("tennis racket", &["racket", "racquet", "tennis racquet"]),
    ("wine glass", &["wineglass"]),
    ("cup", &["mug"]),
    ("knife", &["knives"]),
    ("sandwich", &["burger", "sub"]),
    ("hot dog", &["hotdog"]),
    ("donut", &["doughnut"]),
    ("cake", &["cupcake"]),
    ("chair", &["stool"]),
    ("couch", &["sofa"]),
    ("potted plant", &["houseplant", "plant"]),
    ("dining table", &["table"]),
    ("tv", &["television"]),
    ("mouse", &["mice"]),
    ("remote", &["controller"]),
    ("cell phone", &["phone", "cellphone", "smartphone", "mobile phone"]),
    ("oven", &["stove"]),
    ("refrigerator", &["fridge"]),
    ("book", &["novel"]),
    ("teddy bear", &["teddy", "stuffed animal"]),
    ("hair drier", &["hair dryer", "blow dryer"]),
];

/// Words ending in `s` that must not be singularized.
const NO_STRIP: [&str; 3] = ["glasses", "scissors", "skis"];

/// Maps surface words and bigrams to canonical COCO labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymMap {
    map: BTreeMap<String, String>,
}

impl Default for SynonymMap {
    fn default() -> Self {
        Self::coco()
    }
}

impl SynonymMap {
    /// The built-in COCO table.
    pub fn coco() -> Self {
        let pairs = COCO_SYNONYMS
            .iter()
            .flat_map(|(label, forms)| forms.iter().map(move |f| (f.to_string(), label.to_string())));
        Self::new(pairs).expect("built-in synonym table is valid")
    }

    /// Every COCO label maps to itself; `pairs` add further surface forms.
    /// Surface forms are normalized to lowercase single-spaced words and may
    /// be at most two words long.
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map: BTreeMap<String, String> = COCO_LABELS.iter().map(|l| (l.to_string(), l.to_string())).collect();
        for (surface, label) in pairs {
            if !COCO_LABELS.contains(&label.as_str()) {
                return Err(Error::InvalidSynonym(format!("`{label}` is not a COCO label")));
            }
            let words = tokenize(&surface);
            if words.is_empty() || words.len() > 2 {
                return Err(Error::InvalidSynonym(format!("surface form `{surface}` must be one or two words")));
            }
            let key = words.join(" ");
            if let Some(prev) = map.get(&key) {
                if *prev != label {
                    return Err(Error::InvalidSynonym(format!("`{key}` maps to both `{prev}` and `{label}`")));
                }
            }
            map.insert(key, label);
        }
        Ok(Self { map })
    }

    /// Parses `surface\tcanonical` lines; blank lines and `#` comments are
    /// skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, label) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidSynonym(format!("line {}: expected `surface<TAB>canonical`", n + 1)))?;
            pairs.push((surface.to_string(), label.trim().to_string()));
        }
        Self::new(pairs)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push('\t');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn canonical(&self, surface: &str) -> Option<&str> {
        self.map.get(surface).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// The word itself, then its `es`- and `s`-stripped forms.
fn word_forms(word: &str) -> impl Iterator<Item = &str> {
    let strip = !NO_STRIP.contains(&word);
    let es = word.strip_suffix("es").filter(|w| strip && !w.is_empty());
    let s = word.strip_suffix('s').filter(|w| strip && !w.is_empty());
    core::iter::once(word).chain(es).chain(s)
}

/// Canonical labels mentioned in `caption`. Two-word surface forms take
/// precedence over their parts, so "hot dog" does not also count as "dog".
pub fn extract_mentioned_objects(caption: &str, syn: &SynonymMap) -> BTreeSet<String> {
    let words = tokenize(caption);
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < words.len() {
        if let Some(next) = words.get(i + 1) {
            let hit = word_forms(next).find_map(|f| syn.canonical(&format!("{} {f}", words[i])));
            if let Some(label) = hit {
                found.insert(label.to_string());
                i += 2;
                continue;
            }
        }
        if let Some(label) = word_forms(&words[i]).find_map(|f| syn.canonical(f)) {
            found.insert(label.to_string());
        }
        i += 1;
    }
    found
}

/// One generated caption with its evaluation context.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalRecord {
    pub image_id: String,
    pub caption: String,
    pub references: Vec<String>,
    pub gt_objects: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChairImage {
    pub image_id: String,
    pub mentioned: BTreeSet<String>,
    pub hallucinated: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChairResult {
    pub chair_s: f64,
    pub chair_i: f64,
    pub per_image: Vec<ChairImage>,
}

/// Sentence-level and instance-level hallucination rates.
///
/// Mentions use set semantics per caption. `chair_i` is 0 when no caption
/// mentions any object.
pub fn chair(records: &[EvalRecord], syn: &SynonymMap) -> Result<ChairResult> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut mentions = 0usize;
    let mut hallucinations = 0usize;
    let mut bad_captions = 0usize;
    let mut per_image = Vec::with_capacity(records.len());
    for r in records {
        let mentioned = extract_mentioned_objects(&r.caption, syn);
        let hallucinated: BTreeSet<String> = mentioned.difference(&r.gt_objects).cloned().collect();
        mentions += mentioned.len();
        hallucinations += hallucinated.len();
        bad_captions += usize::from(!hallucinated.is_empty());
        per_image.push(ChairImage {
            image_id: r.image_id.clone(),
            mentioned,
            hallucinated,
        });
    }
    let chair_i = if mentions == 0 {
        0.0
    } else {
        hallucinations as f64 / mentions as f64
    };
    Ok(ChairResult {
        chair_s: bad_captions as f64 / records.len() as f64,
        chair_i,
        per_image,
    })
}

/// Image/caption similarity, e.g. a CLIP-style cosine score.
pub trait SimilarityScorer {
    fn score(&self, image_id: &str, caption: &str) -> core::result::Result<f64, String>;
}

impl<F: Fn(&str, &str) -> f64> SimilarityScorer for F {
    fn score(&self, image_id: &str, caption: &str) -> core::result::Result<f64, String> {
        Ok(self(image_id, caption))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VoteResult {
    pub votes: BTreeMap<String, usize>,
    pub total_images: usize,
}

/// For each image, every model whose caption reaches the highest
/// similarity gets one point. Ties are exact float equality.
///
/// `candidates` maps model name to image id to caption.
pub fn clip_vote(
    images: &[String],
    candidates: &BTreeMap<String, BTreeMap<String, String>>,
    scorer: &dyn SimilarityScorer,
) -> Result<VoteResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut votes: BTreeMap<String, usize> = candidates.keys().map(|m| (m.clone(), 0)).collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for image in images {
        scores.clear();
        for (model, captions) in candidates {
            let caption = captions.get(image).ok_or_else(|| Error::MissingCaption {
                model: model.clone(),
                image: image.clone(),
            })?;
            let s = scorer.score(image, caption).map_err(|message| Error::Scorer {
                image: image.clone(),
                message,
            })?;
            if s.is_nan() {
                return Err(Error::Scorer {
                    image: image.clone(),
                    message: format!("NaN similarity for model `{model}`"),
                });
            }
            scores.push((model, s));
        }
        let best = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        for (model, s) in &scores {
            if *s == best {
                *votes.get_mut(*model).expect("model registered") += 1;
            }
        }
    }
    Ok(VoteResult {
        votes,
        total_images: images.len(),
    })
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 over pre-tokenized text: uniform weights, clipped n-gram
/// counts, and a brevity penalty against the closest reference length
/// (shorter wins a tie). Any zero n-gram precision gives 0.
pub fn bleu4_tokens(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(Error::DimensionMismatch {
            context: "references per candidate",
            expected: candidates.len(),
            actual: references.len(),
        });
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (index, (cand, refs)) in candidates.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::MissingReferences { index });
        }
        cand_len += cand.len();
        let c = cand.len() as i64;
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| ((l as i64 - c).abs(), l))
            .expect("non-empty references");
        for n in 1..=4 {
            let cand_counts = ngram_counts(cand, n);
            let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
            for r in refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, k) in cand_counts {
                total[n - 1] += k;
                matched[n - 1] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4).map(|i| math::ln(matched[i] as f64 / total[i] as f64)).sum::<f64>() / 4.0;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        math::exp(1.0 - ref_len as f64 / cand_len as f64)
    };
    Ok(bp * math::exp(log_p))
}

/// [`bleu4_tokens`] on raw strings, tokenized like captions.
pub fn bleu4<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[Vec<R>]) -> Result<f64> {
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c.as_ref())).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| tokenize(r.as_ref())).collect())
        .collect();
    bleu4_tokens(&cands, &refs)
}
