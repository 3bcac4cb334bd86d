//! Implementations of the command-line subcommands. Each takes resolved
//! options and writes its human-readable report to `out`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use opcap_core::attributes::{
    train_attribute_head, AttributeExample, AttributeHead, AttributeSpace, AttributeTrainOptions, PatchStatsEncoder,
    RegionEncoder,
};
use opcap_core::captioner::{
    batch_indices, encode_image, generate, load_checkpoint, loss_and_grads, save_checkpoint, train_step, CaptionModel,
    DecodeStrategy, DecoderConfig, TrainExample, TrainState, ToyPatchEncoder,
};
use opcap_core::detection::{crop, detect, DetectorAdapter};
use opcap_core::evaluation::{bleu4, chair, clip_vote, extract_mentioned_objects, EvalRecord, SimilarityScorer};
use opcap_core::pipeline::{objects_from_detections, AttributeStage};
use opcap_core::prompting::{build_prompt_sequence, PromptSequence};
use opcap_core::vocab::EOS_ID;
use opcap_core::{Image, PipelineConfig, Vocabulary};

use crate::coco::{load_coco, CocoDataset};
use crate::config::to_toml;
use crate::error::{Error, Result};
use crate::formats::{
    build_eval_records, cache_detector, read_attribute_space, read_jsonl, read_synonyms, read_vocab, write_jsonl,
    AttributeRecord, DetectionRecord, Generation, ScoreRecord,
};
use crate::io::{load_image, read_bytes, sha256_file, write_atomic};
use crate::manifest::{check_fresh, RunManifest};
use crate::toy;

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const ATTR_SPACE_FILE: &str = "attributes.txt";
pub const ATTR_HEAD_FILE: &str = "attr_head.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";

fn report(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// COCO annotation inputs shared by several commands.
#[derive(Debug, Clone)]
pub struct DatasetArgs {
    pub captions: PathBuf,
    pub instances: Option<PathBuf>,
    pub images: PathBuf,
}

impl DatasetArgs {
    fn load(&self) -> Result<CocoDataset> {
        load_coco(&self.captions, self.instances.as_deref(), &self.images)
    }

    fn hash_into(&self, m: &mut RunManifest) -> Result<()> {
        m.add_input("captions", &self.captions)?;
        if let Some(i) = &self.instances {
            m.add_input("instances", i)?;
        }
        Ok(())
    }
}

fn load_images(ds: &CocoDataset, ids: &[String]) -> Result<BTreeMap<String, Image>> {
    ids.iter().map(|id| Ok((id.clone(), load_image(&ds.images[id])?))).collect()
}

// ---------------------------------------------------------------- detect-cache

#[derive(Debug, Clone)]
pub struct DetectCacheArgs {
    pub dataset: DatasetArgs,
    /// Replay these detections instead of running the palette detector.
    pub fixture: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn detect_cache(args: &DetectCacheArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let ds = args.dataset.load()?;
    let mut manifest = RunManifest::new("detect-cache", cfg);
    args.dataset.hash_into(&mut manifest)?;
    let palette = toy::detector();
    let fixture = match &args.fixture {
        Some(p) => {
            manifest.add_input("fixture", p)?;
            Some(cache_detector(&read_jsonl::<DetectionRecord>(p)?))
        }
        None => None,
    };
    let detector: &dyn DetectorAdapter = match &fixture {
        Some(f) => f,
        None => &palette,
    };
    let mut records = Vec::with_capacity(ds.len());
    for (id, path) in &ds.images {
        let image = load_image(path)?;
        let detections = detect(id, &image, detector)?;
        records.push(DetectionRecord {
            image_id: id.clone(),
            detector: detector.name().to_string(),
            detections,
        });
    }
    write_jsonl(&args.out.join(DETECTIONS_FILE), &records)?;
    manifest.add_output(&args.out, DETECTIONS_FILE)?;
    manifest.detect_cache_sha256 = manifest.outputs.get(DETECTIONS_FILE).cloned();
    manifest.write(&args.out)?;
    let objects: usize = records.iter().map(|r| r.detections.len()).sum();
    report(out, format_args!("images={} detections={objects}", records.len()))
}

// ----------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub dataset: DatasetArgs,
    pub detections: PathBuf,
    pub attributes: Option<PathBuf>,
    pub steps: u64,
    /// Train on the first `n` images with one reference each.
    pub overfit: Option<usize>,
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    /// Loss over every training example, without token dropout.
    pub final_loss: f64,
    pub examples: usize,
    pub vocab_size: usize,
}

/// Attribute head trained from region annotations.
pub fn train_attributes(
    records: &[AttributeRecord],
    images: &dyn Fn(&str) -> Result<Image>,
    cfg: &PipelineConfig,
) -> Result<(AttributeSpace, AttributeHead, f64)> {
    let names: BTreeSet<&str> = records.iter().flat_map(|r| r.attributes.iter().map(String::as_str)).collect();
    let space = AttributeSpace::new(names)?;
    let enc = PatchStatsEncoder::default();
    let mut examples = Vec::with_capacity(records.len());
    for r in records {
        let region = crop(&images(&r.image_id)?, &r.bbox, cfg.crop_pad)?;
        let mut targets = vec![false; space.len()];
        for a in &r.attributes {
            targets[space.index_of(a).expect("attribute from the same records")] = true;
        }
        examples.push(AttributeExample {
            embedding: enc.encode(&region),
            targets,
        });
    }
    let opts = AttributeTrainOptions {
        hidden: cfg.attr_hidden,
        seed: cfg.seed,
        ..AttributeTrainOptions::default()
    };
    let (head, history) = train_attribute_head(&examples, &opts)?;
    Ok((space, head, history.last().copied().unwrap_or(f64::NAN)))
}

/// Builds a prompt per image from cached detections.
fn prompts(
    ids: &[String],
    images: &BTreeMap<String, Image>,
    detector: &dyn DetectorAdapter,
    attrs: Option<(&AttributeSpace, &AttributeHead)>,
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, Vec<opcap_core::prompting::ObjectPrompt>>> {
    let enc = PatchStatsEncoder::default();
    let stage = attrs.map(|(space, head)| AttributeStage {
        encoder: &enc,
        head,
        space,
    });
    ids.iter()
        .map(|id| {
            let image = &images[id];
            let dets = detect(id, image, detector)?;
            Ok((id.clone(), objects_from_detections(image, &dets, stage, cfg)?))
        })
        .collect()
}

fn encode_caption(vocab: &Vocabulary, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = vocab.encode(text);
    if ids.len() > max_len {
        log::warn!("caption truncated to {max_len} tokens: {text}");
        ids.truncate(max_len - 1);
        ids.push(EOS_ID);
    }
    ids
}

pub fn train(args: &TrainArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<TrainSummary> {
    let ds = args.dataset.load()?;
    let mut manifest = RunManifest::new("train", cfg);
    args.dataset.hash_into(&mut manifest)?;
    check_fresh(&args.detections, "detect-cache")?;
    manifest.detect_cache_sha256 = Some(sha256_file(&args.detections)?);
    let detector = cache_detector(&read_jsonl::<DetectionRecord>(&args.detections)?);

    let mut ids: Vec<String> = ds.images.keys().cloned().collect();
    if let Some(n) = args.overfit {
        if n == 0 || n > ids.len() {
            return Err(Error::Config(format!("--overfit {n} needs between 1 and {} images", ids.len())));
        }
        // Numeric ids sort numerically so the subset is the first n images.
        ids.sort_by_key(|id| (id.len(), id.clone()));
        ids.truncate(n);
        ids.sort();
    }
    let images = load_images(&ds, &ids)?;

    let attrs = match &args.attributes {
        Some(p) => {
            manifest.add_input("attributes", p)?;
            let records = read_jsonl::<AttributeRecord>(p)?;
            let lookup = |id: &str| -> Result<Image> {
                if let Some(img) = images.get(id) {
                    return Ok(img.clone());
                }
                let path = ds
                    .images
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("attribute record for unknown image id {id}")))?;
                load_image(path)
            };
            let (space, head, loss) = train_attributes(&records, &lookup, cfg)?;
            report(out, format_args!("attr_loss={loss:?} attributes={}", space.len()))?;
            write_atomic(&args.out.join(ATTR_SPACE_FILE), space.to_lines().as_bytes())?;
            write_atomic(&args.out.join(ATTR_HEAD_FILE), &head.to_bytes())?;
            manifest.add_output(&args.out, ATTR_SPACE_FILE)?;
            manifest.add_output(&args.out, ATTR_HEAD_FILE)?;
            manifest.metrics.insert("attr_loss".into(), loss);
            Some((space, head))
        }
        None => None,
    };
    let objects = prompts(&ids, &images, &detector, attrs.as_ref().map(|(s, h)| (s, h)), cfg)?;

    let references: Vec<(String, String)> = ids
        .iter()
        .flat_map(|id| {
            let caps = &ds.captions[id];
            let take = if args.overfit.is_some() { 1 } else { caps.len() };
            caps.iter().take(take).map(move |c| (id.clone(), c.clone()))
        })
        .collect();
    let corpus: Vec<&str> = references.iter().map(|(_, c)| c.as_str()).collect();
    let mut extras: Vec<String> = objects
        .values()
        .flatten()
        .flat_map(|o| std::iter::once(o.label.clone()).chain(o.attributes.iter().cloned()))
        .collect();
    if let Some((space, _)) = &attrs {
        extras.extend(space.names().iter().cloned());
    }
    let vocab = Vocabulary::build_with_extras(&corpus, cfg.min_freq, extras)?;

    let encoder = ToyPatchEncoder::new(cfg.m, cfg.feature_dim, cfg.seed)?;
    let features: BTreeMap<&str, _> = ids
        .iter()
        .map(|id| Ok((id.as_str(), encode_image(&images[id], &encoder)?)))
        .collect::<Result<_>>()?;
    let prompt_seqs: BTreeMap<&str, PromptSequence> =
        objects.iter().map(|(id, o)| (id.as_str(), build_prompt_sequence(o, &vocab))).collect();
    let examples: Vec<TrainExample> = references
        .iter()
        .map(|(id, text)| TrainExample {
            features: features[id.as_str()].clone(),
            prompt: prompt_seqs[id.as_str()].clone(),
            caption: encode_caption(&vocab, text, cfg.max_caption_len),
        })
        .collect();

    let dcfg = DecoderConfig::from_pipeline(cfg, vocab.len());
    let (mut model, mut state) = match &args.resume {
        Some(p) => load_checkpoint(&read_bytes(p)?, Some(&dcfg)).map_err(|e| Error::parse(p, e))?,
        None => {
            let model = CaptionModel::new(dcfg, cfg.seed)?;
            let state = TrainState::new(&model, cfg.learning_rate, cfg.dropout_p, cfg.grad_clip, cfg.seed);
            (model, state)
        }
    };
    let mut log_lines = Vec::new();
    while state.step < args.steps {
        let batch: Vec<TrainExample> = batch_indices(examples.len(), cfg.batch_size, state.step, cfg.seed)
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let loss = train_step(&mut model, &mut state, &batch)?;
        log_lines.push(serde_json::json!({"step": state.step, "loss": loss}));
        if state.step % 50 == 0 {
            log::info!("step {} loss {loss:.4}", state.step);
        }
    }
    let (final_loss, _) = loss_and_grads(&model, &examples, None)?;

    write_atomic(&args.out.join(CONFIG_FILE), to_toml(cfg).as_bytes())?;
    write_atomic(&args.out.join(VOCAB_FILE), vocab.to_tsv().as_bytes())?;
    write_atomic(&args.out.join(CHECKPOINT_FILE), &save_checkpoint(&model, &state))?;
    write_jsonl(&args.out.join(TRAIN_LOG_FILE), &log_lines)?;
    for f in [CONFIG_FILE, VOCAB_FILE, CHECKPOINT_FILE, TRAIN_LOG_FILE] {
        manifest.add_output(&args.out, f)?;
    }
    manifest.vocab_sha256 = manifest.outputs.get(VOCAB_FILE).cloned();
    manifest.checkpoint = Some(CHECKPOINT_FILE.into());
    manifest.metrics.insert("final_loss".into(), final_loss);
    manifest.write(&args.out)?;
    report(
        out,
        format_args!(
            "final_loss={final_loss:?} steps={} examples={} vocab={}",
            state.step,
            examples.len(),
            vocab.len()
        ),
    )?;
    Ok(TrainSummary {
        steps: state.step,
        final_loss,
        examples: examples.len(),
        vocab_size: vocab.len(),
    })
}

// --------------------------------------------------------------------- caption

#[derive(Debug, Clone)]
pub enum ImageSource {
    Dataset(DatasetArgs),
    Single(PathBuf),
}

#[derive(Debug, Clone)]
pub struct CaptionArgs {
    pub model: PathBuf,
    pub source: ImageSource,
    /// Cached detections; without them the palette detector runs live.
    pub detections: Option<PathBuf>,
    pub beam: Option<usize>,
    pub show_prompt: bool,
    pub max_len: Option<usize>,
    pub out: PathBuf,
}

/// A trained run directory loaded back into memory.
pub struct TrainedModel {
    pub model: CaptionModel,
    pub vocab: Vocabulary,
    pub attributes: Option<(AttributeSpace, AttributeHead)>,
    pub encoder: ToyPatchEncoder,
}

pub fn load_trained(dir: &Path, cfg: &PipelineConfig) -> Result<TrainedModel> {
    let vocab_path = dir.join(VOCAB_FILE);
    check_fresh(&vocab_path, "train")?;
    let vocab = read_vocab(&vocab_path)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    check_fresh(&ckpt, "train")?;
    let dcfg = DecoderConfig::from_pipeline(cfg, vocab.len());
    let (model, _) = load_checkpoint(&read_bytes(&ckpt)?, Some(&dcfg)).map_err(|e| Error::parse(&ckpt, e))?;
    let head_path = dir.join(ATTR_HEAD_FILE);
    let attributes = if head_path.exists() {
        let space = read_attribute_space(&dir.join(ATTR_SPACE_FILE))?;
        let head = AttributeHead::from_bytes(&read_bytes(&head_path)?).map_err(|e| Error::parse(&head_path, e))?;
        Some((space, head))
    } else {
        None
    };
    Ok(TrainedModel {
        model,
        vocab,
        attributes,
        encoder: ToyPatchEncoder::new(cfg.m, cfg.feature_dim, cfg.seed)?,
    })
}

pub fn caption(args: &CaptionArgs, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<Vec<Generation>> {
    let trained = load_trained(&args.model, cfg)?;
    let mut manifest = RunManifest::new("caption", cfg);
    manifest.vocab_sha256 = Some(sha256_file(&args.model.join(VOCAB_FILE))?);
    manifest.checkpoint = Some(sha256_file(&args.model.join(CHECKPOINT_FILE))?);
    let images: BTreeMap<String, Image> = match &args.source {
        ImageSource::Dataset(d) => {
            d.hash_into(&mut manifest)?;
            let ds = d.load()?;
            let ids: Vec<String> = ds.images.keys().cloned().collect();
            load_images(&ds, &ids)?
        }
        ImageSource::Single(p) => {
            manifest.add_input("image", p)?;
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            BTreeMap::from([(id, load_image(p)?)])
        }
    };
    let cached = match &args.detections {
        Some(p) => {
            check_fresh(p, "detect-cache")?;
            manifest.detect_cache_sha256 = Some(sha256_file(p)?);
            Some(cache_detector(&read_jsonl::<DetectionRecord>(p)?))
        }
        None => None,
    };
    let palette = toy::detector();
    let detector: &dyn DetectorAdapter = match &cached {
        Some(c) => c,
        None => &palette,
    };
    let ids: Vec<String> = images.keys().cloned().collect();
    let objects = prompts(
        &ids,
        &images,
        detector,
        trained.attributes.as_ref().map(|(s, h)| (s, h)),
        cfg,
    )?;
    let strategy = match args.beam {
        Some(w) if w > 1 => DecodeStrategy::Beam(w),
        _ => DecodeStrategy::Greedy,
    };
    let mut gens = Vec::with_capacity(ids.len());
    for id in &ids {
        let prompt = build_prompt_sequence(&objects[id], &trained.vocab);
        let features = encode_image(&images[id], &trained.encoder)?;
        let ctx = trained.model.context(&features, &prompt)?;
        let tokens = generate(&trained.model, &ctx, strategy, args.max_len.unwrap_or(cfg.max_caption_len))?;
        let text = trained.vocab.decode(&tokens);
        let rendered = prompt.render(&trained.vocab);
        if args.show_prompt {
            report(out, format_args!("{id}\tprompt: {rendered}"))?;
        }
        report(out, format_args!("{id}\tcaption: {text}"))?;
        gens.push(Generation {
            image_id: id.clone(),
            caption: text,
            prompt: Some(rendered),
        });
    }
    write_jsonl(&args.out.join(GENERATIONS_FILE), &gens)?;
    manifest.add_output(&args.out, GENERATIONS_FILE)?;
    manifest.write(&args.out)?;
    Ok(gens)
}

// ------------------------------------------------------------------ evaluation

fn write_metrics(out_dir: Option<&Path>, command: &str, cfg: &PipelineConfig, inputs: &[(&str, &Path)], file: &str, body: &str, metrics: &[(&str, f64)]) -> Result<()> {
    let Some(dir) = out_dir else {
        return Ok(());
    };
    let mut m = RunManifest::new(command, cfg);
    for (role, p) in inputs {
        m.add_input(role, p)?;
    }
    write_atomic(&dir.join(file), body.as_bytes())?;
    m.add_output(dir, file)?;
    for (k, v) in metrics {
        m.metrics.insert(k.to_string(), *v);
    }
    m.write(dir)?;
    Ok(())
}

pub fn eval_chair(
    records_path: &Path,
    synonyms: Option<&Path>,
    out_dir: Option<&Path>,
    cfg: &PipelineConfig,
    out: &mut dyn Write,
) -> Result<(f64, f64)> {
    let records: Vec<EvalRecord> = read_jsonl(records_path)?;
    let syn = read_synonyms(synonyms)?;
    let r = chair(&records, &syn)?;
    report(out, format_args!("chair_s={:?} chair_i={:?}", r.chair_s, r.chair_i))?;
    report(out, format_args!("{:<12} {:<32} hallucinated", "image", "mentioned"))?;
    for p in &r.per_image {
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(",");
        report(out, format_args!("{:<12} {:<32} {}", p.image_id, join(&p.mentioned), join(&p.hallucinated)))?;
    }
    let body = serde_json::to_string_pretty(&r).expect("chair result serializes") + "\n";
    write_metrics(
        out_dir,
        "eval-chair",
        cfg,
        &[("records", records_path)],
        "chair.json",
        &body,
        &[("chair_s", r.chair_s), ("chair_i", r.chair_i)],
    )?;
    Ok((r.chair_s, r.chair_i))
}

pub fn eval_bleu(records_path: &Path, out_dir: Option<&Path>, cfg: &PipelineConfig, out: &mut dyn Write) -> Result<f64> {
    let records: Vec<EvalRecord> = read_jsonl(records_path)?;
    let cands: Vec<&str> = records.iter().map(|r| r.caption.as_str()).collect();
    let refs: Vec<Vec<&str>> = records.iter().map(|r| r.references.iter().map(String::as_str).collect()).collect();
    let b = bleu4(&cands, &refs)?;
    report(out, format_args!("bleu4={b:?}"))?;
    report(out, format_args!("candidates={}", records.len()))?;
    let body = serde_json::to_string_pretty(&serde_json::json!({"bleu4": b, "candidates": records.len()})).expect("json") + "\n";
    write_metrics(out_dir, "eval-bleu", cfg, &[("records", records_path)], "bleu.json", &body, &[("bleu4", b)])?;
    Ok(b)
}

/// Reference-free toy similarity: objects the palette detector finds in
/// the image that the caption mentions, minus objects it mentions that are
/// absent, normalized by the number of detected objects.
pub struct PaletteScorer {
    detected: BTreeMap<String, BTreeSet<String>>,
}

impl PaletteScorer {
    pub fn new(images: &BTreeMap<String, Image>) -> Result<Self> {
        let det = toy::detector();
        let detected = images
            .iter()
            .map(|(id, img)| Ok((id.clone(), detect(id, img, &det)?.into_iter().map(|d| d.label).collect())))
            .collect::<Result<_>>()?;
        Ok(Self { detected })
    }
}

impl SimilarityScorer for PaletteScorer {
    fn score(&self, image_id: &str, caption: &str) -> std::result::Result<f64, String> {
        let found = self.detected.get(image_id).ok_or_else(|| format!("no image loaded for {image_id}"))?;
        let said = extract_mentioned_objects(caption, &opcap_core::evaluation::SynonymMap::coco());
        let hit = said.intersection(found).count() as f64;
        let miss = said.difference(found).count() as f64;
        Ok((hit - miss) / found.len().max(1) as f64)
    }
}

struct TableScorer(BTreeMap<(String, String), f64>, BTreeMap<(String, String), String>);

impl SimilarityScorer for TableScorer {
    fn score(&self, image_id: &str, caption: &str) -> std::result::Result<f64, String> {
        // Captions are looked up back to their model so that two models
        // with the same caption can still carry different scores.
        let key = (image_id.to_string(), caption.to_string());
        let model = self.1.get(&key).ok_or_else(|| format!("no score for caption `{caption}`"))?;
        self.0
            .get(&(image_id.to_string(), model.clone()))
            .copied()
            .ok_or_else(|| format!("no score for model `{model}`"))
    }
}

#[derive(Debug, Clone)]
pub struct VoteArgs {
    /// Model name and generations file.
    pub candidates: Vec<(String, PathBuf)>,
    pub scores: Option<PathBuf>,
    pub dataset: Option<DatasetArgs>,
    pub out: Option<PathBuf>,
}

pub fn eval_vote(
    args: &VoteArgs,
    cfg: &PipelineConfig,
    out: &mut dyn Write,
) -> Result<opcap_core::evaluation::VoteResult> {
    let mut candidates: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut images: BTreeSet<String> = BTreeSet::new();
    for (name, path) in &args.candidates {
        let gens: Vec<Generation> = read_jsonl(path)?;
        let caps: BTreeMap<String, String> = gens.into_iter().map(|g| (g.image_id, g.caption)).collect();
        images.extend(caps.keys().cloned());
        if candidates.insert(name.clone(), caps).is_some() {
            return Err(Error::Config(format!("model `{name}` given twice")));
        }
    }
    let images: Vec<String> = images.into_iter().collect();
    let result = match (&args.scores, &args.dataset) {
        (Some(p), _) => {
            let rows: Vec<ScoreRecord> = read_jsonl(p)?;
            let table = rows.iter().map(|r| ((r.image_id.clone(), r.model.clone()), r.score)).collect();
            let mut owner = BTreeMap::new();
            for (model, caps) in &candidates {
                for (img, cap) in caps {
                    if let Some(prev) = owner.insert((img.clone(), cap.clone()), model.clone()) {
                        // Identical captions must score identically.
                        let a = rows.iter().find(|r| r.image_id == *img && r.model == prev).map(|r| r.score);
                        let b = rows.iter().find(|r| r.image_id == *img && r.model == *model).map(|r| r.score);
                        if a != b {
                            return Err(Error::Data(format!(
                                "models `{prev}` and `{model}` share a caption for {img} but have different scores"
                            )));
                        }
                    }
                }
            }
            clip_vote(&images, &candidates, &TableScorer(table, owner))?
        }
        (None, Some(d)) => {
            let ds = d.load()?;
            let missing: Vec<&String> = images.iter().filter(|i| !ds.images.contains_key(*i)).collect();
            if let Some(m) = missing.first() {
                return Err(Error::Data(format!("image id {m} is not in the dataset")));
            }
            let loaded = load_images(&ds, &images)?;
            clip_vote(&images, &candidates, &PaletteScorer::new(&loaded)?)?
        }
        (None, None) => return Err(Error::Config("eval-vote needs --scores or a dataset for the toy scorer".into())),
    };
    let line: Vec<String> = result.votes.iter().map(|(m, v)| format!("{m}={v}")).collect();
    report(out, format_args!("votes {} total_images={}", line.join(" "), result.total_images))?;
    report(out, format_args!("{:<16} votes", "model"))?;
    for (m, v) in &result.votes {
        report(out, format_args!("{m:<16} {v}"))?;
    }
    let body = serde_json::to_string_pretty(&result).expect("vote result serializes") + "\n";
    let inputs: Vec<(&str, &Path)> = args.candidates.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect();
    let metrics: Vec<(&str, f64)> = result.votes.iter().map(|(m, v)| (m.as_str(), *v as f64)).collect();
    write_metrics(args.out.as_deref(), "eval-vote", cfg, &inputs, "votes.json", &body, &metrics)?;
    Ok(result)
}

pub fn export_records(
    dataset: &DatasetArgs,
    generations: &Path,
    synonyms: Option<&Path>,
    out_dir: &Path,
    cfg: &PipelineConfig,
    out: &mut dyn Write,
) -> Result<Vec<EvalRecord>> {
    let ds = dataset.load()?;
    let gens: Vec<Generation> = read_jsonl(generations)?;
    let syn = read_synonyms(synonyms)?;
    let records = build_eval_records(&ds, &gens, &syn)?;
    let mut m = RunManifest::new("export-records", cfg);
    dataset.hash_into(&mut m)?;
    m.add_input("generations", generations)?;
    write_jsonl(&out_dir.join(RECORDS_FILE), &records)?;
    m.add_output(out_dir, RECORDS_FILE)?;
    m.write(out_dir)?;
    report(out, format_args!("records={}", records.len()))?;
    Ok(records)
}
