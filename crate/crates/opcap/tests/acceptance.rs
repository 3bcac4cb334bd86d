//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every check compares library output against an oracle written
//! here, independently of the code under test.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use opcap::commands::{self, CaptionArgs, DatasetArgs, DetectCacheArgs, ImageSource, TrainArgs};
use opcap::toy;
use opcap_core::attributes::{AttributeExample, AttributeHead};
use opcap_core::captioner::{loss_and_grads, token_dropout, CaptionModel, DecoderConfig, TrainExample};
use opcap_core::evaluation::{bleu4, chair, clip_vote, EvalRecord, SynonymMap, COCO_LABELS};
use opcap_core::prompting::{build_prompt_sequence, parse_prompt_sequence, ObjectPrompt};
use opcap_core::rng::{stream, Rng, Stream};
use opcap_core::vocab::{is_special, TokenId, SPECIALS, BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use opcap_core::{Matrix, Vocabulary};
use rand::Rng as _;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> Rng {
    stream(seed, Stream::Synthetic)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// -------------------------------------------------------------------- CHAIR

fn random_labels(r: &mut Rng, max: usize) -> BTreeSet<&'static str> {
    let n = r.random_range(0..=max);
    (0..n).map(|_| COCO_LABELS[r.random_range(0..COCO_LABELS.len())]).collect()
}

/// A caption naming exactly `labels`, some pluralized, padded with words
/// that are not objects.
fn caption_naming(labels: &BTreeSet<&str>, r: &mut Rng) -> String {
    const FILLER: [&str; 6] = ["a", "with", "near", "the", "beside", "some"];
    let mut words = vec![FILLER[r.random_range(0..FILLER.len())].to_string()];
    for l in labels {
        let plural = r.random_bool(0.3) && !l.ends_with('s');
        words.push(if plural { format!("{l}s") } else { l.to_string() });
        words.push(FILLER[r.random_range(0..FILLER.len())].to_string());
    }
    words.join(" ")
}

fn chair_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(500);
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for i in 0..500 {
        let said = random_labels(&mut r, 5);
        let gt = random_labels(&mut r, 6);
        records.push(EvalRecord {
            image_id: format!("{i}"),
            caption: caption_naming(&said, &mut r),
            references: vec![],
            gt_objects: gt.iter().map(|s| s.to_string()).collect(),
        });
        truth.push((said, gt));
    }
    // set arithmetic over the known mention sets
    let hallucinated: Vec<usize> = truth.iter().map(|(s, g)| s.difference(g).count()).collect();
    let mentioned: usize = truth.iter().map(|(s, _)| s.len()).sum();
    let want_s = hallucinated.iter().filter(|&&h| h > 0).count() as f64 / 500.0;
    let want_i = hallucinated.iter().sum::<usize>() as f64 / mentioned as f64;

    let got = chair(&records, &SynonymMap::coco()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(got.chair_s == want_s && got.chair_i == want_i, || {
        format!("chair=({}, {}) oracle=({want_s}, {want_i})", got.chair_s, got.chair_i)
    })?;
    for (img, (s, g)) in got.per_image.iter().zip(&truth) {
        let want: BTreeSet<String> = s.difference(g).map(|x| x.to_string()).collect();
        ensure(img.hallucinated == want, || format!("image {} hallucinated {:?}", img.image_id, img.hallucinated))?;
    }

    let cat_tie = EvalRecord {
        image_id: "cat_tie".into(),
        caption: "a man wearing a tie".into(),
        references: vec!["a close up of a cat wearing a tie".into()],
        gt_objects: ["cat", "tie"].iter().map(|s| s.to_string()).collect(),
    };
    let f = chair(&[cat_tie], &SynonymMap::coco()).map_err(|e| e.to_string())?;
    ensure(f.chair_s == 1.0 && f.chair_i == 0.5, || format!("cat/tie record gives ({}, {})", f.chair_s, f.chair_i))?;
    ensure(elapsed < 5.0, || format!("took {elapsed:.2}s"))?;
    Ok(format!("500 records exact (chair_s={want_s:.4} chair_i={want_i:.4}), cat/tie record=(1.0, 0.5), {elapsed:.3}s"))
}

// ------------------------------------------------------------------ overfit

fn first_references(captions: &Path) -> BTreeMap<String, String> {
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(captions).unwrap()).unwrap();
    let mut anns: Vec<&serde_json::Value> = doc["annotations"].as_array().unwrap().iter().collect();
    anns.sort_by_key(|a| a["id"].as_u64());
    let mut first = BTreeMap::new();
    for a in anns {
        first
            .entry(a["image_id"].to_string())
            .or_insert_with(|| a["caption"].as_str().unwrap().to_string());
    }
    first
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let paths = toy::write_dataset(&dir.path().join("data"), &toy::generate(32, 11)).map_err(|e| e.to_string())?;
    let cfg = toy::config();
    let run = dir.path().join("run");
    let dataset = DatasetArgs {
        captions: paths.captions.clone(),
        instances: Some(paths.instances.clone()),
        images: paths.images.clone(),
    };
    let mut sink = Vec::new();
    commands::detect_cache(
        &DetectCacheArgs { dataset: dataset.clone(), fixture: None, out: run.clone() },
        &cfg,
        &mut sink,
    )
    .map_err(|e| e.to_string())?;
    let detections = run.join(commands::DETECTIONS_FILE);
    let want = first_references(&paths.captions);

    // Train in stages, resuming from the checkpoint, and stop at the first
    // stage that meets the bar.
    let mut last = String::new();
    for steps in [500, 1000, 1500, 2000] {
        let summary = commands::train(
            &TrainArgs {
                dataset: dataset.clone(),
                detections: detections.clone(),
                attributes: Some(paths.attributes.clone()),
                steps,
                overfit: Some(32),
                resume: (steps > 500).then(|| run.join(commands::CHECKPOINT_FILE)),
                out: run.clone(),
            },
            &cfg,
            &mut sink,
        )
        .map_err(|e| e.to_string())?;
        let gens = commands::caption(
            &CaptionArgs {
                model: run.clone(),
                source: ImageSource::Dataset(dataset.clone()),
                detections: Some(detections.clone()),
                beam: None,
                show_prompt: false,
                max_len: None,
                out: dir.path().join("cap"),
            },
            &cfg,
            &mut sink,
        )
        .map_err(|e| e.to_string())?;
        let exact = gens.iter().filter(|g| want.get(&g.image_id) == Some(&g.caption)).count();
        let rate = exact as f64 / gens.len() as f64;
        last = format!(
            "{steps} steps: loss={:.5} exact={exact}/{} ({:.0}s)",
            summary.final_loss,
            gens.len(),
            start.elapsed().as_secs_f64()
        );
        if summary.final_loss < 0.1 && rate >= 0.9 && gens.len() == 32 {
            return Ok(last);
        }
    }
    Err(last)
}

// --------------------------------------------------------------- causality

fn random_model(r: &mut Rng, vocab: usize) -> CaptionModel {
    let heads = [1, 2, 4][r.random_range(0..3)];
    let cfg = DecoderConfig {
        vocab_size: vocab,
        d_model: heads * r.random_range(2..5),
        n_layers: r.random_range(1..3),
        n_heads: heads,
        ffn_dim: r.random_range(4..17),
        max_len: 12,
        feature_dim: r.random_range(2..6),
        image_rows: r.random_range(1..5),
    };
    CaptionModel::new(cfg, r.random())
        .map_err(|e| e.to_string())
        .expect("valid random config")
}

/// Specials followed by `w6`, `w7`, ...: the word with id `i` is `w{i}`.
fn word_vocab(size: usize) -> Vocabulary {
    let tokens = SPECIALS.iter().map(|s| s.to_string()).chain((SPECIALS.len()..size).map(|i| format!("w{i}")));
    Vocabulary::from_tokens(tokens.collect()).unwrap()
}

fn random_features(r: &mut Rng, cfg: &DecoderConfig) -> Matrix {
    let data = (0..cfg.image_rows * cfg.feature_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(cfg.image_rows, cfg.feature_dim, data).unwrap()
}

fn random_words(r: &mut Rng, vocab: usize, n: usize) -> Vec<TokenId> {
    (0..n).map(|_| r.random_range(6..vocab as TokenId)).collect()
}

fn causality() -> Outcome {
    let mut r = rng(100);
    let vocab = 20;
    for pair in 0..100 {
        let model = random_model(&mut r, vocab);
        let cfg = *model.config();
        let prompt = build_prompt_sequence(&[ObjectPrompt::new("w6", ["w7"])], &word_vocab(vocab));
        let ctx = model.context(&random_features(&mut r, &cfg), &prompt).map_err(|e| e.to_string())?;
        let len = r.random_range(2..=cfg.max_len);
        let mut input = vec![BOS_ID];
        input.extend(random_words(&mut r, vocab, len - 1));
        let cut = r.random_range(0..len - 1);
        let mut changed = input.clone();
        for t in changed.iter_mut().skip(cut + 1) {
            *t = r.random_range(0..vocab as TokenId);
        }
        let a = model.forward(&input, &ctx).map_err(|e| e.to_string())?;
        let b = model.forward(&changed, &ctx).map_err(|e| e.to_string())?;
        for row in 0..=cut {
            let same = a.row(row).iter().zip(b.row(row)).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || format!("pair {pair}: row {row} moved after changing tokens past {cut}"))?;
        }
    }
    Ok("100 random (model, input) pairs, earlier logits bitwise identical".into())
}

// ------------------------------------------------------------ gradient check

/// Central differences on ten random coordinates with a non-negligible
/// gradient; returns the worst relative error.
fn finite_difference<T>(
    target: &mut T,
    values: fn(&mut T) -> &mut [f64],
    loss: impl Fn(&T) -> f64,
    analytic: &[f64],
    r: &mut Rng,
) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut tries = 0;
    while checked < 10 && tries < 10_000 {
        tries += 1;
        let i = r.random_range(0..analytic.len());
        let orig = values(target)[i];
        values(target)[i] = orig + h;
        let up = loss(target);
        values(target)[i] = orig - h;
        let down = loss(target);
        values(target)[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = numeric.abs().max(analytic[i].abs());
        if scale < 1e-6 {
            continue;
        }
        worst = worst.max((numeric - analytic[i]).abs() / scale);
        checked += 1;
    }
    if checked < 10 {
        return f64::INFINITY;
    }
    worst
}

fn gradient_check() -> Outcome {
    let mut r = rng(7);
    let vocab = 16;
    let model = random_model(&mut r, vocab);
    let cfg = *model.config();
    let words = word_vocab(vocab);
    let batch: Vec<TrainExample> = (0..3)
        .map(|i| {
            let mut caption = vec![BOS_ID];
            caption.extend(random_words(&mut r, vocab, 2 + i));
            caption.push(EOS_ID);
            if i == 1 {
                caption.push(PAD_ID);
            }
            TrainExample {
                features: random_features(&mut r, &cfg),
                prompt: build_prompt_sequence(&[ObjectPrompt::new(format!("w{}", 6 + i), ["w9"])], &words),
                caption,
            }
        })
        .collect();
    let (_, grads) = loss_and_grads(&model, &batch, None).map_err(|e| e.to_string())?;
    let mut model = model;
    let dec = finite_difference(
        &mut model,
        CaptionModel::params_mut,
        |m| loss_and_grads(m, &batch, None).unwrap().0,
        &grads,
        &mut r,
    );

    let mut head = AttributeHead::new(12, 8, 5, 3);
    let examples: Vec<AttributeExample> = (0..6)
        .map(|_| AttributeExample {
            embedding: (0..12).map(|_| r.random_range(-1.0..1.0)).collect(),
            targets: (0..5).map(|_| r.random_bool(0.4)).collect(),
        })
        .collect();
    let (_, hgrads) = head.loss_and_grads(&examples).map_err(|e| e.to_string())?;
    let attr = finite_difference(
        &mut head,
        |h| h.params_mut().values_mut(),
        |h| h.loss_and_grads(&examples).unwrap().0,
        &hgrads,
        &mut r,
    );
    let detail = format!("max rel err decoder={dec:.2e} attribute head={attr:.2e} (f64, bound 1e-6)");
    ensure(dec < 1e-6 && attr < 1e-6, || detail.clone())?;
    Ok(detail)
}

// ----------------------------------------------------------- prompt grammar

fn prompt_grammar() -> Outcome {
    let vocab = word_vocab(46);
    let words: Vec<String> = (6..46).map(|i| format!("w{i}")).collect();
    let mut r = rng(1000);
    for case in 0..1000 {
        let objects: Vec<ObjectPrompt> = (0..r.random_range(0..7))
            .map(|_| {
                let k = r.random_range(0..5);
                let attrs: Vec<String> = (0..k).map(|_| words[r.random_range(0..40)].clone()).collect();
                ObjectPrompt::new(words[r.random_range(0..40)].clone(), attrs)
            })
            .collect();
        let seq = build_prompt_sequence(&objects, &vocab);
        let law: usize = objects.iter().map(|o| 2 + 2 * o.attributes.len()).sum();
        ensure(seq.len() == law, || format!("case {case}: length {} != {law}", seq.len()))?;
        let back = parse_prompt_sequence(&seq, &vocab).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == objects, || format!("case {case}: round trip changed {objects:?}"))?;
    }
    Ok("1000 fuzzed object lists round-trip; length law holds on all".into())
}

// ------------------------------------------------------------ token dropout

fn dropout() -> Outcome {
    let mut r = rng(5);
    let n = 100_000;
    let mut tokens = vec![BOS_ID];
    tokens.extend(random_words(&mut r, 500, n));
    tokens.extend([EOS_ID, PAD_ID, PAD_ID]);

    let mut d = stream(1, Stream::TokenDropout);
    ensure(token_dropout(&tokens, 0.0, &mut d) == tokens, || "p=0 changed tokens".into())?;
    let all = token_dropout(&tokens, 1.0, &mut d);
    let frame_ok = all.iter().zip(&tokens).all(|(a, t)| if is_special(*t) { a == t } else { *a == UNK_ID });
    ensure(frame_ok, || "p=1 is not full UNK with an intact frame".into())?;

    let mut rates = Vec::new();
    for p in [0.1, 0.3, 0.5] {
        let out = token_dropout(&tokens, p, &mut d);
        let dropped = out.iter().zip(&tokens).filter(|(a, t)| a != t).count();
        let rate = dropped as f64 / n as f64;
        ensure((rate - p).abs() <= 0.01, || format!("p={p}: empirical {rate}"))?;
        rates.push(format!("{p}->{rate:.4}"));
    }
    Ok(format!("p=0 identity, p=1 full UNK, rates {}", rates.join(" ")))
}

// ----------------------------------------------------------------- CLIP vote

fn clip_vote_protocol() -> Outcome {
    let mut r = rng(3);
    let models = ["alpha", "beta", "gamma"];
    let images: Vec<String> = (0..100).map(|i| format!("img{i}")).collect();
    let mut candidates: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    let mut planted: BTreeMap<String, usize> = models.iter().map(|m| (m.to_string(), 0)).collect();
    for img in &images {
        let winner = r.random_range(0..3);
        for (k, m) in models.iter().enumerate() {
            let caption = format!("{m} says something about {img}");
            let s = if k == winner { 0.9 } else { r.random_range(0.0..0.8) };
            scores.insert(caption.clone(), s);
            candidates.entry(m.to_string()).or_default().insert(img.clone(), caption);
        }
        *planted.get_mut(models[winner]).unwrap() += 1;
    }
    let scorer = |_: &str, caption: &str| scores[caption];
    let got = clip_vote(&images, &candidates, &scorer).map_err(|e| e.to_string())?;
    ensure(got.votes == planted, || format!("votes {:?} planted {planted:?}", got.votes))?;

    // all three tie on the first image, beta alone wins the second
    let tie_images = vec!["t0".to_string(), "t1".to_string()];
    let mut tie: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for m in models {
        let c = tie.entry(m.to_string()).or_default();
        c.insert("t0".into(), format!("{m} t0"));
        c.insert("t1".into(), format!("{m} t1"));
    }
    let tie_scorer = |img: &str, caption: &str| match (img, caption) {
        ("t0", _) => 0.25,
        (_, c) if c.starts_with("beta") => 0.5,
        _ => 0.1,
    };
    let t = clip_vote(&tie_images, &tie, &tie_scorer).map_err(|e| e.to_string())?;
    let want: BTreeMap<String, usize> = [("alpha", 1), ("beta", 2), ("gamma", 1)].iter().map(|(m, v)| (m.to_string(), *v)).collect();
    let total: usize = t.votes.values().sum();
    ensure(t.votes == want && total > tie_images.len(), || format!("tie votes {:?}", t.votes))?;
    Ok(format!("planted {planted:?} reproduced; tie fixture sums {total} votes over 2 images"))
}

// --------------------------------------------------------------------- BLEU

fn bleu() -> Outcome {
    let cands = ["the cat sat on the mat", "a dog runs in the park", "two birds fly over the sea"];
    let ident: Vec<Vec<&str>> = cands.iter().map(|c| vec![*c]).collect();
    let one = bleu4(&cands, &ident).map_err(|e| e.to_string())?;
    ensure(one == 1.0, || format!("identity corpus gives {one}"))?;

    let refs = vec![
        vec!["the cat sat on a mat", "a cat is on the mat"],
        vec!["a dog runs in the green park"],
        vec!["two birds fly over the blue sea today"],
    ];
    // Clipped matches / candidate n-grams per order, summed over sentences:
    //   1-grams 5+6+6 / 18, 2-grams 5+4+4 / 15, 3-grams 3+3+3 / 12,
    //   4-grams 1+2+2 / 9. Candidate length 18, closest reference lengths
    //   6+7+8 = 21, so BP = exp(1 - 21/18).
    let worksheet = (1.0f64 - 21.0 / 18.0).exp() * (17.0 / 18.0 * 13.0 / 15.0 * 9.0 / 12.0 * 5.0 / 9.0f64).powf(0.25);
    let got = bleu4(&cands, &refs).map_err(|e| e.to_string())?;
    ensure((worksheet - 0.6468772881).abs() < 1e-9, || format!("worksheet arithmetic {worksheet}"))?;
    ensure((got - worksheet).abs() < 1e-6, || format!("bleu4 {got} worksheet {worksheet}"))?;
    Ok(format!("identity=1.0, worksheet {worksheet:.10} vs {got:.10}"))
}

// -------------------------------------------------------------- determinism

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("opcap").chain(args.iter().copied());
    match opcap::cli::run(argv, &mut out, &mut err) {
        0 => Ok(()),
        code => Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err))),
    }
}

fn full_run(data: &toy::ToyPaths, out: &Path) -> Result<(), String> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (cfg, caps, inst, imgs) = (s(&data.config), s(&data.captions), s(&data.instances), s(&data.images));
    let ds = ["--captions", &caps, "--instances", &inst, "--images", &imgs];
    let det_dir = s(&out.join("detect"));
    let train_dir = s(&out.join("train"));
    let cap_dir = s(&out.join("caption"));
    let eval_dir = s(&out.join("eval"));
    let dets = s(&out.join("detect").join(commands::DETECTIONS_FILE));
    let gens = s(&out.join("caption").join(commands::GENERATIONS_FILE));
    let records = s(&out.join("eval").join(commands::RECORDS_FILE));
    let common = |dir: &str| vec!["--config".to_string(), cfg.clone(), "--seed".into(), "42".into(), "--out".into(), dir.to_string()];
    let run = |head: Vec<String>, tail: &[&str]| {
        let v: Vec<&str> = head.iter().map(String::as_str).chain(tail.iter().copied()).collect();
        run_cli(&v)
    };
    run(common(&det_dir), &[&["detect-cache"][..], &ds].concat())?;
    run(
        common(&train_dir),
        &[&["train"][..], &ds, &["--detections", &dets, "--attributes", &s(&data.attributes), "--steps", "50"]].concat(),
    )?;
    run(common(&cap_dir), &[&["caption", "--model", &train_dir][..], &ds, &["--detections", &dets, "--beam", "3"]].concat())?;
    run(common(&eval_dir), &[&["export-records"][..], &ds, &["--generations", &gens]].concat())?;
    run(common(&eval_dir), &["eval-chair", "--records", &records])?;
    run(common(&eval_dir), &["eval-bleu", "--records", &records])?;
    let cand = format!("opcap={gens}");
    run(common(&eval_dir), &["eval-vote", "--candidates", &cand, "--captions", &caps, "--images", &imgs])?;
    Ok(())
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = toy::write_dataset(&dir.path().join("data"), &toy::generate(8, 2)).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    full_run(&data, &a)?;
    full_run(&data, &b)?;
    let (fa, fb) = (files_under(&a), files_under(&b));
    ensure(fa.keys().eq(fb.keys()), || "runs wrote different file sets".into())?;
    for (name, bytes) in &fa {
        ensure(fb[name] == *bytes, || format!("{} differs", name.display()))?;
    }
    Ok(format!("{} output files bytewise identical across two runs", fa.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("chair oracle", chair_oracle),
        ("overfit", overfit),
        ("causality", causality),
        ("gradient check", gradient_check),
        ("prompt grammar", prompt_grammar),
        ("token dropout", dropout),
        ("clip vote", clip_vote_protocol),
        ("bleu-4", bleu),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
