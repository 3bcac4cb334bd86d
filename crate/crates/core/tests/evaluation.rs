use std::collections::{BTreeMap, BTreeSet};

use opcap_core::evaluation::{bleu4, chair, clip_vote, extract_mentioned_objects, EvalRecord, SynonymMap, COCO_LABELS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: [&str; 8] = ["a", "with", "and", "near", "the", "next", "to", "some"];

/// Builds a caption mentioning exactly `labels`, each written either as the
/// label or a random synonym, optionally with a plural `s`.
fn caption_for(labels: &BTreeSet<String>, rng: &mut ChaCha8Rng, syn: &SynonymMap) -> String {
    let mut words = Vec::new();
    for label in labels {
        let forms: Vec<&str> = syn.iter().filter(|(_, l)| l == label).map(|(s, _)| s).collect();
        let mut form = forms[rng.random_range(0..forms.len())].to_string();
        if rng.random_bool(0.3) && !form.ends_with('s') {
            form.push('s');
        }
        words.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
        words.push(form);
    }
    words.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
    words.join(" ")
}

fn random_labels(rng: &mut ChaCha8Rng, max: usize) -> BTreeSet<String> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| COCO_LABELS[rng.random_range(0..80)].to_string()).collect()
}

#[test]
fn generated_captions_extract_their_labels() {
    let syn = SynonymMap::coco();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let labels = random_labels(&mut rng, 5);
        let caption = caption_for(&labels, &mut rng, &syn);
        assert_eq!(extract_mentioned_objects(&caption, &syn), labels, "{caption}");
    }
}

/// Set-arithmetic oracle over records whose mention sets are known by
/// construction.
#[test]
fn chair_matches_counting_oracle() {
    let syn = SynonymMap::coco();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut records = Vec::new();
    let (mut mentioned, mut hallucinated, mut bad) = (0usize, 0usize, 0usize);
    for i in 0..500 {
        let said = random_labels(&mut rng, 4);
        let gt = random_labels(&mut rng, 6);
        let h = said.iter().filter(|l| !gt.contains(*l)).count();
        mentioned += said.len();
        hallucinated += h;
        bad += (h > 0) as usize;
        records.push(EvalRecord {
            image_id: i.to_string(),
            caption: caption_for(&said, &mut rng, &syn),
            references: vec![],
            gt_objects: gt,
        });
    }
    let r = chair(&records, &syn).unwrap();
    assert_eq!(r.chair_s, bad as f64 / 500.0);
    assert_eq!(r.chair_i, hallucinated as f64 / mentioned as f64);
}

#[test]
fn planted_vote_totals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let models = ["m0", "m1", "m2"];
    let images: Vec<String> = (0..100).map(|i| format!("img{i}")).collect();
    let mut table: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut planted = [0usize; 3];
    for img in &images {
        let winners: Vec<usize> = (0..3).filter(|_| rng.random_bool(0.4)).collect();
        let winners = if winners.is_empty() { vec![rng.random_range(0..3)] } else { winners };
        for (m, name) in models.iter().enumerate() {
            let s = if winners.contains(&m) {
                planted[m] += 1;
                1.0
            } else {
                rng.random::<f64>() * 0.99
            };
            table.insert((img.clone(), format!("{name}:{img}")), s);
        }
    }
    let candidates: BTreeMap<String, BTreeMap<String, String>> = models
        .iter()
        .map(|m| (m.to_string(), images.iter().map(|i| (i.clone(), format!("{m}:{i}"))).collect()))
        .collect();
    let scorer = |img: &str, cap: &str| table[&(img.to_string(), cap.to_string())];
    let v = clip_vote(&images, &candidates, &scorer).unwrap();
    for (m, name) in models.iter().enumerate() {
        assert_eq!(v.votes[*name], planted[m]);
    }
    // Exhaustive max scan.
    let mut scan = [0usize; 3];
    for img in &images {
        let s: Vec<f64> = models.iter().map(|m| table[&(img.clone(), format!("{m}:{img}"))]).collect();
        let max = s.iter().cloned().fold(f64::MIN, f64::max);
        for m in 0..3 {
            scan[m] += (s[m] == max) as usize;
        }
    }
    assert_eq!(scan, planted);
    assert!(v.votes.values().sum::<usize>() > 100);
}

fn arb_record() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (prop::collection::vec(0usize..80, 0..4), prop::collection::vec(0usize..80, 0..6))
}

fn to_records(raw: &[(Vec<usize>, Vec<usize>)]) -> Vec<EvalRecord> {
    raw.iter()
        .enumerate()
        .map(|(i, (said, gt))| EvalRecord {
            image_id: i.to_string(),
            caption: said.iter().map(|&l| format!("a {}", COCO_LABELS[l])).collect::<Vec<_>>().join(" and "),
            references: vec![],
            gt_objects: gt.iter().map(|&l| COCO_LABELS[l].to_string()).collect(),
        })
        .collect()
}

proptest! {
    #[test]
    fn chair_permutation_and_duplication_invariant(raw in prop::collection::vec(arb_record(), 1..20), seed in any::<u64>()) {
        let syn = SynonymMap::coco();
        let records = to_records(&raw);
        let base = chair(&records, &syn).unwrap();
        let mut shuffled = records.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let s = chair(&shuffled, &syn).unwrap();
        prop_assert_eq!((s.chair_s, s.chair_i), (base.chair_s, base.chair_i));
        let doubled: Vec<_> = records.iter().chain(&records).cloned().collect();
        let d = chair(&doubled, &syn).unwrap();
        prop_assert_eq!((d.chair_s, d.chair_i), (base.chair_s, base.chair_i));
        prop_assert!((0.0..=1.0).contains(&base.chair_s) && (0.0..=1.0).contains(&base.chair_i));
    }

    #[test]
    fn removing_a_hallucination_never_hurts(raw in prop::collection::vec(arb_record(), 1..20), pick in any::<prop::sample::Index>()) {
        let syn = SynonymMap::coco();
        let records = to_records(&raw);
        let base = chair(&records, &syn).unwrap();
        let halluc: Vec<(usize, String)> = base
            .per_image
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.hallucinated.iter().map(move |h| (i, h.clone())))
            .collect();
        prop_assume!(!halluc.is_empty());
        let (i, label) = &halluc[pick.index(halluc.len())];
        let mut edited = raw.clone();
        edited[*i].0.retain(|&l| COCO_LABELS[l] != label);
        let after = chair(&to_records(&edited), &syn).unwrap();
        prop_assert!(after.chair_i <= base.chair_i);
        prop_assert!(after.chair_s <= base.chair_s);
    }

    #[test]
    fn vote_sum_bounds(scores in prop::collection::vec(prop::collection::vec(0u8..4, 3), 1..30)) {
        let images: Vec<String> = (0..scores.len()).map(|i| i.to_string()).collect();
        let candidates: BTreeMap<String, BTreeMap<String, String>> = (0..3)
            .map(|m| (format!("m{m}"), images.iter().map(|i| (i.clone(), m.to_string())).collect()))
            .collect();
        let scorer = |img: &str, cap: &str| scores[img.parse::<usize>().unwrap()][cap.parse::<usize>().unwrap()] as f64;
        let v = clip_vote(&images, &candidates, &scorer).unwrap();
        let total: usize = v.votes.values().sum();
        let ties = scores.iter().any(|s| {
            let max = *s.iter().max().unwrap();
            s.iter().filter(|&&x| x == max).count() > 1
        });
        prop_assert!(total >= images.len());
        prop_assert_eq!(total == images.len(), !ties);
        prop_assert!(v.votes.values().all(|&c| c <= images.len()));
    }

    #[test]
    fn bleu_bounded_and_reference_order_free(
        cands in prop::collection::vec(prop::collection::vec(0u8..6, 0..12), 1..5),
        refs in prop::collection::vec(prop::collection::vec(prop::collection::vec(0u8..6, 1..12), 1..4), 5),
    ) {
        let words = |ids: &Vec<u8>| ids.iter().map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let c: Vec<String> = cands.iter().map(words).collect();
        let r: Vec<Vec<String>> = refs[..cands.len()].iter().map(|rs| rs.iter().map(words).collect()).collect();
        let b = bleu4(&c, &r).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
        let rev: Vec<Vec<String>> = r.iter().map(|rs| rs.iter().rev().cloned().collect()).collect();
        prop_assert_eq!(bleu4(&c, &rev).unwrap(), b);
    }
}
