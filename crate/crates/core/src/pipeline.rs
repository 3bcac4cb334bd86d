//! Image to object prompts: detect, filter, crop each object and predict
//! its attributes.

use alloc::vec::Vec;

use crate::attributes::{predict_attributes, AttributeHead, AttributeSpace, RegionEncoder};
use crate::config::PipelineConfig;
use crate::detection::{crop, detect, filter_detections, DetectedObject, DetectorAdapter};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::prompting::{build_prompt_sequence, ObjectPrompt, PromptSequence};
use crate::vocab::Vocabulary;

/// The attribute predictor applied to each detected object's crop.
#[derive(Clone, Copy)]
pub struct AttributeStage<'a> {
    pub encoder: &'a dyn RegionEncoder,
    pub head: &'a AttributeHead,
    pub space: &'a AttributeSpace,
}

/// Turns already-detected objects into prompts. `dets` must be sorted by
/// score (as returned by [`detect`]). Without an attribute stage every
/// object gets an empty attribute list. A crop that collapses to zero
/// pixels also yields no attributes.
pub fn objects_from_detections(
    image: &Image,
    dets: &[DetectedObject],
    attributes: Option<AttributeStage<'_>>,
    cfg: &PipelineConfig,
) -> Result<Vec<ObjectPrompt>> {
    let kept = filter_detections(dets, cfg.detect_threshold, cfg.o_max, cfg.dedupe);
    let mut out = Vec::with_capacity(kept.len());
    for d in kept {
        let attrs = match attributes {
            None => Vec::new(),
            Some(stage) => match crop(image, &d.bbox, cfg.crop_pad) {
                Ok(region) => {
                    predict_attributes(&region, stage.encoder, stage.head, stage.space, cfg.k, cfg.attr_min_prob)?
                        .selected
                }
                Err(Error::DegenerateCrop) => {
                    log::warn!("degenerate crop for `{}`, no attributes", d.label);
                    Vec::new()
                }
                Err(e) => return Err(e),
            },
        };
        out.push(ObjectPrompt::new(d.label, attrs));
    }
    Ok(out)
}

/// Runs the detector, then [`objects_from_detections`].
pub fn describe_objects(
    image_id: &str,
    image: &Image,
    detector: &dyn DetectorAdapter,
    attributes: Option<AttributeStage<'_>>,
    cfg: &PipelineConfig,
) -> Result<Vec<ObjectPrompt>> {
    let dets = detect(image_id, image, detector)?;
    objects_from_detections(image, &dets, attributes, cfg)
}

/// [`describe_objects`] followed by prompt construction.
pub fn prompt_for_image(
    image_id: &str,
    image: &Image,
    detector: &dyn DetectorAdapter,
    attributes: Option<AttributeStage<'_>>,
    vocab: &Vocabulary,
    cfg: &PipelineConfig,
) -> Result<PromptSequence> {
    let objects = describe_objects(image_id, image, detector, attributes, cfg)?;
    Ok(build_prompt_sequence(&objects, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::PatchStatsEncoder;
    use crate::detection::{BBox, FixtureDetector, PaletteDetector, RawDetection};
    use alloc::string::ToString;
    use alloc::vec;

    fn scene() -> Image {
        let mut img = Image::filled(20, 20, [0, 0, 0]);
        for y in 2..8 {
            for x in 2..10 {
                img.put_pixel(x, y, [255, 0, 0]);
            }
        }
        for y in 12..14 {
            for x in 12..14 {
                img.put_pixel(x, y, [0, 0, 255]);
            }
        }
        img
    }

    fn palette() -> PaletteDetector {
        PaletteDetector::new(vec![("cat".to_string(), [255, 0, 0]), ("tie".to_string(), [0, 0, 255])])
    }

    #[test]
    fn objects_follow_score_order_and_o_max() {
        let cfg = PipelineConfig::default();
        let objs = describe_objects("s", &scene(), &palette(), None, &cfg).unwrap();
        assert_eq!(objs.iter().map(|o| o.label.as_str()).collect::<Vec<_>>(), ["cat", "tie"]);
        assert!(objs.iter().all(|o| o.attributes.is_empty()));
        let one = PipelineConfig { o_max: 1, ..cfg };
        assert_eq!(describe_objects("s", &scene(), &palette(), None, &one).unwrap().len(), 1);
    }

    #[test]
    fn attributes_come_from_the_head() {
        let space = AttributeSpace::new(["red", "blue", "small"]).unwrap();
        let enc = PatchStatsEncoder::default();
        let mut head = AttributeHead::zeros(enc_dim(&enc), 4, 3);
        head.set_output_bias(0, 3.0);
        head.set_output_bias(2, 1.0);
        head.set_output_bias(1, -2.0);
        let stage = AttributeStage {
            encoder: &enc,
            head: &head,
            space: &space,
        };
        let cfg = PipelineConfig { k: 2, attr_min_prob: 0.5, ..PipelineConfig::default() };
        let objs = describe_objects("s", &scene(), &palette(), Some(stage), &cfg).unwrap();
        assert_eq!(objs[0], ObjectPrompt::new("cat", ["red", "small"]));
        let vocab = Vocabulary::build(&["a red cat small tie"], 1).unwrap();
        let seq = prompt_for_image("s", &scene(), &palette(), Some(stage), &vocab, &cfg).unwrap();
        assert_eq!(seq.render(&vocab), "[OBJ] cat [ATTR] red [ATTR] small [OBJ] tie [ATTR] red [ATTR] small");
    }

    fn enc_dim(e: &PatchStatsEncoder) -> usize {
        RegionEncoder::dim(e)
    }

    #[test]
    fn low_scores_are_dropped_and_no_detections_give_empty_prompt() {
        let mut fx = FixtureDetector::new("fixture");
        fx.insert("a", vec![RawDetection { label: "dog".into(), bbox: BBox::FULL.to_array(), score: 0.5 }]);
        let cfg = PipelineConfig::default();
        assert!(describe_objects("a", &scene(), &fx, None, &cfg).unwrap().is_empty());
        let vocab = Vocabulary::build(&["dog"], 1).unwrap();
        assert!(prompt_for_image("b", &scene(), &fx, None, &vocab, &cfg).unwrap().is_empty());
    }
}
