use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::vocab::{TokenId, BOS_ID, EOS_ID};

/// One image with its tokenized reference captions and ground-truth
/// object labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSample {
    pub image_id: String,
    pub image: Image,
    pub references: Vec<Vec<TokenId>>,
    pub gt_objects: BTreeSet<String>,
}

impl CaptionSample {
    /// Checks the training-sample contract: at least one reference and
    /// every reference framed by BOS ... EOS.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "sample {} has no reference captions",
                self.image_id
            )));
        }
        for r in &self.references {
            if r.len() < 2 || r[0] != BOS_ID || r[r.len() - 1] != EOS_ID {
                return Err(Error::InvalidConfig(format!(
                    "sample {}: reference not framed by BOS/EOS",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}
