//! Object-aware prompts: the `[OBJ] label ([ATTR] attribute)*` token
//! grammar, its embedding, and fusion with image features.
//!
//! Multi-word labels and attributes ("sports ball") occupy several word
//! tokens after their marker, so the grammar is really
//! `([OBJ] w+ ([ATTR] w+)*)*` with `w` any non-special token. When every
//! label and attribute is a single word the prompt length is
//! `sum_j (2 + 2 * k_j)`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::vocab::{is_special, tokenize, TokenId, Vocabulary, ATTR_ID, OBJ_ID, UNK_ID};

/// A detected object and the attributes chosen for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectPrompt {
    pub label: String,
    pub attributes: Vec<String>,
}

impl ObjectPrompt {
    pub fn new<S: Into<String>>(label: impl Into<String>, attributes: impl IntoIterator<Item = S>) -> Self {
        Self {
            label: label.into(),
            attributes: attributes.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptSequence {
    tokens: Vec<TokenId>,
}

impl PromptSequence {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps raw ids after checking the grammar.
    pub fn from_tokens(tokens: Vec<TokenId>) -> Result<Self> {
        check_grammar(&tokens)?;
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Human-readable form, e.g. `[OBJ] person [ATTR] gray`.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let words: Vec<&str> = self
            .tokens
            .iter()
            .map(|&t| vocab.token(t).unwrap_or(crate::vocab::UNK))
            .collect();
        words.join(" ")
    }
}

fn push_words(out: &mut Vec<TokenId>, text: &str, vocab: &Vocabulary) {
    let words = tokenize(text);
    if words.is_empty() {
        log::warn!("empty prompt word {text:?}; using UNK");
        out.push(UNK_ID);
        return;
    }
    for w in words {
        match vocab.id(&w) {
            Some(id) if !is_special(id) => out.push(id),
            _ => {
                log::warn!("prompt word {w:?} is not in the vocabulary; using UNK");
                out.push(UNK_ID);
            }
        }
    }
}

/// Renders objects, in the given order, into the prompt grammar.
/// Out-of-vocabulary words become UNK (with a warning).
pub fn build_prompt_sequence(objects: &[ObjectPrompt], vocab: &Vocabulary) -> PromptSequence {
    let mut tokens = Vec::new();
    for obj in objects {
        tokens.push(OBJ_ID);
        push_words(&mut tokens, &obj.label, vocab);
        for attr in &obj.attributes {
            tokens.push(ATTR_ID);
            push_words(&mut tokens, attr, vocab);
        }
    }
    PromptSequence { tokens }
}

fn check_grammar(tokens: &[TokenId]) -> Result<()> {
    let mut expect_word = false;
    for (pos, &t) in tokens.iter().enumerate() {
        match t {
            OBJ_ID | ATTR_ID => {
                if expect_word {
                    return Err(Error::InvalidPrompt {
                        position: pos,
                        message: "marker must be followed by a word".to_string(),
                    });
                }
                if pos == 0 && t == ATTR_ID {
                    return Err(Error::InvalidPrompt {
                        position: 0,
                        message: "prompt must start with [OBJ]".to_string(),
                    });
                }
                expect_word = true;
            }
            UNK_ID => expect_word = false,
            t if is_special(t) => {
                return Err(Error::InvalidPrompt {
                    position: pos,
                    message: "only [OBJ] and [ATTR] may appear as structure".to_string(),
                })
            }
            _ => {
                if pos == 0 {
                    return Err(Error::InvalidPrompt {
                        position: 0,
                        message: "prompt must start with [OBJ]".to_string(),
                    });
                }
                expect_word = false;
            }
        }
    }
    if expect_word {
        return Err(Error::InvalidPrompt {
            position: tokens.len(),
            message: "trailing marker without a word".to_string(),
        });
    }
    Ok(())
}

/// Inverse of [`build_prompt_sequence`]: recovers the object list.
pub fn parse_prompt_sequence(seq: &PromptSequence, vocab: &Vocabulary) -> Result<Vec<ObjectPrompt>> {
    check_grammar(&seq.tokens)?;
    let mut objects: Vec<ObjectPrompt> = Vec::new();
    let mut current: Option<&mut String> = None;
    for &t in &seq.tokens {
        match t {
            OBJ_ID => {
                objects.push(ObjectPrompt {
                    label: String::new(),
                    attributes: Vec::new(),
                });
                let obj = objects.last_mut().unwrap();
                current = Some(&mut obj.label);
            }
            ATTR_ID => {
                let obj = objects.last_mut().unwrap();
                obj.attributes.push(String::new());
                current = obj.attributes.last_mut();
            }
            _ => {
                let word = vocab.token(t).ok_or(Error::IdOutOfRange { id: t, size: vocab.len() })?;
                let slot = current.as_mut().unwrap();
                if !slot.is_empty() {
                    slot.push(' ');
                }
                slot.push_str(word);
            }
        }
    }
    Ok(objects)
}

/// Looks up one table row per prompt token.
pub fn embed_prompt(seq: &PromptSequence, table: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(seq.len(), table.cols());
    for (r, &t) in seq.tokens.iter().enumerate() {
        if t as usize >= table.rows() {
            return Err(Error::IdOutOfRange {
                id: t,
                size: table.rows(),
            });
        }
        out.row_mut(r).copy_from_slice(table.row(t as usize));
    }
    Ok(out)
}

/// Decoder context: image feature rows followed by prompt embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedContext {
    z: Matrix,
    image_rows: usize,
}

impl FusedContext {
    pub fn matrix(&self) -> &Matrix {
        &self.z
    }

    pub fn rows(&self) -> usize {
        self.z.rows()
    }

    pub fn width(&self) -> usize {
        self.z.cols()
    }

    pub fn image_span(&self) -> core::ops::Range<usize> {
        0..self.image_rows
    }

    pub fn prompt_span(&self) -> core::ops::Range<usize> {
        self.image_rows..self.z.rows()
    }
}

pub fn fuse(image_features: &Matrix, prompt_emb: &Matrix) -> Result<FusedContext> {
    if image_features.cols() != prompt_emb.cols() {
        return Err(Error::DimensionMismatch {
            context: "fuse width",
            expected: image_features.cols(),
            actual: prompt_emb.cols(),
        });
    }
    let z = image_features.vstack(prompt_emb)?;
    if !z.is_finite() {
        return Err(Error::InvalidConfig("fused context contains non-finite values".into()));
    }
    Ok(FusedContext {
        z,
        image_rows: image_features.rows(),
    })
}

/// `sum_j (2 + 2 * k_j)`: prompt length when every label and attribute is
/// a single token.
pub fn single_token_prompt_len(objects: &[ObjectPrompt]) -> usize {
    objects.iter().map(|o| 2 + 2 * o.attributes.len()).sum()
}
