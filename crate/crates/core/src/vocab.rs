//! Word-level vocabulary with the reserved structural tokens.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: &str = "[PAD]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const UNK: &str = "[UNK]";
pub const OBJ: &str = "[OBJ]";
pub const ATTR: &str = "[ATTR]";

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const OBJ_ID: TokenId = 4;
pub const ATTR_ID: TokenId = 5;

/// Special tokens in id order.
pub const SPECIALS: [&str; 6] = [PAD, BOS, EOS, UNK, OBJ, ATTR];

pub const DEFAULT_MIN_FREQ: usize = 5;

#[inline]
pub fn is_special(id: TokenId) -> bool {
    (id as usize) < SPECIALS.len()
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '.' | ',' | '!' | '?' | ';' | ':')
}

/// Lowercased words of `text`, split on whitespace and `.,!?;:`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(is_separator)
        .filter(|w| !w.is_empty())
        .map(ToOwned::to_owned)
        .collect()
}

/// Canonical caption text: the tokenized words joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Bidirectional token/id map. Ids are contiguous from zero and the six
/// specials occupy ids `0..6` in [`SPECIALS`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from caption strings. Words seen at least
    /// `min_freq` times are kept, ordered by frequency (descending) and
    /// then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Self> {
        Self::build_with_extras(corpus, min_freq, core::iter::empty::<&str>())
    }

    /// Like [`Vocabulary::build`], then appends any `extras` (split into
    /// words) that did not make the frequency cut, in sorted order. Used to
    /// guarantee prompt labels and attribute names have ids.
    pub fn build_with_extras<S, I, E>(corpus: &[S], min_freq: usize, extras: I) -> Result<Self>
    where
        S: AsRef<str>,
        I: IntoIterator<Item = E>,
        E: AsRef<str>,
    {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if min_freq == 0 {
            return Err(Error::InvalidConfig("min_freq must be >= 1".into()));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for caption in corpus {
            for word in tokenize(caption.as_ref()) {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !SPECIALS.contains(&w.as_str()))
            .collect();
        // BTreeMap iteration is already lexicographic; a stable sort keeps it
        // as the tie-break.
        kept.sort_by_key(|k| core::cmp::Reverse(k.1));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(w, _)| w));

        let mut extra_words: Vec<String> = extras
            .into_iter()
            .flat_map(|e| tokenize(e.as_ref()))
            .collect();
        extra_words.sort();
        extra_words.dedup();
        let mut vocab = Self::from_tokens(tokens)?;
        for word in extra_words {
            if !vocab.index.contains_key(&word) {
                let id = vocab.tokens.len() as TokenId;
                vocab.index.insert(word.clone(), id);
                vocab.tokens.push(word);
            }
        }
        Ok(vocab)
    }

    /// Creates a vocabulary whose id `i` is `tokens[i]`. The first six
    /// tokens must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() {
            return Err(Error::InvalidVocabulary(format!(
                "expected at least {} tokens, got {}",
                SPECIALS.len(),
                tokens.len()
            )));
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(Error::InvalidVocabulary(format!(
                    "id {i} must be {special}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(['\t', '\n']) {
                return Err(Error::InvalidVocabulary(format!("bad token {t:?} at id {i}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word ids of `text` without BOS/EOS framing.
    pub fn encode_words(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|w| self.id_or_unk(w)).collect()
    }

    /// `[BOS, words..., EOS]`; out-of-vocabulary words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(8);
        ids.push(BOS_ID);
        ids.extend(self.encode_words(text));
        ids.push(EOS_ID);
        ids
    }

    /// Caption text for `ids`. A leading BOS is skipped, decoding stops at
    /// the first EOS, and PAD/OBJ/ATTR never reach the output. Ids outside
    /// the vocabulary render as UNK.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut words: Vec<&str> = Vec::new();
        for &id in ids {
            match id {
                BOS_ID | PAD_ID | OBJ_ID | ATTR_ID => continue,
                EOS_ID => break,
                _ => words.push(self.token(id).unwrap_or(UNK)),
            }
        }
        words.join(" ")
    }

    /// `<token>\t<id>\n` lines sorted by id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, id) = line.rsplit_once('\t').ok_or_else(|| {
                Error::InvalidVocabulary(format!("line {}: missing tab", line_no + 1))
            })?;
            let id: usize = id.trim().parse().map_err(|_| {
                Error::InvalidVocabulary(format!("line {}: bad id {id:?}", line_no + 1))
            })?;
            if id != tokens.len() {
                return Err(Error::InvalidVocabulary(format!(
                    "line {}: ids must be contiguous and sorted, expected {}, got {id}",
                    line_no + 1,
                    tokens.len()
                )));
            }
            tokens.push(token.to_owned());
        }
        Self::from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn frequency_threshold() {
        let v = Vocabulary::build(&["a cat", "a cat", "a dog"], 2).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("cat").is_some());
        assert!(v.id("dog").is_none());
        // "a" (3) before "cat" (2)
        assert_eq!(v.id("a"), Some(6));
        assert_eq!(v.id("cat"), Some(7));
    }

    #[test]
    fn singleton_corpus_round_trips_ids() {
        let v = Vocabulary::build(&["x"], 1).unwrap();
        assert_eq!(v.len(), 7);
        for id in 0..v.len() as TokenId {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as TokenId));
        }
        assert_eq!(v.id(PAD), Some(0));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 0] = [];
        assert_eq!(Vocabulary::build(&empty, 1), Err(Error::EmptyCorpus));
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocabulary::build(&["b a c", "c"], 1).unwrap();
        let words: Vec<&str> = v.tokens()[6..].iter().map(String::as_str).collect();
        assert_eq!(words, ["c", "a", "b"]);
    }

    #[test]
    fn encode_empty_string() {
        let v = Vocabulary::build(&["a cat"], 1).unwrap();
        assert_eq!(v.encode(""), vec![BOS_ID, EOS_ID]);
    }

    #[test]
    fn encode_strips_punctuation_and_case() {
        let v = Vocabulary::build(&["a cat"], 1).unwrap();
        assert_eq!(
            v.encode("A cat."),
            vec![BOS_ID, v.id("a").unwrap(), v.id("cat").unwrap(), EOS_ID]
        );
        assert_eq!(v.encode("a zebra")[2], UNK_ID);
    }

    #[test]
    fn decode_never_emits_structural_tokens() {
        let v = Vocabulary::build(&["a cat"], 1).unwrap();
        let cat = v.id("cat").unwrap();
        let text = v.decode(&[BOS_ID, OBJ_ID, cat, ATTR_ID, PAD_ID, EOS_ID, cat]);
        assert_eq!(text, "cat");
    }

    #[test]
    fn extras_are_appended_once() {
        let v = Vocabulary::build_with_extras(&["a cat", "a cat"], 2, ["sports ball", "cat"]).unwrap();
        assert_eq!(v.id("a"), Some(6));
        assert!(v.id("ball").unwrap() > v.id("cat").unwrap());
        assert!(v.id("sports").is_some());
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::build(&["a cat on a mat", "the dog"], 1).unwrap();
        let text = v.to_tsv();
        assert!(text.starts_with("[PAD]\t0\n[BOS]\t1\n"));
        assert_eq!(Vocabulary::from_tsv(&text).unwrap(), v);
    }

    #[test]
    fn from_tsv_rejects_gaps() {
        let text = "[PAD]\t0\n[BOS]\t1\n[EOS]\t2\n[UNK]\t3\n[OBJ]\t4\n[ATTR]\t5\ncat\t7\n";
        assert!(Vocabulary::from_tsv(text).is_err());
    }

    #[test]
    fn rejects_missing_specials() {
        assert!(Vocabulary::from_tokens(vec!["a".into(); 6]).is_err());
    }

    proptest! {
        #[test]
        fn in_vocab_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 0..12),
                               punct in proptest::collection::vec(prop_oneof![Just(" "), Just(". "), Just(", "), Just("! ")], 12)) {
            let mut text = String::new();
            for (w, p) in words.iter().zip(punct.iter()) {
                text.push_str(&w.to_uppercase());
                text.push_str(p);
            }
            let v = Vocabulary::build(&[text.as_str(), "filler"], 1).unwrap();
            prop_assert_eq!(v.decode(&v.encode(&text)), normalize(&text));
        }

        #[test]
        fn build_is_deterministic(corpus in proptest::collection::vec("[a-c ]{0,12}", 1..8), min in 1usize..3) {
            let a = Vocabulary::build(&corpus, min).unwrap();
            let b = Vocabulary::build(&corpus, min).unwrap();
            prop_assert_eq!(&a, &b);
            for id in 0..a.len() as TokenId {
                prop_assert_eq!(a.id(a.token(id).unwrap()), Some(id));
            }
        }
    }
}
