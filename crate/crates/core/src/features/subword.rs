//! Subword sequences for transformer encoders.
//!
//! Two tokenizer backends sit behind [`SubwordTokenizer`]: a WordPiece
//! implementation (used for BERT-style `vocab.txt` files and for the seeded
//! test encoders, whose vocabulary is built from training text) and a
//! `tokenizer.json` backend for sentencepiece-style checkpoints.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory as Gc};

use crate::error::{Error, Result};

/// Architectural cap on encoder input length.
pub const MAX_SEQUENCE_LENGTH: usize = 512;
pub const DEFAULT_MAX_LEN: usize = 128;

/// Encoder input: ids and attention mask, padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    /// Padded length (|ids| = |mask|).
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub cls: u32,
    pub sep: u32,
    pub pad: u32,
    pub unk: u32,
}

/// Greedy longest-match-first WordPiece over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct WordPiece {
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    lowercase: bool,
    unk: u32,
}

const MAX_WORD_CHARS: usize = 100;
const CONTINUATION: &str = "##";

impl WordPiece {
    pub fn new(vocab: Vec<String>, lowercase: bool) -> Result<Self> {
        let mut ids = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            ids.entry(tok.clone()).or_insert(i as u32);
        }
        let unk = *ids
            .get("[UNK]")
            .ok_or_else(|| Error::Tokenizer("vocabulary has no [UNK] token".into()))?;
        Ok(Self { vocab, ids, lowercase, unk })
    }

    /// Builds a vocabulary from raw sentences: the four BERT special tokens,
    /// every observed character (word-initial and `##` continuation), then
    /// whole words by descending frequency until `max_size` entries.
    pub fn from_corpus<S: AsRef<str>>(texts: &[S], max_size: usize, lowercase: bool) -> Result<Self> {
        let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut word_counts: HashMap<String, usize> = HashMap::new();
        let mut chars = std::collections::BTreeSet::new();
        for t in texts {
            for w in pre_tokenize(t.as_ref(), lowercase) {
                chars.extend(w.chars());
                *word_counts.entry(w).or_insert(0) += 1;
            }
        }
        for c in &chars {
            vocab.push(c.to_string());
            vocab.push(format!("{CONTINUATION}{c}"));
        }
        let mut words: Vec<(String, usize)> = word_counts
            .into_iter()
            .filter(|(w, _)| w.chars().count() > 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in words {
            if vocab.len() >= max_size {
                break;
            }
            vocab.push(w);
        }
        Self::new(vocab, lowercase)
    }

    /// Reads a one-token-per-line `vocab.txt`.
    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text.lines().map(str::to_string).collect(), lowercase)
    }

    pub fn save_vocab(&self, path: &Path) -> Result<()> {
        let mut text = self.vocab.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Subword ids without special tokens.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in pre_tokenize(text, self.lowercase) {
            self.word_pieces(&word, &mut out);
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, CONTINUATION);
                }
                if let Some(&id) = self.ids.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            get_general_category(c),
            Gc::ConnectorPunctuation
                | Gc::DashPunctuation
                | Gc::OpenPunctuation
                | Gc::ClosePunctuation
                | Gc::InitialPunctuation
                | Gc::FinalPunctuation
                | Gc::OtherPunctuation
        )
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// BERT-style basic tokenization: whitespace split, punctuation and CJK
/// characters become standalone tokens, control characters dropped.
fn pre_tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, words: &mut Vec<String>| {
        if !current.is_empty() {
            words.push(std::mem::take(current));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, &mut words);
        } else if c == '\u{0}' || c == '\u{FFFD}' || (c.is_control()) {
            continue;
        } else if is_punctuation(c) || is_cjk(c) {
            flush(&mut current, &mut words);
            words.push(c.to_string());
        } else if lowercase {
            current.extend(c.to_lowercase());
        } else {
            current.push(c);
        }
    }
    flush(&mut current, &mut words);
    words
}

#[derive(Debug, Clone)]
enum Backend {
    WordPiece(WordPiece),
    Pretrained(Box<tokenizers::Tokenizer>),
}

/// Loaded subword tokenizer with its special-token convention.
#[derive(Debug, Clone)]
pub struct SubwordTokenizer {
    backend: Backend,
    specials: SpecialTokens,
}

impl SubwordTokenizer {
    pub fn from_wordpiece(wp: WordPiece) -> Result<Self> {
        let get = |t: &str| {
            wp.token_id(t)
                .ok_or_else(|| Error::Tokenizer(format!("vocabulary has no {t} token")))
        };
        let specials = SpecialTokens {
            cls: get("[CLS]")?,
            sep: get("[SEP]")?,
            pad: get("[PAD]")?,
            unk: get("[UNK]")?,
        };
        Ok(Self {
            backend: Backend::WordPiece(wp),
            specials,
        })
    }

    /// Loads a `tokenizer.json`. Special tokens are looked up under the
    /// sentencepiece names (`<s>`, `</s>`, `<pad>`, `<unk>`) first, then BERT's.
    pub fn from_tokenizer_json(path: &Path) -> Result<Self> {
        let tok = tokenizers::Tokenizer::from_file(path)
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", path.display())))?;
        let find = |names: [&str; 2]| {
            names
                .iter()
                .find_map(|n| tok.token_to_id(n))
                .ok_or_else(|| Error::Tokenizer(format!("{}: no {} token", path.display(), names[0])))
        };
        let specials = SpecialTokens {
            cls: find(["<s>", "[CLS]"])?,
            sep: find(["</s>", "[SEP]"])?,
            pad: find(["<pad>", "[PAD]"])?,
            unk: find(["<unk>", "[UNK]"])?,
        };
        Ok(Self {
            backend: Backend::Pretrained(Box::new(tok)),
            specials,
        })
    }

    pub fn specials(&self) -> SpecialTokens {
        self.specials
    }

    pub fn vocab_size(&self) -> usize {
        match &self.backend {
            Backend::WordPiece(wp) => wp.vocab_size(),
            Backend::Pretrained(t) => t.get_vocab_size(true),
        }
    }

    pub fn as_wordpiece(&self) -> Option<&WordPiece> {
        match &self.backend {
            Backend::WordPiece(wp) => Some(wp),
            Backend::Pretrained(_) => None,
        }
    }

    pub fn as_pretrained(&self) -> Option<&tokenizers::Tokenizer> {
        match &self.backend {
            Backend::Pretrained(t) => Some(t),
            Backend::WordPiece(_) => None,
        }
    }

    /// Subword ids without special tokens.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        match &self.backend {
            Backend::WordPiece(wp) => Ok(wp.tokenize(text)),
            Backend::Pretrained(t) => t
                .encode(text, false)
                .map(|enc| enc.get_ids().to_vec())
                .map_err(|e| Error::Tokenizer(e.to_string())),
        }
    }
}

/// `[CLS] subwords… [SEP]`, truncated to `max_len` (keeping both special
/// positions) and right-padded with mask 0 up to `max_len`.
pub fn encode_subwords(text: &str, tokenizer: &SubwordTokenizer, max_len: usize) -> Result<TokenSequence> {
    if !(2..=MAX_SEQUENCE_LENGTH).contains(&max_len) {
        return Err(Error::invalid(format!(
            "max_len must lie in [2, {MAX_SEQUENCE_LENGTH}], got {max_len}"
        )));
    }
    let sp = tokenizer.specials();
    let mut body = tokenizer.tokenize(text)?;
    body.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(sp.cls);
    ids.extend(body);
    ids.push(sp.sep);
    let mut mask = vec![1u8; ids.len()];
    ids.resize(max_len, sp.pad);
    mask.resize(max_len, 0);
    Ok(TokenSequence { ids, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> SubwordTokenizer {
        let wp = WordPiece::from_corpus(&["binary search tree", "search engines index"], 1000, true).unwrap();
        SubwordTokenizer::from_wordpiece(wp).unwrap()
    }

    #[test]
    fn empty_text_is_two_specials_plus_padding() {
        let t = tok();
        let s = encode_subwords("", &t, 8).unwrap();
        let sp = t.specials();
        assert_eq!(s.ids[..2], [sp.cls, sp.sep]);
        assert!(s.ids[2..].iter().all(|&i| i == sp.pad));
        assert_eq!(s.mask, [1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(s.real_len(), 2);
    }

    #[test]
    fn truncation_keeps_separator() {
        let t = tok();
        let long = "binary search tree ".repeat(20);
        let s = encode_subwords(&long, &t, 10).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(s.real_len(), 10);
        assert_eq!(s.ids[0], t.specials().cls);
        assert_eq!(s.ids[9], t.specials().sep);
    }

    #[test]
    fn max_len_bounds() {
        let t = tok();
        assert!(encode_subwords("x", &t, 513).is_err());
        assert!(encode_subwords("x", &t, 1).is_err());
        assert_eq!(encode_subwords("x", &t, 512).unwrap().len(), 512);
    }

    #[test]
    fn wordpiece_splits_unknown_words_into_characters() {
        let t = tok();
        let wp = t.as_wordpiece().unwrap();
        let ids = wp.tokenize("Searches");
        let pieces: Vec<&str> = ids.iter().map(|&i| wp.token(i).unwrap()).collect();
        assert_eq!(pieces.concat().replace("##", ""), "searches");
        assert_eq!(pieces[0], "search");
        // unseen character → [UNK]
        assert_eq!(wp.tokenize("ß"), vec![wp.token_id("[UNK]").unwrap()]);
    }

    #[test]
    fn pre_tokenize_splits_punctuation() {
        assert_eq!(pre_tokenize("Hello, World!", false), ["Hello", ",", "World", "!"]);
        assert_eq!(pre_tokenize("a\u{7}b", true), ["ab"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let t = tok();
        let wp = t.as_wordpiece().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        wp.save_vocab(&p).unwrap();
        let back = WordPiece::from_vocab_file(&p, true).unwrap();
        assert_eq!(back.tokenize("binary trees"), wp.tokenize("binary trees"));
    }
}
