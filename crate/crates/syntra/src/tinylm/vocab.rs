//! Closed word-level vocabulary with exact round-trip tokenization.
//!
//! Reserved symbols get fixed low ids; every other token is a whole word
//! (any run of characters without space, newline or comma). Spaces,
//! newlines and commas are tokens of their own, so `decode(encode(s)) == s`
//! for any string over the vocabulary.

use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const NEWLINE: TokenId = 3;
pub const COMMA: TokenId = 4;
pub const SPACE: TokenId = 5;
pub const ROLE_SYSTEM: TokenId = 6;
pub const ROLE_HUMAN: TokenId = 7;
pub const ROLE_ASSISTANT: TokenId = 8;
/// Number of reserved ids; word ids start here.
pub const RESERVED: usize = 9;

pub const ROLE_SYSTEM_TEXT: &str = "### System:";
pub const ROLE_HUMAN_TEXT: &str = "### Human:";
pub const ROLE_ASSISTANT_TEXT: &str = "### Assistant:";

/// Sentinel spellings used in the one-token-per-line vocab file, where the
/// raw surfaces (a space, a newline) could not be stored literally.
const SENTINELS: [&str; RESERVED] = [
    "<pad>",
    "<bos>",
    "<eos>",
    "<newline>",
    "<comma>",
    "<space>",
    "<sys>",
    "<human>",
    "<assistant>",
];

#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    ids: BTreeMap<String, TokenId>,
}

impl Vocab {
    /// Build a vocabulary from a word list. Words are deduplicated and
    /// sorted, so the id assignment depends only on the set.
    pub fn build<I, S>(words: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set: Vec<String> = words.into_iter().map(Into::into).collect();
        set.sort();
        set.dedup();
        let mut ids = BTreeMap::new();
        for (i, w) in set.iter().enumerate() {
            if w.is_empty() || w.chars().any(|c| c == ' ' || c == '\n' || c == ',') {
                return Err(Error::Config(format!(
                    "vocabulary word {w:?} is empty or contains a delimiter"
                )));
            }
            if SENTINELS.contains(&w.as_str()) {
                return Err(Error::Config(format!("word {w:?} collides with a reserved sentinel")));
            }
            ids.insert(w.clone(), RESERVED + i);
        }
        Ok(Vocab { words: set, ids })
    }

    pub fn len(&self) -> usize {
        RESERVED + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    /// Surface form of a token id, as it appears in decoded text.
    /// PAD/BOS/EOS decode to the empty string.
    pub fn surface(&self, id: TokenId) -> Result<&str> {
        match id {
            PAD | BOS | EOS => Ok(""),
            NEWLINE => Ok("\n"),
            COMMA => Ok(","),
            SPACE => Ok(" "),
            ROLE_SYSTEM => Ok(ROLE_SYSTEM_TEXT),
            ROLE_HUMAN => Ok(ROLE_HUMAN_TEXT),
            ROLE_ASSISTANT => Ok(ROLE_ASSISTANT_TEXT),
            _ => self
                .words
                .get(id - RESERVED)
                .map(String::as_str)
                .ok_or_else(|| Error::Index(format!("token id {id} outside vocab of {}", self.len()))),
        }
    }

    /// Deterministic word-level tokenization. Role markers are matched
    /// first, then single-character symbols, then whole words.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some(tail) = rest.strip_prefix(ROLE_SYSTEM_TEXT) {
                out.push(ROLE_SYSTEM);
                rest = tail;
                continue;
            }
            if let Some(tail) = rest.strip_prefix(ROLE_HUMAN_TEXT) {
                out.push(ROLE_HUMAN);
                rest = tail;
                continue;
            }
            if let Some(tail) = rest.strip_prefix(ROLE_ASSISTANT_TEXT) {
                out.push(ROLE_ASSISTANT);
                rest = tail;
                continue;
            }
            let c = rest.chars().next().unwrap();
            match c {
                ' ' => {
                    out.push(SPACE);
                    rest = &rest[1..];
                }
                '\n' => {
                    out.push(NEWLINE);
                    rest = &rest[1..];
                }
                ',' => {
                    out.push(COMMA);
                    rest = &rest[1..];
                }
                _ => {
                    let end = rest
                        .find(|c| c == ' ' || c == '\n' || c == ',')
                        .unwrap_or(rest.len());
                    let word = &rest[..end];
                    match self.word_id(word) {
                        Some(id) => out.push(id),
                        None => return Err(Error::Vocabulary { word: word.to_string() }),
                    }
                    rest = &rest[end..];
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let _ = write!(out, "{}", self.surface(id)?);
        }
        Ok(out)
    }

    /// One token per line, line number = id. Reserved symbols are written
    /// as their sentinel spellings.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for s in SENTINELS {
            body.push_str(s);
            body.push('\n');
        }
        for w in &self.words {
            body.push_str(w);
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = body.lines();
        for (i, expected) in SENTINELS.iter().enumerate() {
            match lines.next() {
                Some(l) if l == *expected => {}
                other => {
                    return Err(Error::Parse {
                        location: format!("{}:{}", path.display(), i + 1),
                        message: format!("expected reserved token {expected:?}, found {other:?}"),
                    })
                }
            }
        }
        let words: Vec<String> = lines.map(str::to_string).collect();
        // Preserve file order exactly: ids are line numbers.
        let mut ids = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), RESERVED + i).is_some() {
                return Err(Error::Parse {
                    location: format!("{}:{}", path.display(), RESERVED + i + 1),
                    message: format!("duplicate vocabulary word {w:?}"),
                });
            }
        }
        Ok(Vocab { words, ids })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["Alice", "Brown", "hello", "world.", "5", "E"]).unwrap()
    }

    #[test]
    fn empty_string_encodes_to_nothing() {
        assert!(vocab().encode("").unwrap().is_empty());
    }

    #[test]
    fn words_split_on_space() {
        let v = vocab();
        let ids = v.encode("Alice Brown").unwrap();
        assert_eq!(ids, vec![v.word_id("Alice").unwrap(), SPACE, v.word_id("Brown").unwrap()]);
    }

    #[test]
    fn role_markers_are_single_tokens() {
        let v = vocab();
        let ids = v.encode("### System: hello\n### Assistant:").unwrap();
        assert_eq!(ids[0], ROLE_SYSTEM);
        assert_eq!(*ids.last().unwrap(), ROLE_ASSISTANT);
        assert_eq!(v.decode(&ids).unwrap(), "### System: hello\n### Assistant:");
    }

    #[test]
    fn out_of_vocab_word_is_named() {
        let err = vocab().encode("Alice Smith").unwrap_err();
        match err {
            Error::Vocabulary { word } => assert_eq!(word, "Smith"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn round_trips_with_symbols() {
        let v = vocab();
        for s in ["hello, world.", "Alice Brown,Alice", "E\n\nhello", " 5 ", ""] {
            let ids = v.encode(s).unwrap();
            assert_eq!(v.decode(&ids).unwrap(), s);
        }
    }

    #[test]
    fn save_load_preserves_ids() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.len(), v.len());
        for w in ["Alice", "world.", "5"] {
            assert_eq!(loaded.word_id(w), v.word_id(w));
        }
    }
}
