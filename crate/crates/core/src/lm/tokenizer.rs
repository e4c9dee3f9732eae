//! Word-piece tokenizer with byte fallback.
//!
//! Text is split into alphanumeric runs and single punctuation characters.
//! A piece that follows whitespace (or starts the text) carries a leading
//! `▁`. Pieces missing from the vocabulary are emitted as the bare `▁`
//! marker (when they had one) followed by their UTF-8 bytes.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{GlimError, Result};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const BOS: u32 = 2;
pub const MASK: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "</s>", "<s>", "<mask>"];
const BYTE_BASE: u32 = 4;
const SPACE: char = '▁';

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        let mask = vec![true; ids.len()];
        TokenSeq { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Splits text into pieces, marking those preceded by whitespace.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut space_before = true;
    let mut current = String::new();
    let flush = |current: &mut String, out: &mut Vec<String>| {
        if !current.is_empty() {
            out.push(std::mem::take(current));
        }
    };
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut out);
            space_before = true;
        } else if ch.is_alphanumeric() {
            if current.is_empty() && space_before {
                current.push(SPACE);
            }
            current.push(ch);
            space_before = false;
        } else {
            flush(&mut current, &mut out);
            let mut p = String::new();
            if space_before {
                p.push(SPACE);
            }
            p.push(ch);
            out.push(p);
            space_before = false;
        }
    }
    flush(&mut current, &mut out);
    out
}

impl Tokenizer {
    /// Specials, the 256 byte tokens, the bare marker, then `pieces` in
    /// sorted order.
    pub fn from_pieces<I: IntoIterator<Item = String>>(pieces: I) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..=255u8).map(|b| format!("<0x{b:02X}>")));
        tokens.push(SPACE.to_string());
        let set: BTreeSet<String> = pieces.into_iter().filter(|p| !tokens.contains(p)).collect();
        tokens.extend(set);
        Self::from_tokens(tokens)
    }

    /// Vocabulary covering every piece of `texts`, with sentence-initial
    /// capitalized forms of each word added.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut pieces = BTreeSet::new();
        for t in texts {
            for variant in [t.to_string(), crate::synth::grammar::capitalize(t)] {
                for p in pre_tokenize(&variant) {
                    let cap: String = {
                        let mut c = p.chars();
                        match c.next() {
                            Some(SPACE) => {
                                let rest: String = c.collect();
                                format!("{SPACE}{}", crate::synth::grammar::capitalize(&rest))
                            }
                            _ => p.clone(),
                        }
                    };
                    pieces.insert(cap);
                    pieces.insert(p);
                }
            }
        }
        Self::from_pieces(pieces)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Tokenizer { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_byte(&self, id: u32) -> bool {
        (BYTE_BASE..BYTE_BASE + 256).contains(&id)
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::new();
        for piece in pre_tokenize(text) {
            if let Some(&id) = self.index.get(&piece) {
                ids.push(id);
                continue;
            }
            let body = match piece.strip_prefix(SPACE) {
                Some(rest) => {
                    ids.push(self.index[&SPACE.to_string()]);
                    rest
                }
                None => piece.as_str(),
            };
            ids.extend(body.bytes().map(|b| BYTE_BASE + b as u32));
        }
        TokenSeq::new(ids)
    }

    /// Inverse of `tokenize` up to whitespace normalization. Special tokens
    /// are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if (id as usize) < SPECIALS.len() || id as usize >= self.tokens.len() {
                continue;
            }
            if self.is_byte(id) {
                bytes.push((id - BYTE_BASE) as u8);
            } else {
                bytes.extend(self.tokens[id as usize].replace(SPACE, " ").into_bytes());
            }
        }
        String::from_utf8_lossy(&bytes).trim().to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let expected_prefix = SPECIALS.len() + 257;
        if tokens.len() < expected_prefix || tokens[..4] != SPECIALS || tokens[BYTE_BASE as usize + 256] != SPACE.to_string() {
            return Err(GlimError::format(0, "vocabulary file lacks the special/byte prefix"));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> Tokenizer {
        Tokenizer::from_texts(["he was a man.", "the film is great"])
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(tok().tokenize("").is_empty());
    }

    #[test]
    fn round_trip_known_and_unknown_text() {
        let t = tok();
        for s in ["He was a man.", "  the   film is   GREAT, naïve 東京! ", "x-y (z)"] {
            let ids = t.tokenize(s).ids;
            let norm: String = s.split_whitespace().collect::<Vec<_>>().join(" ");
            assert_eq!(t.detokenize(&ids), norm);
        }
        let ids = t.tokenize("He was a man.").ids;
        assert!(ids.iter().all(|&i| !t.is_byte(i)));
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn vocabulary_file_round_trips() {
        let t = tok();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        t.save(&p).unwrap();
        assert_eq!(Tokenizer::load(&p).unwrap(), t);
        fs::write(&p, "a\nb\n").unwrap();
        assert!(Tokenizer::load(&p).is_err());
    }

    #[test]
    fn pieces_mark_word_starts() {
        assert_eq!(pre_tokenize("Hi, you."), vec!["▁Hi", ",", "▁you", "."]);
    }
}
