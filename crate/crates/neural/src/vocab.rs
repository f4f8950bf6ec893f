//! Word-level vocabulary and the `[CLS] context [SEP] query [SEP]` layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use unifier_core::ruleworld::{split_words, Lexicon};

use crate::NeuralError;

pub const CLS: u32 = 0;
pub const SEP: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[CLS]", "[SEP]", "[PAD]", "[UNK]"];

pub const CONTEXT_SEGMENT: u8 = 0;
pub const QUERY_SEGMENT: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, NeuralError> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(NeuralError::Vocab("special tokens must occupy ids 0..3".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(NeuralError::Vocab(format!("bad token `{t}` on line {}", i + 1)));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(NeuralError::Vocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials followed by the lexicon's word inventory.
    pub fn from_lexicon(lexicon: &Lexicon) -> Self {
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(lexicon.word_inventory())
            .collect();
        Self::from_tokens(tokens).expect("lexicon words are plain tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        fs::write(path, self.to_text()).map_err(|e| NeuralError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let text = fs::read_to_string(path).map_err(|e| NeuralError::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// One encoder input. `mask[i] == 0` marks padding that no position may
/// attend to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub mask: Vec<u8>,
    /// Half-open range of the query words.
    pub query_span: (usize, usize),
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Append `[PAD]` up to `len` positions.
    pub fn pad_to(&mut self, len: usize) {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.segments.push(CONTEXT_SEGMENT);
            self.mask.push(0);
        }
    }
}

pub fn tokenize(context: &str, query: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq, NeuralError> {
    let context_words = split_words(context);
    let query_words = split_words(query);
    if query_words.is_empty() {
        return Err(NeuralError::Input("empty query".into()));
    }
    let len = context_words.len() + query_words.len() + 3;
    if len > max_len {
        return Err(NeuralError::Length { len, max_len });
    }
    let mut ids = Vec::with_capacity(len);
    let mut segments = Vec::with_capacity(len);
    ids.push(CLS);
    segments.push(CONTEXT_SEGMENT);
    for w in &context_words {
        ids.push(vocab.id(w));
        segments.push(CONTEXT_SEGMENT);
    }
    ids.push(SEP);
    segments.push(CONTEXT_SEGMENT);
    let start = ids.len();
    for w in &query_words {
        ids.push(vocab.id(w));
        segments.push(QUERY_SEGMENT);
    }
    let end = ids.len();
    ids.push(SEP);
    segments.push(QUERY_SEGMENT);
    Ok(TokenSeq {
        mask: vec![1; ids.len()],
        ids,
        segments,
        query_span: (start, end),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_lexicon(&Lexicon::default())
    }

    fn words(v: &Vocab, s: &TokenSeq) -> Vec<String> {
        s.ids.iter().map(|i| v.token(*i).unwrap().to_string()).collect()
    }

    #[test]
    fn layout_of_a_fact_check() {
        let v = vocab();
        let s = tokenize("Bob is big.", "Bob is big?", &v, 64).unwrap();
        assert_eq!(words(&v, &s).join(" "), "[CLS] bob is big . [SEP] bob is big ? [SEP]");
        assert_eq!(s.query_span, (6, 10));
        assert_eq!(s.segments, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn empty_context_and_unknown_words() {
        let v = vocab();
        let s = tokenize("", "Zed is big?", &v, 64).unwrap();
        assert_eq!(words(&v, &s).join(" "), "[CLS] [SEP] [UNK] is big ? [SEP]");
    }

    #[test]
    fn overflow_is_an_error() {
        let v = vocab();
        assert!(matches!(
            tokenize("Bob is big.", "Bob is big?", &v, 10),
            Err(NeuralError::Length { len: 11, max_len: 10 })
        ));
    }

    #[test]
    fn every_template_word_is_known() {
        let lex = Lexicon::default();
        let v = Vocab::from_lexicon(&lex);
        for w in lex.word_inventory() {
            assert_ne!(v.id(&w), UNK, "{w}");
        }
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
