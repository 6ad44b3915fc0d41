use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;

/// Reserved entries at the start of every vocabulary, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<sep>"];

/// Whether unseen tokens extend the vocabulary or are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    Build,
    Frozen,
}

/// Bidirectional token <-> id map. Ids 0..4 are the reserved specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self::new()
    }
}

impl TokenVocab {
    pub fn new() -> Self {
        let mut v = TokenVocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in SPECIAL_TOKENS {
            v.push(t);
        }
        v
    }

    fn push(&mut self, token: &str) -> usize {
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Looks up `token`, inserting it in build mode.
    pub fn lookup(&mut self, token: &str, mode: VocabMode) -> Result<usize> {
        if let Some(id) = self.id(token) {
            return Ok(id);
        }
        match mode {
            VocabMode::Build => {
                if token.is_empty() || token.contains('\n') || token.contains('\r') {
                    return Err(Error::Config(format!("token {token:?} cannot be stored in a vocab file")));
                }
                Ok(self.push(token))
            }
            VocabMode::Frozen => Err(Error::OutOfVocabulary {
                token: token.to_string(),
            }),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id).map(str::to_string).ok_or_else(|| Error::OutOfVocabulary {
                    token: format!("#{id}"),
                })
            })
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.split('\n').collect();
        let lines = match lines.split_last() {
            Some((&"", rest)) => rest,
            _ => &lines[..],
        };
        if lines.len() < SPECIAL_TOKENS.len() || lines[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(Error::Config("vocab file must start with the reserved special tokens".into()));
        }
        let mut v = TokenVocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (n, line) in lines.iter().enumerate() {
            if v.index.contains_key(*line) {
                return Err(Error::Config(format!("duplicate token {line:?} on line {}", n + 1)));
            }
            v.push(line);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_text(&text)
    }
}
