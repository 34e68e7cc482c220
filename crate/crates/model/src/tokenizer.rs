//! Word, byte, and BPE tokenizers behind one interface.
//!
//! Word mode splits text into alphanumeric runs and single punctuation
//! characters and looks each piece up in the vocabulary. Byte mode maps
//! UTF-8 bytes to ids 0..256 and round-trips exactly. BPE mode starts from
//! characters within each word-mode piece and applies an ordered merge
//! list, then resolves the merged symbols against the vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Word,
    Byte,
    Bpe,
}

/// On-disk form of `tokenizer.json`.
#[derive(Debug, Serialize, Deserialize)]
struct TokenizerFile {
    mode: TokenizerMode,
    #[serde(default)]
    vocab: HashMap<String, u32>,
    #[serde(default)]
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    mode: TokenizerMode,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    /// Merge pair -> priority (lower merges first). BPE only.
    merge_rank: HashMap<(String, String), usize>,
    merges: Vec<(String, String)>,
}

/// Split text into word-mode pieces: maximal runs of alphanumerics
/// (plus `_` and `'`), or single non-whitespace punctuation characters.
pub fn word_split(text: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' || ch == '\'' {
            current.push(ch);
        } else {
            if !current.is_empty() {
                pieces.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                pieces.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

impl Tokenizer {
    pub fn byte() -> Self {
        Tokenizer {
            mode: TokenizerMode::Byte,
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            merge_rank: HashMap::new(),
            merges: Vec::new(),
        }
    }

    pub fn word(vocab: HashMap<String, u32>) -> Result<Self> {
        Self::from_parts(TokenizerMode::Word, vocab, Vec::new())
    }

    pub fn bpe(vocab: HashMap<String, u32>, merges: Vec<(String, String)>) -> Result<Self> {
        Self::from_parts(TokenizerMode::Bpe, vocab, merges)
    }

    fn from_parts(
        mode: TokenizerMode,
        vocab: HashMap<String, u32>,
        merges: Vec<(String, String)>,
    ) -> Result<Self> {
        if mode == TokenizerMode::Byte {
            return Ok(Self::byte());
        }
        if vocab.is_empty() {
            return Err(ModelError::Tokenizer("vocab must be non-empty".into()));
        }
        // Ids must be dense in [0, len).
        let mut id_to_token = vec![String::new(); vocab.len()];
        let mut seen = vec![false; vocab.len()];
        for (tok, &id) in &vocab {
            let idx = id as usize;
            if idx >= vocab.len() || seen[idx] {
                return Err(ModelError::Tokenizer(format!(
                    "vocab ids must be dense and unique; bad id {id} for `{tok}`"
                )));
            }
            seen[idx] = true;
            id_to_token[idx] = tok.clone();
        }
        let merge_rank = merges
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, pair)| (pair, i))
            .collect();
        Ok(Tokenizer {
            mode,
            token_to_id: vocab,
            id_to_token,
            merge_rank,
            merges,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(json)
            .map_err(|e| ModelError::Tokenizer(format!("invalid tokenizer json: {e}")))?;
        Self::from_parts(file.mode, file.vocab, file.merges)
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            mode: self.mode,
            vocab: self.token_to_id.clone(),
            merges: self.merges.clone(),
        };
        serde_json::to_string_pretty(&file).unwrap()
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    /// Number of ids this tokenizer can produce.
    pub fn vocab_size(&self) -> usize {
        match self.mode {
            TokenizerMode::Byte => 256,
            _ => self.id_to_token.len(),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        match self.mode {
            TokenizerMode::Byte => Ok(text.bytes().map(u32::from).collect()),
            TokenizerMode::Word => word_split(text)
                .into_iter()
                .map(|piece| {
                    self.token_to_id
                        .get(&piece)
                        .copied()
                        .ok_or(ModelError::UnknownToken { token: piece })
                })
                .collect(),
            TokenizerMode::Bpe => {
                let mut ids = Vec::new();
                for piece in word_split(text) {
                    for symbol in self.bpe_symbols(&piece) {
                        let id = self
                            .token_to_id
                            .get(&symbol)
                            .copied()
                            .ok_or(ModelError::UnknownToken { token: symbol })?;
                        ids.push(id);
                    }
                }
                Ok(ids)
            }
        }
    }

    /// Apply the merge list to one piece, lowest-rank merge first.
    fn bpe_symbols(&self, piece: &str) -> Vec<String> {
        let mut symbols: Vec<String> = piece.chars().map(|c| c.to_string()).collect();
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len().saturating_sub(1) {
                let pair = (symbols[i].clone(), symbols[i + 1].clone());
                if let Some(&rank) = self.merge_rank.get(&pair) {
                    if best.is_none_or(|(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let merged = format!("{}{}", symbols[i], symbols[i + 1]);
                    symbols[i] = merged;
                    symbols.remove(i + 1);
                }
                None => break,
            }
        }
        symbols
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        match self.mode {
            TokenizerMode::Byte => {
                let bytes: Vec<u8> = ids
                    .iter()
                    .map(|&id| {
                        u8::try_from(id).map_err(|_| ModelError::Index {
                            what: "byte token",
                            index: id as usize,
                            max: 255,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(String::from_utf8_lossy(&bytes).into_owned())
            }
            TokenizerMode::Word => {
                let toks = self.lookup_tokens(ids)?;
                Ok(toks.join(" "))
            }
            TokenizerMode::Bpe => {
                let toks = self.lookup_tokens(ids)?;
                Ok(toks.concat())
            }
        }
    }

    fn lookup_tokens(&self, ids: &[u32]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&id| {
                self.id_to_token
                    .get(id as usize)
                    .map(String::as_str)
                    .ok_or(ModelError::Index {
                        what: "token id",
                        index: id as usize,
                        max: self.id_to_token.len().saturating_sub(1),
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word_vocab() -> HashMap<String, u32> {
        [("I", 0u32), ("like", 1), ("Stephen", 2), ("King", 3)]
            .into_iter()
            .map(|(s, i)| (s.to_string(), i))
            .collect()
    }

    #[test]
    fn word_mode_direct_lookup() {
        let t = Tokenizer::word(word_vocab()).unwrap();
        assert_eq!(t.encode("I like Stephen King").unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn word_mode_unknown_token() {
        let t = Tokenizer::word(word_vocab()).unwrap();
        match t.encode("zzz") {
            Err(ModelError::UnknownToken { token }) => assert_eq!(token, "zzz"),
            other => panic!("expected unknown-token error, got {other:?}"),
        }
    }

    #[test]
    fn byte_mode_identity() {
        let t = Tokenizer::byte();
        assert_eq!(t.encode("AB").unwrap(), vec![65, 66]);
        assert_eq!(t.decode(&[65, 66]).unwrap(), "AB");
    }

    #[test]
    fn word_split_separates_punctuation() {
        assert_eq!(word_split("Tell me about alpha."), vec![
            "Tell", "me", "about", "alpha", "."
        ]);
        assert_eq!(word_split("A) paris"), vec!["A", ")", "paris"]);
    }

    #[test]
    fn sparse_vocab_ids_rejected() {
        let mut v = word_vocab();
        v.insert("gap".into(), 9);
        assert!(Tokenizer::word(v).is_err());
    }

    #[test]
    fn bpe_applies_merges_in_order() {
        let vocab: HashMap<String, u32> = [("a", 0u32), ("b", 1), ("c", 2), ("ab", 3), ("abc", 4)]
            .into_iter()
            .map(|(s, i)| (s.to_string(), i))
            .collect();
        let merges = vec![
            ("a".to_string(), "b".to_string()),
            ("ab".to_string(), "c".to_string()),
        ];
        let t = Tokenizer::bpe(vocab, merges).unwrap();
        assert_eq!(t.encode("abc").unwrap(), vec![4]);
        assert_eq!(t.encode("ab").unwrap(), vec![3]);
        assert_eq!(t.encode("cab").unwrap(), vec![2, 3]);
        assert_eq!(t.decode(&[2, 3]).unwrap(), "cab");
    }

    #[test]
    fn tokenizer_json_round_trip() {
        let t = Tokenizer::word(word_vocab()).unwrap();
        let back = Tokenizer::from_json(&t.to_json()).unwrap();
        assert_eq!(back.encode("Stephen King").unwrap(), vec![2, 3]);
    }
}
