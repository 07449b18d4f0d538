//! Token vocabulary: dense ids, four special tokens, glyph rendering.
//!
//! Convention: ids 0..=9 are the digits '0'..'9' (arithmetic tasks rely on
//! this), further non-special ids render as letters starting at 'a', and the
//! four special tokens render as '<' (BOS), '>' (EOS), '_' (PAD), '|' (SEP).

use crate::error::{Error, Result};

/// Token id. Always less than the vocabulary size.
pub type TokenId = u32;

/// A dense vocabulary with BOS/EOS/PAD/SEP special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
    bos: TokenId,
    eos: TokenId,
    pad: TokenId,
    sep: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary, checking that the specials are distinct, in
    /// range, and do not collide with the digit ids 0..=9.
    pub fn new(size: usize, bos: TokenId, eos: TokenId, pad: TokenId, sep: TokenId) -> Result<Self> {
        let specials = [bos, eos, pad, sep];
        for &s in &specials {
            if (s as usize) >= size {
                return Err(Error::TokenOutOfRange { id: s, vocab: size });
            }
            if s < 10 {
                return Err(Error::InvalidConfig(format!(
                    "special token id {s} collides with the digit ids 0..=9"
                )));
            }
        }
        for i in 0..specials.len() {
            for j in (i + 1)..specials.len() {
                if specials[i] == specials[j] {
                    return Err(Error::InvalidConfig(format!(
                        "special token ids must be distinct, got {specials:?}"
                    )));
                }
            }
        }
        Ok(Vocabulary { size, bos, eos, pad, sep })
    }

    /// The default 20-token vocabulary: digits 0-9, letters a-f (ids 10..=15),
    /// BOS=16, EOS=17, PAD=18, SEP=19.
    pub fn default_small() -> Self {
        Vocabulary::new(20, 16, 17, 18, 19).expect("default vocabulary is valid")
    }

    pub fn size(&self) -> usize {
        self.size
    }
    pub fn bos(&self) -> TokenId {
        self.bos
    }
    pub fn eos(&self) -> TokenId {
        self.eos
    }
    pub fn pad(&self) -> TokenId {
        self.pad
    }
    pub fn sep(&self) -> TokenId {
        self.sep
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.bos || id == self.eos || id == self.pad || id == self.sep
    }

    /// Non-special ids, in ascending order; the payload alphabet for tasks.
    pub fn payload_ids(&self) -> Vec<TokenId> {
        (0..self.size as TokenId).filter(|&t| !self.is_special(t)).collect()
    }

    /// True when `id` is a digit token (value 0..=9).
    pub fn is_digit(&self, id: TokenId) -> bool {
        id < 10
    }

    /// The digit token for `value` in 0..=9.
    pub fn digit(&self, value: u32) -> TokenId {
        debug_assert!(value < 10);
        value as TokenId
    }

    /// Single-character rendering of a token, used in logs and the step
    /// classifier input.
    pub fn glyph(&self, id: TokenId) -> char {
        if id == self.bos {
            '<'
        } else if id == self.eos {
            '>'
        } else if id == self.pad {
            '_'
        } else if id == self.sep {
            '|'
        } else if id < 10 {
            (b'0' + id as u8) as char
        } else {
            // Letters continue after the digits; clamp pathological sizes.
            let off = id - 10;
            if off < 26 {
                (b'a' + off as u8) as char
            } else {
                '?'
            }
        }
    }

    /// Renders a token sequence as one glyph per token.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.glyph(t)).collect()
    }

    /// Errors unless every id is within the vocabulary.
    pub fn check_ids(&self, tokens: &[TokenId]) -> Result<()> {
        for &t in tokens {
            if (t as usize) >= self.size {
                return Err(Error::TokenOutOfRange { id: t, vocab: self.size });
            }
        }
        Ok(())
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::default_small()
    }
}
