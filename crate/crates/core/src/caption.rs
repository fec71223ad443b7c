//! Fixed caption vocabulary shared by the generator, the denoiser's token
//! table and the scene files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
}

/// Saturated object colours; the background never uses them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorKey {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl ColorKey {
    pub const ALL: [ColorKey; 6] = [
        ColorKey::Red,
        ColorKey::Green,
        ColorKey::Blue,
        ColorKey::Yellow,
        ColorKey::Magenta,
        ColorKey::Cyan,
    ];

    pub fn rgb(self) -> [f32; 3] {
        match self {
            ColorKey::Red => [0.95, 0.1, 0.1],
            ColorKey::Green => [0.1, 0.9, 0.1],
            ColorKey::Blue => [0.1, 0.2, 0.95],
            ColorKey::Yellow => [0.95, 0.9, 0.1],
            ColorKey::Magenta => [0.9, 0.1, 0.9],
            ColorKey::Cyan => [0.1, 0.9, 0.95],
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            ColorKey::Red => "red",
            ColorKey::Green => "green",
            ColorKey::Blue => "blue",
            ColorKey::Yellow => "yellow",
            ColorKey::Magenta => "magenta",
            ColorKey::Cyan => "cyan",
        }
    }
}

pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const BACKGROUND: &str = "background";

/// Vocabulary in token-id order.
pub const VOCAB: [&str; 12] = [
    SOS,
    EOS,
    BACKGROUND,
    "circle",
    "square",
    "triangle",
    "red",
    "green",
    "blue",
    "yellow",
    "magenta",
    "cyan",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub usize);

impl TokenId {
    pub const SOS: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const BACKGROUND: TokenId = TokenId(2);

    pub fn word(self) -> &'static str {
        VOCAB[self.0]
    }

    pub fn is_boundary(self) -> bool {
        self == Self::SOS || self == Self::EOS
    }
}

impl FromStr for TokenId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VOCAB
            .iter()
            .position(|w| *w == s)
            .map(TokenId)
            .ok_or_else(|| Error::invalid(format!("unknown caption word {s:?}")))
    }
}

impl From<ShapeKind> for TokenId {
    fn from(s: ShapeKind) -> Self {
        s.word().parse().expect("shape words are in the vocabulary")
    }
}

impl From<ColorKey> for TokenId {
    fn from(c: ColorKey) -> Self {
        c.word().parse().expect("colour words are in the vocabulary")
    }
}

/// Token sequence framed by `<sos>` and `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Caption {
    tokens: Vec<TokenId>,
}

impl Caption {
    /// The empty caption used for the unconditional branch.
    pub fn null() -> Self {
        Self {
            tokens: vec![TokenId::SOS, TokenId::EOS],
        }
    }

    /// Wraps inner tokens with `<sos>` / `<eos>`.
    pub fn from_inner(inner: &[TokenId]) -> Result<Self> {
        if inner.iter().any(|t| t.is_boundary()) {
            return Err(Error::invalid("boundary tokens inside caption body"));
        }
        let mut tokens = Vec::with_capacity(inner.len() + 2);
        tokens.push(TokenId::SOS);
        tokens.extend_from_slice(inner);
        tokens.push(TokenId::EOS);
        Ok(Self { tokens })
    }

    /// Parses whitespace-separated words; `<sos>`/`<eos>` are added if absent.
    pub fn parse(text: &str) -> Result<Self> {
        let mut words: Vec<TokenId> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_>>()?;
        if words.first() == Some(&TokenId::SOS) {
            words.remove(0);
        }
        if words.last() == Some(&TokenId::EOS) {
            words.pop();
        }
        Self::from_inner(&words)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.0).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<&'static str> {
        self.tokens.iter().map(|t| t.word()).collect()
    }

    pub fn position(&self, t: TokenId) -> Option<usize> {
        self.tokens.iter().position(|&x| x == t)
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.words().join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_adds_boundaries_and_round_trips() {
        let c = Caption::parse("red square background").unwrap();
        assert_eq!(c.words(), vec![SOS, "red", "square", BACKGROUND, EOS]);
        assert_eq!(Caption::parse(&c.to_string()).unwrap(), c);
        assert!(Caption::parse("purple square").is_err());
    }
}
