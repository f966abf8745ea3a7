//! Command strings as sequences of payment amounts.
//!
//! Two schemes are supported: one payment per character carrying its ASCII
//! code, or a quaternary Huffman code where every digit becomes one payment
//! of that many satoshi. A command travels framed by the start and end
//! sentinel amounts, which never occur inside a payload.

mod huffman;

pub use huffman::{build_codebook, frequencies, parse_frequency_table, verify_prefix_free, Codebook};

use std::fmt;

use thiserror::Error;

/// Amount (sat) announcing the start of a command.
pub const START_SENTINEL: u64 = 5;
/// Amount (sat) closing a command.
pub const END_SENTINEL: u64 = 6;

/// Lowest printable ASCII code (space).
pub const ASCII_MIN: u64 = 32;
/// Highest printable ASCII code (`~`).
pub const ASCII_MAX: u64 = 126;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("character {ch:?} cannot be encoded under the {scheme} scheme")]
    Unencodable { ch: char, scheme: &'static str },
    #[error("amount {0} is not a printable ASCII code")]
    AsciiOutOfRange(u64),
    #[error("amount {amount} is not a digit of the 1..={arity} alphabet")]
    DigitOutOfRange { amount: u64, arity: u8 },
    #[error("stream ends inside the partial code {0:?}")]
    IncompleteCode(String),
    #[error("digit sequence {0:?} matches no code")]
    InvalidCode(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("frequency table has no symbol with positive weight")]
    EmptyFrequencyTable,
    #[error("arity {0} is unsupported (digits must stay within 1..=4 to avoid the sentinels)")]
    UnsupportedArity(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// How characters map to payment amounts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodingScheme {
    Ascii,
    Huffman(Codebook),
}

impl EncodingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            EncodingScheme::Ascii => "ascii",
            EncodingScheme::Huffman(_) => "huffman",
        }
    }

    /// The shipped quaternary codebook.
    pub fn huffman_default() -> Self {
        EncodingScheme::Huffman(Codebook::quaternary())
    }

    /// Whether `amount` can appear inside a frame under this scheme.
    pub fn is_payload_symbol(&self, amount: u64) -> bool {
        match self {
            EncodingScheme::Ascii => (ASCII_MIN..=ASCII_MAX).contains(&amount),
            EncodingScheme::Huffman(book) => (1..=u64::from(book.arity())).contains(&amount),
        }
    }

    /// Every amount a payload may contain, ascending.
    pub fn payload_alphabet(&self) -> Vec<u64> {
        match self {
            EncodingScheme::Ascii => (ASCII_MIN..=ASCII_MAX).collect(),
            EncodingScheme::Huffman(book) => (1..=u64::from(book.arity())).collect(),
        }
    }

    /// Whether every character of `command` is encodable.
    pub fn can_encode(&self, command: &str) -> bool {
        command.chars().all(|c| match self {
            EncodingScheme::Ascii => is_printable_ascii(c),
            EncodingScheme::Huffman(book) => book.code(c).is_some(),
        })
    }
}

impl fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn is_printable_ascii(c: char) -> bool {
    (ASCII_MIN..=ASCII_MAX).contains(&u64::from(u32::from(c)))
}

/// Encodes `command` into unframed payment amounts.
pub fn encode(command: &str, scheme: &EncodingScheme) -> Result<Vec<u64>, CodecError> {
    match scheme {
        EncodingScheme::Ascii => command
            .chars()
            .map(|c| {
                if is_printable_ascii(c) {
                    Ok(u64::from(u32::from(c)))
                } else {
                    Err(CodecError::Unencodable { ch: c, scheme: "ascii" })
                }
            })
            .collect(),
        EncodingScheme::Huffman(book) => {
            let mut out = Vec::new();
            for c in command.chars() {
                let code = book
                    .code(c)
                    .ok_or(CodecError::Unencodable { ch: c, scheme: "huffman" })?;
                out.extend(code.iter().map(|&d| u64::from(d)));
            }
            Ok(out)
        }
    }
}

/// Decodes an unframed amount list back into the command string.
pub fn decode(amounts: &[u64], scheme: &EncodingScheme) -> Result<String, CodecError> {
    match scheme {
        EncodingScheme::Ascii => amounts
            .iter()
            .map(|&a| {
                if (ASCII_MIN..=ASCII_MAX).contains(&a) {
                    // in range, so the cast cannot truncate
                    Ok(char::from(a as u8))
                } else {
                    Err(CodecError::AsciiOutOfRange(a))
                }
            })
            .collect(),
        EncodingScheme::Huffman(book) => book.decode_digits(amounts),
    }
}

/// Wraps a payload in the start and end sentinels.
pub fn frame(amounts: &[u64]) -> Vec<u64> {
    let mut framed = Vec::with_capacity(amounts.len() + 2);
    framed.push(START_SENTINEL);
    framed.extend_from_slice(amounts);
    framed.push(END_SENTINEL);
    framed
}

/// Strips the sentinels from a framed sequence.
pub fn deframe(framed: &[u64]) -> Result<Vec<u64>, CodecError> {
    match framed {
        [START_SENTINEL, inner @ .., END_SENTINEL] => {
            if inner
                .iter()
                .any(|&a| a == START_SENTINEL || a == END_SENTINEL)
            {
                Err(CodecError::MalformedFrame("sentinel inside payload"))
            } else {
                Ok(inner.to_vec())
            }
        }
        [] => Err(CodecError::MalformedFrame("empty sequence")),
        [first, ..] if *first != START_SENTINEL => {
            Err(CodecError::MalformedFrame("missing start sentinel"))
        }
        _ => Err(CodecError::MalformedFrame("missing end sentinel")),
    }
}

/// Satoshi spent on a payload: the sum of its amounts.
pub fn cost(amounts: &[u64]) -> u64 {
    amounts.iter().sum()
}
