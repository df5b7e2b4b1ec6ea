//! Fixed-length binary watermark payloads and bit error rate.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_LENGTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WatermarkMessage {
    bits: Vec<u8>,
}

impl WatermarkMessage {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Config("message must hold at least one bit".into()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Config(format!("message bit {b} is not 0 or 1")));
        }
        Ok(Self { bits })
    }

    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![0; len] }
    }

    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        Self {
            bits: (0..len).map(|_| rng.random_range(0..=1u8)).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Hard decision on soft scores: `> 0.5` is a one; exactly 0.5 is a zero.
    pub fn from_scores(scores: &[f32]) -> Self {
        Self {
            bits: scores.iter().map(|&s| u8::from(s > 0.5)).collect(),
        }
    }

    /// Parses `"0b0101…"`/`"0101…"` bitstrings or `"0x…"`/plain hex. A plain
    /// string made only of 0/1 whose length equals `expected_len` is read as
    /// bits; otherwise it is hex, most significant bit first.
    pub fn parse(text: &str, expected_len: usize) -> Result<Self> {
        let t = text.trim();
        if let Some(rest) = t.strip_prefix("0b") {
            return Self::from_bitstring(rest);
        }
        if let Some(rest) = t.strip_prefix("0x") {
            return Self::from_hex(rest, expected_len);
        }
        if t.len() == expected_len && t.chars().all(|c| c == '0' || c == '1') {
            return Self::from_bitstring(t);
        }
        Self::from_hex(t, expected_len)
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::Config(format!("invalid bit character {c:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }

    /// Hex digits, most significant bit first, truncated to `len` bits.
    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        if s.len() * 4 < len {
            return Err(Error::Config(format!(
                "hex message {s:?} carries fewer than {len} bits"
            )));
        }
        let mut bits = Vec::with_capacity(s.len() * 4);
        for c in s.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::Config(format!("invalid hex digit {c:?}")))?;
            bits.extend((0..4).rev().map(|k| ((v >> k) & 1) as u8));
        }
        if bits[len..].iter().any(|&b| b != 0) {
            return Err(Error::Config(format!(
                "hex message {s:?} has set bits beyond length {len}"
            )));
        }
        bits.truncate(len);
        Self::new(bits)
    }

    /// Hex rendering, zero-padded up to a whole number of nibbles.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|chunk| {
                let v = chunk
                    .iter()
                    .chain(std::iter::repeat(&0))
                    .take(4)
                    .fold(0u32, |acc, &b| (acc << 1) | b as u32);
                std::char::from_digit(v, 16).unwrap()
            })
            .collect()
    }

    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    /// Bits as `±1` signs, the form fed to the encoder.
    pub fn as_signs(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect()
    }
}

impl fmt::Display for WatermarkMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

/// Percentage of differing bits.
pub fn ber(a: &WatermarkMessage, b: &WatermarkMessage) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cannot compare messages of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let wrong = a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count();
    Ok(100.0 * wrong as f64 / a.len() as f64)
}
