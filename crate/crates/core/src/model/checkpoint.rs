//! Binary checkpoint:
//!
//! ```text
//! "SUMN1"
//! u32 LE d, u32 LE N, u32 LE |V|
//! f32 LE tensors in ModelParams field order
//! vocabulary text block ("sumn-vocab v1 <size>\n" + one word per line)
//! u32 LE CRC-32 of every preceding byte
//! ```

use std::path::Path;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

use super::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SUMN1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub vocab: Vocabulary,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>, vocab: Vocabulary) -> Result<Self> {
        params.validate()?;
        if params.vocab_size() != vocab.len() {
            return Err(Error::shape("Checkpoint", vocab.len(), params.vocab_size()));
        }
        Ok(Checkpoint { params, vocab })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(17 + 4 * p.num_values() + 16 * self.vocab.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [p.dim(), p.hops, p.vocab_size()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in p.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(self.vocab.to_text().as_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = CHECKPOINT_MAGIC.len() + 12;
        if bytes.len() < header + 4 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "missing SUMN1 header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let read_u32 = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().expect("4 bytes")) as usize;
        let (d, hops, vocab_size) = (read_u32(5), read_u32(9), read_u32(13));
        let mut params = ModelParams::<f32>::zeros(vocab_size, d, hops);
        let n = params.num_values();
        let end = header + 4 * n;
        if body.len() < end {
            return Err(Error::format("checkpoint", format!("truncated: need {n} parameters")));
        }
        let flat: Vec<f32> = body[header..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.assign_flat(&flat)?;
        let text = std::str::from_utf8(&body[end..]).map_err(|e| Error::format("checkpoint", e))?;
        let vocab = Vocabulary::from_text(text)?;
        Self::new(params, vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn sample() -> Checkpoint {
        let vocab = build_vocab(["alpha beta gamma beta"], 10, 1).unwrap();
        let params = ModelParams::init(vocab.len(), 4, 2, 7).unwrap();
        Checkpoint::new(params, vocab).unwrap()
    }

    #[test]
    fn layout_matches_the_documented_format() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..5], b"SUMN1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 3);
        let first = f32::from_le_bytes(bytes[17..21].try_into().unwrap());
        assert_eq!(first, ck.params.embeddings.get(0, 0));
        let vocab_start = 17 + 4 * ck.params.num_values();
        assert_eq!(&bytes[vocab_start..bytes.len() - 4], b"sumn-vocab v1 3\nbeta\nalpha\ngamma\n");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        bytes[40] ^= 0x01;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checksum { .. })));
        assert!(Checkpoint::from_bytes(b"SUMN0").is_err());
    }

    #[test]
    fn vocab_size_must_match() {
        let vocab = build_vocab(["a b"], 10, 1).unwrap();
        let params = ModelParams::init(5, 4, 1, 0).unwrap();
        assert!(Checkpoint::new(params, vocab).is_err());
    }
}
