// SPDX-License-Identifier: Apache-2.0

//! Canonical binary layout shared by every hashed, signed, or transmitted
//! structure in the workspace.
//!
//! Rules, pinned for bit-exactness across implementations:
//!
//! * fields are encoded in declaration order;
//! * every field is a 4-byte big-endian length prefix followed by the raw
//!   field bytes;
//! * integers are 8-byte big-endian values inside their field;
//! * sequences are a u64 count field followed by each element's fields;
//! * a payload that is hashed or signed additionally starts with its
//!   single domain tag byte (the tag is raw, not length-prefixed).

use thiserror::Error;

use crate::crypto::{Digest, PublicKey, Signature};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated input at offset {0}")]
    Truncated(usize),
    #[error("field is {got} bytes where {expected} were expected")]
    BadFieldLength { expected: usize, got: usize },
    #[error("{0} trailing bytes after the final field")]
    TrailingBytes(usize),
    #[error("unknown discriminant {0}")]
    BadDiscriminant(u64),
    #[error("field is not valid utf-8")]
    BadUtf8,
    #[error("unknown message kind byte {0:#04x}")]
    BadMessageKind(u8),
    #[error("sequence of {got} elements exceeds the limit of {limit}")]
    OversizedSequence { got: u64, limit: u64 },
    #[error("empty input")]
    Empty,
}

/// Builds a canonical byte string field by field.
#[derive(Debug, Default)]
pub struct CanonicalWriter {
    buf: Vec<u8>,
}

impl CanonicalWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writer whose output starts with a raw domain tag byte.
    pub fn tagged(tag: u8) -> Self {
        CanonicalWriter { buf: vec![tag] }
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf
            .extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn put_u64(&mut self, value: u64) -> &mut Self {
        self.put_bytes(&value.to_be_bytes())
    }

    pub fn put_str(&mut self, value: &str) -> &mut Self {
        self.put_bytes(value.as_bytes())
    }

    /// Sequence length, written before the elements.
    pub fn put_count(&mut self, count: usize) -> &mut Self {
        self.put_u64(count as u64)
    }

    pub fn put_digest(&mut self, digest: &Digest) -> &mut Self {
        self.put_bytes(digest.as_bytes())
    }

    pub fn put_public_key(&mut self, key: &PublicKey) -> &mut Self {
        self.put_bytes(key.as_bytes())
    }

    pub fn put_signature(&mut self, signature: &Signature) -> &mut Self {
        self.put_bytes(signature.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Reads canonical fields back out, enforcing exact consumption.
#[derive(Debug)]
pub struct CanonicalReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> CanonicalReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        CanonicalReader { data, pos: 0 }
    }

    pub fn take_bytes(&mut self) -> Result<&'a [u8], WireError> {
        if self.pos + 4 > self.data.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let len = u32::from_be_bytes(
            self.data[self.pos..self.pos + 4].try_into().expect("4 bytes"),
        ) as usize;
        self.pos += 4;
        if self.pos + len > self.data.len() {
            return Err(WireError::Truncated(self.pos));
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn take_u64(&mut self) -> Result<u64, WireError> {
        let bytes = self.take_bytes()?;
        let arr: [u8; 8] = bytes.try_into().map_err(|_| WireError::BadFieldLength {
            expected: 8,
            got: bytes.len(),
        })?;
        Ok(u64::from_be_bytes(arr))
    }

    pub fn take_string(&mut self) -> Result<String, WireError> {
        let bytes = self.take_bytes()?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::BadUtf8)
    }

    pub fn take_count(&mut self, limit: u64) -> Result<usize, WireError> {
        let count = self.take_u64()?;
        if count > limit {
            return Err(WireError::OversizedSequence { got: count, limit });
        }
        Ok(count as usize)
    }

    pub fn take_array32(&mut self) -> Result<[u8; 32], WireError> {
        let bytes = self.take_bytes()?;
        bytes.try_into().map_err(|_| WireError::BadFieldLength {
            expected: 32,
            got: bytes.len(),
        })
    }

    pub fn take_digest(&mut self) -> Result<Digest, WireError> {
        Ok(Digest::new(self.take_array32()?))
    }

    pub fn take_public_key(&mut self) -> Result<PublicKey, WireError> {
        Ok(PublicKey::new(self.take_array32()?))
    }

    pub fn take_signature(&mut self) -> Result<Signature, WireError> {
        let bytes = self.take_bytes()?;
        let arr: [u8; 64] = bytes.try_into().map_err(|_| WireError::BadFieldLength {
            expected: 64,
            got: bytes.len(),
        })?;
        Ok(Signature::new(arr))
    }

    /// Asserts that every byte was consumed.
    pub fn finish(self) -> Result<(), WireError> {
        let rest = self.data.len() - self.pos;
        if rest != 0 {
            return Err(WireError::TrailingBytes(rest));
        }
        Ok(())
    }
}
