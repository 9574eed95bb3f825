// Copyright 2026 The npmarket Authors
// SPDX-License-Identifier: Apache-2.0

//! Canonical binary encoding used for block hashing and for storing blocks.
//!
//! Fields are written in declaration order. Integers are fixed-width
//! big-endian, variable-length values carry a `u32` length prefix, and
//! enums/options carry a one-byte tag. Decoding is strict: every value has
//! exactly one accepted encoding, so a modified byte string never decodes to
//! the original value.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("string is not valid utf-8")]
    InvalidUtf8,
    #[error("set elements out of order or duplicated")]
    NonCanonicalSet,
    #[error("value out of range: {0}")]
    OutOfRange(&'static str),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

pub trait Encode {
    fn encode(&self, out: &mut Vec<u8>);

    fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }
}

pub trait Decode: Sized {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete buffer, rejecting trailing bytes.
    fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let value = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(value)
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    pub fn tag(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

impl Encode for u8 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(*self);
    }
}

impl Decode for u8 {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.tag()
    }
}

macro_rules! int_codec {
    ($($ty:ty),*) => {$(
        impl Encode for $ty {
            fn encode(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }
        }

        impl Decode for $ty {
            fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                let bytes = dec.take(std::mem::size_of::<$ty>())?;
                Ok(<$ty>::from_be_bytes(bytes.try_into().expect("length checked")))
            }
        }
    )*};
}

int_codec!(u32, u64);

impl Encode for bool {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(u8::from(*self));
    }
}

impl Decode for bool {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.tag()? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(DecodeError::InvalidTag { what: "bool", tag }),
        }
    }
}

fn encode_len(len: usize, out: &mut Vec<u8>) {
    u32::try_from(len)
        .expect("canonical values are shorter than 4 GiB")
        .encode(out);
}

impl Encode for str {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_len(self.len(), out);
        out.extend_from_slice(self.as_bytes());
    }
}

impl Encode for String {
    fn encode(&self, out: &mut Vec<u8>) {
        self.as_str().encode(out);
    }
}

impl Decode for String {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let len = u32::decode(dec)? as usize;
        let bytes = dec.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DecodeError::InvalidUtf8)
    }
}

impl Encode for [u8; 32] {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }
}

impl Decode for [u8; 32] {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(dec.take(32)?.try_into().expect("length checked"))
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode(out);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.tag()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(dec)?)),
            tag => Err(DecodeError::InvalidTag { what: "option", tag }),
        }
    }
}

impl<T: Encode> Encode for [T] {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_len(self.len(), out);
        for item in self {
            item.encode(out);
        }
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        self.as_slice().encode(out);
    }
}

impl<T: Decode> Decode for Vec<T> {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let len = u32::decode(dec)? as usize;
        // Every element takes at least one byte; refuse lengths the buffer cannot hold.
        if len > dec.buf.len() - dec.pos {
            return Err(DecodeError::Truncated(dec.pos));
        }
        (0..len).map(|_| T::decode(dec)).collect()
    }
}

impl<T: Encode> Encode for BTreeSet<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        encode_len(self.len(), out);
        for item in self {
            item.encode(out);
        }
    }
}

impl<T: Decode + Ord> Decode for BTreeSet<T> {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let items = Vec::<T>::decode(dec)?;
        if items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DecodeError::NonCanonicalSet);
        }
        Ok(items.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strings_are_length_prefixed() {
        assert_eq!("ab".to_canonical_bytes(), vec![0, 0, 0, 2, b'a', b'b']);
    }

    #[test]
    fn strict_bool_and_option_tags() {
        assert!(bool::from_canonical_bytes(&[2]).is_err());
        assert!(Option::<u8>::from_canonical_bytes(&[3, 0]).is_err());
        assert_eq!(Option::<u8>::from_canonical_bytes(&[1, 7]), Ok(Some(7)));
    }

    #[test]
    fn unordered_sets_are_rejected() {
        let mut bytes = Vec::new();
        vec![2u8, 1u8].encode(&mut bytes);
        assert_eq!(
            BTreeSet::<u8>::from_canonical_bytes(&bytes),
            Err(DecodeError::NonCanonicalSet)
        );
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        assert_eq!(u8::from_canonical_bytes(&[1, 2]), Err(DecodeError::TrailingBytes(1)));
    }

    #[test]
    fn oversized_length_prefix_is_truncation() {
        assert!(Vec::<u64>::from_canonical_bytes(&[0xff, 0xff, 0xff, 0xff]).is_err());
    }
}
