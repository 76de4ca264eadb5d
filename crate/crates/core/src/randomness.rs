//! Seed-addressed public randomness.
//!
//! Two parties that share a [`SharedSeed`] agree on every exponential
//! variate, permutation priority and hash value without communicating.
//! Each randomness role reads its own stream: the per-stream key is
//! `SHA-256(master ‖ label)` truncated to 128 bits, and individual values
//! are SipHash-2-4 (128-bit output) of the little-endian query index under
//! that key.

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use siphasher::sip128::{Hasher128, SipHasher24};
use std::hash::Hasher;

use crate::error::{param, Error, Result};

/// Randomness roles of the single-scale sketch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Exponential variates `u_i`.
    Exp,
    /// Priorities realizing the random coordinate order.
    Perm,
    /// Coordinate hash `h1`.
    CoordHash,
    /// Rounded-norm hash `h2`.
    NormHash,
}

impl Stream {
    const ALL: [Stream; 4] = [Stream::Exp, Stream::Perm, Stream::CoordHash, Stream::NormHash];

    fn label(self) -> &'static [u8] {
        match self {
            Stream::Exp => b"EXP",
            Stream::Perm => b"PERM",
            Stream::CoordHash => b"H1",
            Stream::NormHash => b"H2",
        }
    }
}

/// A 256-bit master seed plus its derived per-stream keys.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSeed {
    master: [u8; 32],
    keys: [[u8; 16]; 4],
}

impl SharedSeed {
    pub fn new(master: [u8; 32]) -> Self {
        let mut keys = [[0u8; 16]; 4];
        for (key, stream) in keys.iter_mut().zip(Stream::ALL) {
            let digest = Sha256::new()
                .chain_update(b"avgsketch/stream/")
                .chain_update(stream.label())
                .chain_update(master)
                .finalize();
            key.copy_from_slice(&digest[..16]);
        }
        SharedSeed { master, keys }
    }

    /// Convenience constructor for tests and examples.
    pub fn from_u64(v: u64) -> Self {
        let mut master = [0u8; 32];
        master[..8].copy_from_slice(&v.to_le_bytes());
        SharedSeed::new(master)
    }

    pub fn master(&self) -> &[u8; 32] {
        &self.master
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.master)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 {
            return param(format!("seed must be 64 hex characters, got {}", s.len()));
        }
        let mut master = [0u8; 32];
        hex::decode_to_slice(s, &mut master).map_err(|e| Error::Parameter(format!("bad seed hex: {e}")))?;
        Ok(SharedSeed::new(master))
    }

    /// An independent child seed, addressed by a label and an index.
    pub fn derive(&self, label: &str, index: u64) -> SharedSeed {
        self.derive_bytes(label, &index.to_le_bytes())
    }

    /// Like [`SharedSeed::derive`], addressed by an arbitrary byte string.
    pub fn derive_bytes(&self, label: &str, key: &[u8]) -> SharedSeed {
        let digest = Sha256::new()
            .chain_update(b"avgsketch/derive/")
            .chain_update((label.len() as u64).to_le_bytes())
            .chain_update(label.as_bytes())
            .chain_update(self.master)
            .chain_update(key)
            .finalize();
        SharedSeed::new(digest.into())
    }

    /// Short tag identifying this seed, stored in sketch headers.
    pub fn tag(&self) -> [u8; 8] {
        let digest = Sha256::new()
            .chain_update(b"avgsketch/tag/")
            .chain_update(self.master)
            .finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        out
    }

    /// A general-purpose generator for sampling tasks (data generation,
    /// median samples). Not part of the sketch's public randomness.
    pub fn rng(&self, label: &str) -> ChaCha12Rng {
        let digest = Sha256::new()
            .chain_update(b"avgsketch/rng/")
            .chain_update(label.as_bytes())
            .chain_update(self.master)
            .finalize();
        ChaCha12Rng::from_seed(digest.into())
    }

    fn prf(&self, stream: Stream, input: [u8; 8]) -> u128 {
        let key = &self.keys[stream as usize];
        let mut h = SipHasher24::new_with_key(key);
        h.write(&input);
        h.finish128().as_u128()
    }

    /// `u_i ~ Exp(1)` by inverse CDF on a 53-bit uniform in the open unit
    /// interval, so the result is always positive and finite.
    pub fn exp_variate(&self, i: usize) -> f64 {
        let bits = self.prf(Stream::Exp, (i as u64).to_le_bytes()) as u64;
        let v = ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        -(-v).ln_1p()
    }

    /// Uniform 64-bit key; ascending `(key, index)` realizes the permutation.
    pub fn perm_priority(&self, i: usize) -> u64 {
        self.prf(Stream::Perm, (i as u64).to_le_bytes()) as u64
    }

    /// `h1(i) ∈ [0, universe)`.
    pub fn hash_coord(&self, i: usize, universe: u32) -> Result<u32> {
        if universe == 0 {
            return param("hash universe must be nonzero");
        }
        Ok((self.prf(Stream::CoordHash, (i as u64).to_le_bytes()) % universe as u128) as u32)
    }

    /// `h2(ν) ∈ [0, universe)` for any signed integer `ν`.
    pub fn hash_norm(&self, nu: i64, universe: u32) -> Result<u32> {
        if universe == 0 {
            return param("hash universe must be nonzero");
        }
        Ok((self.prf(Stream::NormHash, nu.to_le_bytes()) % universe as u128) as u32)
    }
}

impl fmt::Debug for SharedSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SharedSeed({})", self.to_hex())
    }
}

impl fmt::Display for SharedSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for SharedSeed {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SharedSeed::from_hex(s)
    }
}

impl Serialize for SharedSeed {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SharedSeed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SharedSeed::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Per-coordinate randomness of one seed, materialized for a fixed `d`.
///
/// Sketching many points under one seed reuses a single table.
#[derive(Clone, Debug)]
pub struct CoordinateTable {
    /// Coordinates in permutation order.
    pub(crate) order: Vec<u32>,
    /// `u_i^{1/p}`.
    pub(crate) u_root: Vec<f64>,
    /// `h1(i)`.
    pub(crate) h1: Vec<u32>,
}

impl CoordinateTable {
    pub fn new(seed: &SharedSeed, dim: usize, p: f64, universe: u32) -> Result<Self> {
        if universe == 0 {
            return param("hash universe must be nonzero");
        }
        let inv_p = 1.0 / p;
        let u_root = (0..dim).map(|i| seed.exp_variate(i).powf(inv_p)).collect();
        let h1 = (0..dim)
            .map(|i| seed.hash_coord(i, universe))
            .collect::<Result<Vec<_>>>()?;
        let mut keyed: Vec<(u64, u32)> = (0..dim).map(|i| (seed.perm_priority(i), i as u32)).collect();
        keyed.sort_unstable();
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        Ok(CoordinateTable { order, u_root, h1 })
    }

    pub fn dim(&self) -> usize {
        self.u_root.len()
    }
}
