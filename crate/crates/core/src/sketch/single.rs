use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{check_dims, norm_of, IntVector};
use crate::randomness::{CoordinateTable, SharedSeed};

use super::params::{SketchParams, SlotMode};

/// Decoder verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Close,
    Far,
}

impl Outcome {
    pub fn is_far(self) -> bool {
        self == Outcome::Far
    }
}

/// Summary of one `(σ, j)` threshold.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Record {
    /// `σ ∈ {-1, +1}`.
    pub sign: i8,
    /// `j ∈ 0..=L`.
    pub level: u32,
    /// Integer threshold index `m`; the threshold value is `m·r/δ1^{1/p}`.
    pub index: i64,
    /// `|G|`, or `None` when it exceeds `K`.
    pub size: Option<u32>,
    /// `h1` (or raw index) of the first `min(|G|, k)` members of `G` in
    /// permutation order; empty when the size is too large.
    pub slots: Vec<u32>,
}

impl Record {
    pub fn first(&self) -> Option<u32> {
        self.slots.first().copied()
    }
}

/// The single-scale sketch of one point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SingleScaleSketch {
    pub(crate) fingerprint: [u8; 8],
    pub(crate) norm_hashes: [u32; 2],
    /// `2(L+1)` records ordered by `(σ, j)` with `σ = -1` first.
    pub(crate) records: Vec<Record>,
}

const MAGIC: &[u8; 4] = b"ADSK";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 8 + 8;

impl SingleScaleSketch {
    /// Sketches `x` centered at `median` under `seed`.
    pub fn build(
        x: &IntVector,
        median: &IntVector,
        params: &SketchParams,
        seed: &SharedSeed,
    ) -> Result<Self> {
        Sketcher::new(params.clone(), seed, x.dim())?.sketch(x, median)
    }

    pub fn fingerprint(&self) -> [u8; 8] {
        self.fingerprint
    }

    /// `(h2(ν), h2(ν+1))`.
    pub fn norm_hashes(&self) -> [u32; 2] {
        self.norm_hashes
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn levels(&self) -> u32 {
        (self.records.len() / 2) as u32 - 1
    }

    /// The record with sign `sign` whose threshold index is `index`.
    pub fn record_at(&self, sign: i8, index: i64) -> Option<&Record> {
        let half = self.records.len() / 2;
        let block = if sign < 0 {
            &self.records[..half]
        } else {
            &self.records[half..]
        };
        let offset = index.checked_sub(block.first()?.index)?;
        if offset < 0 {
            return None;
        }
        block.get(offset as usize)
    }

    /// Versioned little-endian encoding: magic, version, params fingerprint,
    /// the two norm hashes, then each record as
    /// `m: i64, size: i32 (-1 = too large), count: i16, count × i32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_bytes(&mut out);
        out
    }

    pub(crate) fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.fingerprint);
        for h in self.norm_hashes {
            out.extend_from_slice(&h.to_le_bytes());
        }
        for rec in &self.records {
            out.extend_from_slice(&rec.index.to_le_bytes());
            let size = rec.size.map_or(-1i32, |s| s as i32);
            out.extend_from_slice(&size.to_le_bytes());
            out.extend_from_slice(&(rec.slots.len() as i16).to_le_bytes());
            for s in &rec.slots {
                out.extend_from_slice(&(*s as i32).to_le_bytes());
            }
        }
    }

    /// Exact length of [`SingleScaleSketch::to_bytes`].
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .records
                .iter()
                .map(|r| 8 + 4 + 2 + 4 * r.slots.len())
                .sum::<usize>()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        if rd.take(4)? != MAGIC {
            return Err(Error::Encoding("bad single-scale magic".into()));
        }
        let version = rd.take(1)?[0];
        if version != VERSION {
            return Err(Error::Encoding(format!("unsupported version {version}")));
        }
        let mut fingerprint = [0u8; 8];
        fingerprint.copy_from_slice(rd.take(8)?);
        let norm_hashes = [rd.u32()?, rd.u32()?];
        let mut raw = Vec::new();
        while !rd.is_empty() {
            let index = rd.i64()?;
            let size = rd.i32()?;
            let count = rd.i16()?;
            if count < 0 || size < -1 {
                return Err(Error::Encoding("negative record field".into()));
            }
            let slots = (0..count)
                .map(|_| rd.i32().map(|v| v as u32))
                .collect::<Result<Vec<_>>>()?;
            let size = (size >= 0).then_some(size as u32);
            raw.push((index, size, slots));
        }
        if raw.len() < 2 || raw.len() % 2 != 0 {
            return Err(Error::Encoding(format!(
                "expected an even, nonzero record count, found {}",
                raw.len()
            )));
        }
        let half = raw.len() / 2;
        let mut records = Vec::with_capacity(raw.len());
        for (n, (index, size, slots)) in raw.into_iter().enumerate() {
            let sign = if n < half { -1 } else { 1 };
            let level = (n % half) as u32;
            records.push(Record {
                sign,
                level,
                index,
                size,
                slots,
            });
        }
        for block in records.chunks(half) {
            if block.windows(2).any(|w| w[1].index != w[0].index + 1) {
                return Err(Error::Encoding("threshold indices not consecutive".into()));
            }
        }
        Ok(SingleScaleSketch {
            fingerprint,
            norm_hashes,
            records,
        })
    }
}

/// Sketches many points under one `(params, seed)` pair, reusing the
/// per-coordinate randomness.
#[derive(Clone, Debug)]
pub struct Sketcher {
    params: SketchParams,
    table: CoordinateTable,
    seed: SharedSeed,
    fingerprint: [u8; 8],
}

impl Sketcher {
    pub fn new(params: SketchParams, seed: &SharedSeed, dim: usize) -> Result<Self> {
        let table = CoordinateTable::new(seed, dim, params.p, params.universe)?;
        let fingerprint = params.fingerprint();
        Ok(Sketcher {
            params,
            table,
            seed: seed.clone(),
            fingerprint,
        })
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn sketch(&self, x: &IntVector, median: &IntVector) -> Result<SingleScaleSketch> {
        check_dims(self.dim(), x.dim())?;
        let centered = x.checked_sub(median)?;
        Ok(self.sketch_centered(centered.coords()))
    }

    /// Sketches an already-centered vector. The caller guarantees the dimension.
    pub(crate) fn sketch_centered(&self, centered: &[i64]) -> SingleScaleSketch {
        let params = &self.params;
        let norm = norm_of(centered, params.p);
        let nu = params.rounded_norm(norm);
        let h2 = |v: i64| {
            self.seed
                .hash_norm(v, params.universe)
                .expect("universe validated nonzero")
        };
        let norm_hashes = [h2(nu), h2(nu + 1)];
        let base = params.base_index(norm);
        let cap = params.max_useful as usize;
        let keep = params.stored as usize;
        let levels = params.levels as usize + 1;
        let taus: Vec<f64> = (0..levels)
            .map(|j| params.threshold_value(base + j as i64))
            .collect();
        let step = params.threshold_step();
        let mut records = Vec::with_capacity(2 * levels);
        for sign in [-1i8, 1] {
            // Thresholds increase with the level, so coordinate i belongs to
            // exactly the levels below some depth n_i. One pass in π order
            // fills every level.
            let mut counts = vec![0usize; levels];
            let mut slots: Vec<Vec<u32>> = vec![Vec::new(); levels];
            for &i in &self.table.order {
                let i = i as usize;
                let v = (sign as i64 * centered[i]) as f64;
                let u = self.table.u_root[i];
                let member = |j: usize| v >= taus[j] * u;
                if !member(0) {
                    continue;
                }
                let guess = (v / (step * u)).floor() - base as f64;
                let mut top = if guess.is_finite() {
                    guess.clamp(0.0, (levels - 1) as f64) as usize
                } else {
                    levels - 1
                };
                while top + 1 < levels && member(top + 1) {
                    top += 1;
                }
                while !member(top) {
                    top -= 1;
                }
                let slot = match params.slots {
                    SlotMode::Hashed => self.table.h1[i],
                    SlotMode::RawIndex => i as u32,
                };
                for j in 0..=top {
                    if counts[j] <= cap {
                        counts[j] += 1;
                        if slots[j].len() < keep {
                            slots[j].push(slot);
                        }
                    }
                }
                if counts[levels - 1] > cap {
                    break;
                }
            }
            for (j, (count, mut slots)) in counts.into_iter().zip(slots).enumerate() {
                let size = if count > cap {
                    slots.clear();
                    None
                } else {
                    Some(count as u32)
                };
                records.push(Record {
                    sign,
                    level: j as u32,
                    index: base + j as i64,
                    size,
                    slots,
                });
            }
        }
        SingleScaleSketch {
            fingerprint: self.fingerprint,
            norm_hashes,
            records,
        }
    }
}

/// The size gate `|G_y(τ_{m-1})| ≤ (k/4)·|G_x(τ_m)| ≤ (k/4)·K` together
/// with the first-member test, in one role order. Returns the offending
/// `x`-side record.
pub(crate) fn step_two_hit<'a>(
    upper: &'a SingleScaleSketch,
    lower: &SingleScaleSketch,
    stored: u32,
) -> Option<&'a Record> {
    upper.records.iter().find(|a| {
        if a.level == 0 {
            return false;
        }
        let (Some(a_size), Some(first)) = (a.size, a.first()) else {
            return false;
        };
        let Some(b) = lower.record_at(a.sign, a.index - 1) else {
            return false;
        };
        let Some(b_size) = b.size else {
            return false;
        };
        4 * b_size as u64 <= stored as u64 * a_size as u64 && !b.slots.contains(&first)
    })
}

/// Decodes two single-scale sketches built with equal params and seed.
pub fn decode_single_scale(
    a: &SingleScaleSketch,
    b: &SingleScaleSketch,
    params: &SketchParams,
) -> Result<Outcome> {
    let fp = params.fingerprint();
    if a.fingerprint != fp || b.fingerprint != fp {
        return Err(Error::Lineage(
            "sketch was built with different parameters".into(),
        ));
    }
    Ok(decode_unchecked(a, b, params.stored))
}

pub(crate) fn decode_unchecked(a: &SingleScaleSketch, b: &SingleScaleSketch, stored: u32) -> Outcome {
    let [a0, a1] = a.norm_hashes;
    let [b0, b1] = b.norm_hashes;
    if a0 != b0 && a0 != b1 && a1 != b0 && a1 != b1 {
        return Outcome::Far;
    }
    if step_two_hit(a, b, stored).is_some() || step_two_hit(b, a, stored).is_some() {
        return Outcome::Far;
    }
    Outcome::Close
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Encoding("unexpected end of input".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.array()?))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub(crate) fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
