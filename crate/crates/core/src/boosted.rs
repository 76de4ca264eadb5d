//! Repetition and vote.
//!
//! `T = ⌈512·ln(1/δ0)⌉` independent single-scale sketches are decoded pairwise
//! and the boosted decoder answers FAR iff at least `T/16` of them do. A
//! Hoeffding bound turns the per-repetition non-expansion failure of at most
//! `1/32` into `exp(−T/512) ≤ δ0`, while contraction stays above `1/4`.

use crate::error::{param, Error, Result};
use crate::metric::{check_dims, IntVector};
use crate::randomness::SharedSeed;
use crate::sketch::single::{decode_unchecked, Reader};
use crate::sketch::{Outcome, SingleScaleSketch, SketchParams, Sketcher};

/// `⌈512·ln(1/δ0)⌉`, snapping values within `1e-12` (relative) of an integer
/// so that boundary inputs such as `δ0 = e^{−1/512}` give exact results.
pub fn repetitions(delta0: f64) -> Result<u32> {
    if !(delta0 > 0.0 && delta0 < 1.0) {
        return param(format!("δ0 must lie in (0, 1), got {delta0}"));
    }
    let raw = -512.0 * delta0.ln();
    let nearest = raw.round();
    let snapped = if (raw - nearest).abs() <= 1e-12 * nearest.abs().max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    if !snapped.is_finite() || snapped > u32::MAX as f64 {
        return param(format!("δ0 = {delta0} needs more than 2^32 repetitions"));
    }
    Ok((snapped as u32).max(1))
}

/// FAR iff `16·count ≥ T`.
pub fn vote(far_count: u32, reps: u32) -> Outcome {
    if 16 * far_count as u64 >= reps as u64 {
        Outcome::Far
    } else {
        Outcome::Close
    }
}

/// How many repetitions to use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Boosting {
    pub delta0: f64,
    /// Replaces the derived `T`; the sketch records that it was overridden.
    pub reps_override: Option<u32>,
}

impl Boosting {
    pub fn derived(delta0: f64) -> Self {
        Boosting {
            delta0,
            reps_override: None,
        }
    }

    pub fn fixed(delta0: f64, reps: u32) -> Self {
        Boosting {
            delta0,
            reps_override: Some(reps),
        }
    }

    pub fn reps(&self) -> Result<u32> {
        let derived = repetitions(self.delta0)?;
        match self.reps_override {
            Some(0) => param("repetition override must be positive"),
            Some(t) => Ok(t),
            None => Ok(derived),
        }
    }
}

/// `T` single-scale sketches of one point.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoostedSketch {
    pub(crate) delta0_bits: u64,
    pub(crate) overridden: bool,
    pub(crate) seed_tag: [u8; 8],
    pub(crate) reps: Vec<SingleScaleSketch>,
}

const MAGIC: &[u8; 4] = b"ADSB";
const VERSION: u8 = 1;

impl BoostedSketch {
    pub fn build(
        x: &IntVector,
        median: &IntVector,
        params: &SketchParams,
        boosting: Boosting,
        seed: &SharedSeed,
    ) -> Result<Self> {
        BoostedSketcher::new(params.clone(), boosting, seed, x.dim())?.sketch(x, median)
    }

    pub fn reps(&self) -> u32 {
        self.reps.len() as u32
    }

    pub fn delta0(&self) -> f64 {
        f64::from_bits(self.delta0_bits)
    }

    pub fn is_overridden(&self) -> bool {
        self.overridden
    }

    pub fn repetitions(&self) -> &[SingleScaleSketch] {
        &self.reps
    }

    fn check_lineage(&self, other: &BoostedSketch) -> Result<()> {
        if self.reps.len() != other.reps.len() {
            return Err(Error::Lineage(format!(
                "repetition counts differ ({} vs {})",
                self.reps.len(),
                other.reps.len()
            )));
        }
        if self.seed_tag != other.seed_tag || self.delta0_bits != other.delta0_bits {
            return Err(Error::Lineage("boosted sketches use different seeds".into()));
        }
        if self.reps.first().map(|s| s.fingerprint) != other.reps.first().map(|s| s.fingerprint) {
            return Err(Error::Lineage("boosted sketches use different parameters".into()));
        }
        Ok(())
    }

    /// Number of repetitions that decode FAR.
    pub fn far_votes(&self, other: &BoostedSketch, params: &SketchParams) -> Result<u32> {
        self.check_lineage(other)?;
        if self.reps.first().map(|s| s.fingerprint) != Some(params.fingerprint()) {
            return Err(Error::Lineage(
                "sketch was built with different parameters".into(),
            ));
        }
        Ok(self.votes_unchecked(other, params.stored))
    }

    pub(crate) fn votes_unchecked(&self, other: &BoostedSketch, stored: u32) -> u32 {
        self.reps
            .iter()
            .zip(&other.reps)
            .filter(|(a, b)| decode_unchecked(a, b, stored).is_far())
            .count() as u32
    }

    /// Layout: magic, version, `T: u32`, `δ0: f64`, flags (bit 0: `T`
    /// overridden), seed tag, then `T` length-prefixed single-scale sketches.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_bytes(&mut out);
        out
    }

    pub(crate) fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.reps.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.delta0_bits.to_le_bytes());
        out.push(self.overridden as u8);
        out.extend_from_slice(&self.seed_tag);
        for rep in &self.reps {
            out.extend_from_slice(&(rep.encoded_len() as u32).to_le_bytes());
            rep.write_bytes(out);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        let out = Self::read(&mut rd)?;
        if !rd.is_empty() {
            return Err(Error::Encoding("trailing bytes after boosted sketch".into()));
        }
        Ok(out)
    }

    pub(crate) fn read(rd: &mut Reader<'_>) -> Result<Self> {
        if rd.take(4)? != MAGIC {
            return Err(Error::Encoding("bad boosted magic".into()));
        }
        let version = rd.u8()?;
        if version != VERSION {
            return Err(Error::Encoding(format!("unsupported version {version}")));
        }
        let t = rd.u32()?;
        let delta0_bits = rd.f64()?.to_bits();
        let flags = rd.u8()?;
        if flags > 1 {
            return Err(Error::Encoding(format!("unknown flags {flags:#x}")));
        }
        let mut seed_tag = [0u8; 8];
        seed_tag.copy_from_slice(rd.take(8)?);
        let mut reps = Vec::with_capacity(t.min(1 << 16) as usize);
        for _ in 0..t {
            let len = rd.u32()? as usize;
            reps.push(SingleScaleSketch::from_bytes(rd.take(len)?)?);
        }
        if t == 0 {
            return Err(Error::Encoding("boosted sketch with zero repetitions".into()));
        }
        if reps.windows(2).any(|w| w[0].fingerprint != w[1].fingerprint) {
            return Err(Error::Encoding("repetitions disagree on parameters".into()));
        }
        Ok(BoostedSketch {
            delta0_bits,
            overridden: flags & 1 == 1,
            seed_tag,
            reps,
        })
    }
}

/// Boosted decoder: FAR iff at least `T/16` repetitions decode FAR.
pub fn decode_boosted(a: &BoostedSketch, b: &BoostedSketch, params: &SketchParams) -> Result<Outcome> {
    let votes = a.far_votes(b, params)?;
    Ok(vote(votes, a.reps()))
}

/// Reusable per-repetition randomness for sketching many points.
#[derive(Clone, Debug)]
pub struct BoostedSketcher {
    params: SketchParams,
    boosting: Boosting,
    seed_tag: [u8; 8],
    reps: Vec<Sketcher>,
}

impl BoostedSketcher {
    /// Repetition `t` uses the sub-seed `seed.derive("REP", t)`.
    pub fn new(params: SketchParams, boosting: Boosting, seed: &SharedSeed, dim: usize) -> Result<Self> {
        let t = boosting.reps()?;
        let reps = (0..t)
            .map(|i| Sketcher::new(params.clone(), &seed.derive("REP", i as u64), dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoostedSketcher {
            params,
            boosting,
            seed_tag: seed.tag(),
            reps,
        })
    }

    pub fn params(&self) -> &SketchParams {
        &self.params
    }

    pub fn reps(&self) -> u32 {
        self.reps.len() as u32
    }

    pub fn dim(&self) -> usize {
        self.reps.first().map_or(0, Sketcher::dim)
    }

    pub fn sketch(&self, x: &IntVector, median: &IntVector) -> Result<BoostedSketch> {
        check_dims(self.dim(), x.dim())?;
        let centered = x.checked_sub(median)?;
        Ok(self.sketch_centered(centered.coords()))
    }

    pub(crate) fn sketch_centered(&self, centered: &[i64]) -> BoostedSketch {
        BoostedSketch {
            delta0_bits: self.boosting.delta0.to_bits(),
            overridden: self.boosting.reps_override.is_some(),
            seed_tag: self.seed_tag,
            reps: self.reps.iter().map(|s| s.sketch_centered(centered)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::Overrides;
    use proptest::prelude::*;

    fn desk() -> SketchParams {
        SketchParams::canonical(64.0, 4.0, Overrides::desk()).unwrap()
    }

    #[test]
    fn repetition_examples() {
        assert_eq!(repetitions(0.01).unwrap(), 2358);
        assert_eq!(repetitions((-1.0f64 / 512.0).exp()).unwrap(), 1);
        assert_eq!(repetitions((-2.0f64 / 512.0).exp()).unwrap(), 2);
        assert!(repetitions(0.0).is_err());
        assert!(repetitions(1.0).is_err());
        assert!(repetitions(f64::MIN_POSITIVE).is_ok());
        assert!(repetitions(1e-320).is_ok());
    }

    #[test]
    fn repetition_overflow() {
        // 512·ln(1/δ0) ≤ 512·745 < 2^32 for every positive f64, so overflow
        // is only reachable through the bound itself.
        assert!(repetitions(5e-324).unwrap() < u32::MAX);
        assert!(Boosting::fixed(0.5, 0).reps().is_err());
    }

    #[test]
    fn vote_examples() {
        assert_eq!(vote(148, 2358), Outcome::Far);
        assert_eq!(vote(147, 2358), Outcome::Close);
        assert_eq!(vote(4, 64), Outcome::Far);
        assert_eq!(vote(3, 64), Outcome::Close);
        assert_eq!(vote(0, 1), Outcome::Close);
        assert_eq!(vote(1, 1), Outcome::Far);
    }

    #[test]
    fn self_decode_and_determinism() {
        let p = desk();
        let x = IntVector::new((0..32).map(|i| (i * 5 % 9) - 4).collect());
        let z = IntVector::zeros(32);
        let seed = SharedSeed::from_u64(7);
        let a = BoostedSketch::build(&x, &z, &p, Boosting::fixed(0.01, 64), &seed).unwrap();
        let b = BoostedSketch::build(&x, &z, &p, Boosting::fixed(0.01, 64), &seed).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.far_votes(&b, &p).unwrap(), 0);
        assert_eq!(decode_boosted(&a, &b, &p).unwrap(), Outcome::Close);
        assert!(a.is_overridden());
        assert_eq!(a.reps(), 64);
    }

    #[test]
    fn derived_reps_are_used_without_override() {
        let p = desk();
        let z = IntVector::zeros(4);
        let s = BoostedSketch::build(
            &z,
            &z,
            &p,
            Boosting::derived((-3.0f64 / 512.0).exp()),
            &SharedSeed::from_u64(1),
        )
        .unwrap();
        assert_eq!(s.reps(), 3);
        assert!(!s.is_overridden());
    }

    #[test]
    fn repetitions_use_distinct_seeds() {
        let p = desk();
        let x = IntVector::new((0..64).map(|i| (i * 13 % 17) - 8).collect());
        let s = BoostedSketch::build(
            &x,
            &IntVector::zeros(64),
            &p,
            Boosting::fixed(0.5, 8),
            &SharedSeed::from_u64(2),
        )
        .unwrap();
        let distinct: std::collections::HashSet<_> = s.repetitions().iter().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn lineage_mismatch() {
        let p = desk();
        let z = IntVector::zeros(8);
        let a = BoostedSketch::build(&z, &z, &p, Boosting::fixed(0.1, 4), &SharedSeed::from_u64(1)).unwrap();
        let b = BoostedSketch::build(&z, &z, &p, Boosting::fixed(0.1, 4), &SharedSeed::from_u64(2)).unwrap();
        let c = BoostedSketch::build(&z, &z, &p, Boosting::fixed(0.1, 5), &SharedSeed::from_u64(1)).unwrap();
        assert!(matches!(decode_boosted(&a, &b, &p), Err(Error::Lineage(_))));
        assert!(matches!(decode_boosted(&a, &c, &p), Err(Error::Lineage(_))));
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let p = desk();
        let z = IntVector::zeros(8);
        let a = BoostedSketch::build(&z, &z, &p, Boosting::fixed(0.1, 3), &SharedSeed::from_u64(1)).unwrap();
        let bytes = a.to_bytes();
        assert!(BoostedSketch::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(BoostedSketch::from_bytes(&extra).is_err());
        let mut flags = bytes;
        flags[17] = 4;
        assert!(BoostedSketch::from_bytes(&flags).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip(x in prop::collection::vec(-50i64..50, 1..40), s in any::<u64>(), t in 1u32..10) {
            let d = x.len();
            let b = BoostedSketch::build(&IntVector::new(x), &IntVector::zeros(d), &desk(), Boosting::fixed(0.2, t), &SharedSeed::from_u64(s)).unwrap();
            prop_assert_eq!(BoostedSketch::from_bytes(&b.to_bytes()).unwrap(), b);
        }

        #[test]
        fn vote_matches_real_comparison(count in 0u32..5000, t in 1u32..5000) {
            let far = count as f64 >= t as f64 / 16.0;
            prop_assert_eq!(vote(count, t).is_far(), far);
        }
    }
}
