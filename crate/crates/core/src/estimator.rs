//! Distance estimation from boosted sketches at geometric scales.
//!
//! For every `w ∈ W = {⌊−log2 c⌋, …, ⌈log2(dΔ/c)⌉}` a boosted sketch is built
//! at `r = 2^w` with distortion parameter `c/64 − 1`. Given two such
//! multiscale sketches the estimate is `2^{w*−2}`, where `w*` is the largest
//! scale whose boosted decoder answers FAR, and `0` if none does.
//!
//! The estimate never expands in expectation, `E[est] ≤ ‖x−y‖_p`, and on
//! average over any distribution it contracts by at most `64c`.

use serde::{Deserialize, Serialize};

use crate::boosted::{BoostedSketch, BoostedSketcher, Boosting};
use crate::error::{param, Error, Result};
use crate::metric::{check_dims, IntVector};
use crate::randomness::SharedSeed;
use crate::sketch::single::Reader;
use crate::sketch::{Overrides, SketchParams, DELTA1, DELTA2};

fn snap(v: f64) -> f64 {
    let n = v.round();
    if (v - n).abs() <= 1e-12 * n.abs().max(1.0) {
        n
    } else {
        v
    }
}

/// `W = {⌊−log2 c⌋, …, ⌈log2(dΔ/c)⌉}` as an inclusive range.
pub fn scale_set(c: f64, dim: usize, range: i64) -> Result<std::ops::RangeInclusive<i32>> {
    if !(c > 1.0 && c.is_finite()) {
        return param(format!("approximation c must exceed 1, got {c}"));
    }
    if dim == 0 || range < 1 {
        return param("dimension and coordinate range must be at least 1");
    }
    let lo = snap(-c.log2()).floor() as i32;
    let hi = snap((dim as f64 * range as f64 / c).log2()).ceil() as i32;
    if hi < lo {
        return param(format!("empty scale set for c = {c}, d = {dim}, Δ = {range}"));
    }
    Ok(lo..=hi)
}

/// Everything that determines a multiscale sketch besides the seed and median.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// User-facing approximation `c`; per-scale sketches use `c/64 − 1`.
    pub c: f64,
    pub p: f64,
    pub dim: usize,
    /// Coordinate bound `Δ`.
    pub range: i64,
    #[serde(default)]
    pub overrides: Overrides,
    /// Defaults to `1/(dΔ)`.
    #[serde(default)]
    pub delta0: Option<f64>,
    /// Replaces the derived repetition count.
    #[serde(default)]
    pub reps: Option<u32>,
}

impl EstimatorConfig {
    pub fn new(c: f64, p: f64, dim: usize, range: i64) -> Self {
        EstimatorConfig {
            c,
            p,
            dim,
            range,
            overrides: Overrides::default(),
            delta0: None,
            reps: None,
        }
    }

    pub fn with_overrides(mut self, overrides: Overrides) -> Self {
        self.overrides = overrides;
        self
    }

    pub fn with_reps(mut self, reps: u32) -> Self {
        self.reps = Some(reps);
        self
    }

    pub fn delta0(&self) -> f64 {
        self.delta0.unwrap_or(1.0 / (self.dim as f64 * self.range as f64))
    }

    pub fn scales(&self) -> Result<std::ops::RangeInclusive<i32>> {
        scale_set(self.c, self.dim, self.range)
    }

    /// Unit-scale parameters at distortion `c/64 − 1`.
    pub fn base_params(&self) -> Result<SketchParams> {
        SketchParams::derive(self.c / 64.0 - 1.0, self.p, DELTA1, DELTA2, self.overrides)
    }

    pub fn params_at(&self, w: i32) -> Result<SketchParams> {
        self.base_params()?.with_scale(2f64.powi(w))
    }

    pub fn boosting(&self) -> Boosting {
        Boosting {
            delta0: self.delta0(),
            reps_override: self.reps,
        }
    }
}

/// One boosted sketch per scale, plus the centering used.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleSketch {
    config: EstimatorConfig,
    w_min: i32,
    seed_tag: [u8; 8],
    median: IntVector,
    per_scale: Vec<BoostedSketch>,
}

const MAGIC: &[u8; 4] = b"ADSM";
const VERSION: u8 = 1;

impl MultiScaleSketch {
    pub fn build(
        x: &IntVector,
        median: &IntVector,
        config: &EstimatorConfig,
        seed: &SharedSeed,
    ) -> Result<Self> {
        MultiScaleSketcher::new(config.clone(), seed)?.sketch(x, median)
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn scales(&self) -> std::ops::RangeInclusive<i32> {
        self.w_min..=self.w_min + self.per_scale.len() as i32 - 1
    }

    pub fn median(&self) -> &IntVector {
        &self.median
    }

    pub fn per_scale(&self) -> &[BoostedSketch] {
        &self.per_scale
    }

    fn check_lineage(&self, other: &MultiScaleSketch) -> Result<()> {
        if self.config != other.config || self.w_min != other.w_min {
            return Err(Error::Lineage("estimator configurations differ".into()));
        }
        if self.seed_tag != other.seed_tag {
            return Err(Error::Lineage("multiscale sketches use different seeds".into()));
        }
        if self.median != other.median {
            return Err(Error::Lineage("multiscale sketches use different medians".into()));
        }
        Ok(())
    }

    /// Largest scale whose boosted decoder answers FAR.
    pub fn top_far_scale(&self, other: &MultiScaleSketch) -> Result<Option<i32>> {
        self.check_lineage(other)?;
        let base = self.config.base_params()?;
        for (offset, (a, b)) in self.per_scale.iter().zip(&other.per_scale).enumerate().rev() {
            let w = self.w_min + offset as i32;
            let params = base.clone().with_scale(2f64.powi(w))?;
            if crate::boosted::decode_boosted(a, b, &params)?.is_far() {
                return Ok(Some(w));
            }
        }
        Ok(None)
    }

    /// Layout: magic, version, `c: f64`, `p: f64`, `d: u32`, `Δ: i64`,
    /// `|W|: u32`, `w_min: i32`, overrides `L, K, k, U` as `u32` (0 when
    /// derived), seed tag, the median as `d × i64`, then one length-prefixed
    /// boosted sketch per scale in increasing order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.config.c.to_le_bytes());
        out.extend_from_slice(&self.config.p.to_le_bytes());
        out.extend_from_slice(&(self.config.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.config.range.to_le_bytes());
        out.extend_from_slice(&(self.per_scale.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.w_min.to_le_bytes());
        let o = &self.config.overrides;
        for v in [o.levels, o.max_useful, o.stored, o.universe] {
            out.extend_from_slice(&v.unwrap_or(0).to_le_bytes());
        }
        out.extend_from_slice(&self.seed_tag);
        for v in self.median.coords() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for b in &self.per_scale {
            let mut buf = Vec::new();
            b.write_bytes(&mut buf);
            out.extend_from_slice(&(buf.len() as u32).to_le_bytes());
            out.extend_from_slice(&buf);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        if rd.take(4)? != MAGIC {
            return Err(Error::Encoding("bad multiscale magic".into()));
        }
        let version = rd.u8()?;
        if version != VERSION {
            return Err(Error::Encoding(format!("unsupported version {version}")));
        }
        let c = rd.f64()?;
        let p = rd.f64()?;
        let dim = rd.u32()? as usize;
        let range = rd.i64()?;
        let count = rd.u32()?;
        let w_min = rd.i32()?;
        let mut ov = [None; 4];
        for slot in &mut ov {
            let v = rd.u32()?;
            *slot = (v != 0).then_some(v);
        }
        let mut seed_tag = [0u8; 8];
        seed_tag.copy_from_slice(rd.take(8)?);
        let median = IntVector::new((0..dim).map(|_| rd.i64()).collect::<Result<Vec<_>>>()?);
        let mut per_scale = Vec::new();
        for _ in 0..count {
            let len = rd.u32()? as usize;
            per_scale.push(BoostedSketch::from_bytes(rd.take(len)?)?);
        }
        if !rd.is_empty() {
            return Err(Error::Encoding("trailing bytes after multiscale sketch".into()));
        }
        let first = per_scale
            .first()
            .ok_or_else(|| Error::Encoding("multiscale sketch without scales".into()))?;
        let config = EstimatorConfig {
            c,
            p,
            dim,
            range,
            overrides: Overrides {
                levels: ov[0],
                max_useful: ov[1],
                stored: ov[2],
                universe: ov[3],
            },
            delta0: Some(first.delta0()),
            reps: first.is_overridden().then(|| first.reps()),
        };
        Self::finish(config, w_min, seed_tag, median, per_scale)
    }

    fn finish(
        config: EstimatorConfig,
        w_min: i32,
        seed_tag: [u8; 8],
        median: IntVector,
        per_scale: Vec<BoostedSketch>,
    ) -> Result<Self> {
        let scales = config.scales()?;
        if *scales.start() != w_min || scales.count() != per_scale.len() {
            return Err(Error::Encoding("scale range disagrees with configuration".into()));
        }
        Ok(MultiScaleSketch {
            config,
            w_min,
            seed_tag,
            median,
            per_scale,
        })
    }
}

/// `2^{w*−2}` for the largest FAR scale `w*`, or `0`.
pub fn estimate_distance(a: &MultiScaleSketch, b: &MultiScaleSketch) -> Result<f64> {
    Ok(a.top_far_scale(b)?.map_or(0.0, |w| 2f64.powi(w - 2)))
}

/// Reusable randomness for sketching many points at every scale. Scale `w`
/// uses the sub-seed `seed.derive("SCALE", w)`.
#[derive(Clone, Debug)]
pub struct MultiScaleSketcher {
    config: EstimatorConfig,
    w_min: i32,
    seed_tag: [u8; 8],
    per_scale: Vec<BoostedSketcher>,
}

impl MultiScaleSketcher {
    /// The stored configuration always carries the resolved `δ0`.
    pub fn new(mut config: EstimatorConfig, seed: &SharedSeed) -> Result<Self> {
        config.delta0 = Some(config.delta0());
        let scales = config.scales()?;
        let boosting = config.boosting();
        let w_min = *scales.start();
        let per_scale = scales
            .map(|w| {
                BoostedSketcher::new(
                    config.params_at(w)?,
                    boosting,
                    &seed.derive("SCALE", w as i64 as u64),
                    config.dim,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiScaleSketcher {
            config,
            w_min,
            seed_tag: seed.tag(),
            per_scale,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn sketch(&self, x: &IntVector, median: &IntVector) -> Result<MultiScaleSketch> {
        check_dims(self.config.dim, x.dim())?;
        check_dims(self.config.dim, median.dim())?;
        let centered = x.checked_sub(median)?;
        Ok(MultiScaleSketch {
            config: self.config.clone(),
            w_min: self.w_min,
            seed_tag: self.seed_tag,
            median: median.clone(),
            per_scale: self
                .per_scale
                .iter()
                .map(|b| b.sketch_centered(centered.coords()))
                .collect(),
        })
    }
}
