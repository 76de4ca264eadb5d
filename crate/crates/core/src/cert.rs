//! Hard distribution and certificate-emitting decoding.
//!
//! The hard distribution `μ` lives on `{0, …, c}^d` with `d = 2^{p−1}`. Sample
//! nested uniform subsets `J_0 ⊃ J_1 ⊃ … ⊃ J_{c−1}` of sizes
//! `n_0 = 2^{p−2}`, `n_i = n_{i−1}·2^{−(p−2)/(c−1)}` (so `n_{c−1} = 1`) and
//! output `Σ_i 1_{J_i}`. Every sample has the same value multiset, hence the
//! same `ℓp` norm, while two independent samples differ by `c` in some
//! coordinate with probability at least `1/2`.
//!
//! A pair `(i, ℓ)` certifies `‖x − y‖_p > r` for `r < 2` when `x_i < ℓ < y_i`,
//! because then `|x_i − y_i| ≥ 2`. The certifying decoder runs the FAR search
//! with raw coordinate identities at threshold scale `r′ = 16r`, additionally
//! requires `u_i > 2^{−(p+2)}`, and emits
//!
//! ```text
//! ℓ = ⌊t·u_i^{1/p} − (r′/2)·(u_i/δ1)^{1/p}⌋
//! ```
//!
//! for the hit threshold `t` and first coordinate `i`.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::metric::{distance_of, IntVector};
use crate::randomness::SharedSeed;
use crate::sketch::{Overrides, SingleScaleSketch, SketchParams, SlotMode};

/// Largest supported `p`; the dimension is `2^{p−1}`.
pub const MAX_HARD_P: u32 = 24;

/// Shape of the hard distribution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardDistributionSpec {
    p: u32,
    c: u32,
    sizes: Vec<usize>,
    rounded: bool,
}

impl HardDistributionSpec {
    /// Requires `(p − 2)/(c − 1)` to be an integer, as in the construction.
    pub fn new(p: u32, c: u32) -> Result<Self> {
        Self::check_range(p, c)?;
        if !(p - 2).is_multiple_of(c - 1) {
            return param(format!(
                "(p − 2)/(c − 1) = {}/{} is not an integer; use with_rounded_levels",
                p - 2,
                c - 1
            ));
        }
        let step = (p - 2) / (c - 1);
        let sizes = (0..c).map(|i| 1usize << (p - 2 - i * step)).collect();
        Ok(HardDistributionSpec {
            p,
            c,
            sizes,
            rounded: false,
        })
    }

    /// Relaxes divisibility: `n_i = round(2^{(p−2)(c−1−i)/(c−1)})`. Agrees with
    /// [`HardDistributionSpec::new`] whenever that succeeds.
    pub fn with_rounded_levels(p: u32, c: u32) -> Result<Self> {
        Self::check_range(p, c)?;
        let span = (p - 2) as f64;
        let sizes: Vec<usize> = (0..c)
            .map(|i| 2f64.powf(span * (c - 1 - i) as f64 / (c - 1) as f64).round() as usize)
            .collect();
        if sizes.windows(2).any(|w| w[1] >= w[0]) {
            return param(format!(
                "rounded level sizes {sizes:?} are not strictly decreasing"
            ));
        }
        let rounded = !(p - 2).is_multiple_of(c - 1);
        Ok(HardDistributionSpec { p, c, sizes, rounded })
    }

    fn check_range(p: u32, c: u32) -> Result<()> {
        if !(2..=MAX_HARD_P).contains(&p) {
            return param(format!("p must lie in 2..={MAX_HARD_P}, got {p}"));
        }
        if c < 2 {
            return param(format!("c must be at least 2, got {c}"));
        }
        if c - 1 > p - 2 && p > 2 {
            return param(format!("c − 1 = {} exceeds p − 2 = {}", c - 1, p - 2));
        }
        if p == 2 && c != 2 {
            return param("p = 2 admits only c = 2");
        }
        Ok(())
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn c(&self) -> u32 {
        self.c
    }

    /// `d = 2^{p−1}`.
    pub fn dim(&self) -> usize {
        1usize << (self.p - 1)
    }

    /// `(n_0, …, n_{c−1})`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Whether the level sizes were rounded because of divisibility.
    pub fn is_rounded(&self) -> bool {
        self.rounded
    }

    /// Number of coordinates equal to `v`, for `v ∈ 0..=c`.
    pub fn value_count(&self, v: u32) -> usize {
        let n = |i: i64| -> usize {
            if i < 0 {
                self.dim()
            } else {
                self.sizes.get(i as usize).copied().unwrap_or(0)
            }
        };
        n(v as i64 - 1) - n(v as i64)
    }

    /// `‖x‖_p` shared by every sample.
    pub fn sample_norm(&self) -> f64 {
        let p = self.p as f64;
        (1..=self.c)
            .map(|v| self.value_count(v) as f64 * (v as f64).powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// Nested index sets `J_0 ⊃ … ⊃ J_{c−1}`, each in increasing order.
    pub fn sample_sets<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<usize>> {
        // A uniform n_0-subset in uniform random order: every prefix is a
        // uniform subset of the previous one.
        let order = index::sample(rng, self.dim(), self.sizes[0]).into_vec();
        self.sizes
            .iter()
            .map(|&n| {
                let mut set = order[..n].to_vec();
                set.sort_unstable();
                set
            })
            .collect()
    }

    pub fn sample_tuple_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<IntVector> {
        self.sample_sets(rng)
            .into_iter()
            .map(|set| {
                let mut v = vec![0i64; self.dim()];
                for i in set {
                    v[i] = 1;
                }
                IntVector::new(v)
            })
            .collect()
    }

    pub fn sample_point_with<R: Rng + ?Sized>(&self, rng: &mut R) -> IntVector {
        let order = index::sample(rng, self.dim(), self.sizes[0]).into_vec();
        let mut v = vec![0i64; self.dim()];
        for (pos, &i) in order.iter().enumerate() {
            v[i] = self.sizes.iter().take_while(|&&n| pos < n).count() as i64;
        }
        IntVector::new(v)
    }
}

/// `(x^{(0)}, …, x^{(c−1)})`: indicator vectors of the nested sets.
pub fn sample_hard_tuple(spec: &HardDistributionSpec, seed: &SharedSeed) -> Vec<IntVector> {
    spec.sample_tuple_with(&mut seed.rng("hard-tuple"))
}

/// One sample of `μ`.
pub fn sample_hard_point(spec: &HardDistributionSpec, seed: &SharedSeed) -> IntVector {
    spec.sample_point_with(&mut seed.rng("hard-point"))
}

/// Claim that `x_i < ℓ < y_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Certificate {
    pub index: usize,
    pub level: i64,
}

pub fn is_valid_certificate(x: &IntVector, y: &IntVector, cert: Certificate) -> Result<bool> {
    crate::metric::check_dims(x.dim(), y.dim())?;
    if cert.index >= x.dim() {
        return param(format!(
            "certificate index {} out of range for dimension {}",
            cert.index,
            x.dim()
        ));
    }
    Ok(x[cert.index] < cert.level && cert.level < y[cert.index])
}

/// Which sketch supplied the certificate's coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upper {
    /// The first argument; the certificate reads `b_i < ℓ < a_i`.
    A,
    /// The second argument; the certificate reads `a_i < ℓ < b_i`.
    B,
}

/// An emitted certificate and its orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emission {
    pub cert: Certificate,
    pub upper: Upper,
}

impl Emission {
    /// Checks the certificate against the raw vectors behind `a` and `b`.
    pub fn is_valid(&self, a: &IntVector, b: &IntVector) -> Result<bool> {
        match self.upper {
            Upper::A => is_valid_certificate(b, a, self.cert),
            Upper::B => is_valid_certificate(a, b, self.cert),
        }
    }
}

/// Sketch parameters for certification: threshold scale `r′ = 16r`, raw
/// coordinate slots, distortion `c`.
pub fn certification_params(
    spec: &HardDistributionSpec,
    r: f64,
    overrides: Overrides,
) -> Result<SketchParams> {
    if !(r > 0.0 && r < 2.0) {
        return param(format!("certificate radius r must lie in (0, 2), got {r}"));
    }
    Ok(SketchParams::canonical(spec.c as f64, spec.p as f64, overrides)?
        .with_scale(16.0 * r)?
        .with_slots(SlotMode::RawIndex))
}

/// Runs the `σ = +1` FAR search in both role orders and returns the first hit
/// that also passes `u_i > 2^{−(p+2)}`, with `ℓ` computed from the hit.
pub fn certify_decode(
    a: &SingleScaleSketch,
    b: &SingleScaleSketch,
    params: &SketchParams,
    seed: &SharedSeed,
) -> Result<Option<Emission>> {
    if params.slots != SlotMode::RawIndex {
        return Err(Error::Parameter(
            "certification needs sketches that store raw coordinate indices".into(),
        ));
    }
    let fp = params.fingerprint();
    if a.fingerprint() != fp || b.fingerprint() != fp {
        return Err(Error::Lineage(
            "sketch was built with different parameters".into(),
        ));
    }
    let floor = 2f64.powi(-(params.p as i32 + 2));
    let half_gap = params.threshold_step() / 2.0;
    for (upper, lo, side) in [(a, b, Upper::A), (b, a, Upper::B)] {
        for rec in upper.records().iter().filter(|r| r.sign > 0 && r.level >= 1) {
            let (Some(size), Some(first)) = (rec.size, rec.first()) else {
                continue;
            };
            let Some(other) = lo.record_at(1, rec.index - 1) else {
                continue;
            };
            let Some(other_size) = other.size else {
                continue;
            };
            if 4 * other_size as u64 > params.stored as u64 * size as u64 || other.slots.contains(&first) {
                continue;
            }
            let u = seed.exp_variate(first as usize);
            if u <= floor {
                continue;
            }
            let t = params.threshold_value(rec.index);
            // (r′/2)(u/δ1)^{1/p} = (r′/(2δ1^{1/p}))·u^{1/p}
            let root = u.powf(1.0 / params.p);
            let level = (t * root - half_gap * root).floor() as i64;
            return Ok(Some(Emission {
                cert: Certificate {
                    index: first as usize,
                    level,
                },
                upper: side,
            }));
        }
    }
    Ok(None)
}

/// Outcome of one certification trial on `(X, Y) ∼ μ×μ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertTrial {
    pub emission: Option<Emission>,
    pub valid: bool,
    pub distance: f64,
}

/// Samples `X, Y ∼ μ`, sketches both with median 0 and decodes.
pub fn certification_trial(
    spec: &HardDistributionSpec,
    params: &SketchParams,
    seed: &SharedSeed,
) -> Result<CertTrial> {
    let mut rng = seed.rng("cert-trial");
    let x = spec.sample_point_with(&mut rng);
    let y = spec.sample_point_with(&mut rng);
    let zero = IntVector::zeros(spec.dim());
    let sketch_seed = seed.derive("SKETCH", 0);
    let a = SingleScaleSketch::build(&x, &zero, params, &sketch_seed)?;
    let b = SingleScaleSketch::build(&y, &zero, params, &sketch_seed)?;
    let emission = certify_decode(&a, &b, params, &sketch_seed)?;
    let valid = match emission {
        Some(e) => e.is_valid(&x, &y)?,
        None => false,
    };
    Ok(CertTrial {
        emission,
        valid,
        distance: distance_of(x.coords(), y.coords(), spec.p as f64),
    })
}
