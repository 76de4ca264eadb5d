use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param, Result};

/// Canonical failure constants `δ1 = 1/64`, `δ2 = 1/8`.
pub const DELTA1: f64 = 1.0 / 64.0;
pub const DELTA2: f64 = 1.0 / 8.0;

const MAX_COUNT: f64 = (1u64 << 62) as f64;

/// What each stored coordinate slot holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SlotMode {
    /// `h1(i)`, the default.
    #[default]
    Hashed,
    /// The raw coordinate index `i` (certificate-emitting variant).
    RawIndex,
}

/// Explicit replacements for the derived `(L, K, k, U)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Number of thresholds `L`.
    #[serde(default)]
    pub levels: Option<u32>,
    /// Useful-coordinate cap `K`.
    #[serde(default)]
    pub max_useful: Option<u32>,
    /// Stored-coordinate count `k`.
    #[serde(default)]
    pub stored: Option<u32>,
    /// Hash universe `U`.
    #[serde(default)]
    pub universe: Option<u32>,
}

impl Overrides {
    /// The desk-scale regime used throughout the test-suite: `L = 8, K = 64, k = 32`
    /// (so `U = 4096`).
    pub fn desk() -> Self {
        Overrides {
            levels: Some(8),
            max_useful: Some(64),
            stored: Some(32),
            universe: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == Overrides::default()
    }
}

/// Constants as the analysis prescribes them, before any override.
/// Counts are kept as reals so astronomically large values can be reported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub d1: f64,
    pub d2: f64,
    pub levels: f64,
    pub max_useful: f64,
    pub stored: f64,
    pub universe: f64,
    /// Minimum distortion for which the single-scale guarantees hold.
    pub min_distortion: f64,
    pub valid: bool,
}

/// Evaluates the parameter formulas for `(c, p, δ1, δ2)`.
///
/// * `D1 = ln(2/δ2)^{1/p}`, `D2 = 2·D1`
/// * `L = ⌊c·δ1^{1/p}/(4·D1) − 2⌋`
/// * `K = ⌈2·D2^p/δ2⌉`
/// * `k = ⌈16·K^{8/(δ2(L−1))}/δ2 + 2·ln(4L/δ1)⌉`
/// * `U = ⌈16·k/δ2⌉`
pub fn theory_constants(c: f64, p: f64, delta1: f64, delta2: f64) -> TheoryConstants {
    let d1 = (2.0 / delta2).ln().powf(1.0 / p);
    let d2 = 2.0 * d1;
    let levels = (c * delta1.powf(1.0 / p) / (4.0 * d1) - 2.0).floor();
    let max_useful = (2.0 * d2.powf(p) / delta2).ceil();
    let stored = stored_count(max_useful, levels, delta1, delta2);
    let universe = (16.0 * stored / delta2).ceil();
    let min_distortion = 16.0 * ((2.0 / delta2).ln() / delta1).powf(1.0 / p);
    TheoryConstants {
        d1,
        d2,
        levels,
        max_useful,
        stored,
        universe,
        min_distortion,
        valid: c >= min_distortion,
    }
}

fn stored_count(max_useful: f64, levels: f64, delta1: f64, delta2: f64) -> f64 {
    if levels < 2.0 {
        return f64::INFINITY;
    }
    let exponent = 8.0 / (delta2 * (levels - 1.0));
    (16.0 * max_useful.powf(exponent) / delta2 + 2.0 * (4.0 * levels / delta1).ln()).ceil()
}

fn as_count(v: f64, what: &str) -> Result<u32> {
    if !v.is_finite() || v > MAX_COUNT {
        return param(format!(
            "derived {what} = {v:e} overflows; supply an explicit override"
        ));
    }
    if v > u32::MAX as f64 {
        return param(format!(
            "derived {what} = {v:e} exceeds the supported width; supply an explicit override"
        ));
    }
    Ok(v as u32)
}

/// Resolved parameters of one single-scale sketch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    pub p: f64,
    pub c: f64,
    /// Scale `r`.
    pub r: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub d1: f64,
    pub d2: f64,
    /// `L`: thresholds are indexed `j = 0..=L`.
    pub levels: u32,
    /// `K`: sizes above this are stored as too large.
    pub max_useful: u32,
    /// `k`: number of leading coordinates recorded per threshold.
    pub stored: u32,
    /// `U`: range of `h1` and `h2`.
    pub universe: u32,
    /// True iff `c` meets the analysis floor and nothing was overridden.
    pub theory_valid: bool,
    pub overrides: Overrides,
    pub slots: SlotMode,
    pub theory: TheoryConstants,
}

impl SketchParams {
    /// Derives all constants at scale `r = 1`; see [`SketchParams::with_scale`].
    ///
    /// Without overrides this fails when `L < 2` or when `k` overflows, which
    /// is the common case at small `(p, c)`. An `L` override lifts the
    /// `c > 1` requirement since `c` then only feeds the theory report; the
    /// estimator relies on this for `c/64 − 1 ≤ 0`.
    pub fn derive(c: f64, p: f64, delta1: f64, delta2: f64, overrides: Overrides) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return param(format!("p must be >= 1, got {p}"));
        }
        if !(delta1 > 0.0 && delta1 < 1.0 && delta2 > 0.0 && delta2 < 1.0) {
            return param("delta1 and delta2 must lie in (0, 1)");
        }
        if overrides.levels.is_none() && !(c > 1.0) {
            return param(format!("distortion c must exceed 1, got {c}"));
        }
        if !c.is_finite() {
            return param(format!("distortion c must be finite, got {c}"));
        }
        let theory = theory_constants(c, p, delta1, delta2);

        let levels = match overrides.levels {
            Some(l) => l,
            None => {
                if theory.levels < 2.0 {
                    return param(format!(
                        "L = {} < 2 at c = {c}, p = {p}; c must be at least {:.3} or L overridden",
                        theory.levels, theory.min_distortion
                    ));
                }
                as_count(theory.levels, "L")?
            }
        };
        let max_useful = match overrides.max_useful {
            Some(k) => k,
            None => as_count(theory.max_useful, "K")?,
        };
        let stored = match overrides.stored {
            Some(k) => k,
            None => as_count(
                stored_count(max_useful as f64, levels as f64, delta1, delta2),
                "k",
            )?,
        };
        let universe = match overrides.universe {
            Some(u) => u,
            None => as_count((16.0 * stored as f64 / delta2).ceil(), "U")?,
        };
        if levels < 1 || max_useful < 1 || stored < 1 || universe < 1 {
            return param("L, K, k and U must all be at least 1");
        }
        if universe > i32::MAX as u32 {
            return param("U must fit in 31 bits");
        }
        if stored > i16::MAX as u32 {
            return param("k must fit in 15 bits");
        }
        if universe < stored {
            return param(format!("U = {universe} must be at least k = {stored}"));
        }
        Ok(SketchParams {
            p,
            c,
            r: 1.0,
            delta1,
            delta2,
            d1: theory.d1,
            d2: theory.d2,
            levels,
            max_useful,
            stored,
            universe,
            theory_valid: theory.valid && overrides.is_empty(),
            overrides,
            slots: SlotMode::Hashed,
            theory,
        })
    }

    /// Canonical constants `δ1 = 1/64`, `δ2 = 1/8`.
    pub fn canonical(c: f64, p: f64, overrides: Overrides) -> Result<Self> {
        SketchParams::derive(c, p, DELTA1, DELTA2, overrides)
    }

    pub fn with_scale(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return param(format!("scale r must be positive, got {r}"));
        }
        self.r = r;
        Ok(self)
    }

    pub fn with_slots(mut self, slots: SlotMode) -> Self {
        self.slots = slots;
        self
    }

    /// `δ1^{1/p}`.
    pub fn delta1_root(&self) -> f64 {
        self.delta1.powf(1.0 / self.p)
    }

    /// Gap between consecutive thresholds, `r/δ1^{1/p}`.
    pub fn threshold_step(&self) -> f64 {
        self.r / self.delta1_root()
    }

    /// `m = ⌈ν·δ1^{1/p}/(D2·r) + j⌉` and `τ = (r/δ1^{1/p})·m`.
    pub fn threshold_index(&self, nu: f64, j: u32) -> (i64, f64) {
        let m = self.base_index(nu) + j as i64;
        (m, self.threshold_value(m))
    }

    pub(crate) fn base_index(&self, nu: f64) -> i64 {
        (nu * self.delta1_root() / (self.d2 * self.r)).ceil() as i64
    }

    pub(crate) fn threshold_value(&self, m: i64) -> f64 {
        self.threshold_step() * m as f64
    }

    /// `ν = ⌈‖x‖/r⌉`.
    pub fn rounded_norm(&self, norm: f64) -> i64 {
        (norm / self.r).ceil() as i64
    }

    /// Eight-byte digest of everything that affects sketch bytes or decoding.
    pub fn fingerprint(&self) -> [u8; 8] {
        let mut h = Sha256::new();
        h.update(b"avgsketch/params/v1");
        for v in [self.p, self.c, self.r, self.delta1, self.delta2] {
            h.update(v.to_bits().to_le_bytes());
        }
        for v in [self.levels, self.max_useful, self.stored, self.universe] {
            h.update(v.to_le_bytes());
        }
        h.update([match self.slots {
            SlotMode::Hashed => 0u8,
            SlotMode::RawIndex => 1u8,
        }]);
        let digest = h.finalize();
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn theory_constants_at_c64_p4() {
        let t = theory_constants(64.0, 4.0, DELTA1, DELTA2);
        // D1 = (ln 16)^{1/4}
        assert!((t.d1 - 2.772589f64.powf(0.25)).abs() < 1e-6, "{}", t.d1);
        assert_eq!(t.d2, 2.0 * t.d1);
        assert_eq!(t.levels, 2.0);
        assert_eq!(t.max_useful, 710.0);
        // 16·(64·ln 16)^{1/4} = 58.396…
        assert!(
            (t.min_distortion - 58.396436).abs() < 1e-5,
            "{}",
            t.min_distortion
        );
        assert!(t.valid);
        // k = ⌈16·710^{64}/δ2 + …⌉ is astronomically large.
        assert!(t.stored > 1e150);
    }

    #[test]
    fn derive_without_overrides_reports_overflow() {
        match SketchParams::canonical(64.0, 4.0, Overrides::default()) {
            Err(Error::Parameter(msg)) => assert!(msg.contains("override"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn derive_rejects_small_l() {
        match SketchParams::canonical(8.0, 4.0, Overrides::default()) {
            Err(Error::Parameter(msg)) => assert!(msg.contains("L ="), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn derive_with_overrides() {
        let p = SketchParams::canonical(64.0, 4.0, Overrides::desk()).unwrap();
        assert_eq!(p.levels, 8);
        assert_eq!(p.max_useful, 64);
        assert_eq!(p.stored, 32);
        assert_eq!(p.universe, 4096);
        assert!(!p.theory_valid);
        assert!(p.theory.valid);
        assert_eq!(p.d2, 2.0 * p.d1);
    }

    #[test]
    fn derive_accepts_full_theory_regime() {
        // Large c keeps k within the 15-bit slot count: c = 1000, p = 8.
        let p = SketchParams::canonical(1000.0, 8.0, Overrides::default()).unwrap();
        let t = theory_constants(1000.0, 8.0, DELTA1, DELTA2);
        assert!(p.theory_valid);
        assert!(p.levels >= 2);
        assert_eq!(p.levels as f64, t.levels);
        assert_eq!(p.max_useful as f64, t.max_useful);
        assert_eq!(p.stored as f64, t.stored);
        assert_eq!(p.universe, (16.0 * p.stored as f64 / DELTA2).ceil() as u32);
    }

    #[test]
    fn derive_validates_inputs() {
        assert!(SketchParams::canonical(64.0, 0.5, Overrides::desk()).is_err());
        assert!(SketchParams::derive(64.0, 4.0, 0.0, 0.1, Overrides::desk()).is_err());
        assert!(SketchParams::derive(64.0, 4.0, 0.1, 1.0, Overrides::desk()).is_err());
        assert!(SketchParams::canonical(1.0, 4.0, Overrides::default()).is_err());
        // With an L override, c only feeds the theory report.
        assert!(SketchParams::canonical(0.5, 4.0, Overrides::desk()).is_ok());
        let bad_u = Overrides {
            universe: Some(4),
            ..Overrides::desk()
        };
        assert!(SketchParams::canonical(64.0, 4.0, bad_u).is_err());
        let base = SketchParams::canonical(64.0, 4.0, Overrides::desk()).unwrap();
        assert!(base.clone().with_scale(0.0).is_err());
        assert!(base.with_scale(2.5).is_ok());
    }

    #[test]
    fn threshold_index_examples() {
        let p = SketchParams::canonical(64.0, 4.0, Overrides::desk()).unwrap();
        assert_eq!(p.threshold_index(0.0, 0), (0, 0.0));
        let (m0, t0) = p.threshold_index(10.0, 0);
        assert_eq!(m0, 2);
        assert!((t0 - 5.656854).abs() < 1e-5, "{t0}");
        let (m1, t1) = p.threshold_index(10.0, 1);
        assert_eq!(m1, 3);
        assert!((t1 - 8.485281).abs() < 1e-5, "{t1}");
    }

    #[test]
    fn fingerprint_tracks_params() {
        let a = SketchParams::canonical(64.0, 4.0, Overrides::desk()).unwrap();
        let b = a.clone().with_scale(2.0).unwrap();
        let c = a.clone().with_slots(SlotMode::RawIndex);
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
