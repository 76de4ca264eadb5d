//! Full-information oracle for the single-scale decoder.
//!
//! The oracle recomputes every threshold set from the raw vectors, compares
//! rounded norms directly instead of through `h2`, and tests membership of
//! coordinate identities in the complete set instead of `h1` values in the
//! stored prefix. The `(k/4)`-size gate and the choice of first element are
//! the same as in the compact decoder, so the two agree unless a hash
//! collides or the stored prefix is too short.

use serde::Serialize;

use crate::error::Result;
use crate::metric::{check_dims, norm_of, IntVector};
use crate::randomness::SharedSeed;

use super::params::SketchParams;
use super::single::Outcome;

struct Level {
    sign: i8,
    level: u32,
    index: i64,
    /// All members of `G` in permutation order.
    members: Vec<usize>,
}

struct FullView {
    nu: i64,
    levels: Vec<Level>,
}

impl FullView {
    fn at(&self, sign: i8, index: i64) -> Option<&Level> {
        self.levels.iter().find(|l| l.sign == sign && l.index == index)
    }
}

fn full_view(centered: &[i64], params: &SketchParams, seed: &SharedSeed) -> FullView {
    let d = centered.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by_key(|&i| (seed.perm_priority(i), i));
    let roots: Vec<f64> = (0..d).map(|i| seed.exp_variate(i).powf(1.0 / params.p)).collect();
    let norm = norm_of(centered, params.p);
    let nu = params.rounded_norm(norm);
    let mut levels = Vec::new();
    for sign in [-1i8, 1] {
        for j in 0..=params.levels {
            let (index, tau) = params.threshold_index(norm, j);
            let members = order
                .iter()
                .copied()
                .filter(|&i| (sign as i64 * centered[i]) as f64 >= tau * roots[i])
                .collect();
            levels.push(Level {
                sign,
                level: j,
                index,
                members,
            });
        }
    }
    FullView { nu, levels }
}

/// A triggering `(A, B)` pair of the full-information Step 2, plus what the
/// compact decoder would see for it.
struct Trigger {
    fires: bool,
    /// `first(A) ∈ G_B` but outside the stored prefix.
    truncated: bool,
    /// `first(A) ∉ G_B` but its `h1` equals some stored `h1` of `B`.
    h1_collision: bool,
}

fn triggers(upper: &FullView, lower: &FullView, params: &SketchParams, seed: &SharedSeed) -> Vec<Trigger> {
    let cap = params.max_useful as usize;
    let keep = params.stored as usize;
    let mut out = Vec::new();
    for a in &upper.levels {
        if a.level == 0 || a.members.len() > cap {
            continue;
        }
        let Some(&first) = a.members.first() else {
            continue;
        };
        let Some(b) = lower.at(a.sign, a.index - 1) else {
            continue;
        };
        if b.members.len() > cap {
            continue;
        }
        if 4 * b.members.len() > keep * a.members.len() {
            continue;
        }
        let pos = b.members.iter().position(|&i| i == first);
        let fires = pos.is_none();
        let truncated = matches!(pos, Some(p) if p >= keep);
        let h1_collision = fires && {
            let h = seed.hash_coord(first, params.universe).unwrap_or(u32::MAX);
            b.members
                .iter()
                .take(keep)
                .any(|&i| seed.hash_coord(i, params.universe).ok() == Some(h))
        };
        out.push(Trigger {
            fires,
            truncated,
            h1_collision,
        });
    }
    out
}

/// Oracle verdict for `(x, y)` centered at `median`.
pub fn reference_decode(
    x: &IntVector,
    y: &IntVector,
    median: &IntVector,
    params: &SketchParams,
    seed: &SharedSeed,
) -> Result<Outcome> {
    check_dims(x.dim(), y.dim())?;
    let vx = full_view(x.checked_sub(median)?.coords(), params, seed);
    let vy = full_view(y.checked_sub(median)?.coords(), params, seed);
    if (vx.nu - vy.nu).abs() >= 2 {
        return Ok(Outcome::Far);
    }
    let fires = |u: &FullView, l: &FullView| triggers(u, l, params, seed).iter().any(|t| t.fires);
    if fires(&vx, &vy) || fires(&vy, &vx) {
        return Ok(Outcome::Far);
    }
    Ok(Outcome::Close)
}

/// Hash and truncation events that can make the compact decoder disagree
/// with [`reference_decode`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CollisionReport {
    /// Rounded norms differ by at least two yet the `h2` pairs intersect.
    pub h2: bool,
    /// A Step 2 first element is absent from the other set, but its `h1`
    /// matches a stored hash.
    pub h1: bool,
    /// A Step 2 first element belongs to the other set only beyond the
    /// stored prefix of `k` elements.
    pub truncation: bool,
}

impl CollisionReport {
    pub fn any_collision(&self) -> bool {
        self.h1 || self.h2
    }
}

pub fn collision_report(
    x: &IntVector,
    y: &IntVector,
    median: &IntVector,
    params: &SketchParams,
    seed: &SharedSeed,
) -> Result<CollisionReport> {
    check_dims(x.dim(), y.dim())?;
    let vx = full_view(x.checked_sub(median)?.coords(), params, seed);
    let vy = full_view(y.checked_sub(median)?.coords(), params, seed);
    let hash = |nu: i64| seed.hash_norm(nu, params.universe);
    let hx = [hash(vx.nu)?, hash(vx.nu + 1)?];
    let hy = [hash(vy.nu)?, hash(vy.nu + 1)?];
    let mut report = CollisionReport {
        h2: (vx.nu - vy.nu).abs() >= 2 && hx.iter().any(|h| hy.contains(h)),
        ..Default::default()
    };
    for (u, l) in [(&vx, &vy), (&vy, &vx)] {
        for t in triggers(u, l, params, seed) {
            report.h1 |= t.h1_collision;
            report.truncation |= t.truncated;
        }
    }
    Ok(report)
}
