//! Single-scale average-distortion sketch.
//!
//! For a centered vector `x̃` with rounded norm `ν = ⌈‖x̃‖_p/r⌉`, each sign
//! `σ ∈ {±1}` and level `j ∈ 0..=L` defines the threshold
//! `τ = (r/δ1^{1/p})·m` with `m = ⌈‖x̃‖_p·δ1^{1/p}/(D2·r)⌉ + j` and the set
//!
//! ```text
//! G(τ, σ) = { i : σ·x̃_i ≥ τ·u_i^{1/p} },   u_i ~ Exp(1).
//! ```
//!
//! The sketch stores `h2(ν)`, `h2(ν+1)` and, per threshold, `|G|` (capped at
//! `K`) with the `h1` hashes of its first `k` members in a shared random
//! order. Two sketches are FAR when their norm windows are disjoint, or when
//! the first member of some `G_x(τ_m)` is missing from a not much larger
//! `G_y(τ_{m-1})`.

pub mod params;
pub mod reference;
pub mod single;

pub use params::{theory_constants, Overrides, SketchParams, SlotMode, TheoryConstants, DELTA1, DELTA2};
pub use reference::{collision_report, reference_decode, CollisionReport};
pub use single::{decode_single_scale, Outcome, Record, SingleScaleSketch, Sketcher};
