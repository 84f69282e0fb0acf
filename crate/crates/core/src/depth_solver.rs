//! Closed-form two-solution bone geometry.
//!
//! A child joint lies on its keypoint ray at bone length from the parent.
//! With the parent at distance `d` from the camera center and the rays
//! meeting at angle `α`, the two candidates sit at distances
//! `d·cos α ∓ √(bl² − (d·sin α)²)` along the child ray.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{KitroError, Result};

/// Which root of the two-solution pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    /// Smaller child depth; the bone points toward the camera.
    Toward,
    /// Larger child depth; the bone points away from the camera.
    Away,
}

impl Facing {
    pub fn index(self) -> usize {
        match self {
            Facing::Toward => 0,
            Facing::Away => 1,
        }
    }

    pub fn from_index(k: usize) -> Self {
        if k == 0 {
            Facing::Toward
        } else {
            Facing::Away
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Facing::Toward => Facing::Away,
            Facing::Away => Facing::Toward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildCandidate {
    /// Child position in the camera frame.
    pub position: Vector3<f64>,
    /// Distance from the camera center along the child ray.
    pub depth: f64,
    /// False when the candidate sits at or behind the camera.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneSolutionPair {
    pub toward: ChildCandidate,
    pub away: ChildCandidate,
    /// `bl² − (d·sin α)²` before clamping.
    pub discriminant: f64,
    /// Set when the discriminant was negative and clamped to zero.
    pub rectified: bool,
    /// Parent position the offsets are taken from.
    pub parent_pos: Vector3<f64>,
    /// Unit child ray.
    pub child_ray: Vector3<f64>,
}

impl BoneSolutionPair {
    pub fn candidate(&self, facing: Facing) -> &ChildCandidate {
        match facing {
            Facing::Toward => &self.toward,
            Facing::Away => &self.away,
        }
    }

    /// Parent-to-child vector of a candidate.
    pub fn offset(&self, facing: Facing) -> Vector3<f64> {
        self.candidate(facing).position - self.parent_pos
    }

    /// Angle between the two candidate bone directions, in radians.
    pub fn separation(&self) -> f64 {
        let a = self.offset(Facing::Toward);
        let b = self.offset(Facing::Away);
        a.cross(&b).norm().atan2(a.dot(&b))
    }
}

pub fn solve_child(
    parent_pos: &Vector3<f64>,
    parent_depth: f64,
    child_ray: &Vector3<f64>,
    parent_ray: &Vector3<f64>,
    bone_len: f64,
) -> Result<BoneSolutionPair> {
    if !(parent_depth > 0.0) {
        return Err(KitroError::InvalidInput(format!(
            "parent depth must be positive, got {parent_depth}"
        )));
    }
    if !(bone_len > 0.0) {
        return Err(KitroError::InvalidInput(format!(
            "bone length must be positive, got {bone_len}"
        )));
    }
    let c_norm = child_ray.norm();
    let p_norm = parent_ray.norm();
    if !(c_norm > 1e-12) || !(p_norm > 1e-12) {
        return Err(KitroError::Degenerate("near-zero ray direction".into()));
    }
    let c = child_ray / c_norm;
    let p = parent_ray / p_norm;

    let alpha = p.cross(&c).norm().atan2(p.dot(&c));
    let (sin_a, cos_a) = alpha.sin_cos();
    let perp = parent_depth * sin_a;
    let discriminant = bone_len * bone_len - perp * perp;
    let rectified = discriminant < 0.0;
    let half_chord = discriminant.max(0.0).sqrt();

    let to_foot = parent_depth * (cos_a * c - p);
    let make = |sign: f64| {
        let depth = parent_depth * cos_a + sign * half_chord;
        ChildCandidate {
            position: parent_pos + to_foot + sign * half_chord * c,
            depth,
            valid: depth > 0.0,
        }
    };
    Ok(BoneSolutionPair {
        toward: make(-1.0),
        away: make(1.0),
        discriminant,
        rectified,
        parent_pos: *parent_pos,
        child_ray: c,
    })
}

/// Facing of an arbitrary bone vector relative to a solution pair: the sign
/// of its component along the child ray. For vectors of bone length this is
/// the nearer of the two candidates.
pub fn facing_of(pair: &BoneSolutionPair, bone_vec: &Vector3<f64>) -> Facing {
    if bone_vec.dot(&pair.child_ray) > 0.0 {
        Facing::Away
    } else {
        Facing::Toward
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacingVerdict {
    /// Facing read off the reference direction.
    pub reference: Facing,
    pub matches: bool,
    /// The candidates are closer than the margin, so either facing is
    /// acceptable.
    pub ambiguous: bool,
}

impl FacingVerdict {
    pub fn correct_with_margin(&self) -> bool {
        self.matches || self.ambiguous
    }
}

/// Default ambiguity margin between the two candidate directions.
pub const DEFAULT_FACING_MARGIN_DEG: f64 = 10.0;

/// Compare the facing of `reference_dir` with the `chosen` branch.
pub fn classify_facing(
    pair: &BoneSolutionPair,
    chosen: Facing,
    reference_dir: &Vector3<f64>,
    margin_rad: f64,
) -> FacingVerdict {
    let reference = facing_of(pair, reference_dir);
    FacingVerdict {
        reference,
        matches: reference == chosen,
        ambiguous: pair.separation() < margin_rad,
    }
}
