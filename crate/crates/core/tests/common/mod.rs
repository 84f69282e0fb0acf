//! Helpers shared by the integration tests.
#![allow(dead_code)]

use kitro::depth_solver::Facing;
use kitro::hypothesis::{edge_weights, HypothesisTree, PathSelection, TreeNode};
use kitro::rotation::exp_so3;
use kitro::skeleton::{BodyState, Shape, SkeletonModel, NUM_JOINTS};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

pub fn rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Matrix3<f64> {
    exp_so3(&(unit_vector(rng) * rng.random_range(0.0..max_angle)))
}

pub fn shape(rng: &mut ChaCha8Rng, scale: f64) -> Shape {
    Shape::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Random pose in front of the camera at a depth of 3 to 6 m.
pub fn body_state(rng: &mut ChaCha8Rng) -> BodyState {
    let mut theta = vec![rotation(rng, std::f64::consts::PI)];
    theta.extend((1..NUM_JOINTS).map(|_| rotation(rng, 1.0)));
    let trans = Vector3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(3.0..6.0),
    );
    BodyState::new(theta, shape(rng, 2.0), trans).unwrap()
}

/// Every `depth`-bit choice vector in lexicographic order, toward first.
pub fn all_paths(depth: usize) -> Vec<Vec<Facing>> {
    (0..1usize << depth)
        .map(|bits| {
            (0..depth)
                .map(|d| Facing::from_index((bits >> (depth - 1 - d)) & 1))
                .collect()
        })
        .collect()
}

/// Selection found by scoring every root-to-leaf path.
pub fn brute_force_best(tree: &HypothesisTree) -> PathSelection {
    let mut best: Option<PathSelection> = None;
    for choices in all_paths(tree.depth()) {
        let sel = PathSelection::from_choices(tree, &choices).unwrap();
        if best.as_ref().is_none_or(|b| sel.product > b.product) {
            best = Some(sel);
        }
    }
    best.unwrap()
}

/// A tree of the given depth with softmax edge weights over random scores.
pub fn random_scored_tree(rng: &mut ChaCha8Rng, depth: usize) -> HypothesisTree {
    let levels = (0..depth)
        .map(|d| {
            let mut level = Vec::with_capacity(2 << d);
            for _ in 0..(1usize << d) {
                let (w0, w1) = edge_weights(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                for (k, w) in [w0, w1].into_iter().enumerate() {
                    level.push(TreeNode {
                        branch: Facing::from_index(k),
                        position: Vector3::zeros(),
                        offset: Vector3::zeros(),
                        depth: 1.0,
                        parent_depth: 1.0,
                        valid: true,
                        rectified: false,
                        hyp_abs_rot: Matrix3::identity(),
                        rel_rot: Matrix3::identity(),
                        cos_sim: 0.0,
                        weight: w,
                    });
                }
            }
            level
        })
        .collect();
    HypothesisTree {
        chain_id: 0,
        bones: (0..depth).map(|d| (d, d + 1)).collect(),
        root_position: Vector3::new(0.0, 0.0, 1.0),
        root_depth: 1.0,
        anchor_rot: None,
        levels,
        scored: true,
    }
}

pub fn canonical() -> SkeletonModel {
    SkeletonModel::canonical()
}
