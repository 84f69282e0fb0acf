//! Per-chain binary decision trees over bone-facing choices.
//!
//! Each level of a tree corresponds to one bone of a kinematic chain and
//! holds the two closed-form child candidates for every node of the level
//! above, so level `d` has `2^(d+1)` nodes. Node `i` of level `d` hangs from
//! node `i / 2` of level `d - 1` and takes branch `i % 2` (0 = toward).

use log::warn;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::depth_solver::{solve_child, Facing};
use crate::error::{KitroError, Result};
use crate::rotation::{
    best_rotation_multi, geodesic_cos, swing_between_or_half_turn, update_joint_rotation,
};
use crate::skeleton::{BodyState, Bone, Chain, SkeletonModel};

pub const DEFAULT_MAX_CHAIN_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub branch: Facing,
    /// Candidate child joint, camera frame.
    pub position: Vector3<f64>,
    /// Candidate bone vector from the parent node.
    pub offset: Vector3<f64>,
    pub depth: f64,
    pub parent_depth: f64,
    /// Candidate in front of the camera with every ancestor valid.
    pub valid: bool,
    pub rectified: bool,
    /// Hypothetical absolute rotation of the bone's parent joint.
    pub hyp_abs_rot: Matrix3<f64>,
    /// Hypothetical relative rotation of the bone's parent joint.
    pub rel_rot: Matrix3<f64>,
    pub cos_sim: f64,
    /// Edge weight given the path to the parent node.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisTree {
    pub chain_id: usize,
    pub bones: Vec<Bone>,
    /// Chain root placed on its keypoint ray.
    pub root_position: Vector3<f64>,
    pub root_depth: f64,
    /// Absolute rotation of the chain root's parent under the hypothesis the
    /// chain is conditioned on. `None` for chains hanging from the body root.
    pub anchor_rot: Option<Matrix3<f64>>,
    pub levels: Vec<Vec<TreeNode>>,
    pub scored: bool,
}

impl HypothesisTree {
    pub fn depth(&self) -> usize {
        self.bones.len()
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn rectified_count(&self) -> usize {
        self.levels
            .iter()
            .flatten()
            .filter(|n| n.rectified && n.valid)
            .count()
    }

    /// Indices of the nodes along a path, one per level.
    pub fn node_indices(choices: &[Facing]) -> Vec<usize> {
        let mut idx = Vec::with_capacity(choices.len());
        let mut cur = 0usize;
        for (d, f) in choices.iter().enumerate() {
            cur = if d == 0 {
                f.index()
            } else {
                2 * cur + f.index()
            };
            idx.push(cur);
        }
        idx
    }

    pub fn parent_position(&self, level: usize, index: usize) -> Vector3<f64> {
        if level == 0 {
            self.root_position
        } else {
            self.levels[level - 1][index / 2].position
        }
    }
}

/// Build the candidate tree for one chain. `bone_lengths` is indexed by
/// child joint.
pub fn build_tree(
    chain_id: usize,
    chain: &Chain,
    root_pos: &Vector3<f64>,
    keypoints: &[Vector2<f64>],
    bone_lengths: &[f64],
    intr: &CameraIntrinsics,
    max_depth: usize,
) -> Result<HypothesisTree> {
    if chain.bones.len() > max_depth {
        return Err(KitroError::ChainTooLong {
            len: chain.bones.len(),
            max: max_depth,
        });
    }
    let root_depth = root_pos.norm();
    if !(root_pos.z > 0.0) || !root_depth.is_finite() {
        return Err(KitroError::NotProjectable {
            index: chain.root,
            depth: root_pos.z,
        });
    }
    let root_position = root_depth * intr.cast_ray(&keypoints[chain.root]);

    let mut levels: Vec<Vec<TreeNode>> = Vec::with_capacity(chain.bones.len());
    for (d, &(p, c)) in chain.bones.iter().enumerate() {
        let parent_ray = intr.cast_ray(&keypoints[p]);
        let child_ray = intr.cast_ray(&keypoints[c]);
        let parents: Vec<(Vector3<f64>, f64, bool)> = if d == 0 {
            vec![(root_position, root_depth, true)]
        } else {
            levels[d - 1]
                .iter()
                .map(|n| (n.position, n.depth, n.valid))
                .collect()
        };
        let mut level = Vec::with_capacity(2 * parents.len());
        for (pos, depth, usable) in parents {
            if usable {
                let pair = solve_child(&pos, depth, &child_ray, &parent_ray, bone_lengths[c])?;
                for facing in [Facing::Toward, Facing::Away] {
                    let cand = pair.candidate(facing);
                    level.push(TreeNode {
                        branch: facing,
                        position: cand.position,
                        offset: cand.position - pos,
                        depth: cand.depth,
                        parent_depth: depth,
                        valid: cand.valid,
                        rectified: pair.rectified,
                        hyp_abs_rot: Matrix3::identity(),
                        rel_rot: Matrix3::identity(),
                        cos_sim: 0.0,
                        weight: 0.5,
                    });
                }
            } else {
                for facing in [Facing::Toward, Facing::Away] {
                    level.push(TreeNode {
                        branch: facing,
                        position: pos,
                        offset: Vector3::zeros(),
                        depth,
                        parent_depth: depth,
                        valid: false,
                        rectified: false,
                        hyp_abs_rot: Matrix3::identity(),
                        rel_rot: Matrix3::identity(),
                        cos_sim: 0.0,
                        weight: 0.5,
                    });
                }
            }
        }
        levels.push(level);
    }
    Ok(HypothesisTree {
        chain_id,
        bones: chain.bones.clone(),
        root_position,
        root_depth,
        anchor_rot: None,
        levels,
        scored: false,
    })
}

/// Softmax over a sibling pair of similarity scores.
pub fn edge_weights(score0: f64, score1: f64) -> (f64, f64) {
    let m = score0.max(score1);
    let e0 = (score0 - m).exp();
    let e1 = (score1 - m).exp();
    let s = e0 + e1;
    (e0 / s, e1 / s)
}

/// Weight every edge by how well the hypothetical relative rotation it
/// implies agrees with the reference pose.
///
/// The hypothetical absolute rotation of a bone's parent joint is the
/// swing from the current bone vector to the candidate vector applied to
/// the joint's current absolute rotation; its relative rotation is taken
/// against the parent node's hypothetical absolute rotation (or the tree's
/// anchor at the first level).
pub fn score_edges(
    tree: &mut HypothesisTree,
    state: &BodyState,
    skeleton: &SkeletonModel,
) -> Result<()> {
    let posed = skeleton.pose(&state.theta, &state.beta);
    let skel_tree = skeleton.tree();
    let theta_ref = state.theta_ref();
    let root_anchor =
        tree.anchor_rot
            .unwrap_or_else(|| match skel_tree.parent_of(tree.bones[0].0) {
                Some(pp) => posed.abs_rots[pp],
                None => Matrix3::identity(),
            });

    for d in 0..tree.bones.len() {
        let (p, c) = tree.bones[d];
        let current = posed.joints[c] - posed.joints[p];
        let current_abs = posed.abs_rots[p];
        let (before, rest) = tree.levels.split_at_mut(d);
        let level = &mut rest[0];
        for (i, node) in level.iter_mut().enumerate() {
            let parent_abs = if d == 0 {
                root_anchor
            } else {
                before[d - 1][i / 2].hyp_abs_rot
            };
            let swing = if node.valid {
                swing_between_or_half_turn(&current, &node.offset)
                    .unwrap_or_else(|_| Matrix3::identity())
            } else {
                Matrix3::identity()
            };
            node.hyp_abs_rot = swing * current_abs;
            node.rel_rot = parent_abs.transpose() * node.hyp_abs_rot;
            node.cos_sim = (geodesic_cos(&node.rel_rot, &theta_ref[p]) + 1.0) / 2.0;
        }
        for pair in level.chunks_mut(2) {
            let (w0, w1) = match (pair[0].valid, pair[1].valid) {
                (true, true) => edge_weights(pair[0].cos_sim, pair[1].cos_sim),
                (true, false) => (1.0, 0.0),
                (false, true) => (0.0, 1.0),
                (false, false) => (0.5, 0.5),
            };
            pair[0].weight = w0;
            pair[1].weight = w1;
        }
    }
    tree.scored = true;
    Ok(())
}

/// A chosen root-to-leaf path through one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSelection {
    pub chain_id: usize,
    pub choices: Vec<Facing>,
    /// Product of the chosen edge weights, root to leaf.
    pub product: f64,
    /// Chosen edge weight per bone.
    pub lambdas: Vec<f64>,
    pub node_indices: Vec<usize>,
}

impl PathSelection {
    pub fn from_choices(tree: &HypothesisTree, choices: &[Facing]) -> Result<Self> {
        if choices.len() != tree.depth() {
            return Err(KitroError::InvalidInput(format!(
                "{} choices for a tree of depth {}",
                choices.len(),
                tree.depth()
            )));
        }
        let node_indices = HypothesisTree::node_indices(choices);
        let lambdas: Vec<f64> = node_indices
            .iter()
            .enumerate()
            .map(|(d, &i)| tree.levels[d][i].weight)
            .collect();
        let product = lambdas.iter().fold(1.0, |acc, w| acc * w);
        Ok(Self {
            chain_id: tree.chain_id,
            choices: choices.to_vec(),
            product,
            lambdas,
            node_indices,
        })
    }
}

/// Highest-product path by exhaustive depth-first search. Ties go to the
/// toward branch at the shallowest differing bone.
pub fn select_path(tree: &HypothesisTree) -> PathSelection {
    fn dfs(
        tree: &HypothesisTree,
        level: usize,
        index: usize,
        acc: f64,
        path: &mut Vec<Facing>,
        best: &mut Option<(f64, Vec<Facing>)>,
    ) {
        let acc = acc * tree.levels[level][index].weight;
        path.push(Facing::from_index(index & 1));
        if level + 1 == tree.levels.len() {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                *best = Some((acc, path.clone()));
            }
        } else {
            for k in 0..2 {
                dfs(tree, level + 1, 2 * index + k, acc, path, best);
            }
        }
        path.pop();
    }

    let mut best = None;
    let mut path = Vec::with_capacity(tree.depth());
    for k in 0..2 {
        dfs(tree, 0, k, 1.0, &mut path, &mut best);
    }
    let (_, choices) = best.expect("trees have at least one bone");
    PathSelection::from_choices(tree, &choices).expect("path length matches tree depth")
}

/// Bone-by-bone selection: each bone takes its locally heavier edge given
/// the choices already made above it.
pub fn select_greedy(tree: &HypothesisTree) -> PathSelection {
    let mut choices = Vec::with_capacity(tree.depth());
    let mut cur = 0usize;
    for d in 0..tree.depth() {
        let base = if d == 0 { 0 } else { 2 * cur };
        let k = usize::from(tree.levels[d][base + 1].weight > tree.levels[d][base].weight);
        choices.push(Facing::from_index(k));
        cur = base + k;
    }
    PathSelection::from_choices(tree, &choices).expect("path length matches tree depth")
}

/// Rewrite joint rotations root-outward so every bone turns toward the
/// blend `λ·chosen + (1 − λ)·current` of its selected candidate and its
/// current vector. Joints with several children take the best common
/// rotation of all their bones. With `soft` false every `λ` is 1.
pub fn apply_pose_update(
    state: &BodyState,
    skeleton: &SkeletonModel,
    trees: &[HypothesisTree],
    selections: &[PathSelection],
    soft: bool,
) -> Result<Vec<Matrix3<f64>>> {
    let n = skeleton.num_joints();
    let mut targets: Vec<Option<(Vector3<f64>, f64)>> = vec![None; n];
    for (tree, sel) in trees.iter().zip(selections) {
        for (d, &(_, c)) in tree.bones.iter().enumerate() {
            let node = &tree.levels[d][sel.node_indices[d]];
            let lambda = if soft { sel.lambdas[d] } else { 1.0 };
            targets[c] = Some((node.offset, lambda));
        }
    }
    let skel_tree = skeleton.tree();
    if let Some(&(p, c)) = skel_tree
        .bones()
        .iter()
        .find(|&&(_, c)| targets[c].is_none())
    {
        return Err(KitroError::InvalidInput(format!(
            "no selection covers bone ({p}, {c})"
        )));
    }

    let mut theta = state.theta.clone();
    for p in 0..n {
        let children = skel_tree.children_of(p);
        if children.is_empty() {
            continue;
        }
        let posed = skeleton.pose(&theta, &state.beta);
        let mut from = Vec::with_capacity(children.len());
        let mut to = Vec::with_capacity(children.len());
        for &c in children {
            let current = posed.joints[c] - posed.joints[p];
            let (chosen, lambda) = targets[c].expect("coverage checked above");
            let blended = lambda * chosen + (1.0 - lambda) * current;
            if blended.norm() < 1e-9 {
                warn!("skipping bone ({p}, {c}): blended direction vanishes");
                continue;
            }
            from.push(current);
            to.push(blended);
        }
        let swing = match from.len() {
            0 => continue,
            1 if children.len() == 1 => swing_between_or_half_turn(&from[0], &to[0])?,
            _ => best_rotation_multi(&from, &to)?,
        };
        theta[p] = update_joint_rotation(skel_tree, p, &swing, &posed.abs_rots)?;
    }
    Ok(theta)
}

/// Per-tree debug record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub chain_id: usize,
    pub bones: Vec<Bone>,
    /// Edge weights per level.
    pub weights: Vec<Vec<f64>>,
    pub rectified: Vec<Vec<bool>>,
    pub valid: Vec<Vec<bool>>,
    pub selection: PathSelection,
}

impl TreeDump {
    pub fn new(tree: &HypothesisTree, selection: &PathSelection) -> Self {
        Self {
            chain_id: tree.chain_id,
            bones: tree.bones.clone(),
            weights: tree
                .levels
                .iter()
                .map(|l| l.iter().map(|n| n.weight).collect())
                .collect(),
            rectified: tree
                .levels
                .iter()
                .map(|l| l.iter().map(|n| n.rectified).collect())
                .collect(),
            valid: tree
                .levels
                .iter()
                .map(|l| l.iter().map(|n| n.valid).collect())
                .collect(),
            selection: selection.clone(),
        }
    }
}
