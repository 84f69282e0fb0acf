//! Parametric joint skeleton: rest joints as an affine function of shape,
//! the 24-joint kinematic tree and forward kinematics.

use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{KitroError, Result};
use crate::rotation::rotation_deviation;

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;

/// Shape coefficients.
pub type Shape = SVector<f64, NUM_BETAS>;
/// Per-joint linear blend directions (one column per shape coefficient).
pub type JointBasis = SMatrix<f64, 3, NUM_BETAS>;

/// Rotations with a deviation above this are rejected.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

pub const SMPL_JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Pelvis",
    "L_Hip",
    "R_Hip",
    "Spine1",
    "L_Knee",
    "R_Knee",
    "Spine2",
    "L_Ankle",
    "R_Ankle",
    "Spine3",
    "L_Foot",
    "R_Foot",
    "Neck",
    "L_Collar",
    "R_Collar",
    "Head",
    "L_Shoulder",
    "R_Shoulder",
    "L_Elbow",
    "R_Elbow",
    "L_Wrist",
    "R_Wrist",
    "L_Hand",
    "R_Hand",
];

pub const SMPL_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

/// A bone as a (parent, child) joint pair.
pub type Bone = (usize, usize);

/// A root-outward run of bones used as one hypothesis tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    /// Joint the chain hangs from.
    pub root: usize,
    /// Bones ordered root-outward; `bones[0].0 == root`.
    pub bones: Vec<Bone>,
    /// Index of the chain whose selection fixes this chain's root, if the
    /// root is not the tree root.
    pub depends_on: Option<usize>,
}

/// Parent/child structure of the skeleton. Joints are topologically ordered:
/// every parent index is smaller than its child's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    bones: Vec<Bone>,
}

impl KinematicTree {
    pub fn new(parents: Vec<Option<usize>>) -> Result<Self> {
        if parents.is_empty() {
            return Err(KitroError::InvalidInput("empty kinematic tree".into()));
        }
        if parents[0].is_some() {
            return Err(KitroError::InvalidInput("joint 0 must be the root".into()));
        }
        let mut children = vec![Vec::new(); parents.len()];
        let mut bones = Vec::with_capacity(parents.len() - 1);
        for (j, parent) in parents.iter().enumerate().skip(1) {
            match parent {
                Some(p) if *p < j => {
                    children[*p].push(j);
                    bones.push((*p, j));
                }
                Some(p) => {
                    return Err(KitroError::InvalidInput(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
                None => {
                    return Err(KitroError::InvalidInput(format!(
                        "joint {j} has no parent; only joint 0 may be a root"
                    )))
                }
            }
        }
        Ok(Self {
            parents,
            children,
            bones,
        })
    }

    /// Build from signed parent indices where `-1` marks the root.
    pub fn from_signed(parents: &[i32]) -> Result<Self> {
        let parents = parents
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        Self::new(parents)
    }

    pub fn smpl() -> Self {
        Self::from_signed(&SMPL_PARENTS).expect("SMPL parent table is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn children_of(&self, joint: usize) -> &[usize] {
        &self.children[joint]
    }

    /// Bones in child-index order.
    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn is_bone(&self, bone: Bone) -> bool {
        bone.1 < self.parents.len() && self.parents[bone.1] == Some(bone.0)
    }

    /// Joints from the root down to `joint`, inclusive.
    pub fn chain_of(&self, joint: usize) -> Vec<usize> {
        let mut chain = vec![joint];
        let mut cur = joint;
        while let Some(p) = self.parents[cur] {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    pub fn signed_parents(&self) -> Vec<i32> {
        self.parents
            .iter()
            .map(|p| p.map_or(-1, |p| p as i32))
            .collect()
    }

    /// Partition the bones into hypothesis chains. Every child of the root
    /// starts a chain; a chain follows the lowest-index child at a branching
    /// joint and the remaining children start new chains hanging from that
    /// joint, scheduled after the chain that resolves it.
    ///
    /// For the SMPL tree this yields left leg, right leg, torso (through
    /// Spine3 to the head), left arm and right arm.
    pub fn chains(&self) -> Vec<Chain> {
        let mut chains: Vec<Chain> = Vec::new();
        let mut pending: Vec<(usize, usize, Option<usize>)> =
            self.children[0].iter().map(|&c| (0, c, None)).collect();
        let mut cursor = 0;
        while cursor < pending.len() {
            let (root, first, depends_on) = pending[cursor];
            cursor += 1;
            let index = chains.len();
            let mut bones = vec![(root, first)];
            let mut cur = first;
            while let Some((&next, rest)) = self.children[cur].split_first() {
                for &other in rest {
                    pending.push((cur, other, Some(index)));
                }
                bones.push((cur, next));
                cur = next;
            }
            chains.push(Chain {
                root,
                bones,
                depends_on,
            });
        }
        chains
    }
}

/// Posed joints in the body frame together with absolute joint rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedSkeleton {
    pub joints: Vec<Vector3<f64>>,
    pub abs_rots: Vec<Matrix3<f64>>,
}

/// Linear joint model: rest joints are `template + basis · beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonModel {
    template_joints: Vec<Vector3<f64>>,
    shape_basis: Vec<JointBasis>,
    tree: KinematicTree,
    joint_names: Vec<String>,
}

impl SkeletonModel {
    pub fn new(
        template_joints: Vec<Vector3<f64>>,
        shape_basis: Vec<JointBasis>,
        tree: KinematicTree,
        joint_names: Vec<String>,
    ) -> Result<Self> {
        let n = tree.num_joints();
        if template_joints.len() != n || shape_basis.len() != n || joint_names.len() != n {
            return Err(KitroError::Format(format!(
                "expected {n} joints in template, basis and names; got {}, {}, {}",
                template_joints.len(),
                shape_basis.len(),
                joint_names.len()
            )));
        }
        for &(p, c) in tree.bones() {
            let len = (template_joints[c] - template_joints[p]).norm();
            if !(len > 0.0) {
                return Err(KitroError::Format(format!(
                    "template bone ({p}, {c}) has non-positive length"
                )));
            }
        }
        Ok(Self {
            template_joints,
            shape_basis,
            tree,
            joint_names,
        })
    }

    pub fn tree(&self) -> &KinematicTree {
        &self.tree
    }

    pub fn num_joints(&self) -> usize {
        self.tree.num_joints()
    }

    pub fn template_joints(&self) -> &[Vector3<f64>] {
        &self.template_joints
    }

    pub fn shape_basis(&self) -> &[JointBasis] {
        &self.shape_basis
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn rest_joints(&self, beta: &Shape) -> Vec<Vector3<f64>> {
        self.template_joints
            .iter()
            .zip(&self.shape_basis)
            .map(|(t, b)| t + b * beta)
            .collect()
    }

    pub fn bone_length_3d(&self, beta: &Shape, bone: Bone) -> Result<f64> {
        if !self.tree.is_bone(bone) {
            return Err(KitroError::InvalidInput(format!(
                "({}, {}) is not a bone",
                bone.0, bone.1
            )));
        }
        let (p, c) = bone;
        let offset = (self.template_joints[c] - self.template_joints[p])
            + (self.shape_basis[c] - self.shape_basis[p]) * beta;
        Ok(offset.norm())
    }

    /// Rest bone lengths indexed by child joint; the root entry is 0.
    pub fn bone_lengths(&self, beta: &Shape) -> Vec<f64> {
        let rest = self.rest_joints(beta);
        (0..self.num_joints())
            .map(|j| match self.tree.parent_of(j) {
                Some(p) => (rest[j] - rest[p]).norm(),
                None => 0.0,
            })
            .collect()
    }

    /// Forward kinematics without validating the rotations.
    pub fn pose(&self, theta: &[Matrix3<f64>], beta: &Shape) -> PosedSkeleton {
        let rest = self.rest_joints(beta);
        let n = self.num_joints();
        let mut joints = Vec::with_capacity(n);
        let mut abs_rots = Vec::with_capacity(n);
        joints.push(rest[0]);
        abs_rots.push(theta[0]);
        for j in 1..n {
            let p = self.tree.parents[j].expect("non-root joint has a parent");
            let pos = joints[p] + abs_rots[p] * (rest[j] - rest[p]);
            joints.push(pos);
            abs_rots.push(abs_rots[p] * theta[j]);
        }
        PosedSkeleton { joints, abs_rots }
    }

    pub fn forward_kinematics(&self, state: &BodyState) -> Result<PosedSkeleton> {
        if state.theta.len() != self.num_joints() {
            return Err(KitroError::InvalidInput(format!(
                "state has {} rotations, skeleton has {} joints",
                state.theta.len(),
                self.num_joints()
            )));
        }
        check_rotations(&state.theta)?;
        Ok(self.pose(&state.theta, &state.beta))
    }

    /// Posed joints shifted into the camera frame by the state's translation.
    pub fn camera_joints(&self, state: &BodyState) -> Result<Vec<Vector3<f64>>> {
        let posed = self.forward_kinematics(state)?;
        Ok(posed.joints.iter().map(|j| j + state.trans).collect())
    }

    /// The bundled skeleton: adult proportions (about 1.7 m), pelvis at the
    /// origin, y up and x toward the body's left.
    pub fn canonical() -> Self {
        let template: Vec<Vector3<f64>> = [
            [0.0, 0.0, 0.0],
            [0.06, -0.09, -0.01],
            [-0.06, -0.09, -0.01],
            [0.0, 0.11, -0.03],
            [0.10, -0.49, 0.0],
            [-0.10, -0.49, 0.0],
            [0.0, 0.245, -0.02],
            [0.085, -0.91, -0.04],
            [-0.085, -0.91, -0.04],
            [0.0, 0.30, 0.0],
            [0.12, -0.97, 0.09],
            [-0.12, -0.97, 0.09],
            [0.0, 0.52, -0.03],
            [0.075, 0.43, -0.01],
            [-0.075, 0.43, -0.01],
            [0.01, 0.61, 0.03],
            [0.17, 0.46, -0.02],
            [-0.17, 0.46, -0.02],
            [0.43, 0.44, -0.04],
            [-0.43, 0.44, -0.04],
            [0.68, 0.44, -0.03],
            [-0.68, 0.44, -0.03],
            [0.765, 0.43, -0.04],
            [-0.765, 0.43, -0.04],
        ]
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect();

        let tree = KinematicTree::smpl();
        let basis = canonical_basis(&template, &tree);
        let names = SMPL_JOINT_NAMES.iter().map(|s| s.to_string()).collect();
        Self::new(template, basis, tree, names).expect("canonical skeleton is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SkeletonFile =
            serde_json::from_str(text).map_err(|e| KitroError::Format(e.to_string()))?;
        file.into_model()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KitroError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SkeletonFile::from_model(self)).expect("skeleton serializes")
    }
}

fn canonical_basis(template: &[Vector3<f64>], tree: &KinematicTree) -> Vec<JointBasis> {
    let n = template.len();
    let mut basis = vec![JointBasis::zeros(); n];
    let descends_from = |j: usize, anc: usize| tree.chain_of(j).contains(&anc);
    for j in 1..n {
        let t = template[j];
        let mut col = |k: usize, d: Vector3<f64>| basis[j].set_column(k, &d);
        // overall stature
        col(0, 0.03 * t);
        // leg length below the hips
        let hip = if descends_from(j, 1) {
            Some(1)
        } else if descends_from(j, 2) {
            Some(2)
        } else {
            None
        };
        if let Some(h) = hip {
            col(1, Vector3::new(0.0, 0.025 * (t.y - template[h].y), 0.0));
        }
        // breadth
        col(2, Vector3::new(0.04 * t.x, 0.0, 0.0));
        // arm length beyond the collars
        let collar = if descends_from(j, 13) {
            Some(13)
        } else if descends_from(j, 14) {
            Some(14)
        } else {
            None
        };
        if let Some(c) = collar {
            col(3, 0.03 * (t - template[c]));
        }
        // torso length
        if descends_from(j, 3) {
            col(4, Vector3::new(0.0, 0.02 * t.y, 0.0));
        }
        // neck and head
        if descends_from(j, 12) {
            col(5, Vector3::new(0.0, if j == 12 { 0.01 } else { 0.02 }, 0.0));
        }
        for k in 6..NUM_BETAS {
            let (jf, kf) = (j as f64, k as f64);
            col(
                k,
                0.003
                    * Vector3::new(
                        (1.3 * jf + 2.1 * kf).sin(),
                        (0.7 * jf + 1.7 * kf).cos(),
                        (0.5 * jf * kf + 0.3).sin(),
                    ),
            );
        }
    }
    basis
}

/// JSON schema for skeleton model files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonFile {
    pub template_joints: Vec<[f64; 3]>,
    /// `NUM_BETAS` stacked joint-offset tables.
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    pub parents: Vec<i32>,
    pub joint_names: Vec<String>,
}

impl SkeletonFile {
    pub fn from_model(model: &SkeletonModel) -> Self {
        let template_joints = model
            .template_joints
            .iter()
            .map(|v| [v.x, v.y, v.z])
            .collect();
        let shape_basis = (0..NUM_BETAS)
            .map(|k| {
                model
                    .shape_basis
                    .iter()
                    .map(|b| {
                        let c = b.column(k);
                        [c[0], c[1], c[2]]
                    })
                    .collect()
            })
            .collect();
        Self {
            template_joints,
            shape_basis,
            parents: model.tree.signed_parents(),
            joint_names: model.joint_names.clone(),
        }
    }

    pub fn into_model(self) -> Result<SkeletonModel> {
        let tree = KinematicTree::from_signed(&self.parents)?;
        let n = tree.num_joints();
        if self.shape_basis.len() != NUM_BETAS {
            return Err(KitroError::Format(format!(
                "shape_basis must hold {NUM_BETAS} tables, found {}",
                self.shape_basis.len()
            )));
        }
        let mut basis = vec![JointBasis::zeros(); n];
        for (k, table) in self.shape_basis.iter().enumerate() {
            if table.len() != n {
                return Err(KitroError::Format(format!(
                    "shape_basis[{k}] has {} joints, expected {n}",
                    table.len()
                )));
            }
            for (j, d) in table.iter().enumerate() {
                basis[j].set_column(k, &Vector3::new(d[0], d[1], d[2]));
            }
        }
        let template = self
            .template_joints
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect();
        SkeletonModel::new(template, basis, tree, self.joint_names)
    }
}

pub(crate) fn check_rotations(rots: &[Matrix3<f64>]) -> Result<()> {
    for (index, r) in rots.iter().enumerate() {
        let deviation = rotation_deviation(r);
        if !(deviation <= ROTATION_TOLERANCE) {
            return Err(KitroError::NonOrthonormalRotation { index, deviation });
        }
    }
    Ok(())
}

/// Pose, shape and camera translation of one body.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyState {
    /// Relative joint rotations.
    pub theta: Vec<Matrix3<f64>>,
    pub beta: Shape,
    /// Camera translation in meters.
    pub trans: Vector3<f64>,
    theta_ref: Vec<Matrix3<f64>>,
}

impl BodyState {
    /// New state whose reference pose is `theta` itself.
    pub fn new(theta: Vec<Matrix3<f64>>, beta: Shape, trans: Vector3<f64>) -> Result<Self> {
        let theta_ref = theta.clone();
        Self::with_reference(theta, beta, trans, theta_ref)
    }

    pub fn with_reference(
        theta: Vec<Matrix3<f64>>,
        beta: Shape,
        trans: Vector3<f64>,
        theta_ref: Vec<Matrix3<f64>>,
    ) -> Result<Self> {
        if theta.len() != theta_ref.len() {
            return Err(KitroError::InvalidInput(
                "theta and theta_ref differ in length".into(),
            ));
        }
        check_rotations(&theta)?;
        check_rotations(&theta_ref)?;
        Ok(Self {
            theta,
            beta,
            trans,
            theta_ref,
        })
    }

    /// Identity pose, zero shape.
    pub fn rest(num_joints: usize, trans: Vector3<f64>) -> Self {
        let theta = vec![Matrix3::identity(); num_joints];
        Self {
            theta_ref: theta.clone(),
            theta,
            beta: Shape::zeros(),
            trans,
        }
    }

    /// Rotations of the initial estimate this state was created from.
    pub fn theta_ref(&self) -> &[Matrix3<f64>] {
        &self.theta_ref
    }

    pub fn validate(&self) -> Result<()> {
        check_rotations(&self.theta)
    }
}

/// Serialized form of a [`BodyState`]: rotations as row-major 9-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub theta: Vec<[f64; 9]>,
    pub beta: Vec<f64>,
    pub trans: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_ref: Option<Vec<[f64; 9]>>,
}

pub fn matrix_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

pub fn matrix_from_row_major(a: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(a)
}

impl StateRecord {
    /// Record without the reference pose (it equals `theta` on reload).
    pub fn from_state(state: &BodyState) -> Self {
        Self {
            theta: state.theta.iter().map(matrix_to_row_major).collect(),
            beta: state.beta.iter().copied().collect(),
            trans: [state.trans.x, state.trans.y, state.trans.z],
            theta_ref: None,
        }
    }

    pub fn with_reference(state: &BodyState) -> Self {
        Self {
            theta_ref: Some(state.theta_ref.iter().map(matrix_to_row_major).collect()),
            ..Self::from_state(state)
        }
    }

    pub fn to_state(&self) -> Result<BodyState> {
        if self.beta.len() != NUM_BETAS {
            return Err(KitroError::Format(format!(
                "beta has {} entries, expected {NUM_BETAS}",
                self.beta.len()
            )));
        }
        let theta: Vec<_> = self.theta.iter().map(matrix_from_row_major).collect();
        let theta_ref = match &self.theta_ref {
            Some(r) => r.iter().map(matrix_from_row_major).collect(),
            None => theta.clone(),
        };
        BodyState::with_reference(
            theta,
            Shape::from_column_slice(&self.beta),
            Vector3::from(self.trans),
            theta_ref,
        )
    }
}
