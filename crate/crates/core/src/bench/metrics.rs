//! Joint-position and reprojection metrics.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{KitroError, Result};
use crate::skeleton::{BodyState, SkeletonModel};

/// Base joint subtracted before MPJPE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PelvisMode {
    /// Joint 0.
    #[default]
    Joint0,
    /// Midpoint of the two hips (joints 1 and 2).
    HipMean,
}

impl PelvisMode {
    pub fn base(self, joints: &[Vector3<f64>]) -> Vector3<f64> {
        match self {
            PelvisMode::Joint0 => joints[0],
            PelvisMode::HipMean => (joints[1] + joints[2]) / 2.0,
        }
    }
}

/// Per-joint pelvis-aligned errors in mm.
pub fn per_joint_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>], mode: PelvisMode) -> Vec<f64> {
    let bp = mode.base(pred);
    let bg = mode.base(gt);
    pred.iter()
        .zip(gt)
        .map(|(p, g)| ((p - bp) - (g - bg)).norm() * 1000.0)
        .collect()
}

/// Mean per-joint position error in mm after pelvis alignment.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>], mode: PelvisMode) -> f64 {
    let e = per_joint_errors(pred, gt, mode);
    e.iter().sum::<f64>() / e.len() as f64
}

/// Similarity transform `y ≈ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * x + self.translation
    }
}

/// Least-squares similarity mapping `source` onto `target`.
pub fn similarity_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Similarity> {
    if source.len() != target.len() || source.is_empty() {
        return Err(KitroError::InvalidInput(format!(
            "cannot align {} points to {}",
            source.len(),
            target.len()
        )));
    }
    let n = source.len() as f64;
    let mu_x = source.iter().sum::<Vector3<f64>>() / n;
    let mu_y = target.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let dx = x - mu_x;
        cov += (y - mu_y) * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;
    if !(var_x > 1e-18) {
        return Err(KitroError::Degenerate("all points coincide".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = trace / var_x;
    Ok(Similarity {
        scale,
        rotation,
        translation: mu_y - scale * rotation * mu_x,
    })
}

/// MPJPE in mm after similarity Procrustes alignment.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let sim = similarity_align(pred, gt)?;
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (sim.apply(p) - g).norm())
        .sum();
    Ok(total / pred.len() as f64 * 1000.0)
}

/// Mean pixel distance between projected joints and keypoints. Infinite
/// when any joint is at or behind the camera.
pub fn reprojection_error(
    state: &BodyState,
    model: &SkeletonModel,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
) -> Result<f64> {
    let joints = model.camera_joints(state)?;
    Ok(reprojection_of_joints(&joints, intr, keypoints))
}

pub fn reprojection_of_joints(
    joints: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
) -> f64 {
    let mut total = 0.0;
    for (j, k) in joints.iter().zip(keypoints) {
        match intr.project_point(j) {
            Some(px) => total += (px - k).norm(),
            None => return f64::INFINITY,
        }
    }
    total / joints.len() as f64
}

/// Per-joint absolute camera-frame depth difference in mm.
pub fn depth_errors(pred_cam: &[Vector3<f64>], gt_cam: &[Vector3<f64>]) -> Vec<f64> {
    pred_cam
        .iter()
        .zip(gt_cam)
        .map(|(p, g)| (p.z - g.z).abs() * 1000.0)
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
