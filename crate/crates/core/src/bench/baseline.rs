//! Gradient-descent reprojection fitting over pose, shape and translation,
//! the comparison baseline for the closed-form refiner.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::CameraIntrinsics;
use crate::error::{KitroError, Result};
use crate::rotation::{
    exp_so3, nearest_rotation, rotation_deviation, skew, REORTHONORMALIZE_ABOVE,
};
use crate::shape_opt::{joint_shape_jacobians, projection_jacobian, AdamState};
use crate::skeleton::{BodyState, Shape, SkeletonModel, NUM_BETAS};

/// Loss growth over the initial value that stops the descent.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub state: BodyState,
    /// Loss at every accepted iterate, starting with the input.
    pub loss_trace: Vec<f64>,
    pub stopped_early: bool,
}

/// Sum of squared pixel residuals over all joints.
pub fn reprojection_loss(
    state: &BodyState,
    model: &SkeletonModel,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
) -> Result<f64> {
    let joints = model.camera_joints(state)?;
    let px = intr.project(&joints)?;
    Ok(px
        .iter()
        .zip(keypoints)
        .map(|(p, k)| (p - k).norm_squared())
        .sum())
}

/// Gradient of [`reprojection_loss`] as `[δ_0, …, δ_{n−1}, β, t]`, where
/// `δ_j` is an axis-angle increment right-composed onto `θ_j`.
pub fn reprojection_gradient(
    state: &BodyState,
    model: &SkeletonModel,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
) -> Result<Vec<f64>> {
    let n = model.num_joints();
    let posed = model.pose(&state.theta, &state.beta);
    let cam: Vec<Vector3<f64>> = posed.joints.iter().map(|j| j + state.trans).collect();
    let px = intr.project(&cam)?;
    let jac = joint_shape_jacobians(model, &posed.abs_rots);
    let tree = model.tree();

    // dE/dX_i as a row vector per joint.
    let dx: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let r = 2.0 * (px[i] - keypoints[i]);
            projection_jacobian(intr, &cam[i]).transpose() * r
        })
        .collect();

    let mut grad = vec![0.0; 3 * n + NUM_BETAS + 3];
    let mut g_beta = Shape::zeros();
    let mut g_t = Vector3::zeros();
    for i in 0..n {
        g_beta += jac[i].transpose() * dx[i];
        g_t += dx[i];
    }
    // A right increment δ on joint a moves every strict descendant i by
    // −[p_i − p_a]× A_a δ.
    for a in 0..n {
        let mut g = Vector3::zeros();
        let mut stack: Vec<usize> = tree.children_of(a).to_vec();
        while let Some(i) = stack.pop() {
            let w = posed.joints[i] - posed.joints[a];
            g += -(skew(&w) * posed.abs_rots[a]).transpose() * dx[i];
            stack.extend_from_slice(tree.children_of(i));
        }
        grad[3 * a..3 * a + 3].copy_from_slice(g.as_slice());
    }
    grad[3 * n..3 * n + NUM_BETAS].copy_from_slice(g_beta.as_slice());
    grad[3 * n + NUM_BETAS..].copy_from_slice(g_t.as_slice());
    Ok(grad)
}

fn apply_increment(state: &BodyState, params: &[f64], n: usize) -> BodyState {
    let mut next = state.clone();
    for (j, r) in next.theta.iter_mut().enumerate() {
        let delta = Vector3::new(params[3 * j], params[3 * j + 1], params[3 * j + 2]);
        let mut m: Matrix3<f64> = *r * exp_so3(&delta);
        if rotation_deviation(&m) > REORTHONORMALIZE_ABOVE {
            m = nearest_rotation(&m);
        }
        *r = m;
    }
    next.beta = Shape::from_column_slice(&params[3 * n..3 * n + NUM_BETAS]);
    next.trans = Vector3::from_column_slice(&params[3 * n + NUM_BETAS..]);
    next
}

/// Adam on the reprojection loss. Rotations are re-linearized after every
/// step, so the pose block of the parameter vector always restarts at zero.
pub fn baseline_refine_reproj(
    state: &BodyState,
    model: &SkeletonModel,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
    steps: usize,
    lr: f64,
) -> Result<BaselineOutcome> {
    if !(lr > 0.0) {
        return Err(KitroError::InvalidInput(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let n = model.num_joints();
    let initial = reprojection_loss(state, model, intr, keypoints)?;
    let mut current = state.clone();
    let mut loss_trace = vec![initial];
    let mut adam = AdamState::new(3 * n + NUM_BETAS + 3, lr);
    for _ in 0..steps {
        let grad = reprojection_gradient(&current, model, intr, keypoints)?;
        let mut params = vec![0.0; 3 * n];
        params.extend_from_slice(current.beta.as_slice());
        params.extend_from_slice(current.trans.as_slice());
        adam.step(&mut params, &grad);
        let candidate = apply_increment(&current, &params, n);
        let loss = match reprojection_loss(&candidate, model, intr, keypoints) {
            Ok(l) if l.is_finite() && l <= DIVERGENCE_FACTOR * initial => l,
            _ => {
                return Ok(BaselineOutcome {
                    state: current,
                    loss_trace,
                    stopped_early: true,
                })
            }
        };
        current = candidate;
        loss_trace.push(loss);
    }
    Ok(BaselineOutcome {
        state: current,
        loss_trace,
        stopped_early: false,
    })
}
