//! Shape refinement: Adam on the L1 mismatch between projected 3D bone
//! lengths and 2D keypoint bone lengths, with pose and translation held
//! fixed.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use crate::camera::CameraIntrinsics;
use crate::error::{KitroError, Result};
use crate::skeleton::{Bone, JointBasis, Shape, SkeletonModel, NUM_BETAS};

pub const DEFAULT_SHAPE_STEPS: usize = 10;
pub const DEFAULT_SHAPE_LR: f64 = 0.1;

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step_count += 1;
        // Repeated products rather than powi keep the bias corrections
        // identical across optimization levels.
        let (mut p1, mut p2) = (1.0f64, 1.0f64);
        for _ in 0..self.step_count {
            p1 *= self.beta1;
            p2 *= self.beta2;
        }
        let bc1 = 1.0 - p1;
        let bc2 = 1.0 - p2;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn projected_joints(
    model: &SkeletonModel,
    beta: &Shape,
    theta: &[Matrix3<f64>],
    trans: &Vector3<f64>,
) -> (Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
    let posed = model.pose(theta, beta);
    let cam = posed.joints.iter().map(|j| j + trans).collect();
    (cam, posed.abs_rots)
}

fn project_checked(
    intr: &CameraIntrinsics,
    p: &Vector3<f64>,
    index: usize,
) -> Result<Vector2<f64>> {
    intr.project_point(p)
        .ok_or(KitroError::NotProjectable { index, depth: p.z })
}

pub fn projected_bone_length(
    model: &SkeletonModel,
    beta: &Shape,
    theta: &[Matrix3<f64>],
    trans: &Vector3<f64>,
    intr: &CameraIntrinsics,
    bone: Bone,
) -> Result<f64> {
    let (cam, _) = projected_joints(model, beta, theta, trans);
    let a = project_checked(intr, &cam[bone.0], bone.0)?;
    let b = project_checked(intr, &cam[bone.1], bone.1)?;
    Ok((a - b).norm())
}

pub fn bone_length_2d(keypoints: &[Vector2<f64>], bone: Bone) -> f64 {
    (keypoints[bone.0] - keypoints[bone.1]).norm()
}

pub fn shape_loss(
    model: &SkeletonModel,
    beta: &Shape,
    theta: &[Matrix3<f64>],
    trans: &Vector3<f64>,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
) -> Result<f64> {
    let (cam, _) = projected_joints(model, beta, theta, trans);
    let px = intr.project(&cam)?;
    Ok(model
        .tree()
        .bones()
        .iter()
        .map(|&(p, c)| ((px[p] - px[c]).norm() - bone_length_2d(keypoints, (p, c))).abs())
        .sum())
}

/// Jacobian of each posed joint with respect to the shape coefficients.
/// Rest joints are linear in shape and rotations are held fixed, so the
/// posed joints are linear too.
pub fn joint_shape_jacobians(
    model: &SkeletonModel,
    abs_rots: &[Matrix3<f64>],
) -> Vec<SMatrix<f64, 3, NUM_BETAS>> {
    let basis: &[JointBasis] = model.shape_basis();
    let tree = model.tree();
    let mut jac = Vec::with_capacity(model.num_joints());
    jac.push(basis[0]);
    for c in 1..model.num_joints() {
        let p = tree.parent_of(c).expect("non-root joint has a parent");
        let g = jac[p] + abs_rots[p] * (basis[c] - basis[p]);
        jac.push(g);
    }
    jac
}

/// Jacobian of the pinhole projection at camera-frame point `x`.
pub fn projection_jacobian(intr: &CameraIntrinsics, x: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / x.z;
    Matrix2x3::new(
        intr.f * iz,
        0.0,
        -intr.f * x.x * iz * iz,
        0.0,
        intr.f * iz,
        -intr.f * x.y * iz * iz,
    )
}

/// Analytic (sub)gradient of [`shape_loss`]. Bones whose projected length
/// matches the 2D length exactly contribute zero.
pub fn shape_gradient(
    model: &SkeletonModel,
    beta: &Shape,
    theta: &[Matrix3<f64>],
    trans: &Vector3<f64>,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
) -> Result<Shape> {
    let (cam, abs_rots) = projected_joints(model, beta, theta, trans);
    let px = intr.project(&cam)?;
    let jac = joint_shape_jacobians(model, &abs_rots);
    let mut grad = Shape::zeros();
    for &(p, c) in model.tree().bones() {
        let e = px[p] - px[c];
        let len = e.norm();
        let residual = len - bone_length_2d(keypoints, (p, c));
        if residual == 0.0 || len == 0.0 {
            continue;
        }
        let dpix_p = projection_jacobian(intr, &cam[p]) * jac[p];
        let dpix_c = projection_jacobian(intr, &cam[c]) * jac[c];
        let dlen = (e.transpose() / len) * (dpix_p - dpix_c);
        grad += residual.signum() * dlen.transpose();
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRefinement {
    pub beta: Shape,
    /// Loss before each step and after the last one.
    pub loss_trace: Vec<f64>,
    /// Stopped early on a non-finite loss.
    pub aborted: bool,
}

/// Run `steps` Adam iterations on the shape loss. Pass `adam` to carry
/// moments across calls; otherwise a fresh optimizer is used.
#[allow(clippy::too_many_arguments)]
pub fn refine_shape(
    model: &SkeletonModel,
    beta: &Shape,
    theta: &[Matrix3<f64>],
    trans: &Vector3<f64>,
    intr: &CameraIntrinsics,
    keypoints: &[Vector2<f64>],
    steps: usize,
    lr: f64,
    adam: Option<&mut AdamState>,
) -> Result<ShapeRefinement> {
    let mut fresh;
    let adam = match adam {
        Some(a) => a,
        None => {
            fresh = AdamState::new(NUM_BETAS, lr);
            &mut fresh
        }
    };
    let mut current = *beta;
    let mut loss_trace = Vec::with_capacity(steps + 1);
    if steps == 0 {
        return Ok(ShapeRefinement {
            beta: current,
            loss_trace,
            aborted: false,
        });
    }
    let mut last_finite = current;
    for step in 0..=steps {
        let loss = shape_loss(model, &current, theta, trans, intr, keypoints)?;
        if !loss.is_finite() {
            return Ok(ShapeRefinement {
                beta: last_finite,
                loss_trace,
                aborted: true,
            });
        }
        loss_trace.push(loss);
        last_finite = current;
        if step == steps {
            break;
        }
        let grad = shape_gradient(model, &current, theta, trans, intr, keypoints)?;
        adam.step(current.as_mut_slice(), grad.as_slice());
    }
    Ok(ShapeRefinement {
        beta: current,
        loss_trace,
        aborted: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::KinematicTree;

    fn single_bone(scale: f64) -> SkeletonModel {
        let tree = KinematicTree::from_signed(&[-1, 0]).unwrap();
        let mut basis = vec![JointBasis::zeros(); 2];
        basis[1].set_column(0, &Vector3::new(0.0, scale, 0.0));
        SkeletonModel::new(
            vec![Vector3::zeros(), Vector3::new(0.0, 0.4, 0.0)],
            basis,
            tree,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::from_image_size(1000.0, 1000.0).unwrap()
    }

    #[test]
    fn fronto_parallel_and_axial_lengths() {
        let model = single_bone(0.05);
        let theta = vec![Matrix3::identity(); 2];
        let intr = camera();
        let t = Vector3::new(0.1, -0.2, 3.0);
        let len =
            projected_bone_length(&model, &Shape::zeros(), &theta, &t, &intr, (0, 1)).unwrap();
        assert!((len - intr.f * 0.4 / 3.0).abs() < 1e-9);

        // rotate the bone onto the optical axis through the principal point
        let along_z =
            crate::rotation::rodrigues(&Vector3::x(), std::f64::consts::FRAC_PI_2).unwrap();
        let theta = vec![along_z, Matrix3::identity()];
        let len = projected_bone_length(
            &model,
            &Shape::zeros(),
            &theta,
            &Vector3::new(0.0, 0.0, 3.0),
            &intr,
            (0, 1),
        )
        .unwrap();
        assert!(len.abs() < 1e-9);
    }

    #[test]
    fn two_d_lengths() {
        let kp = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(3.0, 4.0),
            Vector2::new(3.0, 4.0),
        ];
        assert_eq!(bone_length_2d(&kp, (0, 1)), 5.0);
        assert_eq!(bone_length_2d(&kp, (1, 0)), 5.0);
        assert_eq!(bone_length_2d(&kp, (1, 2)), 0.0);
    }

    #[test]
    fn single_bone_gradient_matches_hand_formula() {
        let scale = 0.05;
        let model = single_bone(scale);
        let theta = vec![Matrix3::identity(); 2];
        let intr = camera();
        let t = Vector3::new(0.0, 0.0, 2.5);
        let kp = vec![Vector2::new(500.0, 500.0), Vector2::new(500.0, 700.0)];
        let mut beta = Shape::zeros();
        beta[0] = 0.3;
        // projected length f·(0.4 + 0.05·β₀)/z against a 200 px target
        let len = intr.f * (0.4 + scale * beta[0]) / t.z;
        let expected = (len - 200.0).signum() * intr.f * scale / t.z;
        let g = shape_gradient(&model, &beta, &theta, &t, &intr, &kp).unwrap();
        assert!((g[0] - expected).abs() < 1e-9 * expected.abs());
        for k in 1..NUM_BETAS {
            assert_eq!(g[k], 0.0);
        }
    }

    #[test]
    fn zero_steps_is_no_op() {
        let model = SkeletonModel::canonical();
        let theta = vec![Matrix3::identity(); 24];
        let intr = camera();
        let t = Vector3::new(0.0, 0.0, 4.0);
        let mut beta = Shape::zeros();
        beta[2] = 0.7;
        let kp = intr
            .project(
                &model
                    .pose(&theta, &Shape::zeros())
                    .joints
                    .iter()
                    .map(|j| j + t)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        let out = refine_shape(&model, &beta, &theta, &t, &intr, &kp, 0, 0.1, None).unwrap();
        assert_eq!(out.beta, beta);
    }

    #[test]
    fn adam_step_count_and_moments() {
        let mut adam = AdamState::new(2, 0.1);
        let mut x = [1.0, -1.0];
        adam.step(&mut x, &[2.0, -3.0]);
        adam.step(&mut x, &[1.0, 0.5]);
        assert_eq!(adam.step_count, 2);
        assert!(adam.v.iter().all(|v| *v >= 0.0));
        // first bias-corrected step moves each coordinate by lr
        let mut fresh = AdamState::new(1, 0.1);
        let mut y = [0.0];
        fresh.step(&mut y, &[5.0]);
        assert!((y[0] + 0.1).abs() < 1e-8);
    }
}
