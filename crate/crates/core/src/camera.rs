//! Full-perspective pinhole camera with identity rotation.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{KitroError, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "H")]
    pub height: f64,
    #[serde(rename = "W")]
    pub width: f64,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64, height: f64, width: f64) -> Result<Self> {
        if !(f > 0.0) || !f.is_finite() {
            return Err(KitroError::InvalidInput(format!(
                "focal length must be positive, got {f}"
            )));
        }
        Ok(Self {
            f,
            cx,
            cy,
            height,
            width,
        })
    }

    /// Focal length `√(H² + W²)` with the principal point at the image center.
    pub fn from_image_size(height: f64, width: f64) -> Result<Self> {
        if !(height > 0.0 && width > 0.0) {
            return Err(KitroError::InvalidInput(format!(
                "image size must be positive, got {height}x{width}"
            )));
        }
        Self::new(
            height.hypot(width),
            width / 2.0,
            height / 2.0,
            height,
            width,
        )
    }

    pub fn with_focal(mut self, f: f64) -> Result<Self> {
        self.f = f;
        Self::new(self.f, self.cx, self.cy, self.height, self.width)
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if !(p.z > 0.0) {
            return None;
        }
        Some(Vector2::new(
            self.f * p.x / p.z + self.cx,
            self.f * p.y / p.z + self.cy,
        ))
    }

    pub fn project(&self, points: &[Vector3<f64>]) -> Result<Vec<Vector2<f64>>> {
        points
            .iter()
            .enumerate()
            .map(|(index, p)| {
                self.project_point(p)
                    .ok_or(KitroError::NotProjectable { index, depth: p.z })
            })
            .collect()
    }

    /// Unit direction of the ray through `pixel`, `K⁻¹·(u, v, 1)` normalized.
    pub fn cast_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.f,
            (pixel.y - self.cy) / self.f,
            1.0,
        )
        .normalize()
    }
}

/// Least-squares camera translation aligning body-frame joints with 2D
/// keypoints, on the linearized residuals
/// `f·(x + tx) − (u − cx)·(z + tz)` and `f·(y + ty) − (v − cy)·(z + tz)`.
pub fn solve_translation(
    joints: &[Vector3<f64>],
    keypoints: &[Vector2<f64>],
    intr: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    let (a, b) = translation_system(joints, keypoints, intr)?;
    if joints.len() < 3 {
        return Err(KitroError::DegenerateCamera(format!(
            "{} correspondences, need at least 3",
            joints.len()
        )));
    }
    // The 3×3 normal equations are well conditioned for any body with depth
    // extent and solve more accurately than an iterative SVD of `A`.
    let ata: Matrix3<f64> = (a.transpose() * &a).fixed_view::<3, 3>(0, 0).into_owned();
    let atb: Vector3<f64> = (a.transpose() * &b).fixed_rows::<3>(0).into_owned();
    let eig = ata.symmetric_eigenvalues();
    if !(eig.min() > 1e-24 * eig.max()) {
        return Err(KitroError::DegenerateCamera(
            "translation system is rank deficient".into(),
        ));
    }
    ata.cholesky().map(|c| c.solve(&atb)).ok_or_else(|| {
        KitroError::DegenerateCamera("normal equations are not positive definite".into())
    })
}

/// The `2N×3` system `A·t = b` behind [`solve_translation`].
pub fn translation_system(
    joints: &[Vector3<f64>],
    keypoints: &[Vector2<f64>],
    intr: &CameraIntrinsics,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if joints.len() != keypoints.len() {
        return Err(KitroError::InvalidInput(format!(
            "{} joints but {} keypoints",
            joints.len(),
            keypoints.len()
        )));
    }
    let n = joints.len();
    let mut a = DMatrix::zeros(2 * n, 3);
    let mut b = DVector::zeros(2 * n);
    for (i, (j, k)) in joints.iter().zip(keypoints).enumerate() {
        let du = k.x - intr.cx;
        let dv = k.y - intr.cy;
        a[(2 * i, 0)] = intr.f;
        a[(2 * i, 2)] = -du;
        b[2 * i] = du * j.z - intr.f * j.x;
        a[(2 * i + 1, 1)] = intr.f;
        a[(2 * i + 1, 2)] = -dv;
        b[2 * i + 1] = dv * j.z - intr.f * j.y;
    }
    Ok((a, b))
}

/// Sum of squared linearized residuals at translation `t`.
pub fn algebraic_residual(
    joints: &[Vector3<f64>],
    keypoints: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    t: &Vector3<f64>,
) -> f64 {
    joints
        .iter()
        .zip(keypoints)
        .map(|(j, k)| {
            let ru = intr.f * (j.x + t.x) - (k.x - intr.cx) * (j.z + t.z);
            let rv = intr.f * (j.y + t.y) - (k.y - intr.cy) * (j.z + t.z);
            ru * ru + rv * rv
        })
        .sum()
}

/// Moving-average translation update `(t* + t) / 2`.
pub fn update_translation(t_star: &Vector3<f64>, t_current: &Vector3<f64>) -> Vector3<f64> {
    (t_star + t_current) / 2.0
}
