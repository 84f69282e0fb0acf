//! Rotation utilities: Rodrigues' formula, swing-twist decomposition,
//! multi-vector alignment and the kinematic-chain pose-parameter update.

use nalgebra::{Matrix3, Vector3, SVD};

use crate::error::{KitroError, Result};
use crate::skeleton::KinematicTree;

/// Cross products of normalized vectors below this are treated as parallel.
pub const PARALLEL_EPS: f64 = 1e-12;
/// Drift above which an updated rotation is re-orthonormalized.
pub const REORTHONORMALIZE_ABOVE: f64 = 1e-9;
/// Drift above which an updated rotation is rejected.
pub const MAX_UPDATE_DRIFT: f64 = 1e-6;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Largest violation of `RᵀR = I` and `det R = 1`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Result<Matrix3<f64>> {
    let norm = axis.norm();
    if !((norm - 1.0).abs() <= 1e-9) {
        return Err(KitroError::NonUnitAxis { norm });
    }
    let k = skew(axis);
    Ok(Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k)
}

/// Exponential map of an axis-angle vector.
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let angle = omega.norm();
    if angle < 1e-12 {
        return Matrix3::identity() + skew(omega);
    }
    let k = skew(&(omega / angle));
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k
}

/// Rotation angle in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let w = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    (0.5 * w.norm()).atan2(0.5 * (r.trace() - 1.0))
}

/// Geodesic cosine `(tr(R₁ᵀR₂) − 1) / 2`, clamped to `[-1, 1]`.
pub fn geodesic_cos(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (((a.transpose() * b).trace() - 1.0) * 0.5).clamp(-1.0, 1.0)
}

fn unit(v: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(KitroError::Degenerate(
            "zero or non-finite direction".into(),
        ));
    }
    Ok(v / n)
}

/// Unit axis perpendicular to `v`: the cross product with the lowest-index
/// coordinate axis that is not parallel to it.
pub fn perpendicular_axis(v: &Vector3<f64>) -> Vector3<f64> {
    let dir = v.normalize();
    for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        let c = dir.cross(&axis);
        if c.norm() > 1e-6 {
            return c.normalize();
        }
    }
    unreachable!("a unit vector is parallel to at most one coordinate axis")
}

/// Minimal rotation taking the direction of `from` onto that of `to`.
pub fn swing_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let a = unit(from)?;
    let b = unit(to)?;
    let cross = a.cross(&b);
    let sin = cross.norm();
    let cos = a.dot(&b);
    if sin < PARALLEL_EPS {
        return if cos > 0.0 {
            Ok(Matrix3::identity())
        } else {
            Err(KitroError::AmbiguousAxis)
        };
    }
    rodrigues(&(cross / sin), sin.atan2(cos))
}

/// Like [`swing_between`], but antiparallel inputs get a half turn about
/// [`perpendicular_axis`] instead of an error.
pub fn swing_between_or_half_turn(from: &Vector3<f64>, to: &Vector3<f64>) -> Result<Matrix3<f64>> {
    match swing_between(from, to) {
        Err(KitroError::AmbiguousAxis) => {
            rodrigues(&perpendicular_axis(from), std::f64::consts::PI)
        }
        other => other,
    }
}

/// A rotation split as `swing · twist` about a bone's template direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingTwist {
    pub swing: Matrix3<f64>,
    pub twist: Matrix3<f64>,
    pub twist_angle: f64,
}

pub fn swing_twist_decompose(rot: &Matrix3<f64>, bone_dir: &Vector3<f64>) -> Result<SwingTwist> {
    let t = unit(bone_dir)?;
    let swing = swing_between(&t, &(rot * t))?;
    let twist = swing.transpose() * rot;
    let sin = 0.5
        * Vector3::new(
            twist[(2, 1)] - twist[(1, 2)],
            twist[(0, 2)] - twist[(2, 0)],
            twist[(1, 0)] - twist[(0, 1)],
        )
        .dot(&t);
    let cos = 0.5 * (twist.trace() - 1.0);
    Ok(SwingTwist {
        swing,
        twist,
        twist_angle: sin.atan2(cos),
    })
}

/// Proper rotation minimizing `Σ‖R·fᵢ − gᵢ‖²` over the normalized pairs.
/// Pairs with a zero vector on either side are ignored.
pub fn best_rotation_multi(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Result<Matrix3<f64>> {
    if from.len() != to.len() {
        return Err(KitroError::InvalidInput(format!(
            "{} source and {} target directions",
            from.len(),
            to.len()
        )));
    }
    let mut h = Matrix3::zeros();
    let mut used = 0;
    for (f, g) in from.iter().zip(to) {
        let (fn_, gn) = (f.norm(), g.norm());
        if fn_ > 0.0 && gn > 0.0 {
            h += (g / gn) * (f / fn_).transpose();
            used += 1;
        }
    }
    if used == 0 {
        return Err(KitroError::Degenerate("no nonzero direction pairs".into()));
    }
    Ok(nearest_rotation(&h))
}

/// Closest proper rotation to `m` in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// New relative rotation of joint `p` such that its absolute rotation
/// becomes `swing · abs_rots[p]`. `abs_rots` must already reflect updates
/// of every ancestor of `p`.
pub fn update_joint_rotation(
    tree: &KinematicTree,
    p: usize,
    swing: &Matrix3<f64>,
    abs_rots: &[Matrix3<f64>],
) -> Result<Matrix3<f64>> {
    let target_abs = swing * abs_rots[p];
    let updated = match tree.parent_of(p) {
        Some(parent) => abs_rots[parent].transpose() * target_abs,
        None => target_abs,
    };
    let deviation = rotation_deviation(&updated);
    if !(deviation <= MAX_UPDATE_DRIFT) {
        return Err(KitroError::NumericalDegradation { deviation });
    }
    if deviation > REORTHONORMALIZE_ABOVE {
        Ok(nearest_rotation(&updated))
    } else {
        Ok(updated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn taylor_exp(k: &Matrix3<f64>) -> Matrix3<f64> {
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for n in 1..=20 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    fn rand_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn rodrigues_basics() {
        let a = Vector3::new(1.0, 2.0, 3.0).normalize();
        assert_eq!(rodrigues(&a, 0.0).unwrap(), Matrix3::identity());
        let q = rodrigues(&Vector3::z(), FRAC_PI_2).unwrap();
        assert!((q * Vector3::x() - Vector3::y()).norm() < 1e-15);
        assert!(matches!(
            rodrigues(&Vector3::new(1.0, 1.0, 0.0), 0.3),
            Err(KitroError::NonUnitAxis { .. })
        ));
    }

    #[test]
    fn rodrigues_matches_series_and_inverse() {
        let mut seed = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = rand_unit(&mut seed);
            let angle = (seed.random::<f64>() - 0.5) * 2.0 * PI;
            let r = rodrigues(&a, angle).unwrap();
            let series = taylor_exp(&(skew(&a) * angle));
            assert!((r - series).abs().max() < 1e-9);
            let back = r * rodrigues(&a, -angle).unwrap();
            assert!((back - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r * a - a).norm() < 1e-12);
        }
    }

    #[test]
    fn swing_between_cases() {
        let r = swing_between(&Vector3::x(), &Vector3::y()).unwrap();
        let expected = rodrigues(&Vector3::z(), FRAC_PI_2).unwrap();
        assert!((r - expected).abs().max() < 1e-15);
        let v = Vector3::new(0.3, -2.0, 1.0);
        assert_eq!(swing_between(&v, &(2.0 * v)).unwrap(), Matrix3::identity());
        assert_eq!(swing_between(&v, &-v), Err(KitroError::AmbiguousAxis));
        let half = swing_between_or_half_turn(&v, &-v).unwrap();
        assert!((half * v.normalize() + v.normalize()).norm() < 1e-12);
        assert!(swing_between(&Vector3::zeros(), &v).is_err());
    }

    #[test]
    fn swing_between_random_pairs() {
        let mut seed = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = rand_unit(&mut seed) * (0.5 + seed.random::<f64>());
            let b = rand_unit(&mut seed) * (0.5 + seed.random::<f64>());
            let r = swing_between(&a, &b).unwrap();
            assert!((r * a.normalize() - b.normalize()).norm() < 1e-9);
            let expected = a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos();
            assert!((rotation_angle(&r) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn decompose_twist_only_and_swing_only() {
        let t = Vector3::new(0.2, 0.9, -0.1).normalize();
        let twist = rodrigues(&t, 0.7).unwrap();
        let st = swing_twist_decompose(&twist, &t).unwrap();
        assert!((st.swing - Matrix3::identity()).abs().max() < 1e-12);
        assert!((st.twist_angle - 0.7).abs() < 1e-12);

        let sw = swing_between(&t, &Vector3::new(1.0, 0.0, 0.5)).unwrap();
        let st = swing_twist_decompose(&sw, &t).unwrap();
        assert!((st.twist - Matrix3::identity()).abs().max() < 1e-12);
        assert!(st.twist_angle.abs() < 1e-12);
    }

    #[test]
    fn decompose_reconstructs_random_rotations() {
        let mut seed = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let rot = rodrigues(&rand_unit(&mut seed), seed.random::<f64>() * 3.0).unwrap();
            let t = rand_unit(&mut seed);
            let st = swing_twist_decompose(&rot, &t).unwrap();
            assert!((st.swing * st.twist - rot).norm() < 1e-9);
            assert!((st.twist * t - t).norm() < 1e-9);
            let sin = rotation_angle(&st.swing).sin();
            if sin > 1e-6 {
                let axis = Vector3::new(
                    st.swing[(2, 1)] - st.swing[(1, 2)],
                    st.swing[(0, 2)] - st.swing[(2, 0)],
                    st.swing[(1, 0)] - st.swing[(0, 1)],
                ) / (2.0 * sin);
                assert!(axis.dot(&t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn best_rotation_exact_and_identity() {
        let dirs = [
            Vector3::new(1.0, 0.2, 0.0),
            Vector3::new(-0.3, 1.0, 0.4),
            Vector3::new(0.1, -0.2, 1.0),
        ];
        let r = best_rotation_multi(&dirs, &dirs).unwrap();
        assert!((r - Matrix3::identity()).abs().max() < 1e-12);
        let q = rodrigues(&Vector3::new(0.3, -0.5, 0.8).normalize(), 2.1).unwrap();
        let rotated: Vec<_> = dirs.iter().map(|d| q * d).collect();
        let r = best_rotation_multi(&dirs, &rotated).unwrap();
        assert!((r - q).abs().max() < 1e-9);
        assert!(best_rotation_multi(&[Vector3::zeros()], &[Vector3::zeros()]).is_err());
    }

    #[test]
    fn best_rotation_single_pair_matches_swing() {
        let mut seed = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = rand_unit(&mut seed);
            let b = rand_unit(&mut seed);
            let r = best_rotation_multi(&[a], &[b]).unwrap();
            let s = swing_between(&a, &b).unwrap();
            assert!((r * a - s * a).norm() < 1e-9);
        }
    }

    #[test]
    fn update_with_identity_swing_is_no_op() {
        let tree = KinematicTree::from_signed(&[-1, 0, 1]).unwrap();
        let theta = [
            rodrigues(&Vector3::x(), 0.4).unwrap(),
            rodrigues(&Vector3::y(), -0.9).unwrap(),
            Matrix3::identity(),
        ];
        let abs = [theta[0], theta[0] * theta[1], theta[0] * theta[1]];
        let updated = update_joint_rotation(&tree, 1, &Matrix3::identity(), &abs).unwrap();
        assert!((updated - theta[1]).abs().max() < 1e-12);
    }

    #[test]
    fn update_rejects_drifted_input() {
        let tree = KinematicTree::from_signed(&[-1, 0]).unwrap();
        let abs = [Matrix3::identity() * 1.001, Matrix3::identity()];
        assert!(matches!(
            update_joint_rotation(&tree, 0, &Matrix3::identity(), &abs),
            Err(KitroError::NumericalDegradation { .. })
        ));
    }

    #[test]
    fn geodesic_cos_range() {
        let a = rodrigues(&Vector3::x(), 0.0).unwrap();
        let b = rodrigues(&Vector3::x(), PI).unwrap();
        assert!((geodesic_cos(&a, &a) - 1.0).abs() < 1e-15);
        assert!((geodesic_cos(&a, &b) + 1.0).abs() < 1e-12);
    }
}
