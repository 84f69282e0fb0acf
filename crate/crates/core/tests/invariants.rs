//! Property-based invariants across modules.

mod common;

use common::*;
use kitro::bench::{mpjpe, pa_mpjpe, reprojection_error, PelvisMode};
use kitro::camera::{update_translation, CameraIntrinsics};
use kitro::depth_solver::solve_child;
use kitro::hypothesis::{build_tree, edge_weights, score_edges, select_path};
use kitro::rotation::{best_rotation_multi, rodrigues, swing_twist_decompose};
use kitro::shape_opt::shape_loss;
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn intr() -> CameraIntrinsics {
    CameraIntrinsics::from_image_size(1080.0, 1920.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_kinematics_preserves_bone_lengths(seed in any::<u64>()) {
        let model = canonical();
        let state = body_state(&mut rng(seed));
        let posed = model.pose(&state.theta, &state.beta);
        for &bone in model.tree().bones() {
            let want = model.bone_length_3d(&state.beta, bone).unwrap();
            let got = (posed.joints[bone.1] - posed.joints[bone.0]).norm();
            prop_assert!((got - want).abs() <= 1e-9 * want);
        }
    }

    #[test]
    fn absolute_rotations_compose_along_the_chain(seed in any::<u64>()) {
        let model = canonical();
        let state = body_state(&mut rng(seed));
        let posed = model.pose(&state.theta, &state.beta);
        for j in 1..24 {
            let p = model.tree().parent_of(j).unwrap();
            prop_assert!((posed.abs_rots[j] - posed.abs_rots[p] * state.theta[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn project_undoes_cast_ray(u in 0.0..1920.0f64, v in 0.0..1080.0f64, d in 0.1..50.0f64) {
        let intr = intr();
        let q = Vector2::new(u, v);
        let back = intr.project_point(&(d * intr.cast_ray(&q))).unwrap();
        prop_assert!((back - q).norm() < 1e-9);
    }

    #[test]
    fn moving_average_halves_the_gap(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = unit_vector(&mut r) * r.random_range(0.0..5.0);
        let star = unit_vector(&mut r) * r.random_range(0.0..5.0);
        let next = update_translation(&star, &t);
        prop_assert!(((next - star).norm() - 0.5 * (t - star).norm()).abs() < 1e-12);
    }

    #[test]
    fn opposite_rodrigues_angles_cancel(seed in any::<u64>(), angle in -10.0..10.0f64) {
        let axis = unit_vector(&mut rng(seed));
        let a = rodrigues(&axis, angle).unwrap();
        let b = rodrigues(&axis, -angle).unwrap();
        prop_assert!((a * b - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn swing_times_twist_rebuilds_the_rotation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rot = rotation(&mut r, 3.0);
        let dir = unit_vector(&mut r);
        if let Ok(st) = swing_twist_decompose(&rot, &dir) {
            prop_assert!((st.swing * st.twist - rot).norm() < 1e-9);
        }
    }

    #[test]
    fn multi_bone_alignment_on_one_pair_maps_from_to(seed in any::<u64>()) {
        let mut r = rng(seed);
        let from = unit_vector(&mut r);
        let to = unit_vector(&mut r);
        let rot = best_rotation_multi(&[from], &[to]).unwrap();
        prop_assert!((rot * from - to).norm() < 1e-9);
    }

    #[test]
    fn candidates_lie_on_sphere_and_ray(seed in any::<u64>()) {
        let mut r = rng(seed);
        let intr = intr();
        let p_ray = intr.cast_ray(&Vector2::new(r.random_range(0.0..1920.0), r.random_range(0.0..1080.0)));
        let c_ray = intr.cast_ray(&Vector2::new(r.random_range(0.0..1920.0), r.random_range(0.0..1080.0)));
        let depth = r.random_range(1.0..10.0);
        let len = r.random_range(0.05..1.0);
        let parent = depth * p_ray;
        let pair = solve_child(&parent, depth, &c_ray, &p_ray, len).unwrap();
        for cand in [pair.toward, pair.away] {
            prop_assert!((cand.position - cand.depth * c_ray).norm() < 1e-9 * depth.max(1.0));
            if !pair.rectified {
                prop_assert!(((cand.position - parent).norm() - len).abs() <= 1e-9 * len.max(depth));
            }
            if cand.valid {
                prop_assert!((cand.position.norm() - cand.depth).abs() < 1e-9 * depth);
                let c2d = intr.project_point(&(c_ray * 3.0)).unwrap();
                prop_assert!((intr.project_point(&cand.position).unwrap() - c2d).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn scored_trees_are_normalized_and_consistent(seed in any::<u64>()) {
        let model = canonical();
        let mut r = rng(seed);
        let state = body_state(&mut r);
        let intr = intr();
        let Ok(kps) = intr.project(&model.camera_joints(&body_state(&mut r)).unwrap()) else {
            return Ok(());
        };
        let root = model.camera_joints(&state).unwrap()[0];
        let lengths = model.bone_lengths(&state.beta);
        for chain in model.tree().chains().iter().filter(|c| c.depends_on.is_none()) {
            let mut tree = build_tree(0, chain, &root, &kps, &lengths, &intr, 8).unwrap();
            score_edges(&mut tree, &state, &model).unwrap();
            for (d, level) in tree.levels.iter().enumerate() {
                for (i, pair) in level.chunks(2).enumerate() {
                    prop_assert!((pair[0].weight + pair[1].weight - 1.0).abs() < 1e-12);
                    let parent_depth = if d == 0 { tree.root_depth } else { tree.levels[d - 1][i].depth };
                    for n in pair {
                        prop_assert!((n.parent_depth - parent_depth).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shifting_sibling_scores_keeps_the_selection(seed in any::<u64>(), shift in -5.0..5.0f64) {
        let mut r = rng(seed);
        let depth = r.random_range(1..=6);
        let tree = random_scored_tree(&mut r, depth);
        let mut shifted = tree.clone();
        for level in shifted.levels.iter_mut() {
            for pair in level.chunks_mut(2) {
                // Recover scores up to a constant from the weights, then shift.
                let s0 = pair[0].weight.ln() + shift;
                let s1 = pair[1].weight.ln() + shift;
                let (w0, w1) = edge_weights(s0, s1);
                pair[0].weight = w0;
                pair[1].weight = w1;
            }
        }
        prop_assert_eq!(select_path(&tree).choices, select_path(&shifted).choices);
    }

    #[test]
    fn shape_loss_is_nonnegative_and_zero_when_consistent(seed in any::<u64>()) {
        let model = canonical();
        let mut r = rng(seed);
        let intr = intr();
        let state = body_state(&mut r);
        let Ok(kps) = intr.project(&model.camera_joints(&state).unwrap()) else {
            return Ok(());
        };
        let own = shape_loss(&model, &state.beta, &state.theta, &state.trans, &intr, &kps).unwrap();
        prop_assert!(own.abs() < 1e-9);
        let other = shape(&mut r, 2.0);
        let loss = shape_loss(&model, &other, &state.theta, &state.trans, &intr, &kps).unwrap();
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn metrics_vanish_against_themselves(seed in any::<u64>()) {
        let model = canonical();
        let state = body_state(&mut rng(seed));
        let intr = intr();
        let joints = model.camera_joints(&state).unwrap();
        prop_assert!(mpjpe(&joints, &joints, PelvisMode::Joint0) == 0.0);
        prop_assert!(mpjpe(&joints, &joints, PelvisMode::HipMean) == 0.0);
        prop_assert!(pa_mpjpe(&joints, &joints).unwrap() < 1e-9);
        if let Ok(kps) = intr.project(&joints) {
            prop_assert!(reprojection_error(&state, &model, &intr, &kps).unwrap() < 1e-9);
        }
    }

    #[test]
    fn global_rotation_about_the_root_is_equivariant(seed in any::<u64>()) {
        let model = canonical();
        let mut r = rng(seed);
        let state = body_state(&mut r);
        let q = rotation(&mut r, 3.0);
        let mut turned = state.theta.clone();
        turned[0] = q * turned[0];
        let a = model.pose(&state.theta, &state.beta).joints;
        let b = model.pose(&turned, &state.beta).joints;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((q * (x - a[0]) - (y - b[0])).norm() < 1e-9);
        }
    }
}

#[test]
fn rectified_pair_collapses_to_closest_approach() {
    let parent = Vector3::new(0.0, 0.0, 4.0);
    let c_ray = Vector3::new(0.5f64, 0.0, 1.0).normalize();
    let pair = solve_child(&parent, 4.0, &c_ray, &Vector3::z(), 0.1).unwrap();
    assert!(pair.rectified);
    assert_eq!(pair.toward.position, pair.away.position);
    assert!((pair.toward.depth - 4.0 * c_ray.z).abs() < 1e-12);
}
