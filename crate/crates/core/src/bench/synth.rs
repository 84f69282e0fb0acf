//! Synthetic ground truth, perturbed initializations and 2D keypoints.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{KitroError, Result};
use crate::rotation::{exp_so3, rodrigues};
use crate::skeleton::{BodyState, Shape, SkeletonModel, StateRecord, NUM_BETAS};

pub const MAX_SAMPLE_ATTEMPTS: usize = 100;
const MIN_JOINT_DEPTH: f64 = 0.1;

/// Perturbation applied to the ground truth to form the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// Per-axis standard deviation of the axis-angle noise on every joint.
    pub rot_sigma_deg: f64,
    pub beta_sigma: f64,
    pub trans_sigma_m: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            rot_sigma_deg: 10.0,
            beta_sigma: 0.5,
            trans_sigma_m: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub n: usize,
    pub perturb: PerturbConfig,
    pub noise2d_px: f64,
    pub seed: u64,
    /// Largest joint angle of the ground-truth pose, root excluded.
    pub joint_limit_deg: f64,
    pub image_height: f64,
    pub image_width: f64,
    pub depth_range: (f64, f64),
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: 500,
            perturb: PerturbConfig::default(),
            noise2d_px: 0.0,
            seed: 0,
            joint_limit_deg: 60.0,
            image_height: 1080.0,
            image_width: 1920.0,
            depth_range: (2.0, 8.0),
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.perturb;
        let sigmas = [
            p.rot_sigma_deg,
            p.beta_sigma,
            p.trans_sigma_m,
            self.noise2d_px,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(KitroError::InvalidInput(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        if self.n == 0 {
            return Err(KitroError::InvalidInput(
                "sample count must be positive".into(),
            ));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(KitroError::InvalidInput(format!(
                "bad depth range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub gt: BodyState,
    pub init: BodyState,
    pub keypoints2d: Vec<Vector2<f64>>,
    pub intr: CameraIntrinsics,
    pub seed: u64,
}

/// One line of a sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub gt: StateRecord,
    pub init: StateRecord,
    pub keypoints2d: Vec<[f64; 2]>,
    pub intr: CameraIntrinsics,
    pub seed: u64,
}

impl SampleRecord {
    pub fn from_sample(s: &SyntheticSample) -> Self {
        Self {
            gt: StateRecord::from_state(&s.gt),
            init: StateRecord::from_state(&s.init),
            keypoints2d: s.keypoints2d.iter().map(|k| [k.x, k.y]).collect(),
            intr: s.intr,
            seed: s.seed,
        }
    }

    pub fn to_sample(&self) -> Result<SyntheticSample> {
        Ok(SyntheticSample {
            gt: self.gt.to_state()?,
            init: self.init.to_state()?,
            keypoints2d: self
                .keypoints2d
                .iter()
                .map(|k| Vector2::new(k[0], k[1]))
                .collect(),
            intr: self.intr,
            seed: self.seed,
        })
    }
}

pub fn write_samples_jsonl(samples: &[SyntheticSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(
            &serde_json::to_string(&SampleRecord::from_sample(s)).expect("records serialize"),
        );
        out.push('\n');
    }
    out
}

pub fn read_samples_jsonl(text: &str) -> Result<Vec<SyntheticSample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: SampleRecord = serde_json::from_str(l)
                .map_err(|e| KitroError::Format(format!("line {}: {e}", i + 1)))?;
            rec.to_sample()
        })
        .collect()
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Rotation with a uniformly distributed axis and angle in `[0, limit]`.
fn bounded_rotation(rng: &mut ChaCha8Rng, limit_rad: f64) -> Result<Matrix3<f64>> {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..=limit_rad);
    rodrigues(&Vector3::from(axis).normalize(), angle)
}

/// Uniformly distributed rotation.
fn uniform_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ));
    q.to_rotation_matrix().into_inner()
}

fn in_margin(p: &Vector2<f64>, intr: &CameraIntrinsics) -> bool {
    // A box four times the image size, centered on the image.
    let (w, h) = (intr.width, intr.height);
    p.x >= -1.5 * w && p.x <= 2.5 * w && p.y >= -1.5 * h && p.y <= 2.5 * h
}

fn sample_gt(
    model: &SkeletonModel,
    cfg: &GenerateConfig,
    intr: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
) -> Result<BodyState> {
    let n = model.num_joints();
    let limit = cfg.joint_limit_deg.to_radians();
    let mut theta = Vec::with_capacity(n);
    theta.push(uniform_rotation(rng));
    for _ in 1..n {
        theta.push(bounded_rotation(rng, limit)?);
    }
    let beta = Shape::from_fn(|_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z.clamp(-3.0, 3.0)
    });
    let (lo, hi) = cfg.depth_range;
    let tz = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let u = rng.random_range(-0.3..0.3) * intr.width;
    let v = rng.random_range(-0.3..0.3) * intr.height;
    let trans = Vector3::new(u * tz / intr.f, v * tz / intr.f, tz);
    BodyState::new(theta, beta, trans)
}

fn acceptable(joints: &[Vector3<f64>], intr: &CameraIntrinsics) -> bool {
    joints.iter().all(|j| {
        j.z > MIN_JOINT_DEPTH && intr.project_point(j).is_some_and(|p| in_margin(&p, intr))
    })
}

/// Draw one sample from its own seed. Ground truth is drawn first, then the
/// perturbation, then the keypoint noise, so changing one noise level keeps
/// every earlier draw.
pub fn generate_sample(
    model: &SkeletonModel,
    cfg: &GenerateConfig,
    intr: &CameraIntrinsics,
    seed: u64,
) -> Result<SyntheticSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = None;
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let gt = sample_gt(model, cfg, intr, &mut rng)?;
        let joints = model.camera_joints(&gt)?;
        if acceptable(&joints, intr) {
            accepted = Some((gt, joints));
            break;
        }
    }
    let (gt, joints) = accepted.ok_or(KitroError::SamplingFailed {
        attempts: MAX_SAMPLE_ATTEMPTS,
    })?;

    let sigma_rot = cfg.perturb.rot_sigma_deg.to_radians();
    let theta = gt
        .theta
        .iter()
        .map(|r| r * exp_so3(&(sigma_rot * gaussian3(&mut rng))))
        .collect();
    let beta =
        gt.beta + cfg.perturb.beta_sigma * Shape::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let trans = gt.trans + cfg.perturb.trans_sigma_m * gaussian3(&mut rng);
    let init = BodyState::new(theta, beta, trans)?;

    let keypoints2d = joints
        .iter()
        .map(|j| {
            let px = intr.project_point(j).expect("depth checked above");
            let nu: f64 = StandardNormal.sample(&mut rng);
            let nv: f64 = StandardNormal.sample(&mut rng);
            px + cfg.noise2d_px * Vector2::new(nu, nv)
        })
        .collect();
    Ok(SyntheticSample {
        gt,
        init,
        keypoints2d,
        intr: *intr,
        seed,
    })
}

/// Sample `i` is drawn from seed `seed + i`, so results do not depend on
/// how the work is scheduled.
pub fn generate_samples(
    model: &SkeletonModel,
    cfg: &GenerateConfig,
) -> Result<Vec<SyntheticSample>> {
    cfg.validate()?;
    debug_assert_eq!(NUM_BETAS, 10);
    let intr = CameraIntrinsics::from_image_size(cfg.image_height, cfg.image_width)?;
    (0..cfg.n)
        .into_par_iter()
        .map(|i| generate_sample(model, cfg, &intr, cfg.seed.wrapping_add(i as u64)))
        .collect()
}
