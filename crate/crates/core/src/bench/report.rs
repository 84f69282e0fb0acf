//! Aggregate metric reports over a sample set.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::metrics::{
    depth_errors, mean, median, pa_mpjpe, per_joint_errors, reprojection_of_joints, PelvisMode,
};
use super::synth::SyntheticSample;
use crate::depth_solver::{classify_facing, facing_of, solve_child, DEFAULT_FACING_MARGIN_DEG};
use crate::error::{KitroError, Result};
use crate::skeleton::{BodyState, SkeletonModel};

/// Metrics of one state against its sample's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    /// Infinite when a joint is behind the camera.
    pub reproj_px: f64,
    /// Mean absolute camera-frame depth difference, mm.
    pub depth_error_mm: f64,
    pub per_joint: Vec<f64>,
}

pub fn sample_metrics(
    model: &SkeletonModel,
    sample: &SyntheticSample,
    state: &BodyState,
    mode: PelvisMode,
) -> Result<SampleMetrics> {
    let pred = model.camera_joints(state)?;
    let gt = model.camera_joints(&sample.gt)?;
    let per_joint = per_joint_errors(&pred, &gt, mode);
    Ok(SampleMetrics {
        mpjpe: mean(&per_joint),
        pa_mpjpe: pa_mpjpe(&pred, &gt)?,
        reproj_px: reprojection_of_joints(&pred, &sample.intr, &sample.keypoints2d),
        depth_error_mm: mean(&depth_errors(&pred, &gt)),
        per_joint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacingAccuracy {
    /// Share of bones whose facing matches the ground truth.
    pub strict: f64,
    /// As `strict`, counting bones whose candidates are within the margin
    /// as correct.
    pub with_margin: f64,
    pub bones: usize,
}

/// Facing agreement between each state and its ground truth. A bone's pair
/// is solved from the ground-truth parent along the keypoint ray of the
/// child, and both bone vectors are classified against it.
pub fn facing_report(
    model: &SkeletonModel,
    samples: &[SyntheticSample],
    states: &[BodyState],
) -> Result<FacingAccuracy> {
    check_aligned(samples.len(), states.len())?;
    let margin = DEFAULT_FACING_MARGIN_DEG.to_radians();
    let (mut strict, mut lenient, mut total) = (0usize, 0usize, 0usize);
    for (s, state) in samples.iter().zip(states) {
        let gt = model.camera_joints(&s.gt)?;
        let pred = model.camera_joints(state)?;
        for &(p, c) in model.tree().bones() {
            let gt_vec: Vector3<f64> = gt[c] - gt[p];
            let pair = solve_child(
                &gt[p],
                gt[p].norm(),
                &s.intr.cast_ray(&s.keypoints2d[c]),
                &gt[p],
                gt_vec.norm(),
            )?;
            let chosen = facing_of(&pair, &(pred[c] - pred[p]));
            let verdict = classify_facing(&pair, chosen, &gt_vec, margin);
            total += 1;
            strict += usize::from(verdict.matches);
            lenient += usize::from(verdict.correct_with_margin());
        }
    }
    let frac = |k: usize| {
        if total == 0 {
            1.0
        } else {
            k as f64 / total as f64
        }
    };
    Ok(FacingAccuracy {
        strict: frac(strict),
        with_margin: frac(lenient),
        bones: total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    /// Mean over samples, mm.
    pub mpjpe: f64,
    pub median_mpjpe: f64,
    pub pa_mpjpe: f64,
    pub median_pa_mpjpe: f64,
    /// Mean over samples with every joint in front of the camera.
    pub reproj_px: f64,
    pub median_reproj_px: f64,
    /// Samples with a joint at or behind the camera.
    pub non_projectable: usize,
    /// Mean absolute per-joint depth difference, mm.
    pub depth_error_mm: f64,
    pub per_joint_mpjpe: Vec<f64>,
    /// Share of samples whose MPJPE is below the initialization's.
    pub improvement_fraction: f64,
    pub facing_accuracy: FacingAccuracy,
    /// Share of tree nodes whose candidate pair was rectified, when known.
    pub rectification_rate: Option<f64>,
}

fn check_aligned(samples: usize, states: usize) -> Result<()> {
    if samples != states {
        return Err(KitroError::InvalidInput(format!(
            "{samples} samples but {states} results"
        )));
    }
    Ok(())
}

pub fn evaluate_all(
    model: &SkeletonModel,
    samples: &[SyntheticSample],
    states: &[BodyState],
    mode: PelvisMode,
) -> Result<Vec<SampleMetrics>> {
    check_aligned(samples.len(), states.len())?;
    samples
        .iter()
        .zip(states)
        .map(|(s, st)| sample_metrics(model, s, st, mode))
        .collect()
}

pub fn summarize(
    model: &SkeletonModel,
    samples: &[SyntheticSample],
    states: &[BodyState],
    mode: PelvisMode,
    rectification_rate: Option<f64>,
) -> Result<MetricsReport> {
    let metrics = evaluate_all(model, samples, states, mode)?;
    let inits: Vec<BodyState> = samples.iter().map(|s| s.init.clone()).collect();
    let init_metrics = evaluate_all(model, samples, &inits, mode)?;
    let improved = metrics
        .iter()
        .zip(&init_metrics)
        .filter(|(m, i)| m.mpjpe < i.mpjpe)
        .count();
    let mut report = aggregate(&metrics, model.num_joints());
    report.improvement_fraction = if metrics.is_empty() {
        0.0
    } else {
        improved as f64 / metrics.len() as f64
    };
    report.facing_accuracy = facing_report(model, samples, states)?;
    report.rectification_rate = rectification_rate;
    Ok(report)
}

fn aggregate(metrics: &[SampleMetrics], num_joints: usize) -> MetricsReport {
    let col = |f: fn(&SampleMetrics) -> f64| metrics.iter().map(f).collect::<Vec<_>>();
    let mpjpe = col(|m| m.mpjpe);
    let pa = col(|m| m.pa_mpjpe);
    let reproj: Vec<f64> = col(|m| m.reproj_px)
        .into_iter()
        .filter(|r| r.is_finite())
        .collect();
    let per_joint_mpjpe = (0..num_joints)
        .map(|j| mean(&metrics.iter().map(|m| m.per_joint[j]).collect::<Vec<_>>()))
        .collect();
    MetricsReport {
        samples: metrics.len(),
        mpjpe: mean(&mpjpe),
        median_mpjpe: median(&mpjpe),
        pa_mpjpe: mean(&pa),
        median_pa_mpjpe: median(&pa),
        reproj_px: mean(&reproj),
        median_reproj_px: median(&reproj),
        non_projectable: metrics.len() - reproj.len(),
        depth_error_mm: mean(&col(|m| m.depth_error_mm)),
        per_joint_mpjpe,
        improvement_fraction: 0.0,
        facing_accuracy: FacingAccuracy {
            strict: 1.0,
            with_margin: 1.0,
            bones: 0,
        },
        rectification_rate: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub joint: String,
    pub init_mm: f64,
    pub refined_mm: f64,
    pub improvement_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() || bins == 0 {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in finite {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

/// Per-joint improvement along each arm, hand first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainProfile {
    pub side: String,
    pub rows: Vec<JointRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pelvis_mode: PelvisMode,
    pub init: MetricsReport,
    pub refined: MetricsReport,
    pub per_joint: Vec<JointRow>,
    /// Per-sample MPJPE reduction, mm.
    pub improvement_histogram: Histogram,
    pub chain_profile: Vec<ChainProfile>,
}

pub const ARM_PROFILE: [&str; 4] = ["Hand", "Wrist", "Elbow", "Shoulder"];

pub fn evaluation_report(
    model: &SkeletonModel,
    samples: &[SyntheticSample],
    states: &[BodyState],
    mode: PelvisMode,
    rectification_rate: Option<f64>,
) -> Result<EvalReport> {
    let inits: Vec<BodyState> = samples.iter().map(|s| s.init.clone()).collect();
    let init = summarize(model, samples, &inits, mode, None)?;
    let refined = summarize(model, samples, states, mode, rectification_rate)?;
    let names = model.joint_names();
    let row = |j: usize| JointRow {
        joint: names[j].clone(),
        init_mm: init.per_joint_mpjpe[j],
        refined_mm: refined.per_joint_mpjpe[j],
        improvement_mm: init.per_joint_mpjpe[j] - refined.per_joint_mpjpe[j],
    };
    let per_joint = (0..model.num_joints()).map(row).collect();

    let init_m = evaluate_all(model, samples, &inits, mode)?;
    let ref_m = evaluate_all(model, samples, states, mode)?;
    let gains: Vec<f64> = init_m
        .iter()
        .zip(&ref_m)
        .map(|(a, b)| a.mpjpe - b.mpjpe)
        .collect();

    let chain_profile = ["L", "R"]
        .iter()
        .map(|side| ChainProfile {
            side: side.to_string(),
            rows: ARM_PROFILE
                .iter()
                .filter_map(|part| {
                    let name = format!("{side}_{part}");
                    names.iter().position(|n| *n == name).map(row)
                })
                .collect(),
        })
        .filter(|p| !p.rows.is_empty())
        .collect();
    Ok(EvalReport {
        pelvis_mode: mode,
        init,
        refined,
        per_joint,
        improvement_histogram: Histogram::new(&gains, 20),
        chain_profile,
    })
}
